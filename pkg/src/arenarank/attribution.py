"""Target-model attribution by top-p cover membership of teacher-forced tokens.

For every generated token we look at the candidate model's next-token
distribution, take the smallest highest-probability set of tokens whose mass
reaches ``p`` and check whether the realized token is inside it. The fraction
of in-set tokens is the confidence; a sequence is attributed to the candidate
when the confidence reaches ``t``.

A step is stored compactly as (realized probability, mass ranked strictly
ahead of the realized token). Among equally probable tokens the realized one
is ranked first, so the token is in the cover iff that mass is ``< p``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import ValidationError


# -- membership ---------------------------------------------------------------

def favorable_mass_above(probs: np.ndarray) -> np.ndarray:
    """Mass ranked ahead of each token when the token itself wins all ties.

    Works along the last axis. The mass is accumulated in descending order, the
    same order a sort-and-accumulate construction of the cover uses. A
    zero-probability token sits behind the whole distribution, so its value is
    exactly 1.
    """
    probs = np.asarray(probs, dtype=float)
    desc = -np.sort(-probs, axis=-1)
    csum = np.cumsum(desc, axis=-1)
    # number of tokens strictly more probable than each token
    ahead = (probs[..., None, :] > probs[..., :, None]).sum(axis=-1)
    padded = np.concatenate([np.zeros(csum.shape[:-1] + (1,)), csum], axis=-1)
    mass = np.take_along_axis(padded, ahead, axis=-1)
    return np.where(probs > 0, np.minimum(mass, 1.0), 1.0)


def nucleus_mask(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Minimal top-p set per row, ties broken by vocabulary index.

    Always a subset of the favorable-order cover, so a sample drawn from it is
    in-set for the detector at the same ``p``.
    """
    order = np.argsort(-probs, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=-1)
    before = np.cumsum(sorted_p, axis=-1) - sorted_p
    keep_sorted = (before < top_p) & (sorted_p > 0)
    mask = np.zeros_like(keep_sorted)
    np.put_along_axis(mask, order, keep_sorted, axis=-1)
    return mask


# -- token models -----------------------------------------------------------

class TokenModel(Protocol):
    vocabulary: tuple[str, ...]

    def distribution(self, context: Sequence[str]) -> np.ndarray:
        """Next-token probabilities over ``vocabulary`` given the full prefix."""
        ...


class NGramModel:
    """Character n-gram model with add-k smoothing.

    Contexts shorter than ``order - 1`` are left-padded with a start symbol
    that is never emitted. Unseen contexts get the uniform distribution.
    """

    def __init__(self, order: int, k: float, vocabulary: Sequence[str], context_codes, counts):
        self.order = order
        self.k = k
        self.vocabulary = tuple(vocabulary)
        self.token_index = {tok: i for i, tok in enumerate(self.vocabulary)}
        v = len(self.vocabulary)
        self._base = v + 1  # start symbol is id v
        self._modulus = self._base ** (order - 1)
        self._codes = np.asarray(context_codes, dtype=np.int64)
        rows = (counts + k) / (counts.sum(axis=1, keepdims=True) + k * v)
        self.probs = np.vstack([rows, np.full((1, v), 1.0 / v)])
        self.mass_above = favorable_mass_above(self.probs)
        self.logprobs = np.log(self.probs)
        self._cdf_cache: dict = {}

    # encoding
    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        try:
            return np.fromiter((self.token_index[t] for t in tokens), dtype=np.int64, count=len(tokens))
        except KeyError as exc:
            raise ValidationError(f"token {exc.args[0]!r} is outside the model vocabulary") from None

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.vocabulary[i] for i in ids)

    def _context_code(self, prefix_ids: np.ndarray) -> int:
        code = 0
        tail = prefix_ids[-(self.order - 1):] if self.order > 1 else prefix_ids[:0]
        for _ in range(self.order - 1 - len(tail)):
            code = code * self._base + (self._base - 1)
        for t in tail:
            code = code * self._base + int(t)
        return code

    def _rows(self, codes: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self._codes, codes)
        pos_c = np.minimum(pos, len(self._codes) - 1)
        found = (pos < len(self._codes)) & (self._codes[pos_c] == codes)
        return np.where(found, pos_c, len(self._codes))

    def distribution(self, context: Sequence[str]) -> np.ndarray:
        code = self._context_code(self.encode(context))
        return self.probs[self._rows(np.array([code]))[0]]

    # batched scoring and generation
    def _prompt_codes(self, prompts: Sequence[str]) -> np.ndarray:
        return np.array([self._context_code(self.encode(p)) for p in prompts], dtype=np.int64)

    def score(self, prompts: Sequence[str], outputs: np.ndarray):
        """Teacher-forced (realized prob, mass above, log prob) arrays, each K x L."""
        outputs = np.asarray(outputs, dtype=np.int64)
        ctx = self._prompt_codes(prompts)
        rows = np.empty(outputs.shape, dtype=np.int64)
        for step in range(outputs.shape[1]):
            rows[:, step] = self._rows(ctx)
            ctx = (ctx * self._base + outputs[:, step]) % self._modulus
        return self.probs[rows, outputs], self.mass_above[rows, outputs], self.logprobs[rows, outputs]

    def _cdf(self, temperature: float, top_p: float) -> tuple[np.ndarray, np.ndarray]:
        key = (temperature, top_p)
        if key not in self._cdf_cache:
            probs = self.probs
            if temperature != 1.0:
                probs = np.exp(self.logprobs / temperature)
                probs /= probs.sum(axis=1, keepdims=True)
            kept = np.where(nucleus_mask(probs, top_p), probs, 0.0)
            kept /= kept.sum(axis=1, keepdims=True)
            last_kept = kept.shape[1] - 1 - np.argmax(kept[:, ::-1] > 0, axis=1)
            self._cdf_cache[key] = (np.cumsum(kept, axis=1), last_kept)
        return self._cdf_cache[key]

    def generate(
        self,
        prompts: Sequence[str],
        length: int,
        rng: np.random.Generator,
        temperature: float = 1.0,
        top_p: float = 1.0,
    ) -> np.ndarray:
        """Sample one continuation per prompt; returns token ids, K x length."""
        if not 0.0 < top_p <= 1.0:
            raise ValidationError(f"top_p must lie in (0, 1], got {top_p}")
        if temperature <= 0:
            raise ValidationError("temperature must be > 0")
        cdf, last_kept = self._cdf(temperature, top_p)
        ctx = self._prompt_codes(prompts)
        out = np.empty((len(prompts), length), dtype=np.int64)
        v = len(self.vocabulary)
        for step in range(length):
            u = rng.random(len(prompts))
            rows = self._rows(ctx)
            tok = (cdf[rows] <= u[:, None]).sum(axis=1)
            # u beyond a cdf that rounds to just under 1
            tok = np.where(tok >= v, last_kept[rows], tok)
            out[:, step] = tok
            ctx = (ctx * self._base + tok) % self._modulus
        return out

    def sample(self, prompt: str, length: int, seed: int, temperature: float = 1.0, top_p: float = 1.0) -> str:
        rng = np.random.default_rng(seed & ((1 << 64) - 1))
        return self.decode(self.generate([prompt], length, rng, temperature, top_p)[0])

    def greedy(self, prompt: str, length: int) -> str:
        ctx = self._context_code(self.encode(prompt))
        out = []
        for _ in range(length):
            tok = int(np.argmax(self.probs[self._rows(np.array([ctx]))[0]]))
            out.append(tok)
            ctx = (ctx * self._base + tok) % self._modulus
        return self.decode(out)


def train_token_model(
    corpus: str, order: int = 3, k: float = 0.01, vocabulary: Sequence[str] | None = None
) -> NGramModel:
    if not corpus:
        raise ValidationError("corpus is empty")
    if order < 1:
        raise ValidationError("order must be >= 1")
    if not k > 0:
        raise ValidationError("smoothing k must be > 0")
    vocab = tuple(sorted(set(corpus))) if vocabulary is None else tuple(vocabulary)
    if len(set(vocab)) != len(vocab):
        raise ValidationError("vocabulary contains duplicates")
    index = {t: i for i, t in enumerate(vocab)}
    missing = sorted(set(corpus) - set(index))
    if missing:
        raise ValidationError(f"corpus characters missing from vocabulary: {missing[:10]}")
    v, base = len(vocab), len(vocab) + 1
    if base ** (order - 1) >= 2**62:
        raise ValidationError(f"order {order} is too large for a {v}-token vocabulary")
    ids = np.array([v] * (order - 1) + [index[c] for c in corpus], dtype=np.int64)
    n = len(corpus)
    codes = np.zeros(n, dtype=np.int64)
    for j in range(order - 1):
        codes = codes * base + ids[j : j + n]
    targets = ids[order - 1 :]
    uniq, inverse = np.unique(codes, return_inverse=True)
    counts = np.zeros((len(uniq), v))
    np.add.at(counts, (inverse, targets), 1.0)
    return NGramModel(order, k, vocab, uniq, counts)


# -- traces and decisions ---------------------------------------------------

@dataclass(frozen=True)
class TokenStepTrace:
    step: int
    realized_token_prob: float
    cum_prob_above: float


@dataclass(frozen=True)
class SequenceTrace:
    realized: np.ndarray
    above: np.ndarray
    true_source: str | None = None

    def __post_init__(self) -> None:
        realized = np.asarray(self.realized, dtype=float)
        above = np.asarray(self.above, dtype=float)
        if realized.ndim != 1 or realized.shape != above.shape or len(realized) == 0:
            raise ValidationError("a trace needs N >= 1 steps with one (prob, mass) pair each")
        if np.any((realized < 0) | (realized > 1) | (above < 0) | (above > 1)):
            raise ValidationError("trace probabilities must lie in [0, 1]")
        if np.any(realized + above > 1 + 1e-9):
            raise ValidationError("trace step has realized prob + mass above > 1")
        object.__setattr__(self, "realized", realized)
        object.__setattr__(self, "above", above)

    @property
    def n(self) -> int:
        return len(self.realized)

    @property
    def steps(self) -> tuple[TokenStepTrace, ...]:
        return tuple(
            TokenStepTrace(i + 1, float(p), float(a)) for i, (p, a) in enumerate(zip(self.realized, self.above))
        )


@dataclass(frozen=True)
class AttributionParams:
    p: float = 0.9
    t: float = 0.8

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise ValidationError(f"p must lie in (0, 1], got {self.p}")
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError(f"t must lie in [0, 1], got {self.t}")


@dataclass(frozen=True)
class AttributionResult:
    confidence: float
    decision: int


def trace_from_model(
    model: TokenModel, prompt: Sequence[str], output: Sequence[str], true_source: str | None = None
) -> SequenceTrace:
    """Teacher-force ``output`` through ``model`` and record each step's evidence."""
    if len(output) == 0:
        raise ValidationError("output must contain at least one token")
    index = {tok: i for i, tok in enumerate(model.vocabulary)}
    prefix = list(prompt)
    realized, above = [], []
    for tok in output:
        if tok not in index:
            raise ValidationError(f"token {tok!r} is outside the model vocabulary")
        dist = model.distribution(prefix)
        mass = favorable_mass_above(dist)
        realized.append(float(dist[index[tok]]))
        above.append(float(mass[index[tok]]))
        prefix.append(tok)
    return SequenceTrace(np.array(realized), np.array(above), true_source)


def confidence(trace: SequenceTrace, p: float) -> float:
    return float(np.count_nonzero(trace.above < p)) / trace.n


def attribute(trace: SequenceTrace, params: AttributionParams = AttributionParams()) -> AttributionResult:
    c = confidence(trace, params.p)
    return AttributionResult(c, int(c >= params.t))


@dataclass(frozen=True)
class DetectorQuality:
    tpr: float
    tnr: float
    mean_tokens: float
    positives: int
    negatives: int


def _split(traces: Sequence[SequenceTrace], target: str):
    pos = [tr for tr in traces if tr.true_source == target]
    neg = [tr for tr in traces if tr.true_source is not None and tr.true_source != target]
    if not pos:
        raise ValidationError(f"no traces sourced from target {target!r}")
    if not neg:
        raise ValidationError(f"no traces sourced from models other than {target!r}")
    return pos, neg


def evaluate_detector(
    traces: Sequence[SequenceTrace], target: str, params: AttributionParams = AttributionParams()
) -> DetectorQuality:
    pos, neg = _split(traces, target)
    tpr = np.mean([attribute(tr, params).decision == 1 for tr in pos])
    tnr = np.mean([attribute(tr, params).decision == 0 for tr in neg])
    mean_tokens = np.mean([tr.n for tr in pos + neg])
    return DetectorQuality(float(tpr), float(tnr), float(mean_tokens), len(pos), len(neg))


DEFAULT_P_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0)
DEFAULT_T_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(11))


def sweep_detector(
    traces: Sequence[SequenceTrace],
    target: str,
    p_grid: Sequence[float] = DEFAULT_P_GRID,
    t_grid: Sequence[float] = DEFAULT_T_GRID,
) -> list[tuple[AttributionParams, DetectorQuality]]:
    """Detector quality at every (p, t) grid point, p-major order."""
    pos, neg = _split(traces, target)
    mean_tokens = float(np.mean([tr.n for tr in pos + neg]))
    table = []
    for p in p_grid:
        c_pos = np.array([confidence(tr, p) for tr in pos])
        c_neg = np.array([confidence(tr, p) for tr in neg])
        for t in t_grid:
            q = DetectorQuality(
                float(np.mean(c_pos >= t)), float(np.mean(c_neg < t)), mean_tokens, len(pos), len(neg)
            )
            table.append((AttributionParams(p, t), q))
    return table


def best_params(sweep: Sequence[tuple[AttributionParams, DetectorQuality]]):
    """Grid point maximizing tpr + tnr; the first such point in grid order wins ties."""
    return max(sweep, key=lambda row: row[1].tpr + row[1].tnr)


# -- trace files --------------------------------------------------------------

def write_traces(traces: Iterable[SequenceTrace], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for tr in traces:
            obj = {
                "true_source": tr.true_source,
                "n": tr.n,
                "steps": [[float(p), float(a)] for p, a in zip(tr.realized, tr.above)],
            }
            fh.write(json.dumps(obj) + "\n")


def read_traces(path: str | Path) -> list[SequenceTrace]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"trace file not found: {path}")
    traces = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                steps = np.asarray(obj["steps"], dtype=float).reshape(-1, 2)
                n = int(obj.get("n", len(steps)))
                source = obj.get("true_source")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed trace ({exc})") from exc
            if n != len(steps):
                raise ValidationError(f"{path}:{lineno}: n={n} but {len(steps)} steps given")
            try:
                traces.append(SequenceTrace(steps[:, 0], steps[:, 1], source))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return traces
