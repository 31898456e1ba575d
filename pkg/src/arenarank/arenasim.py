"""Mock arena: weighted pair sampling, generation, honest voters and an attribution-driven attacker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from itertools import permutations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attribution import AttributionParams, NGramModel, TokenModel, attribute, train_token_model, trace_from_model
from .errors import ValidationError
from .prefdata import LEFT, RIGHT, TIE, PreferenceDataset, PreferenceRecord, Provenance, VoteLabel
from .seeding import derive_seed, rng_for

DEFAULT_PROMPTS = (
    "The ",
    "In the morning ",
    "She said that ",
    "Put the ",
    "When the wind ",
    "A good ",
    "After a while, ",
    "It is ",
)


class Fallback(str, Enum):
    TIE = "tie"
    ABSTAIN = "abstain"
    RANDOM = "random"


@dataclass(frozen=True)
class AttackerConfig:
    target: str
    params: AttributionParams = AttributionParams()
    fallback: Fallback = Fallback.ABSTAIN
    # share of battles in which the voter is the attacker
    rate: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "fallback", Fallback(self.fallback))
        if not 0.0 <= self.rate <= 1.0:
            raise ValidationError(f"attacker rate must lie in [0, 1], got {self.rate}")


@dataclass(frozen=True)
class ArenaConfig:
    models: Mapping[str, NGramModel]
    weights: Mapping[str, float] = field(default_factory=dict)
    attacker: AttackerConfig | None = None
    honest_epsilon: float = 0.0
    # latent strengths; when given for every model, honest votes are BT draws on them
    quality: Mapping[str, float] | None = None
    prompts: tuple[str, ...] = DEFAULT_PROMPTS
    output_length: int = 64
    top_p: float = 0.9
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.models) < 2:
            raise ValidationError("an arena needs at least 2 models")
        weights = {m: float(self.weights.get(m, 1.0)) for m in self.models}
        bad = {m: w for m, w in weights.items() if not (w > 0 and math.isfinite(w))}
        if bad:
            raise ValidationError(f"sampling weights must be positive: {bad}")
        unknown = set(self.weights) - set(self.models)
        if unknown:
            raise ValidationError(f"weights given for unknown models: {sorted(unknown)}")
        object.__setattr__(self, "weights", weights)
        if self.attacker is not None and self.attacker.target not in self.models:
            raise ValidationError(f"attacker target {self.attacker.target!r} is not an arena model")
        if not 0.0 <= self.honest_epsilon <= 0.5:
            raise ValidationError(f"honest epsilon must lie in [0, 0.5], got {self.honest_epsilon}")
        if self.quality is not None and set(self.quality) != set(self.models):
            raise ValidationError("quality must be given for every model or for none")
        if not self.prompts:
            raise ValidationError("prompt pool is empty")
        if self.output_length < 1:
            raise ValidationError("output length must be >= 1")

    @property
    def roster(self) -> tuple[str, ...]:
        return tuple(self.models)


@dataclass(frozen=True)
class AttackerStats:
    battles_seen: int = 0
    target_appearances: int = 0
    # votes for a side the detector flagged, right or wrong
    votes_cast_for_target: int = 0
    votes_for_actual_target: int = 0
    detector_false_fires: int = 0


@dataclass(frozen=True)
class ArenaOutcome:
    battles: PreferenceDataset
    attacker_stats: AttackerStats

    @property
    def attacker_vote_share(self) -> float:
        """Share of logged votes that are attacker votes for the real target."""
        return self.attacker_stats.votes_for_actual_target / max(len(self.battles), 1)


# -- pair sampling ------------------------------------------------------------

def _draw_pairs(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Two draws without replacement, each proportional to the remaining weights."""
    k = len(weights)
    first = rng.choice(k, size=n, p=weights / weights.sum())
    rest = np.tile(weights, (n, 1))
    rest[np.arange(n), first] = 0.0
    cum = np.cumsum(rest, axis=1)
    u = rng.random(n) * cum[:, -1]
    second = np.minimum((cum <= u[:, None]).sum(axis=1), k - 1)
    # guard against landing on the removed model through rounding at the top
    second = np.where(second == first, np.argmax(rest > 0, axis=1), second)
    return np.stack([first, second], axis=1)


def sample_pair(config: ArenaConfig, seed: int) -> tuple[str, str]:
    w = np.array([config.weights[m] for m in config.roster])
    a, b = _draw_pairs(w, 1, np.random.default_rng(seed & ((1 << 64) - 1)))[0]
    return config.roster[a], config.roster[b]


def pair_inclusion_probability(weights: Mapping[str, float], model: str) -> float:
    """P(model is one of the two drawn), by enumerating every ordered draw."""
    total = sum(weights.values())
    prob = 0.0
    for a, b in permutations(weights, 2):
        if model in (a, b):
            prob += weights[a] / total * weights[b] / (total - weights[a])
    return prob


# -- votes --------------------------------------------------------------------

def _resolve(fired_l: np.ndarray, fired_r: np.ndarray, fallback: Fallback, coin: np.ndarray) -> np.ndarray:
    """Label codes for attacker battles; -1 means abstain."""
    vote = np.full(len(fired_l), -1)
    vote[fired_l & ~fired_r] = LEFT
    vote[fired_r & ~fired_l] = RIGHT
    ambiguous = fired_l == fired_r
    if fallback is Fallback.TIE:
        vote[ambiguous] = TIE
    elif fallback is Fallback.RANDOM:
        vote[ambiguous] = np.where(coin[ambiguous] < 0.5, LEFT, RIGHT)
    return vote


def attacker_vote(
    outputs: tuple[Sequence[str], Sequence[str]],
    detector: TokenModel,
    params: AttributionParams,
    fallback: Fallback | str = Fallback.ABSTAIN,
    prompt: Sequence[str] = "",
    rng: np.random.Generator | None = None,
) -> VoteLabel | None:
    """Vote for the side attributed to the detector model; None means abstain.

    Exactly one flagged side gets the vote. Otherwise the fallback decides:
    a tie, no vote, or a fair coin between the two sides.
    """
    fallback = Fallback(fallback)
    fired = [attribute(trace_from_model(detector, prompt, out), params).decision == 1 for out in outputs]
    rng = rng if rng is not None else np.random.default_rng()
    coin = np.array([rng.random()])
    code = int(_resolve(np.array(fired[:1]), np.array(fired[1:]), fallback, coin)[0])
    return None if code < 0 else VoteLabel.from_code(code)


# -- simulation ---------------------------------------------------------------

def run_arena(config: ArenaConfig, n_battles: int, seed: int | None = None) -> ArenaOutcome:
    """Replay the attack loop for ``n_battles`` battles.

    Every stochastic stage draws from its own stream derived from ``seed``, so
    a run with the attacker removed sees the same pairs, prompts, outputs and
    honest votes as the attacked run.
    """
    if n_battles < 1:
        raise ValidationError("n_battles must be >= 1")
    seed = config.seed if seed is None else seed
    roster = config.roster
    k, n = len(roster), n_battles

    weights = np.array([config.weights[m] for m in roster])
    pairs = _draw_pairs(weights, n, rng_for(seed, "pairs"))
    prompt_idx = rng_for(seed, "prompts").integers(len(config.prompts), size=n)
    prompts = [config.prompts[i] for i in prompt_idx.tolist()]

    length = config.output_length
    tokens = np.empty((n, 2, length), dtype=np.int64)
    self_logp = np.empty((n, 2))
    for mi, name in enumerate(roster):
        slots = np.argwhere(pairs == mi)  # (battle, side)
        if len(slots) == 0:
            continue
        model = config.models[name]
        slot_prompts = [prompts[b] for b in slots[:, 0].tolist()]
        out = model.generate(
            slot_prompts, length, rng_for(seed, "generate", name), config.temperature, config.top_p
        )
        tokens[slots[:, 0], slots[:, 1]] = out
        self_logp[slots[:, 0], slots[:, 1]] = model.score(slot_prompts, out)[2].mean(axis=1)

    # honest votes
    honest_rng = rng_for(seed, "honest")
    if config.quality is not None:
        q = np.array([config.quality[m] for m in roster])
        p_left = 1.0 / (1.0 + np.exp(q[pairs[:, 1]] - q[pairs[:, 0]]))
        votes = np.where(honest_rng.random(n) < p_left, LEFT, RIGHT)
    else:
        diff = self_logp[:, 0] - self_logp[:, 1]
        votes = np.where(diff > 0, LEFT, np.where(diff < 0, RIGHT, TIE))
    flip = honest_rng.random(n) < config.honest_epsilon
    votes = np.where(flip & (votes == LEFT), RIGHT, np.where(flip & (votes == RIGHT), LEFT, votes))
    provenance = np.zeros(n, dtype=bool)

    stats = AttackerStats()
    atk = config.attacker
    if atk is not None:
        active = rng_for(seed, "attacker").random(n) < atk.rate
        coin = rng_for(seed, "fallback").random(n)
        b_idx = np.flatnonzero(active)
        t = roster.index(atk.target)
        detector = config.models[atk.target]
        fired = np.zeros((len(b_idx), 2), dtype=bool)
        for side in (0, 1):
            _, above, _ = detector.score([prompts[b] for b in b_idx.tolist()], tokens[b_idx, side])
            fired[:, side] = (above < atk.params.p).mean(axis=1) >= atk.params.t
        atk_votes = _resolve(fired[:, 0], fired[:, 1], atk.fallback, coin[b_idx])
        votes[b_idx] = atk_votes
        provenance[b_idx] = True

        is_t = pairs[b_idx] == t
        voted_side = np.where(atk_votes == LEFT, 0, np.where(atk_votes == RIGHT, 1, -1))
        for_target = (voted_side == 0) & is_t[:, 0] | (voted_side == 1) & is_t[:, 1]
        stats = AttackerStats(
            battles_seen=len(b_idx),
            target_appearances=int(is_t.any(axis=1).sum()),
            votes_cast_for_target=int((voted_side >= 0).sum()),
            votes_for_actual_target=int(for_target.sum()),
            detector_false_fires=int((fired & ~is_t).sum()),
        )

    records = []
    for b in range(n):
        code = int(votes[b])
        if code < 0:
            continue
        l_model, r_model = config.models[roster[pairs[b, 0]]], config.models[roster[pairs[b, 1]]]
        records.append(
            PreferenceRecord(
                roster[pairs[b, 0]],
                roster[pairs[b, 1]],
                VoteLabel.from_code(code),
                prompt=prompts[b],
                responses=(l_model.decode(tokens[b, 0]), r_model.decode(tokens[b, 1])),
                provenance=Provenance.ADVERSARIAL if provenance[b] else Provenance.ORGANIC,
            )
        )
    return ArenaOutcome(PreferenceDataset(roster, tuple(records)), stats)


# -- configuration files --------------------------------------------------------

BUILTIN_CORPORA = ("kitchen", "harbor", "library")


def builtin_corpus(name: str) -> str:
    if name not in BUILTIN_CORPORA:
        raise ValidationError(f"unknown builtin corpus {name!r}; choose from {BUILTIN_CORPORA}")
    return resources.files("arenarank").joinpath("data", f"{name}.txt").read_text(encoding="utf-8")


def shared_vocabulary(texts: Sequence[str]) -> tuple[str, ...]:
    return tuple(sorted(set().union(*map(set, texts))))


_MODEL_KEYS = {"corpus", "weight", "order", "k", "quality"}
_TOP_KEYS = {
    "seed", "honest.epsilon", "attacker.target", "attacker.p", "attacker.t", "attacker.fallback",
    "attacker.rate", "prompts.file", "generation.length", "generation.top_p", "generation.temperature",
}


def parse_config_text(text: str, base_dir: Path = Path(".")) -> ArenaConfig:
    """Build an ArenaConfig from ``key = value`` lines.

    ``models.<id>.corpus`` is a path relative to ``base_dir`` or ``builtin:<name>``.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("models."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _MODEL_KEYS or not parts[1]:
                raise ValidationError(f"config line {lineno}: unknown model key {key!r}")
        elif key not in _TOP_KEYS:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValidationError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value

    def num(key: str, default, cast=float):
        if key not in values:
            return default
        try:
            return cast(values[key])
        except ValueError:
            raise ValidationError(f"config key {key}: cannot parse {values[key]!r}") from None

    names = list(dict.fromkeys(key.split(".")[1] for key in values if key.startswith("models.")))
    corpora = {}
    for name in names:
        src = values.get(f"models.{name}.corpus")
        if src is None:
            raise ValidationError(f"model {name!r} has no corpus")
        if src.startswith("builtin:"):
            corpora[name] = builtin_corpus(src.split(":", 1)[1])
        else:
            path = base_dir / src
            if not path.is_file():
                raise ValidationError(f"corpus file for model {name!r} not found: {path}")
            corpora[name] = path.read_text(encoding="utf-8")

    prompts = DEFAULT_PROMPTS
    if "prompts.file" in values:
        path = base_dir / values["prompts.file"]
        if not path.is_file():
            raise ValidationError(f"prompts file not found: {path}")
        prompts = tuple(line for line in path.read_text(encoding="utf-8").splitlines() if line.strip())

    vocab = shared_vocabulary(list(corpora.values()) + list(prompts))
    models = {
        name: train_token_model(
            corpora[name],
            num(f"models.{name}.order", 3, int),
            num(f"models.{name}.k", 0.001),
            vocab,
        )
        for name in names
    }
    weights = {name: num(f"models.{name}.weight", 1.0) for name in names}
    qualities = {name: num(f"models.{name}.quality", None) for name in names}
    quality = None
    if any(q is not None for q in qualities.values()):
        if any(q is None for q in qualities.values()):
            raise ValidationError("models.<id>.quality must be set for every model or none")
        quality = qualities

    attacker = None
    if "attacker.target" in values:
        attacker = AttackerConfig(
            target=values["attacker.target"],
            params=AttributionParams(num("attacker.p", 0.9), num("attacker.t", 0.8)),
            fallback=values.get("attacker.fallback", "abstain"),
            rate=num("attacker.rate", 0.1),
        )
    elif any(k.startswith("attacker.") for k in values):
        raise ValidationError("attacker settings given without attacker.target")

    try:
        return ArenaConfig(
            models=models,
            weights=weights,
            attacker=attacker,
            honest_epsilon=num("honest.epsilon", 0.0),
            quality=quality,
            prompts=prompts,
            output_length=num("generation.length", 64, int),
            top_p=num("generation.top_p", 0.9),
            temperature=num("generation.temperature", 1.0),
            seed=num("seed", 0, int),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def load_config(path: str | Path) -> ArenaConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), path.parent)


def format_attacker_stats(stats: AttackerStats) -> str:
    return "".join(f"{name} = {getattr(stats, name)}\n" for name in AttackerStats.__dataclass_fields__)
