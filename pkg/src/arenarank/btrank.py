"""Bradley-Terry fitting, leaderboards, bootstrap rank intervals and rank displacement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, ValidationError
from .prefdata import LEFT, RIGHT, TIE, PreferenceDataset
from .seeding import rng_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitOptions:
    # L2 weight on the per-battle-normalized log-likelihood
    regularization: float = 1e-4
    tolerance: float = 1e-8
    max_iterations: int = 10_000

    def __post_init__(self) -> None:
        if not self.regularization > 0:
            raise ValidationError("regularization must be > 0")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")


@dataclass(frozen=True)
class WinMatrix:
    roster: tuple[str, ...]
    win_prob: np.ndarray
    battle_count: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.battle_count > 0

    def prob(self, a: str, b: str) -> float | None:
        i, j = self.roster.index(a), self.roster.index(b)
        return float(self.win_prob[i, j]) if self.battle_count[i, j] else None


@dataclass(frozen=True)
class BtScores:
    roster: tuple[str, ...]
    score: np.ndarray
    anchoring: str = "zero-mean"
    iterations: int = 0
    # penalized, per-battle-normalized objective after each accepted step
    history: tuple[float, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.roster, self.score.tolist()))


@dataclass(frozen=True)
class LeaderboardEntry:
    rank: int
    model: str
    score: float


@dataclass(frozen=True)
class Leaderboard:
    entries: tuple[LeaderboardEntry, ...]
    rank_interval: Mapping[str, tuple[int, int]] | None = None
    # bootstrap resamples in which a model was absent, per model
    skipped: Mapping[str, int] | None = None

    @property
    def ranks(self) -> dict[str, int]:
        return {e.model: e.rank for e in self.entries}

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(e.model for e in self.entries)

    def rank_of(self, model: str) -> int:
        return self.ranks[model]


@dataclass(frozen=True)
class Displacement:
    base_rank: int
    new_rank: int

    @property
    def delta(self) -> int:
        return self.base_rank - self.new_rank

    def render(self) -> str:
        return render_rank(self.new_rank, self.delta)


@dataclass(frozen=True)
class RankDisplacement:
    per_model: Mapping[str, Displacement] = field(default_factory=dict)

    @property
    def deltas(self) -> dict[str, int]:
        return {m: d.delta for m, d in self.per_model.items()}


def render_rank(rank: int, delta: int) -> str:
    """``28↑11`` for a gain, ``41↓5`` for a loss, plain rank when unchanged."""
    if delta > 0:
        return f"{rank}↑{delta}"
    if delta < 0:
        return f"{rank}↓{-delta}"
    return str(rank)


# -- counting ---------------------------------------------------------------

def pair_counts(
    k: int, left: np.ndarray, right: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """k x k matrix C with C[i, j] = wins of i over j, each tie counted half to both sides."""
    if weights is None:
        weights = np.ones(len(left))
    win_l = weights * ((labels == LEFT) + 0.5 * (labels == TIE))
    win_r = weights * ((labels == RIGHT) + 0.5 * (labels == TIE))
    counts = np.bincount(left * k + right, weights=win_l, minlength=k * k)
    counts += np.bincount(right * k + left, weights=win_r, minlength=k * k)
    return counts.reshape(k, k)


def _dataset_counts(ds: PreferenceDataset) -> np.ndarray:
    left, right, labels = ds.arrays
    return pair_counts(len(ds.roster), left, right, labels)


def win_matrix(ds: PreferenceDataset) -> WinMatrix:
    counts = _dataset_counts(ds)
    battles = counts + counts.T
    win_prob = np.divide(counts, battles, out=np.zeros_like(counts), where=battles > 0)
    return WinMatrix(ds.roster, win_prob, np.rint(battles).astype(np.int64))


# -- fitting ----------------------------------------------------------------

def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def bt_objective(scores: np.ndarray, counts: np.ndarray, regularization: float) -> float:
    """Penalized tie-split BT log-likelihood divided by the number of battles."""
    total = counts.sum()
    diff = scores[:, None] - scores[None, :]
    ll = np.sum(counts * _log_sigmoid(diff)) / total
    return float(ll - regularization * np.sum(scores**2))


def fit_counts(counts: np.ndarray, opts: FitOptions = FitOptions()) -> tuple[np.ndarray, int, tuple[float, ...]]:
    """Maximize the penalized BT objective on a pair-count matrix.

    Damped Newton ascent: the Hessian is the negated weighted graph Laplacian
    minus 2*lambda*I, so it is negative definite for any lambda > 0 and every
    step is an ascent direction. Step halving keeps the objective monotone.
    """
    k = counts.shape[0]
    total = counts.sum()
    battles = counts + counts.T
    lam = opts.regularization
    s = np.zeros(k)
    f = bt_objective(s, counts, lam)
    history = [f]

    for it in range(1, opts.max_iterations + 1):
        diff = s[:, None] - s[None, :]
        p = 1.0 / (1.0 + np.exp(-diff))
        grad = (counts - battles * p).sum(axis=1) / total - 2 * lam * s
        w = battles * p * p.T / total
        hess = w - np.diag(w.sum(axis=1)) - 2 * lam * np.eye(k)
        step = np.linalg.solve(hess, -grad)

        alpha = 1.0
        for _ in range(60):
            cand = s + alpha * step
            f_new = bt_objective(cand, counts, lam)
            if f_new >= f:
                break
            alpha *= 0.5
        else:
            # no representable ascent left: at the floating-point optimum
            return s - s.mean(), it, tuple(history)

        improvement = f_new - f
        s, f = cand, f_new
        history.append(f)
        if improvement < opts.tolerance:
            return s - s.mean(), it, tuple(history)

    grad_norm = float(np.linalg.norm(grad))
    raise ConvergenceError(opts.max_iterations, grad_norm)


def fit_bt(ds: PreferenceDataset, opts: FitOptions = FitOptions()) -> BtScores:
    counts = _dataset_counts(ds)
    battles = (counts + counts.T).sum(axis=1)
    idle = [m for m, b in zip(ds.roster, battles) if b == 0]
    if idle:
        raise ValidationError(f"models with zero battles cannot be fitted: {idle}")
    scores, iterations, history = fit_counts(counts, opts)
    return BtScores(ds.roster, scores, iterations=iterations, history=history)


# -- leaderboards -----------------------------------------------------------

def leaderboard(scores: BtScores) -> Leaderboard:
    """Sort by score descending, breaking exact ties by model name."""
    order = sorted(zip(scores.roster, scores.score.tolist()), key=lambda ms: (-ms[1], ms[0]))
    return Leaderboard(tuple(LeaderboardEntry(i + 1, m, s) for i, (m, s) in enumerate(order)))


def _ranks_from_scores(roster: Sequence[str], scores: np.ndarray) -> dict[str, int]:
    order = sorted(zip(roster, scores.tolist()), key=lambda ms: (-ms[1], ms[0]))
    return {m: i + 1 for i, (m, _) in enumerate(order)}


def bootstrap_ranks(
    ds: PreferenceDataset, resamples: int, seed: int, opts: FitOptions = FitOptions()
) -> Leaderboard:
    """Full-data leaderboard with 2.5-97.5 percentile rank intervals from record-level resampling.

    A resample that loses a model entirely is refit on the surviving models; the
    lost model contributes no rank sample for that resample and is counted in
    ``skipped``.
    """
    if resamples < 1:
        raise ValidationError("resamples must be >= 1")
    base = leaderboard(fit_bt(ds, opts))
    left, right, labels = ds.arrays
    k, n = len(ds.roster), len(ds)
    samples: dict[str, list[int]] = {m: [] for m in ds.roster}
    skipped = {m: 0 for m in ds.roster}

    for b in range(resamples):
        rng = rng_for(seed, "bootstrap", b)
        idx = rng.integers(n, size=n)
        counts = pair_counts(k, left[idx], right[idx], labels[idx])
        alive = (counts + counts.T).sum(axis=1) > 0
        sub = counts[np.ix_(alive, alive)]
        roster = [m for m, a in zip(ds.roster, alive) if a]
        scores, _, _ = fit_counts(sub, opts)
        for m, r in _ranks_from_scores(roster, scores).items():
            samples[m].append(r)
        for m, a in zip(ds.roster, alive):
            if not a:
                skipped[m] += 1

    intervals = {}
    for m, rs in samples.items():
        if rs:
            arr = np.asarray(rs)
            intervals[m] = (
                int(np.percentile(arr, 2.5, method="lower")),
                int(np.percentile(arr, 97.5, method="higher")),
            )
    if any(skipped.values()):
        logger.info("bootstrap: models missing from some resamples: %s", {m: c for m, c in skipped.items() if c})
    return Leaderboard(base.entries, intervals, skipped)


def rank_displacement(base: Leaderboard, other: Leaderboard) -> RankDisplacement:
    b, o = base.ranks, other.ranks
    if set(b) != set(o):
        raise ValidationError(
            f"leaderboard rosters differ: only in base {sorted(set(b) - set(o))}, "
            f"only in other {sorted(set(o) - set(b))}"
        )
    return RankDisplacement({m: Displacement(b[m], o[m]) for m in base.models})
