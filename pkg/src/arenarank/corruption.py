"""Apathetic and adversarial vote corruption, and Monte Carlo rank-displacement experiments."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .btrank import FitOptions, Leaderboard, fit_bt, leaderboard, rank_displacement
from .errors import ConvergenceError, ValidationError
from .prefdata import LEFT, RIGHT, PreferenceDataset, PreferenceRecord, Provenance, VoteLabel
from .seeding import derive_seed

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    APATHETIC = "apathetic"
    ADVERSARIAL_FLIP = "adversarial_flip"
    ADVERSARIAL_INJECT = "adversarial_inject"


@dataclass(frozen=True)
class CorruptionSpec:
    mode: Mode
    rate_percent: float
    target: str | None = None
    # (tpr, tnr) of the attacker's detector; perfect by default
    detector_quality: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    # models the attacker additionally votes against (adversarial modes only)
    competitors: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 <= self.rate_percent <= 100.0:
            raise ValidationError(f"rate must lie in [0, 100], got {self.rate_percent}")
        tpr, tnr = self.detector_quality
        if not (0.0 <= tpr <= 1.0 and 0.0 <= tnr <= 1.0):
            raise ValidationError(f"detector tpr/tnr must lie in [0, 1], got {self.detector_quality}")
        if self.mode is not Mode.APATHETIC and not self.target:
            raise ValidationError(f"{self.mode.value} corruption requires a target model")
        object.__setattr__(self, "competitors", tuple(self.competitors))
        if self.target in self.competitors:
            raise ValidationError("the target cannot also be a competitor")

    def validate_for(self, ds: PreferenceDataset) -> None:
        if self.mode is not Mode.APATHETIC and self.target not in ds.index:
            raise ValidationError(f"target {self.target!r} is not in the dataset roster")
        unknown = [c for c in self.competitors if c not in ds.index]
        if unknown:
            raise ValidationError(f"competitors not in roster: {unknown}")


def corrupted_count(rate_percent: float, n: int) -> int:
    """floor(r * n / 100), exact for decimal rates such as 0.1 or 12.5."""
    return math.floor(Fraction(repr(float(rate_percent))) * n / 100)


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & ((1 << 64) - 1))


def corrupt_apathetic(ds: PreferenceDataset, rate_percent: float, seed: int) -> PreferenceDataset:
    """Replace the labels of a random r% of records with uniform draws over the three labels.

    The new label may coincide with the old one; every touched record is tagged
    apathetic either way.
    """
    if not 0.0 <= rate_percent <= 100.0:
        raise ValidationError(f"rate must lie in [0, 100], got {rate_percent}")
    m = corrupted_count(rate_percent, len(ds))
    if m == 0:
        return ds
    rng = _rng(seed)
    chosen = rng.choice(len(ds), size=m, replace=False)
    codes = rng.integers(3, size=m)
    records = list(ds.records)
    for i, c in zip(chosen.tolist(), codes.tolist()):
        records[i] = dataclasses.replace(
            records[i], label=VoteLabel.from_code(c), provenance=Provenance.APATHETIC
        )
    return ds.with_records(records)


def _attacker_pick(is_target_l, is_target_r, u_l, u_r, tpr, tnr):
    """Per-side detector firing; returns (fired_left, fired_right)."""
    fired_l = np.where(is_target_l, u_l < tpr, u_l < 1.0 - tnr)
    fired_r = np.where(is_target_r, u_r < tpr, u_r < 1.0 - tnr)
    return fired_l, fired_r


def corrupt_adversarial(ds: PreferenceDataset, spec: CorruptionSpec) -> PreferenceDataset:
    """Attacker votes for whichever side its detector flags as the target.

    flip: within a random r% of existing records, a battle where exactly one side
    is flagged gets relabeled as a win for that side; battles where neither or
    both sides fire stay untouched.
    inject: floor(r * n / 100) new target-vs-opponent battles are appended; a
    detector miss or double fire is recorded as a tie.
    """
    if spec.mode is Mode.APATHETIC:
        raise ValidationError("corrupt_adversarial needs an adversarial mode")
    spec.validate_for(ds)
    m = corrupted_count(spec.rate_percent, len(ds))
    if m == 0:
        return ds
    if spec.mode is Mode.ADVERSARIAL_FLIP:
        return _flip(ds, spec, m)
    return _inject(ds, spec, m)


def _flip(ds: PreferenceDataset, spec: CorruptionSpec, m: int) -> PreferenceDataset:
    rng = _rng(spec.seed)
    tpr, tnr = spec.detector_quality
    t = ds.index[spec.target]
    left, right, _ = ds.arrays
    chosen = np.sort(rng.choice(len(ds), size=m, replace=False))
    u = rng.random((m, 2))
    l, r = left[chosen], right[chosen]
    fired_l, fired_r = _attacker_pick(l == t, r == t, u[:, 0], u[:, 1], tpr, tnr)
    vote = np.full(m, -1)
    vote[fired_l & ~fired_r] = LEFT
    vote[fired_r & ~fired_l] = RIGHT

    if spec.competitors:
        comp = np.zeros(len(ds.roster), dtype=bool)
        comp[[ds.index[c] for c in spec.competitors]] = True
        u2 = rng.random((m, 2))
        no_target = (l != t) & (r != t)
        seen_l = comp[l] & (u2[:, 0] < tpr)
        seen_r = comp[r] & (u2[:, 1] < tpr)
        pending = (vote < 0) & no_target
        vote[pending & seen_l & ~seen_r] = RIGHT
        vote[pending & seen_r & ~seen_l] = LEFT

    records = list(ds.records)
    for i, v in zip(chosen.tolist(), vote.tolist()):
        if v >= 0:
            records[i] = dataclasses.replace(
                records[i], label=VoteLabel.from_code(v), provenance=Provenance.ADVERSARIAL
            )
    return ds.with_records(records)


def _inject(ds: PreferenceDataset, spec: CorruptionSpec, m: int) -> PreferenceDataset:
    rng = _rng(spec.seed)
    tpr, tnr = spec.detector_quality
    pool = list(spec.competitors) or [x for x in ds.roster if x != spec.target]
    opponents = rng.integers(len(pool), size=m)
    target_left = rng.random(m) < 0.5
    u = rng.random((m, 2))
    fired_t = u[:, 0] < tpr
    fired_o = u[:, 1] < 1.0 - tnr
    new = []
    for o, tl, ft, fo in zip(opponents.tolist(), target_left.tolist(), fired_t.tolist(), fired_o.tolist()):
        if ft and not fo:
            target_wins = True
        elif fo and not ft:
            target_wins = False
        else:
            target_wins = None
        if tl:
            left, right = spec.target, pool[o]
        else:
            left, right = pool[o], spec.target
        if target_wins is None:
            label = VoteLabel.TIE
        elif target_wins == tl:
            label = VoteLabel.LEFT_WINS
        else:
            label = VoteLabel.RIGHT_WINS
        new.append(PreferenceRecord(left, right, label, provenance=Provenance.ADVERSARIAL))
    return ds.with_records(ds.records + tuple(new))


def corrupt(ds: PreferenceDataset, spec: CorruptionSpec) -> PreferenceDataset:
    if spec.mode is Mode.APATHETIC:
        return corrupt_apathetic(ds, spec.rate_percent, spec.seed)
    return corrupt_adversarial(ds, spec)


# -- experiments ------------------------------------------------------------

@dataclass(frozen=True)
class ModelDisplacement:
    base_rank: int
    median_delta: float
    min_delta: int
    max_delta: int
    frac_abs_ge5: float
    median_new_rank: float


@dataclass(frozen=True)
class DisplacementSummary:
    spec: CorruptionSpec
    trials: int
    per_model: dict[str, ModelDisplacement]
    # trial index -> model -> (new_rank, delta); failed trials are absent
    raw: dict[int, dict[str, tuple[int, int]]] = field(repr=False, default_factory=dict)
    failed_trials: int = 0


def displacement_experiment(
    ds: PreferenceDataset,
    spec: CorruptionSpec,
    trials: int,
    opts: FitOptions = FitOptions(),
    base: Leaderboard | None = None,
) -> DisplacementSummary:
    """Corrupt-refit-compare ``trials`` times against the clean leaderboard."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    spec.validate_for(ds)
    if base is None:
        base = leaderboard(fit_bt(ds, opts))
    raw: dict[int, dict[str, tuple[int, int]]] = {}
    failed = 0
    for trial in range(trials):
        trial_spec = dataclasses.replace(spec, seed=derive_seed(spec.seed, "trial", trial))
        try:
            lb = leaderboard(fit_bt(corrupt(ds, trial_spec), opts))
        except ConvergenceError as exc:
            logger.warning("trial %d aborted: %s", trial, exc)
            failed += 1
            continue
        disp = rank_displacement(base, lb)
        raw[trial] = {m: (d.new_rank, d.delta) for m, d in disp.per_model.items()}
    if not raw:
        raise ConvergenceError(opts.max_iterations, float("nan"))

    per_model = {}
    for m in base.models:
        deltas = np.array([raw[t][m][1] for t in raw])
        new_ranks = np.array([raw[t][m][0] for t in raw])
        per_model[m] = ModelDisplacement(
            base_rank=base.rank_of(m),
            median_delta=float(np.median(deltas)),
            min_delta=int(deltas.min()),
            max_delta=int(deltas.max()),
            frac_abs_ge5=float(np.mean(np.abs(deltas) >= 5)),
            median_new_rank=float(np.median(new_ranks)),
        )
    return DisplacementSummary(spec, len(raw), per_model, raw, failed)
