"""Battle records, dataset ingestion and the synthetic ground-truth generator."""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError


class VoteLabel(str, Enum):
    LEFT_WINS = "model_a"
    RIGHT_WINS = "model_b"
    TIE = "tie"

    @property
    def code(self) -> int:
        return _LABEL_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "VoteLabel":
        return _LABELS[code]


_LABELS = (VoteLabel.LEFT_WINS, VoteLabel.RIGHT_WINS, VoteLabel.TIE)
_LABEL_CODES = {label: i for i, label in enumerate(_LABELS)}

# integer codes used by the array views
LEFT, RIGHT, TIE = 0, 1, 2


class Provenance(str, Enum):
    ORGANIC = "organic"
    APATHETIC = "apathetic"
    ADVERSARIAL = "adversarial"


def check_model_id(name: object) -> str:
    if not isinstance(name, str) or not name:
        raise ValidationError(f"model id must be a non-empty string, got {name!r}")
    if name != name.strip():
        raise ValidationError(f"model id {name!r} has leading/trailing whitespace")
    return name


@dataclass(frozen=True)
class PreferenceRecord:
    left: str
    right: str
    label: VoteLabel
    prompt: str | None = None
    responses: tuple[str, str] | None = None
    provenance: Provenance = Provenance.ORGANIC

    def __post_init__(self) -> None:
        check_model_id(self.left)
        check_model_id(self.right)
        if self.left == self.right:
            raise ValidationError(f"battle pits {self.left!r} against itself")
        if not isinstance(self.label, VoteLabel):
            object.__setattr__(self, "label", VoteLabel(self.label))
        if not isinstance(self.provenance, Provenance):
            object.__setattr__(self, "provenance", Provenance(self.provenance))

    def winner(self) -> str | None:
        if self.label is VoteLabel.LEFT_WINS:
            return self.left
        if self.label is VoteLabel.RIGHT_WINS:
            return self.right
        return None


@dataclass(frozen=True)
class PreferenceDataset:
    """An ordered, immutable collection of battles over a fixed roster.

    Record order is part of the identity: corruption picks record indices, so
    the same seed only reproduces the same corruption on the same ordering.
    """

    roster: tuple[str, ...]
    records: tuple[PreferenceRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "roster", tuple(check_model_id(m) for m in self.roster))
        object.__setattr__(self, "records", tuple(self.records))
        if len(set(self.roster)) != len(self.roster):
            raise ValidationError("roster contains duplicate model ids")
        known = set(self.roster)
        for i, rec in enumerate(self.records):
            if rec.left not in known or rec.right not in known:
                raise ValidationError(
                    f"record {i} references a model outside the roster: {rec.left!r} vs {rec.right!r}"
                )

    @classmethod
    def from_records(
        cls, records: Iterable[PreferenceRecord], roster: Sequence[str] | None = None
    ) -> "PreferenceDataset":
        records = tuple(records)
        if roster is None:
            roster = sorted({m for r in records for m in (r.left, r.right)})
        return cls(tuple(roster), records)

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def index(self) -> dict[str, int]:
        return {m: i for i, m in enumerate(self.roster)}

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(left index, right index, label code) as read-only integer arrays."""
        idx = self.index
        n = len(self.records)
        left = np.fromiter((idx[r.left] for r in self.records), dtype=np.int64, count=n)
        right = np.fromiter((idx[r.right] for r in self.records), dtype=np.int64, count=n)
        labels = np.fromiter((_LABEL_CODES[r.label] for r in self.records), dtype=np.int8, count=n)
        for a in (left, right, labels):
            a.setflags(write=False)
        return left, right, labels

    def with_records(self, records: Iterable[PreferenceRecord]) -> "PreferenceDataset":
        return PreferenceDataset(self.roster, tuple(records))


@dataclass(frozen=True)
class GroundTruthModelSpec:
    scores: Mapping[str, float]
    tie_probability: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", {check_model_id(m): float(s) for m, s in self.scores.items()})
        if len(self.scores) < 2:
            raise ValidationError("ground-truth spec needs at least 2 models")
        if not all(math.isfinite(s) for s in self.scores.values()):
            raise ValidationError("ground-truth scores must be finite")
        if not 0.0 <= self.tie_probability < 1.0:
            raise ValidationError(f"tie_probability must lie in [0, 1), got {self.tie_probability}")

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruthModelSpec":
        """Read ``{"scores": {"A": 0.5, ...}, "tie_probability": 0.1}``."""
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read model spec {path}: {exc}") from exc
        if not isinstance(raw, dict) or not isinstance(raw.get("scores"), dict):
            raise ValidationError(f"model spec {path} must be an object with a 'scores' mapping")
        return cls(raw["scores"], float(raw.get("tie_probability", 0.0)))


def generate_synthetic(spec: GroundTruthModelSpec, n: int, seed: int) -> PreferenceDataset:
    """Draw ``n`` battles from a Bradley-Terry ground truth.

    Pairs are uniform over unordered pairs, the side assignment is a fair coin,
    ties occur with ``spec.tie_probability`` and otherwise the left model wins
    with probability ``exp(s_L) / (exp(s_L) + exp(s_R))``.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    roster = tuple(spec.scores)
    scores = np.array([spec.scores[m] for m in roster])
    pairs = np.array(list(combinations(range(len(roster)), 2)))

    rng = np.random.default_rng(seed & ((1 << 64) - 1))
    chosen = pairs[rng.integers(len(pairs), size=n)]
    swap = rng.random(n) < 0.5
    left = np.where(swap, chosen[:, 1], chosen[:, 0])
    right = np.where(swap, chosen[:, 0], chosen[:, 1])
    tie = rng.random(n) < spec.tie_probability
    p_left = 1.0 / (1.0 + np.exp(scores[right] - scores[left]))
    left_wins = rng.random(n) < p_left
    codes = np.where(tie, TIE, np.where(left_wins, LEFT, RIGHT))

    records = tuple(
        PreferenceRecord(roster[l], roster[r], _LABELS[c])
        for l, r, c in zip(left.tolist(), right.tolist(), codes.tolist())
    )
    return PreferenceDataset(roster, records)


# -- file formats -----------------------------------------------------------

FORMATS = ("canonical_jsonl", "lmsys55k_csv")


def load_dataset(path: str | Path, format: str = "canonical_jsonl") -> PreferenceDataset:
    path = Path(path)
    if format not in FORMATS:
        raise ValidationError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if not path.is_file():
        raise ValidationError(f"dataset file not found: {path}")
    if format == "canonical_jsonl":
        records = _read_jsonl(path)
    else:
        records = _read_lmsys_csv(path)
    return PreferenceDataset.from_records(records)


def _read_jsonl(path: Path) -> list[PreferenceRecord]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in ("model_a", "model_b", "winner") if k not in obj]
            if missing:
                raise ValidationError(f"{path}:{lineno}: missing required keys {missing}")
            try:
                label = VoteLabel(obj["winner"])
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: winner must be one of model_a/model_b/tie, got {obj['winner']!r}"
                ) from None
            responses = None
            if obj.get("response_a") is not None or obj.get("response_b") is not None:
                responses = (obj.get("response_a") or "", obj.get("response_b") or "")
            try:
                records.append(
                    PreferenceRecord(
                        obj["model_a"],
                        obj["model_b"],
                        label,
                        prompt=obj.get("prompt"),
                        responses=responses,
                        provenance=Provenance(obj.get("provenance", "organic")),
                    )
                )
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return records


_INDICATORS = ("winner_model_a", "winner_model_b", "winner_tie")


def _indicator(value: str | None, where: str, column: str) -> bool:
    text = (value or "").strip().lower()
    if text in ("1", "1.0", "true"):
        return True
    if text in ("0", "0.0", "false", ""):
        return False
    raise ValidationError(f"{where}: column {column} must be a 0/1 indicator, got {value!r}")


def _read_lmsys_csv(path: Path) -> list[PreferenceRecord]:
    csv.field_size_limit(min(sys.maxsize, 2**31 - 1))
    records = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("model_a", "model_b", *_INDICATORS) if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing columns {missing}")
        # any "winner_tie*" column (e.g. a bothbad variant) folds into Tie
        tie_columns = [c for c in header if c.startswith("winner_tie")]
        row_no = 0
        for row in reader:
            row_no += 1
            where = f"{path}: row {row_no} (line {reader.line_num})"
            a = _indicator(row["winner_model_a"], where, "winner_model_a")
            b = _indicator(row["winner_model_b"], where, "winner_model_b")
            tie = any(_indicator(row[c], where, c) for c in tie_columns)
            if a + b + tie != 1:
                raise ValidationError(
                    f"{where}: exactly one winner indicator must be set, got "
                    f"model_a={int(a)} model_b={int(b)} tie={int(tie)}"
                )
            label = VoteLabel.LEFT_WINS if a else VoteLabel.RIGHT_WINS if b else VoteLabel.TIE
            responses = None
            if "response_a" in row or "response_b" in row:
                responses = (row.get("response_a") or "", row.get("response_b") or "")
            try:
                records.append(
                    PreferenceRecord(
                        row["model_a"], row["model_b"], label,
                        prompt=row.get("prompt"), responses=responses,
                    )
                )
            except ValueError as exc:
                raise ValidationError(f"{where}: {exc}") from exc
    return records


def record_to_json(rec: PreferenceRecord) -> dict:
    obj: dict = {"model_a": rec.left, "model_b": rec.right, "winner": rec.label.value}
    if rec.prompt is not None:
        obj["prompt"] = rec.prompt
    if rec.responses is not None:
        obj["response_a"], obj["response_b"] = rec.responses
    if rec.provenance is not Provenance.ORGANIC:
        obj["provenance"] = rec.provenance.value
    return obj


def write_jsonl(ds: PreferenceDataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in ds.records:
            fh.write(json.dumps(record_to_json(rec), ensure_ascii=False))
            fh.write("\n")
