"""Fleiss' kappa over items x categories count tables."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError


class UndefinedKappaError(ValidationError):
    """Every rating falls in one category, so chance agreement is 1."""


@dataclass(frozen=True)
class RatingsMatrix:
    counts: np.ndarray
    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValidationError("ratings matrix must be items x categories")
        if counts.shape[0] < 1:
            raise ValidationError("ratings matrix needs at least one item")
        if counts.shape[1] < 2:
            raise ValidationError("ratings matrix needs at least two categories")
        if len(self.categories) != counts.shape[1]:
            raise ValidationError("one label per category column is required")
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValidationError("counts must be non-negative integers")
        rows = counts.sum(axis=1)
        if np.any(rows != rows[0]):
            bad = int(np.flatnonzero(rows != rows[0])[0])
            raise ValidationError(
                f"every item needs the same number of ratings; item {bad} has {int(rows[bad])}, "
                f"item 0 has {int(rows[0])}"
            )
        if rows[0] < 2:
            raise ValidationError("at least two annotators per item are required")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "categories", tuple(self.categories))

    @property
    def annotators_per_item(self) -> int:
        return int(self.counts[0].sum())


def fleiss_kappa(matrix: RatingsMatrix) -> float:
    counts = matrix.counts.astype(float)
    n = matrix.annotators_per_item
    per_item = (counts * (counts - 1)).sum(axis=1) / (n * (n - 1))
    p_bar = per_item.mean()
    proportions = counts.sum(axis=0) / counts.sum()
    p_e = float(np.sum(proportions**2))
    if p_e >= 1.0:
        raise UndefinedKappaError("kappa is undefined: all ratings fall in a single category")
    return float((p_bar - p_e) / (1.0 - p_e))


def matrices_from_long(rows: Sequence[tuple[str, str, str, str]]) -> dict[str, RatingsMatrix]:
    """Per-dimension matrices from (item_id, annotator_id, dimension, category) rows.

    Categories are the sorted labels seen within each dimension; items are in
    first-seen order.
    """
    by_dim: dict[str, dict[str, dict[str, str]]] = defaultdict(dict)
    for item, annotator, dim, category in rows:
        ratings = by_dim[dim].setdefault(item, {})
        if annotator in ratings:
            raise ValidationError(f"annotator {annotator!r} rated item {item!r} twice on {dim!r}")
        ratings[annotator] = category
    out = {}
    for dim, items in by_dim.items():
        cats = tuple(sorted({c for r in items.values() for c in r.values()}))
        col = {c: j for j, c in enumerate(cats)}
        counts = np.zeros((len(items), len(cats)), dtype=np.int64)
        for i, ratings in enumerate(items.values()):
            for c in ratings.values():
                counts[i, col[c]] += 1
        if len(cats) < 2:
            # a second, unused column keeps the matrix valid; kappa is still undefined
            cats = cats + ("",)
            counts = np.hstack([counts, np.zeros((len(items), 1), dtype=np.int64)])
        try:
            out[dim] = RatingsMatrix(counts, cats)
        except ValidationError as exc:
            raise ValidationError(f"dimension {dim!r}: {exc}") from exc
    return out


def read_ratings(path: str | Path) -> dict[str, dict[str, RatingsMatrix]]:
    """group -> dimension -> matrix from a delimited ratings file.

    Required columns: item_id, annotator_id, dimension, category. An optional
    ``group`` column (a model pair, say) splits the file into table rows;
    without it every rating belongs to the group "all".
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"ratings file not found: {path}")
    needed = ("item_id", "annotator_id", "dimension", "category")
    groups: dict[str, list[tuple[str, str, str, str]]] = defaultdict(list)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"{path}: missing columns {missing}")
        for row in reader:
            if any(not row[c] for c in needed):
                raise ValidationError(f"{path}: line {reader.line_num} has an empty field")
            groups[row.get("group") or "all"].append(tuple(row[c] for c in needed))
    if not groups:
        raise ValidationError(f"{path}: no ratings")
    out = {}
    for g, rows in groups.items():
        try:
            out[g] = matrices_from_long(rows)
        except ValidationError as exc:
            raise ValidationError(f"{path}: group {g!r}: {exc}") from exc
    return out
