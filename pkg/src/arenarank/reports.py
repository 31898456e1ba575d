"""Plain-text and CSV rendering of leaderboards, displacement, detector and kappa tables."""

from __future__ import annotations

import csv
import io
from typing import Mapping, Sequence

from .attribution import AttributionParams, DetectorQuality
from .btrank import Leaderboard, render_rank
from .corruption import DisplacementSummary


def text_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for n, row in enumerate(cells):
        # first column left-aligned, the rest right-aligned
        parts = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def csv_text(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:g}"


def leaderboard_rows(lb: Leaderboard) -> tuple[list[str], list[list[object]]]:
    headers = ["Rank", "Model", "Score"]
    if lb.rank_interval is not None:
        headers += ["Rank 2.5%", "Rank 97.5%"]
    rows = []
    for e in lb.entries:
        row: list[object] = [e.rank, e.model, f"{e.score:.6f}"]
        if lb.rank_interval is not None:
            low, high = lb.rank_interval.get(e.model, ("", ""))
            row += [low, high]
        rows.append(row)
    # model name first, then the rank columns
    return headers, rows


def leaderboard_text(lb: Leaderboard) -> str:
    headers, rows = leaderboard_rows(lb)
    order = [1, 0] + list(range(2, len(headers)))
    return text_table([headers[i] for i in order], [[r[i] for i in order] for r in rows])


def displacement_cell(median_new_rank: float, median_delta: float) -> str:
    if float(median_new_rank).is_integer() and float(median_delta).is_integer():
        return render_rank(int(median_new_rank), int(median_delta))
    arrow = "↑" if median_delta > 0 else "↓" if median_delta < 0 else ""
    return f"{_num(median_new_rank)}{arrow}{_num(abs(median_delta)) if arrow else ''}"


def displacement_text(summaries: Sequence[DisplacementSummary], models: Sequence[str]) -> str:
    """Rows are models, columns the original rank and one median cell per rate."""
    headers = ["Model", "Orig."] + [f"r={_num(s.spec.rate_percent)}" for s in summaries]
    rows = []
    for m in models:
        base = summaries[0].per_model[m].base_rank
        cells = [displacement_cell(s.per_model[m].median_new_rank, s.per_model[m].median_delta) for s in summaries]
        rows.append([m, base] + cells)
    return text_table(headers, rows)


def displacement_stats_csv(summaries: Sequence[DisplacementSummary]) -> str:
    headers = ["rate", "model", "base_rank", "median_new_rank", "median_delta", "min_delta",
               "max_delta", "frac_abs_delta_ge5", "trials", "failed_trials"]
    rows = []
    for s in summaries:
        for m, d in s.per_model.items():
            rows.append([_num(s.spec.rate_percent), m, d.base_rank, _num(d.median_new_rank), _num(d.median_delta),
                         d.min_delta, d.max_delta, f"{d.frac_abs_ge5:.4f}", s.trials, s.failed_trials])
    return csv_text(headers, rows)


def displacement_trials_csv(summaries: Sequence[DisplacementSummary]) -> str:
    headers = ["rate", "trial", "model", "base_rank", "new_rank", "delta"]
    rows = []
    for s in summaries:
        for trial, per_model in s.raw.items():
            for m, (new_rank, delta) in per_model.items():
                rows.append([_num(s.spec.rate_percent), trial, m, s.per_model[m].base_rank, new_rank, delta])
    return csv_text(headers, rows)


def detector_text(rows: Sequence[tuple[str, DetectorQuality]]) -> str:
    return text_table(
        ["Model", "TPR", "TNR", "#Tokens"],
        [[m, f"{100 * q.tpr:.2f}", f"{100 * q.tnr:.2f}", f"{q.mean_tokens:.2f}"] for m, q in rows],
    )


def sweep_csv(sweep: Sequence[tuple[AttributionParams, DetectorQuality]]) -> str:
    return csv_text(
        ["p", "t", "tpr", "tnr", "mean_tokens"],
        [[_num(pr.p), _num(pr.t), f"{q.tpr:.6f}", f"{q.tnr:.6f}", f"{q.mean_tokens:.2f}"] for pr, q in sweep],
    )


def kappa_text(table: Mapping[str, Mapping[str, float | None]], dimensions: Sequence[str], scale100: bool) -> str:
    """Rows are groups (e.g. model pairs), columns dimensions; None marks an undefined kappa."""
    def fmt(k: float | None) -> str:
        if k is None:
            return "n/a"
        return f"{100 * k:.2f}" if scale100 else f"{k:.4f}"

    return text_table([""] + list(dimensions), [[g] + [fmt(row.get(d)) for d in dimensions] for g, row in table.items()])
