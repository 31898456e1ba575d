import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arenarank.btrank import (
    BtScores,
    FitOptions,
    Leaderboard,
    LeaderboardEntry,
    bootstrap_ranks,
    fit_bt,
    leaderboard,
    rank_displacement,
    render_rank,
    win_matrix,
)
from arenarank.errors import ConvergenceError, ValidationError
from arenarank.prefdata import (
    GroundTruthModelSpec,
    PreferenceDataset,
    PreferenceRecord,
    VoteLabel,
    generate_synthetic,
)
from oracles import counts_from_labels, grid_search_mle

L, R, T = VoteLabel.LEFT_WINS, VoteLabel.RIGHT_WINS, VoteLabel.TIE
TINY = FitOptions(regularization=1e-12)


def battles(*groups, roster=None):
    records = []
    for left, right, label, count in groups:
        records += [PreferenceRecord(left, right, label)] * count
    return PreferenceDataset.from_records(records, roster)


def test_win_matrix_tie_split():
    ds = battles(("A", "B", L, 7), ("B", "A", L, 1), ("A", "B", T, 2))
    wm = win_matrix(ds)
    assert wm.prob("A", "B") == pytest.approx(0.8)
    assert wm.prob("B", "A") == pytest.approx(0.2)
    assert wm.battle_count[0, 1] == 10


def test_win_matrix_absent_cell():
    ds = battles(("A", "B", L, 1), ("C", "D", L, 1), roster=("A", "B", "C", "D"))
    wm = win_matrix(ds)
    assert wm.prob("C", "A") is None
    assert wm.battle_count[0, 2] == 0
    assert not wm.present[2, 0]


def test_win_matrix_synthetic_closed_form():
    ds = generate_synthetic(GroundTruthModelSpec({"A": math.log(3), "B": 0.0}), 10_000, seed=4)
    assert abs(win_matrix(ds).prob("A", "B") - 0.75) <= 0.02


def test_two_model_closed_form():
    ds = battles(("A", "B", L, 75), ("A", "B", R, 25))
    s = fit_bt(ds, TINY).as_dict()
    assert s["A"] - s["B"] == pytest.approx(math.log(3), abs=1e-3)
    assert s["A"] + s["B"] == pytest.approx(0.0, abs=1e-9)


def test_two_model_matches_grid_search():
    ds = battles(("A", "B", L, 75), ("A", "B", R, 25))
    counts = counts_from_labels(2, [(0, 1, "L")] * 75 + [(0, 1, "R")] * 25)
    oracle = grid_search_mle(counts, 1e-4)
    assert np.allclose(fit_bt(ds).score, oracle, atol=2e-3)


def test_symmetric_pair_scores_zero():
    ds = battles(("A", "B", L, 5), ("A", "B", R, 5))
    assert np.allclose(fit_bt(ds).score, 0.0, atol=1e-9)


def test_three_model_recovery():
    truth = {"A": 0.5, "B": 0.0, "C": -0.5}
    ds = generate_synthetic(GroundTruthModelSpec(truth), 20_000, seed=8)
    s = fit_bt(ds).as_dict()
    assert leaderboard(fit_bt(ds)).models == ("A", "B", "C")
    assert abs((s["A"] - s["B"]) - 0.5) < 0.1
    assert abs((s["B"] - s["C"]) - 0.5) < 0.1


def test_undefeated_model_stays_finite():
    ds = battles(("A", "B", L, 40), ("B", "C", L, 20), ("C", "B", L, 20))
    s = fit_bt(ds).score
    assert np.all(np.isfinite(s))
    assert s[0] == s.max()


def test_zero_battle_model_rejected():
    ds = battles(("A", "B", L, 3), roster=("A", "B", "C"))
    with pytest.raises(ValidationError, match="zero battles"):
        fit_bt(ds)


def test_non_convergence_reports_gradient():
    ds = generate_synthetic(GroundTruthModelSpec({"A": 2.0, "B": 0.0, "C": -1.0}), 500, seed=1)
    with pytest.raises(ConvergenceError, match="gradient norm") as err:
        fit_bt(ds, FitOptions(max_iterations=1))
    assert err.value.iterations == 1


def test_leaderboard_order_and_tie_break():
    lb = leaderboard(BtScores(("C", "A", "B"), np.array([-1.0, 1.0, 0.0])))
    assert [(e.rank, e.model) for e in lb.entries] == [(1, "A"), (2, "B"), (3, "C")]
    lb = leaderboard(BtScores(("B", "A"), np.array([0.0, 0.0])))
    assert lb.ranks == {"A": 1, "B": 2}


def test_bootstrap_dominance():
    ds = battles(("A", "B", L, 50))
    lb = bootstrap_ranks(ds, 100, seed=3)
    assert lb.rank_interval["A"] == (1, 1)
    assert lb.rank_interval["B"] == (2, 2)


def test_bootstrap_equal_strength_flips():
    ds = generate_synthetic(GroundTruthModelSpec({"A": 0.0, "B": 0.0}), 1000, seed=9)
    lb = bootstrap_ranks(ds, 200, seed=4)
    for m in ("A", "B"):
        low, high = lb.rank_interval[m]
        assert low == 1 and high == 2


def test_bootstrap_deterministic():
    ds = generate_synthetic(GroundTruthModelSpec({"A": 0.2, "B": 0.0, "C": 0.1}), 300, seed=9)
    a = bootstrap_ranks(ds, 30, seed=7)
    b = bootstrap_ranks(ds, 30, seed=7)
    assert a.rank_interval == b.rank_interval


def test_bootstrap_skips_dropped_models():
    # C appears once; many resamples lose it
    ds = battles(("A", "B", L, 30), ("B", "A", L, 30), ("A", "C", L, 1))
    lb = bootstrap_ranks(ds, 50, seed=2)
    assert lb.skipped["C"] > 0
    assert lb.skipped["A"] == 0


def _lb(*models):
    return Leaderboard(tuple(LeaderboardEntry(i + 1, m, -i) for i, m in enumerate(models)))


def test_displacement_identity_and_swap():
    assert set(rank_displacement(_lb("A", "B", "C"), _lb("A", "B", "C")).deltas.values()) == {0}
    d = rank_displacement(_lb("A", "B", "C"), _lb("B", "A", "C")).deltas
    assert d == {"A": -1, "B": 1, "C": 0}


def test_displacement_rendering():
    models = [f"m{i}" for i in range(40)]
    base = _lb(*models)
    moved = models[:27] + ["m38"] + models[27:38] + ["m39"]
    disp = rank_displacement(base, _lb(*moved)).per_model["m38"]
    assert (disp.base_rank, disp.new_rank, disp.delta) == (39, 28, 11)
    assert disp.render() == "28↑11"
    assert render_rank(41, -5) == "41↓5"
    assert render_rank(21, 0) == "21"


def test_displacement_roster_mismatch():
    with pytest.raises(ValidationError, match="rosters differ"):
        rank_displacement(_lb("A", "B"), _lb("A", "C"))


# -- properties ---------------------------------------------------------------

small_datasets = st.builds(
    lambda scores, tie, n, seed: generate_synthetic(
        GroundTruthModelSpec({f"m{i}": s for i, s in enumerate(scores)}, tie), n, seed
    ),
    st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=5),
    st.floats(0.0, 0.3),
    st.integers(60, 400),
    st.integers(0, 2**32),
)


def _fittable(ds):
    return len(set(ds.arrays[0]) | set(ds.arrays[1])) == len(ds.roster)


@settings(max_examples=40, deadline=None)
@given(small_datasets)
def test_objective_monotone(ds):
    if not _fittable(ds):
        return
    history = np.array(fit_bt(ds).history)
    assert np.all(np.diff(history) >= 0)


@settings(max_examples=40, deadline=None)
@given(small_datasets)
def test_label_swap_symmetry(ds):
    if not _fittable(ds):
        return
    flip = {L: R, R: L, T: T}
    swapped = ds.with_records(PreferenceRecord(r.right, r.left, flip[r.label]) for r in ds.records)
    assert np.allclose(fit_bt(ds).score, fit_bt(swapped).score, atol=1e-9, rtol=0)


@settings(max_examples=25, deadline=None)
@given(small_datasets, st.floats(-3, 3))
def test_translation_invariance(ds, shift):
    if not _fittable(ds):
        return
    # the same draws under shifted true scores produce the same battles
    spec_scores = {m: 0.0 for m in ds.roster}
    a = generate_synthetic(GroundTruthModelSpec(spec_scores), 200, 1)
    b = generate_synthetic(GroundTruthModelSpec({m: s + shift for m, s in spec_scores.items()}), 200, 1)
    assert a == b
    s = fit_bt(ds).score
    assert abs(s.mean()) < 1e-9


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=3),
    st.integers(80, 500),
    st.integers(0, 2**32),
)
def test_matches_grid_search_oracle(scores, n, seed):
    ds = generate_synthetic(GroundTruthModelSpec({f"m{i}": s for i, s in enumerate(scores)}, 0.1), n, seed)
    left, right, labels = ds.arrays
    k = len(ds.roster)
    counts = counts_from_labels(k, zip(left.tolist(), right.tolist(), ["LRT"[c] for c in labels.tolist()]))
    wins, losses = counts.sum(axis=1), counts.sum(axis=0)
    if np.any(wins == 0) or np.any(losses == 0):
        return
    oracle = grid_search_mle(counts, 1e-4)
    if np.any(np.abs(oracle) > 4.9):
        return
    assert np.allclose(fit_bt(ds).score, oracle, atol=2e-3, rtol=0)


@settings(max_examples=50, deadline=None)
@given(st.permutations(list("ABCDEFG")))
def test_displacement_sums_to_zero(order):
    d = rank_displacement(_lb(*"ABCDEFG"), _lb(*order))
    assert sum(d.deltas.values()) == 0
