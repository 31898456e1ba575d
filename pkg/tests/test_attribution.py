from fractions import Fraction
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arenarank.attribution import (
    AttributionParams,
    SequenceTrace,
    attribute,
    best_params,
    confidence,
    evaluate_detector,
    favorable_mass_above,
    nucleus_mask,
    read_traces,
    sweep_detector,
    trace_from_model,
    train_token_model,
    write_traces,
)
from arenarank.errors import ValidationError
from desk import desk_traces
from oracles import cover_membership_exact, cover_membership_float

CORPUS = "the cat sat on the mat. the dog sat on the log. a cat and a dog met on a mat.\n" * 3


@pytest.fixture(scope="module")
def model():
    return train_token_model(CORPUS, order=3, k=0.01)


def test_mass_above_hand_cases():
    probs = np.array([0.5, 0.3, 0.2, 0.0])
    assert favorable_mass_above(probs).tolist() == pytest.approx([0.0, 0.5, 0.8, 1.0])
    # ties: each tied token is ranked first among its equals
    assert favorable_mass_above(np.array([0.4, 0.2, 0.4])).tolist() == pytest.approx([0.0, 0.8, 0.0])
    assert favorable_mass_above(np.full(4, 0.25)).tolist() == [0.0] * 4


def test_single_step_examples():
    # realized prob 0.9 at the top of the distribution: in the cover for any p
    trace = SequenceTrace(np.array([0.9]), np.array([0.0]))
    assert attribute(trace, AttributionParams(0.9, 0.8)).decision == 1
    # 0.9 of the mass is ranked ahead: out of the cover at p=0.9, in at p=1
    trace = SequenceTrace(np.array([0.1]), np.array([0.9]))
    assert confidence(trace, 0.9) == 0.0
    assert confidence(trace, 1.0) == 1.0


def test_confidence_and_threshold():
    trace = SequenceTrace(np.full(5, 0.05), np.array([0.0, 0.2, 0.85, 0.89, 0.95]))
    assert confidence(trace, 0.9) == pytest.approx(0.8)
    assert attribute(trace, AttributionParams(0.9, 0.8)).decision == 1
    assert attribute(trace, AttributionParams(0.9, 0.81)).decision == 0
    assert attribute(trace, AttributionParams(0.5, 0.0)).decision == 1


def test_p_one_admits_every_positive_token():
    probs = np.array([0.7, 0.2, 0.1 - 1e-12, 1e-12, 0.0])
    mass = favorable_mass_above(probs)
    assert (mass < 1.0).tolist() == [True, True, True, True, False]


def test_greedy_self_trace_is_fully_attributed(model):
    out = model.greedy("the ", 60)
    trace = trace_from_model(model, "the ", out)
    assert np.all(trace.above == 0.0)
    for p in (0.01, 0.5, 0.9):
        assert confidence(trace, p) == 1.0


def test_uniform_model_trace():
    m = train_token_model("abcd", order=1, k=1e9)
    trace = trace_from_model(m, "", "abcd")
    assert trace.realized == pytest.approx(np.full(4, 0.25))
    assert np.all(trace.above == 0.0)


def test_unigram_probabilities():
    m = train_token_model("aaab", order=1, k=1e-9)
    assert m.distribution([]).tolist() == pytest.approx([0.75, 0.25])
    trace = trace_from_model(m, "", "ab")
    assert trace.above.tolist() == pytest.approx([0.0, 0.75])
    assert confidence(trace, 0.74) == 0.5
    assert confidence(trace, 0.76) == 1.0


def test_distributions_sum_to_one(model):
    assert np.allclose(model.probs.sum(axis=1), 1.0)
    assert np.allclose(model.distribution(list("tt")).sum(), 1.0)  # unseen context


def test_batched_score_matches_generic_path(model):
    rng = np.random.default_rng(3)
    prompts = ["the ", "a ", ""]
    out = model.generate(prompts, 40, rng, top_p=0.8)
    realized, above, logp = model.score(prompts, out)
    for i, prompt in enumerate(prompts):
        trace = trace_from_model(model, prompt, model.decode(out[i]))
        assert np.array_equal(trace.realized, realized[i])
        assert np.array_equal(trace.above, above[i])
    assert np.allclose(np.log(realized), logp)


def test_top_p_samples_are_in_cover(model):
    for top_p in (0.3, 0.6, 0.9):
        out = model.generate(["the "] * 20, 50, np.random.default_rng(1), top_p=top_p)
        _, above, _ = model.score(["the "] * 20, out)
        assert np.all(above < top_p)


def test_sampling_deterministic(model):
    assert model.sample("the ", 30, seed=5) == model.sample("the ", 30, seed=5)
    assert model.sample("the ", 30, seed=5) != model.sample("the ", 30, seed=6)


def test_nucleus_mask_minimal():
    probs = np.array([[0.4, 0.3, 0.2, 0.1], [0.25, 0.25, 0.25, 0.25]])
    assert nucleus_mask(probs, 0.7).tolist() == [[True, True, False, False], [True, True, True, False]]


def test_validation(model):
    with pytest.raises(ValidationError):
        AttributionParams(p=0.0)
    with pytest.raises(ValidationError):
        AttributionParams(t=1.5)
    with pytest.raises(ValidationError):
        SequenceTrace(np.array([]), np.array([]))
    with pytest.raises(ValidationError, match="outside the model vocabulary"):
        trace_from_model(model, "", "Z")
    with pytest.raises(ValidationError):
        train_token_model("")


def test_trace_file_round_trip(tmp_path):
    traces = [
        SequenceTrace(np.array([0.5, 0.25]), np.array([0.0, 0.7]), "a"),
        SequenceTrace(np.array([1 / 3]), np.array([0.1]), None),
    ]
    write_traces(traces, tmp_path / "t.jsonl")
    back = read_traces(tmp_path / "t.jsonl")
    assert [t.true_source for t in back] == ["a", None]
    assert all(np.array_equal(a.realized, b.realized) and np.array_equal(a.above, b.above)
               for a, b in zip(traces, back))


def test_trace_file_errors(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"n": 2, "steps": [[0.5, 0.1]]}\n')
    with pytest.raises(ValidationError, match=":1: n=2"):
        read_traces(path)
    path.write_text('{"steps": [[0.5, 0.1]]}\n{"steps": [[0.9, 0.5]]}\n')
    with pytest.raises(ValidationError, match=":2:"):
        read_traces(path)


def test_detector_evaluation_and_sweep():
    pos = [SequenceTrace(np.full(10, 0.5), np.zeros(10), "x")]
    neg = [SequenceTrace(np.full(10, 0.1), np.r_[np.zeros(3), np.full(7, 0.8)], "y")]
    q = evaluate_detector(pos + neg, "x", AttributionParams(0.7, 0.5))
    assert (q.tpr, q.tnr, q.mean_tokens) == (1.0, 1.0, 10.0)
    params, best = best_params(sweep_detector(pos + neg, "x"))
    assert best.tpr + best.tnr == 2.0
    assert params == AttributionParams(0.5, 0.5)
    with pytest.raises(ValidationError, match="no traces sourced from target"):
        evaluate_detector(neg, "x")


def test_desk_detector_separates_sources():
    traces = desk_traces(n_per_model=60, length=200)
    params, q = best_params(sweep_detector(traces, "kitchen"))
    assert q.tpr >= 0.9 and q.tnr >= 0.8


# -- exhaustive and property checks ----------------------------------------------

@pytest.mark.parametrize("p", ["1/2", "37/100", "9/10", "83/100", "1"])
def test_membership_matches_exhaustive_construction(p):
    weights = np.array(list(itertools.product(range(3), repeat=6)))[1:]
    exact = cover_membership_exact(weights, Fraction(p))
    probs = weights / weights.sum(axis=1, keepdims=True)
    fast = favorable_mass_above(probs) < float(Fraction(p))
    assert np.array_equal(exact, fast)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8).filter(lambda w: sum(w) > 0),
       st.data(), st.floats(0.01, 1.0))
def test_membership_matches_sorted_construction(weights, data, p):
    probs = np.array(weights) / sum(weights)
    r = data.draw(st.integers(0, len(weights) - 1))
    fast = favorable_mass_above(probs)[r] < p
    slow = cover_membership_float(probs, r, p)
    # only a float rounding hair from the boundary may disagree
    if fast != slow:
        assert abs(favorable_mass_above(probs)[r] - p) < 1e-9 or abs(
            favorable_mass_above(probs)[r] + probs[r] - p) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 1), st.floats(0.01, 1))
def test_confidence_monotone_in_p(above, p1, p2):
    above = np.array(above)
    trace = SequenceTrace(np.zeros_like(above), above)
    lo, hi = sorted((p1, p2))
    assert confidence(trace, lo) <= confidence(trace, hi)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 1),
       st.floats(0, 1), st.floats(0, 1))
def test_decision_monotone_in_t(above, p, t1, t2):
    trace = SequenceTrace(np.zeros(len(above)), np.array(above))
    lo, hi = sorted((t1, t2))
    assert attribute(trace, AttributionParams(p, lo)).decision >= attribute(trace, AttributionParams(p, hi)).decision
