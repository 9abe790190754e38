"""Segment metric behavior and oracle equivalence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_oracle import (oracle_er_micro, oracle_f1_macro,
                           oracle_f1_macro_optimal, oracle_f1_micro)
from softsed.errors import DataError
from softsed.metrics import (MetricReport, er_micro, evaluate_files,
                             evaluate_segments, f1_macro, f1_macro_optimal,
                             f1_micro, frames_per_segment, optimal_thresholds,
                             segments_any)


def test_frames_per_segment_default_grid():
    assert frames_per_segment(1.0, 0.25) == 4


def test_segments_any_covers_partial_tail():
    grid = np.zeros((10, 2))
    grid[9, 1] = 0.7
    seg = segments_any(grid, 4)
    assert seg.shape == (3, 2)  # last segment holds 2 frames
    assert seg[2, 1] == 0.7
    assert seg[2, 0] == 0.0


def test_perfect_match_scores():
    rng = np.random.default_rng(0)
    ref = (rng.random((20, 5)) > 0.6).astype(float)
    rep = evaluate_segments(ref, ref.astype(float))
    assert rep.f1_micro == 1.0
    assert rep.er_micro == 0.0
    assert rep.f1_macro == 1.0
    assert rep.f1_macro_optimal == 1.0


def test_empty_reference_and_prediction():
    zero = np.zeros((8, 3))
    rep = evaluate_segments(zero, zero)
    assert rep.f1_micro == 1.0
    assert rep.er_micro == 0.0
    assert rep.f1_macro == 1.0


def test_insertions_against_empty_reference():
    ref = np.zeros((4, 3))
    pred = np.zeros((4, 3))
    pred[0, 0] = 1.0
    pred[2, 1] = 1.0
    assert er_micro(ref, pred) == 2.0  # two insertions over max(1, 0)
    assert f1_micro(ref, pred) == 0.0


def test_er_substitution_decomposition():
    # one segment: ref has class 0, prediction has class 1 instead
    ref = np.array([[1.0, 0.0]])
    pred = np.array([[0.0, 1.0]])
    assert er_micro(ref, pred) == 1.0  # one substitution over one reference
    # a miss and an extra in different segments: deletion + insertion
    ref2 = np.array([[1.0, 0.0], [0.0, 0.0]])
    pred2 = np.array([[0.0, 0.0], [0.0, 1.0]])
    assert er_micro(ref2, pred2) == 2.0


def test_threshold_tie_resolves_low():
    # the class is always active, so every threshold gives identical F1
    ref = np.ones((5, 1))
    scores = np.full((5, 1), 0.995)
    f1s, thrs = optimal_thresholds(ref, scores)
    assert f1s[0] == 1.0
    assert thrs[0] == pytest.approx(0.01)


def test_optimal_at_least_fixed_threshold():
    rng = np.random.default_rng(1)
    for _ in range(50):
        ref = (rng.random((12, 4)) > 0.5).astype(float)
        scores = rng.random((12, 4))
        assert f1_macro_optimal(ref, scores) >= f1_macro(ref, scores >= 0.5) - 1e-12


def test_class_permutation_invariance():
    rng = np.random.default_rng(2)
    ref = (rng.random((15, 5)) > 0.5).astype(float)
    scores = rng.random((15, 5))
    perm = rng.permutation(5)
    for fn in (f1_micro, er_micro, f1_macro):
        assert fn(ref, scores >= 0.5) == pytest.approx(fn(ref[:, perm], scores[:, perm] >= 0.5))
    assert f1_macro_optimal(ref, scores) == pytest.approx(
        f1_macro_optimal(ref[:, perm], scores[:, perm]))


def test_oracle_equivalence_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(100):
        S = int(rng.integers(1, 15))
        K = int(rng.integers(1, 6))
        ref = (rng.random((S, K)) > rng.uniform(0.3, 0.8)).astype(float)
        scores = np.round(rng.random((S, K)), 3)
        pred = scores >= 0.5
        assert f1_micro(ref, pred) == pytest.approx(oracle_f1_micro(ref, pred), abs=1e-12)
        assert er_micro(ref, pred) == pytest.approx(oracle_er_micro(ref, pred), abs=1e-12)
        assert f1_macro(ref, pred) == pytest.approx(oracle_f1_macro(ref, pred), abs=1e-12)
        assert f1_macro_optimal(ref, scores) == pytest.approx(
            oracle_f1_macro_optimal(ref, scores), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_metric_bounds_property(S, K, seed):
    rng = np.random.default_rng(seed)
    ref = (rng.random((S, K)) > 0.5).astype(float)
    scores = rng.random((S, K))
    rep = evaluate_segments(ref, scores)
    assert 0.0 <= rep.f1_micro <= 1.0
    assert 0.0 <= rep.f1_macro <= 1.0
    assert rep.f1_macro <= rep.f1_macro_optimal <= 1.0
    assert rep.er_micro >= 0.0


def test_report_dict_names():
    rep = MetricReport(0.5, 0.4, 0.3, 0.6, 10, 3)
    d = rep.to_dict()
    assert set(d) == {"F1_mi", "ER_mi", "F1_ma", "F1_mo", "n_segments", "n_classes"}


def test_evaluate_files_pools_segments():
    ref = {"a": np.array([[1.0, 0.0]] * 4), "b": np.array([[0.0, 0.0]] * 4)}
    scores = {"a": np.array([[0.9, 0.1]] * 4), "b": np.array([[0.8, 0.0]] * 4)}
    rep = evaluate_files(ref, scores, seg_frames=4)
    assert rep.n_segments == 2
    assert rep.f1_micro == pytest.approx(2 * 1 / (2 * 1 + 1 + 0))
    with pytest.raises(DataError):
        evaluate_files(ref, {"a": scores["a"]}, seg_frames=4)


def test_shape_mismatch_raises():
    with pytest.raises(DataError):
        evaluate_segments(np.zeros((3, 2)), np.zeros((3, 3)))


def test_micro_counts_add_across_partitions():
    # pooling two disjoint segment populations must behave like summing
    # their confusion counts, which grounds fold-pooled reporting
    rng = np.random.default_rng(31)
    parts = [(rng.random((12, 3)) < 0.4, rng.random((12, 3)) < 0.4)
             for _ in range(3)]
    tp = fp = fn = 0
    for ref, pred in parts:
        tp += int(np.sum(ref & pred))
        fp += int(np.sum(~ref & pred))
        fn += int(np.sum(ref & ~pred))
    from_counts = 2 * tp / (2 * tp + fp + fn)
    pooled_ref = np.concatenate([r for r, _ in parts])
    pooled_pred = np.concatenate([p for _, p in parts])
    assert f1_micro(pooled_ref, pooled_pred) == pytest.approx(from_counts, abs=1e-15)
