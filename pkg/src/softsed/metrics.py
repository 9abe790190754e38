"""Segment-based detection metrics.

Frames pool into fixed-length segments (1 s by default); a class is
active in a segment if any of its frames is active. On segment grids:

- F1_mi: micro F1 over all (segment, class) cells
- ER_mi: micro error rate with the substitution/deletion/insertion
  decomposition per segment
- F1_ma: class-averaged F1 at a fixed threshold
- F1_mo: class-averaged F1 with a per-class threshold swept over
  0.01..0.99 (ties resolve to the lowest threshold)

Classes absent from both reference and prediction count as F1 = 1, so
an all-quiet class does not drag the macro average down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

THRESHOLD_GRID = np.round(np.arange(1, 100) * 0.01, 2)


def frames_per_segment(segment_s: float, hop_s: float) -> int:
    n = int(round(segment_s / hop_s))
    if n < 1:
        raise DataError("segment shorter than one frame")
    return n


def segments_any(grid: np.ndarray, seg_frames: int) -> np.ndarray:
    """(T, K) frame grid -> (S, K) segment grid via max; tail kept."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DataError("expected a (frames, classes) grid")
    T = grid.shape[0]
    n_seg = (T + seg_frames - 1) // seg_frames
    out = np.zeros((n_seg, grid.shape[1]))
    for s in range(n_seg):
        out[s] = grid[s * seg_frames:(s + 1) * seg_frames].max(axis=0)
    return out


def _as_bool(grid) -> np.ndarray:
    return np.asarray(grid) > 0.5


def _f1_from_counts(tp: float, fp: float, fn: float) -> float:
    den = 2.0 * tp + fp + fn
    if den == 0.0:
        return 1.0  # nothing to find, nothing predicted
    return 2.0 * tp / den


def f1_micro(ref, pred) -> float:
    """Micro F1 over all cells of boolean segment grids."""
    ref, pred = _as_bool(ref), _as_bool(pred)
    tp = float(np.sum(ref & pred))
    fp = float(np.sum(~ref & pred))
    fn = float(np.sum(ref & ~pred))
    return _f1_from_counts(tp, fp, fn)


def er_micro(ref, pred) -> float:
    """Micro error rate: (S + D + I) / N with per-segment decomposition."""
    ref, pred = _as_bool(ref), _as_bool(pred)
    fn = np.sum(ref & ~pred, axis=1).astype(np.float64)
    fp = np.sum(~ref & pred, axis=1).astype(np.float64)
    n = np.sum(ref, axis=1).astype(np.float64)
    sub = np.minimum(fn, fp)
    dele = fn - sub
    ins = fp - sub
    return float((sub + dele + ins).sum() / max(1.0, n.sum()))


def f1_macro(ref, pred) -> float:
    """Class-averaged F1 of boolean segment grids."""
    ref, pred = _as_bool(ref), _as_bool(pred)
    scores = []
    for k in range(ref.shape[1]):
        tp = float(np.sum(ref[:, k] & pred[:, k]))
        fp = float(np.sum(~ref[:, k] & pred[:, k]))
        fn = float(np.sum(ref[:, k] & ~pred[:, k]))
        scores.append(_f1_from_counts(tp, fp, fn))
    return float(np.mean(scores))


def optimal_thresholds(ref, scores) -> tuple:
    """Per-class best threshold on the fixed grid.

    Returns (f1_per_class, threshold_per_class); a tie between
    thresholds resolves to the lowest one.
    """
    ref = _as_bool(ref)
    scores = np.asarray(scores, dtype=np.float64)
    if ref.shape != scores.shape:
        raise DataError("reference and score grids differ in shape")
    best_f1 = np.zeros(ref.shape[1])
    best_thr = np.zeros(ref.shape[1])
    for k in range(ref.shape[1]):
        r = ref[:, k]
        pred = scores[:, k][None, :] >= THRESHOLD_GRID[:, None]  # (99, S)
        tp = (pred & r[None, :]).sum(axis=1).astype(np.float64)
        fp = (pred & ~r[None, :]).sum(axis=1).astype(np.float64)
        fn = (~pred & r[None, :]).sum(axis=1).astype(np.float64)
        den = 2.0 * tp + fp + fn
        f1 = np.where(den == 0.0, 1.0, 2.0 * tp / np.maximum(den, 1.0))
        pick = int(np.argmax(f1))  # first hit of the max = lowest threshold
        best_f1[k] = f1[pick]
        best_thr[k] = THRESHOLD_GRID[pick]
    return best_f1, best_thr


def f1_macro_optimal(ref, scores) -> float:
    """Class-averaged F1 with the best per-class threshold."""
    best_f1, _ = optimal_thresholds(ref, scores)
    return float(np.mean(best_f1))


@dataclass
class MetricReport:
    f1_micro: float
    er_micro: float
    f1_macro: float
    f1_macro_optimal: float
    n_segments: int
    n_classes: int

    def to_dict(self) -> dict:
        return {
            "F1_mi": self.f1_micro,
            "ER_mi": self.er_micro,
            "F1_ma": self.f1_macro,
            "F1_mo": self.f1_macro_optimal,
            "n_segments": self.n_segments,
            "n_classes": self.n_classes,
        }


def evaluate_segments(ref_hard, score_grid, threshold: float = 0.5) -> MetricReport:
    """All four metrics from a hard reference grid and a score grid."""
    ref_hard = np.asarray(ref_hard, dtype=np.float64)
    score_grid = np.asarray(score_grid, dtype=np.float64)
    if ref_hard.shape != score_grid.shape:
        raise DataError("reference and score grids differ in shape")
    pred = score_grid >= threshold
    return MetricReport(
        f1_micro=f1_micro(ref_hard, pred),
        er_micro=er_micro(ref_hard, pred),
        f1_macro=f1_macro(ref_hard, pred),
        f1_macro_optimal=f1_macro_optimal(ref_hard, score_grid),
        n_segments=int(ref_hard.shape[0]),
        n_classes=int(ref_hard.shape[1]),
    )


def evaluate_files(ref_grids: dict, score_grids: dict, seg_frames: int,
                   threshold: float = 0.5) -> MetricReport:
    """Pool per-file frame grids into one segment population and score it.

    ``ref_grids`` holds hard frame grids, ``score_grids`` posterior
    scores; both keyed by file id with identical key sets.
    """
    if set(ref_grids) != set(score_grids):
        raise DataError("reference and score file sets differ")
    if not ref_grids:
        raise DataError("nothing to evaluate")
    order = sorted(ref_grids)
    ref_seg = np.concatenate([segments_any(ref_grids[f], seg_frames) for f in order])
    score_seg = np.concatenate([segments_any(score_grids[f], seg_frames) for f in order])
    return evaluate_segments(ref_seg, score_seg, threshold)
