"""Segment-based scoring by hand, small enough to verify on paper.

Frame activity is pooled into fixed segments (max over the segment's
frames), then counted. Micro scores pool counts over all classes;
macro averages per-class F1; the "optimal" macro sweeps a threshold
grid per class instead of fixing 0.5.
"""

import numpy as np

from softsed.metrics import (er_micro, evaluate_files, f1_macro,
                             f1_macro_optimal, f1_micro, frames_per_segment,
                             optimal_thresholds, segments_any)

# 8 frames, 2 classes, segments of 4 frames -> 2 segments per class
ref = np.array([[1, 0], [1, 0], [0, 0], [0, 0],
                [0, 1], [0, 1], [0, 0], [0, 0]], dtype=float)
seg_ref = segments_any(ref, 4)
print(f"frame grid {ref.shape} -> segment grid {seg_ref.shape}")
print(seg_ref)

# scores: class 0 predicted confidently and correctly; class 1 has a
# spurious 0.6 blip in segment 0 and only reaches 0.4 where it should
scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.6], [0.0, 0.1],
                   [0.1, 0.3], [0.2, 0.4], [0.1, 0.2], [0.0, 0.1]])
seg_pred = segments_any(scores >= 0.5, 4)
seg_scores = segments_any(scores, 4)

report = evaluate_files({"clip": ref}, {"clip": scores},
                        seg_frames=4, threshold=0.5)
print(f"\nat threshold 0.5: {report.to_dict()}")

# by hand, at 0.5: class 0 is perfect (tp=1). class 1 contributes an
# insertion in segment 0 (the blip) and a deletion in segment 1 (the
# 0.4 miss); they sit in different segments, so neither pairs into a
# substitution.
#   F1_mi = 2*1 / (2*1 + 1 + 1)       = 0.5
#   ER_mi = (S + D + I) / N = (0+1+1)/2 = 1.0
#   F1_ma = (1.0 + 0.0) / 2           = 0.5
print(f"check F1_mi: {f1_micro(seg_ref, seg_pred)}")
print(f"check ER_mi: {er_micro(seg_ref, seg_pred)}")
print(f"check F1_ma: {f1_macro(seg_ref, seg_pred)}")

# the sweep cannot rescue class 1 cleanly because the blip (0.6)
# outranks the true segment's peak (0.4); the best threshold accepts
# both segments and trades the deletion for the insertion:
# pred [1, 1] vs ref [0, 1] -> F1 = 2/(2+1) = 2/3
best_f1, best_th = optimal_thresholds(seg_ref, seg_scores)
print(f"\nper-class best F1 {best_f1} at thresholds {best_th}")
print(f"F1_mo (swept): {f1_macro_optimal(seg_ref, seg_scores):.3f}"
      f"  vs F1_ma at 0.5: {f1_macro(seg_ref, seg_pred):.3f}")

# helper: segment length in frames from seconds
print(f"\n1 s segments at 0.25 s hop: {frames_per_segment(1.0, 0.25)} frames")
