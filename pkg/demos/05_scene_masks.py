"""Scene-conditional masks, both flavors.

The v1 mask is a statistical dictionary counted straight from training
annotations: how often does each event occur in each scene. The v2 mask
is a small learned network (scene embedding -> hidden layer -> sigmoid)
trained jointly with the detector; its dictionary is extracted by
running every scene through it.
"""

import numpy as np

from softsed import autodiff as ad
from softsed.sim import (SimV2, apply_mask, build_dictionary_v1,
                         extract_dictionary_v2, mask_v1)

scenes = ["indoor", "outdoor"]
events = ["beep", "chirp", "rumble"]

# hand-build soft label grids for four files: indoor files contain
# beeps, outdoor files contain rumbles, chirps show up in both
rng = np.random.default_rng(0)
grids, scene_of = {}, {}
for i in range(4):
    grid = np.zeros((20, 3))
    indoor = i % 2 == 0
    grid[3:9, 0 if indoor else 2] = 0.9
    if i < 2:
        grid[12:16, 1] = 0.7
    grids[f"clip_{i}"] = grid
    scene_of[f"clip_{i}"] = "indoor" if indoor else "outdoor"

table = build_dictionary_v1(grids, scene_of, scenes, statistic="frame_presence")
print("frame-presence dictionary:")
print("  " + " " * 8, "  ".join(f"{e:<6}" for e in events))
for s, row in zip(scenes, table):
    print(f"  {s:<8}", "  ".join(f"{v:<6.3f}" for v in row))

# masking multiplies posteriors by the scene's row; a zero cell wipes
# the event out entirely for that scene
posteriors = ad.Tensor(np.full((2, 5, 3), 0.8))
mask = mask_v1(table, np.array([0, 1]))  # first clip indoor, second outdoor
masked = apply_mask(posteriors, mask)
print("\nmasked posteriors for a flat 0.8 input:")
print(f"  indoor frame:  {masked.data[0, 0]}")
print(f"  outdoor frame: {masked.data[1, 0]}")

# the learned variant starts near 0.5 everywhere (sigmoid of small
# random logits) and sharpens during training
sim = SimV2(n_scenes=2, n_events=3, embed_dim=8, rng=np.random.default_rng(7))
learned = extract_dictionary_v2(sim)
print("\nuntrained v2 dictionary:")
for s, row in zip(scenes, learned):
    print(f"  {s:<8}", "  ".join(f"{v:.3f}" for v in row))

# v2 is differentiable end to end: gradients reach the embedding
out = apply_mask(posteriors, sim(np.array([0, 1])))
out.sum().backward()
emb_grad = dict(sim.named_parameters())["embed.table"].grad
print(f"\nembedding gradient norm after one backward: {np.linalg.norm(emb_grad):.4f}")
