"""Scene-conditional event masks.

Two variants share one contract: given a scene index per clip, produce
a (B, K) mask in [0, 1] that multiplies the fused event posteriors.

The statistical variant (v1) is a fixed scene-by-event table counted
from training annotations. The learned variant (v2) maps a scene
embedding through a two-layer network and can be distilled back into a
table for inspection.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import DataError


def build_dictionary_v1(soft_grids: dict, scene_of: dict, scenes: list,
                        statistic: str = "frame_presence",
                        threshold: float = 0.5) -> np.ndarray:
    """Scene-by-event table counted from rasterized soft labels.

    ``soft_grids`` maps file_id -> (T, K) soft grid; ``scene_of`` maps
    file_id -> scene name. Statistics:

    - frame_presence: fraction of a scene's frames where the event's
      soft value reaches ``threshold``
    - mean_soft: mean soft value over the scene's frames
    - clip_presence: fraction of the scene's files where the event is
      present in at least one frame

    A (scene, event) pair never observed comes out exactly 0.
    """
    if not soft_grids:
        raise DataError("no label grids to build a dictionary from")
    K = next(iter(soft_grids.values())).shape[1]
    S = len(scenes)
    scene_index = {s: i for i, s in enumerate(scenes)}
    num = np.zeros((S, K))
    den = np.zeros(S)
    for file_id, grid in soft_grids.items():
        if file_id not in scene_of:
            raise DataError(f"file '{file_id}' missing from the scene map")
        scene = scene_of[file_id]
        if scene not in scene_index:
            raise DataError(f"unknown scene '{scene}'")
        m = scene_index[scene]
        if statistic == "frame_presence":
            num[m] += (grid >= threshold).sum(axis=0)
            den[m] += grid.shape[0]
        elif statistic == "mean_soft":
            num[m] += grid.sum(axis=0)
            den[m] += grid.shape[0]
        elif statistic == "clip_presence":
            num[m] += (grid >= threshold).any(axis=0)
            den[m] += 1.0
        else:
            raise DataError(f"unknown dictionary statistic '{statistic}'")
    table = np.zeros((S, K))
    nonzero = den > 0
    table[nonzero] = num[nonzero] / den[nonzero, None]
    return table


def mask_v1(dictionary: np.ndarray, scene_indices: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Per-clip masks: the scene's dictionary row times a scalar gain."""
    dictionary = np.asarray(dictionary, dtype=np.float64)
    scene_indices = np.asarray(scene_indices, dtype=np.int64)
    if np.any(scene_indices < 0) or np.any(scene_indices >= dictionary.shape[0]):
        raise DataError("scene index outside the dictionary")
    return np.clip(scale * dictionary[scene_indices], 0.0, 1.0)


class SimV2(nn.Module):
    """Learned masks: scene embedding -> hidden half width -> sigmoid."""

    def __init__(self, n_scenes: int, n_events: int, embed_dim: int,
                 rng: np.random.Generator):
        super().__init__()
        if embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        self.embed = nn.Embedding(n_scenes, embed_dim, rng)
        self.f1 = nn.Linear(embed_dim, embed_dim // 2, rng)
        self.f2 = nn.Linear(embed_dim // 2, n_events, rng)
        self.n_scenes = n_scenes

    def forward(self, scene_indices: np.ndarray) -> Tensor:
        h = self.embed(np.asarray(scene_indices, dtype=np.int64))
        return ad.sigmoid(self.f2(ad.relu(self.f1(h))))

    __call__ = forward


def extract_dictionary_v2(sim: SimV2) -> np.ndarray:
    """Evaluate the learned mask network for every scene row."""
    with ad.no_grad():
        table = sim(np.arange(sim.n_scenes))
    return table.data.copy()


def apply_mask(posteriors: Tensor, mask) -> Tensor:
    """Scene-conditional gating: out[b, t, k] = post[b, t, k] * mask[b, k]."""
    posteriors = ad.as_tensor(posteriors)
    mask = ad.as_tensor(mask)
    B, _, K = posteriors.shape
    if mask.shape != (B, K):
        raise ValueError(f"mask shape {mask.shape} does not match batch ({B}, {K})")
    return posteriors * ad.reshape(mask, (B, 1, K))


def write_dictionary(path, table: np.ndarray, scenes: list, events: list):
    """Dictionary CSV: header 'scene,<event...>', one row per scene."""
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (len(scenes), len(events)):
        raise ValueError("table shape does not match the vocabularies")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene"] + list(events))
        for i, scene in enumerate(scenes):
            writer.writerow([scene] + [repr(float(v)) for v in table[i]])


def read_dictionary(path) -> tuple:
    """Read a dictionary CSV; returns (table, scenes, events)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(lines))
    if not rows or rows[0][:1] != ["scene"]:
        raise DataError(f"{path}: not a dictionary CSV")
    events = rows[0][1:]
    scenes, values = [], []
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != len(events) + 1:
            raise DataError(f"{path}: ragged dictionary row")
        scenes.append(row[0])
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric dictionary value") from exc
    return np.asarray(values, dtype=np.float64), scenes, events
