"""Annotation and scene-map handling.

Annotations are event intervals with a confidence in [0, 1] (soft
labels). They rasterize onto a fixed frame grid: a file of duration d
seconds at hop h has T = round(d / h) frames, and interval edges snap
to the nearest frame boundary. Overlapping annotations of the same
event keep the maximum confidence per frame.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

ANNOTATION_COLUMNS = ("file_id", "onset_s", "offset_s", "event", "confidence")
SCENE_COLUMNS = ("file_id", "scene")


@dataclass(frozen=True)
class Annotation:
    file_id: str
    onset_s: float
    offset_s: float
    event: str
    confidence: float


def _delimiter_for(path: Path, header_line: str) -> str:
    if "\t" in header_line:
        return "\t"
    if path.suffix.lower() == ".tsv":
        return "\t"
    return ","


def _open_table(path: Path, required: tuple):
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path} is empty")
    delim = _delimiter_for(path, lines[0])
    reader = csv.DictReader(lines, delimiter=delim)
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        raise DataError(f"{path} is missing columns: {missing}")
    return reader


def parse_annotations(path, events: list = None) -> list:
    """Read an annotation CSV/TSV; validates ranges and vocabulary."""
    path = Path(path)
    reader = _open_table(path, ANNOTATION_COLUMNS)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        try:
            onset = float(rec["onset_s"])
            offset = float(rec["offset_s"])
            conf = float(rec["confidence"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: non-numeric field") from exc
        if onset < 0:
            raise DataError(f"{path}:{lineno}: negative onset {onset}")
        if onset >= offset:
            raise DataError(f"{path}:{lineno}: onset {onset} >= offset {offset}")
        if not 0.0 <= conf <= 1.0:
            raise DataError(f"{path}:{lineno}: confidence {conf} outside [0, 1]")
        event = rec["event"]
        if events is not None and event not in events:
            raise DataError(f"{path}:{lineno}: unknown event '{event}'")
        rows.append(Annotation(rec["file_id"], onset, offset, event, conf))
    return rows


def write_annotations(path, annotations: list):
    """Write annotation rows; floats use repr so they round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_COLUMNS)
        for a in annotations:
            writer.writerow([a.file_id, repr(float(a.onset_s)), repr(float(a.offset_s)),
                             a.event, repr(float(a.confidence))])


def group_by_file(annotations: list) -> dict:
    grouped = {}
    for a in annotations:
        grouped.setdefault(a.file_id, []).append(a)
    return grouped


def parse_scene_map(path, scenes: list = None) -> dict:
    """Read the file-to-scene table; one scene per file."""
    path = Path(path)
    reader = _open_table(path, SCENE_COLUMNS)
    mapping = {}
    for lineno, rec in enumerate(reader, start=2):
        fid, scene = rec["file_id"], rec["scene"]
        if scenes is not None and scene not in scenes:
            raise DataError(f"{path}:{lineno}: unknown scene '{scene}'")
        if fid in mapping and mapping[fid] != scene:
            raise DataError(f"{path}:{lineno}: conflicting scene for '{fid}'")
        mapping[fid] = scene
    return mapping


def write_scene_map(path, mapping: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCENE_COLUMNS)
        for fid in sorted(mapping):
            writer.writerow([fid, mapping[fid]])


def frame_count(duration_s: float, hop_s: float) -> int:
    return int(round(duration_s / hop_s))


def rasterize(annotations: list, duration_s: float, hop_s: float, events: list) -> np.ndarray:
    """Soft label grid (T, K) for one file's annotations.

    Frame t spans [t*hop, (t+1)*hop); any positive overlap with an
    annotation marks the frame with that confidence, max-merged over
    overlapping annotations of the same event.
    """
    T = frame_count(duration_s, hop_s)
    K = len(events)
    index = {e: k for k, e in enumerate(events)}
    grid = np.zeros((T, K))
    for a in annotations:
        if a.event not in index:
            raise DataError(f"unknown event '{a.event}'")
        first = int(math.floor(a.onset_s / hop_s))
        last = int(math.ceil(a.offset_s / hop_s))
        if last > T:
            warnings.warn(f"annotation {a.file_id}/{a.event} ends at "
                          f"{a.offset_s}s, beyond the {duration_s}s timeline; "
                          "clipped", stacklevel=2)
        first = max(0, min(first, T))
        last = max(0, min(last, T))
        if last > first:
            k = index[a.event]
            grid[first:last, k] = np.maximum(grid[first:last, k], a.confidence)
    return grid


def binarize(soft: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Hard labels: 1 where the soft value reaches the threshold."""
    return (soft >= threshold).astype(np.float64)


@dataclass
class Chunk:
    """One fixed-length training window cut from a file."""

    features: np.ndarray   # (chunk_frames, n_mels)
    soft: np.ndarray       # (chunk_frames, K)
    hard: np.ndarray       # (chunk_frames, K)
    valid: np.ndarray      # (chunk_frames,) 1 for real frames, 0 for padding
    scene_index: int
    file_id: str
    start_frame: int


def chunk_file(features: np.ndarray, soft: np.ndarray, hard: np.ndarray,
               scene_index: int, file_id: str, chunk_frames: int) -> list:
    """Cut one file into fixed-length windows, zero-padding the tail."""
    T = features.shape[0]
    if soft.shape[0] != T or hard.shape[0] != T:
        raise DataError(f"{file_id}: feature/label frame mismatch")
    chunks = []
    for start in range(0, T, chunk_frames):
        stop = min(start + chunk_frames, T)
        n = stop - start
        feat = np.zeros((chunk_frames, features.shape[1]))
        s = np.zeros((chunk_frames, soft.shape[1]))
        h = np.zeros((chunk_frames, hard.shape[1]))
        v = np.zeros(chunk_frames)
        feat[:n] = features[start:stop]
        s[:n] = soft[start:stop]
        h[:n] = hard[start:stop]
        v[:n] = 1.0
        chunks.append(Chunk(feat, s, h, v, scene_index, file_id, start))
    return chunks


def fold_split(file_ids: list, n_folds: int, seed: int) -> list:
    """Shuffle file ids and deal them round-robin into n_folds lists."""
    if n_folds < 1:
        raise DataError("fold count must be >= 1")
    ids = sorted(file_ids)
    if n_folds > len(ids):
        raise DataError(f"{n_folds} folds for {len(ids)} files")
    rng = np.random.default_rng([seed, 7])
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    return [sorted(shuffled[i::n_folds]) for i in range(n_folds)]
