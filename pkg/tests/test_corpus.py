"""Annotation parsing, rasterization, chunking, and fold splits."""

import warnings

import numpy as np
import pytest

from softsed.corpus import (Annotation, binarize, chunk_file, fold_split,
                            frame_count, group_by_file, parse_annotations,
                            parse_scene_map, rasterize, write_annotations,
                            write_scene_map)
from softsed.errors import DataError

EVENTS = ["car", "birds", "talk"]


def test_annotation_roundtrip(tmp_path):
    rows = [
        Annotation("f1", 0.25, 1.75, "car", 0.8),
        Annotation("f1", 1.0, 2.0, "birds", 0.5),
        Annotation("f2", 0.1234567890123456, 9.87, "talk", 1.0),
    ]
    path = tmp_path / "ann.csv"
    write_annotations(path, rows)
    back = parse_annotations(path, EVENTS)
    assert back == rows  # repr floats round-trip exactly


def test_tsv_delimiter_sniffing(tmp_path):
    path = tmp_path / "ann.tsv"
    path.write_text("file_id\tonset_s\toffset_s\tevent\tconfidence\nf1\t0.0\t1.0\tcar\t0.9\n")
    rows = parse_annotations(path, EVENTS)
    assert rows == [Annotation("f1", 0.0, 1.0, "car", 0.9)]


@pytest.mark.parametrize("row", [
    "f1,2.0,1.0,car,0.5",      # onset >= offset
    "f1,1.0,1.0,car,0.5",      # zero length
    "f1,-0.5,1.0,car,0.5",     # negative onset
    "f1,0.0,1.0,car,1.5",      # confidence out of range
    "f1,0.0,1.0,dragon,0.5",   # unknown event
    "f1,0.0,x,car,0.5",        # non-numeric
])
def test_bad_annotation_rows(tmp_path, row):
    path = tmp_path / "bad.csv"
    path.write_text("file_id,onset_s,offset_s,event,confidence\n" + row + "\n")
    with pytest.raises(DataError):
        parse_annotations(path, EVENTS)


def test_missing_column_and_empty_file(tmp_path):
    path = tmp_path / "cols.csv"
    path.write_text("file_id,onset_s,event,confidence\n")
    with pytest.raises(DataError):
        parse_annotations(path)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError):
        parse_annotations(empty)


def test_scene_map_roundtrip_and_conflict(tmp_path):
    path = tmp_path / "scenes.csv"
    write_scene_map(path, {"f2": "park", "f1": "street"})
    assert parse_scene_map(path, ["street", "park"]) == {"f1": "street", "f2": "park"}
    bad = tmp_path / "conflict.csv"
    bad.write_text("file_id,scene\nf1,park\nf1,street\n")
    with pytest.raises(DataError):
        parse_scene_map(bad)
    with pytest.raises(DataError):
        parse_scene_map(path, ["street"])  # park not in vocabulary


def test_frame_count_rounding():
    assert frame_count(10.0, 0.25) == 40
    assert frame_count(25.0, 0.25) == 100
    assert frame_count(9.9, 0.25) == 40  # 39.6 rounds to nearest


def test_rasterize_quarter_second_grid():
    anns = [Annotation("f", 1.0, 2.0, "car", 0.8)]
    grid = rasterize(anns, 3.0, 0.25, EVENTS)
    assert grid.shape == (12, 3)
    np.testing.assert_array_equal(np.nonzero(grid[:, 0])[0], [4, 5, 6, 7])
    assert np.all(grid[4:8, 0] == 0.8)
    assert grid[:, 1:].sum() == 0.0


def test_rasterize_overlap_keeps_max():
    anns = [Annotation("f", 0.0, 1.0, "car", 0.4),
            Annotation("f", 0.5, 1.5, "car", 0.9)]
    grid = rasterize(anns, 2.0, 0.25, EVENTS)
    np.testing.assert_allclose(grid[:2, 0], 0.4)
    np.testing.assert_allclose(grid[2:6, 0], 0.9)
    assert grid[6:, 0].sum() == 0.0


def test_rasterize_clamps_to_duration():
    anns = [Annotation("f", 1.5, 99.0, "birds", 1.0)]
    with pytest.warns(UserWarning, match="clipped"):
        grid = rasterize(anns, 2.0, 0.25, EVENTS)
    np.testing.assert_allclose(grid[6:8, 1], 1.0)
    assert grid[:6, 1].sum() == 0.0


def test_rasterize_in_range_is_silent():
    anns = [Annotation("f", 0.5, 2.0, "birds", 1.0)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rasterize(anns, 2.0, 0.25, EVENTS)


def test_rasterize_any_positive_overlap_marks_frame():
    # 0.40-0.45 s touches only a sliver of frame 1 (0.25-0.50 s) but
    # still marks it; a boundary-exact onset or offset does not bleed
    # into the adjacent frame
    anns = [Annotation("f", 0.40, 0.45, "car", 0.7)]
    grid = rasterize(anns, 1.0, 0.25, EVENTS)
    np.testing.assert_array_equal(np.nonzero(grid[:, 0])[0], [1])

    exact = [Annotation("f", 0.25, 0.5, "car", 0.7)]
    grid = rasterize(exact, 1.0, 0.25, EVENTS)
    np.testing.assert_array_equal(np.nonzero(grid[:, 0])[0], [1])


def test_binarize_threshold_inclusive():
    soft = np.array([[0.49, 0.5, 0.51]])
    np.testing.assert_array_equal(binarize(soft, 0.5), [[0.0, 1.0, 1.0]])


def test_chunking_pads_and_masks():
    T, F, K = 10, 4, 2
    feats = np.arange(T * F, dtype=float).reshape(T, F)
    soft = np.random.default_rng(0).random((T, K))
    hard = binarize(soft)
    chunks = chunk_file(feats, soft, hard, 1, "f", chunk_frames=4)
    assert [c.start_frame for c in chunks] == [0, 4, 8]
    assert all(c.features.shape == (4, F) for c in chunks)
    assert chunks[2].valid.tolist() == [1.0, 1.0, 0.0, 0.0]
    np.testing.assert_array_equal(chunks[2].features[2:], 0.0)
    # every real frame appears exactly once
    rebuilt = np.concatenate([c.features[c.valid.astype(bool)] for c in chunks])
    np.testing.assert_array_equal(rebuilt, feats)


def test_group_by_file_preserves_order():
    rows = [Annotation("b", 0, 1, "car", 1.0), Annotation("a", 0, 1, "car", 1.0),
            Annotation("b", 2, 3, "car", 1.0)]
    grouped = group_by_file(rows)
    assert list(grouped) == ["b", "a"]
    assert len(grouped["b"]) == 2


def test_fold_split_round_robin():
    ids = [f"f{i}" for i in range(11)]
    folds = fold_split(ids, 5, seed=42)
    sizes = sorted(len(f) for f in folds)
    assert sizes == [2, 2, 2, 2, 3]
    flat = sorted(x for f in folds for x in f)
    assert flat == sorted(ids)
    assert fold_split(ids, 5, seed=42) == folds  # deterministic
    assert fold_split(ids, 5, seed=43) != folds
    with pytest.raises(DataError):
        fold_split(ids, 12, seed=0)
