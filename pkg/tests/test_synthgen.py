"""Synthetic corpus: structure, label consistency, determinism."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from helpers import make_config
from softsed.audio import read_wav
from softsed.corpus import group_by_file, parse_annotations, parse_scene_map
from softsed.errors import ConfigError
from softsed.synthgen import colored_noise, generate


def corpus_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(path.name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_generate_structure(tmp_path):
    cfg = make_config(tmp_path)
    info = generate(cfg, tmp_path / "corpus")
    wavs = sorted((tmp_path / "corpus/audio").glob("*.wav"))
    assert len(wavs) == cfg.synth.n_files
    audio, rate = read_wav(wavs[0])
    assert rate == cfg.synth.sample_rate
    assert audio.size == int(cfg.synth.duration_s * rate)
    assert np.all(np.abs(audio) <= 1.0)

    scene_of = parse_scene_map(info["scene_map"], cfg.scenes)
    assert len(scene_of) == cfg.synth.n_files
    # round-robin scene assignment covers both scenes evenly
    counts = {s: sum(1 for v in scene_of.values() if v == s) for s in cfg.scenes}
    assert counts == {"indoor": 3, "outdoor": 3}


def test_annotations_respect_config(tmp_path):
    cfg = make_config(tmp_path, synth={"n_files": 10})
    info = generate(cfg, tmp_path / "corpus")
    anns = parse_annotations(info["annotations"], cfg.events)
    assert anns, "corpus should contain events"
    scene_of = parse_scene_map(info["scene_map"], cfg.scenes)
    prob = np.asarray(cfg.synth.scene_event_prob)
    lo, hi = cfg.synth.confidence_range
    for a in anns:
        assert 0.0 <= a.onset_s < a.offset_s <= cfg.synth.duration_s + 1e-9
        assert lo <= a.confidence <= hi
        s = cfg.scenes.index(scene_of[a.file_id])
        k = cfg.events.index(a.event)
        assert prob[s, k] > 0.0, "zero-probability pair must never be generated"


def test_event_energy_where_annotated(tmp_path):
    # a pure-tone event must raise in-band energy during its interval
    cfg = make_config(tmp_path, synth={"n_files": 2, "scene_event_prob": [[1.0, 0, 0], [1.0, 0, 0]],
                                       "event_min_dur": 2.0, "event_max_dur": 2.0,
                                       "max_instances": 1})
    info = generate(cfg, tmp_path / "corpus")
    anns = group_by_file(parse_annotations(info["annotations"], cfg.events))
    fid = next(iter(anns))
    a = anns[fid][0]
    audio, rate = read_wav(tmp_path / "corpus/audio" / f"{fid}.wav")
    freq = cfg.synth.event_freqs[0]

    def band_power(seg):
        spec = np.abs(np.fft.rfft(seg)) ** 2
        freqs = np.fft.rfftfreq(seg.size, 1.0 / rate)
        return spec[(freqs > freq - 50) & (freqs < freq + 50)].sum() / seg.size

    inside = audio[int((a.onset_s + 0.2) * rate):int((a.offset_s - 0.2) * rate)]
    outside_lo = audio[:int(max(a.onset_s - 0.3, 0.1) * rate)]
    if outside_lo.size > rate // 4:
        assert band_power(inside) > 10.0 * band_power(outside_lo)


def test_generation_is_deterministic(tmp_path):
    cfg = make_config(tmp_path)
    generate(cfg, tmp_path / "c1")
    generate(cfg, tmp_path / "c2")
    assert corpus_digest(tmp_path / "c1") == corpus_digest(tmp_path / "c2")


def test_seed_changes_corpus(tmp_path):
    generate(make_config(tmp_path), tmp_path / "c1")
    generate(make_config(tmp_path, seed=124), tmp_path / "c2")
    assert corpus_digest(tmp_path / "c1") != corpus_digest(tmp_path / "c2")


def test_unconfigured_synth_rejected(tmp_path):
    cfg = make_config(tmp_path)
    cfg.synth.scene_event_prob = []
    cfg.synth.noise_colors = []
    cfg.synth.event_freqs = []
    with pytest.raises(ConfigError):
        generate(cfg, tmp_path / "c")


def test_colored_noise_slope():
    rng = np.random.default_rng(0)
    white = colored_noise(rng, 1 << 14, 0.0)
    pink = colored_noise(rng, 1 << 14, 2.0)
    def lowband_share(x):
        p = np.abs(np.fft.rfft(x)) ** 2
        return p[1:len(p) // 16].sum() / p[1:].sum()
    assert lowband_share(pink) > 2.0 * lowband_share(white)
