"""Synthetic corpus generation.

Each file gets a scene (round-robin over the vocabulary), a colored
noise background whose spectral slope depends on the scene, and a
random set of event instances (tones or band-limited noise bursts)
controlled by a scene-by-event probability table. Event amplitude
scales with the annotated confidence, so soft labels mean something
acoustically. Everything is driven by one seeded generator, which makes
the corpus bytes a pure function of the configuration.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import write_wav
from .config import RunConfig
from .corpus import Annotation, write_annotations, write_scene_map
from .errors import ConfigError


def colored_noise(rng: np.random.Generator, n: int, exponent: float) -> np.ndarray:
    """Unit-variance noise with power spectrum ~ 1/f**exponent."""
    white = rng.standard_normal(n)
    if exponent == 0.0:
        return white
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-exponent / 2.0)
    shaped = np.fft.irfft(spectrum * scale, n)
    std = shaped.std()
    return shaped / std if std > 0 else shaped


def _fade_envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        slope = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = slope
        env[n - r:] = slope[::-1]
    return env


def tone_burst(rng: np.random.Generator, n: int, freq: float, rate: int) -> np.ndarray:
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n) / rate
    return np.sin(2.0 * np.pi * freq * t + phase) * _fade_envelope(n, int(0.05 * rate))


def band_burst(rng: np.random.Generator, n: int, freq: float, rate: int) -> np.ndarray:
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    mask = (freqs >= 0.8 * freq) & (freqs <= 1.25 * freq)
    if not np.any(mask):
        mask = np.zeros_like(freqs, dtype=bool)
        mask[np.argmin(np.abs(freqs - freq))] = True
    shaped = np.fft.irfft(spectrum * mask, n)
    peak = np.abs(shaped).max()
    if peak > 0:
        shaped = shaped / peak
    return shaped * _fade_envelope(n, int(0.05 * rate))


def generate(cfg: RunConfig, out_dir) -> dict:
    """Write WAVs plus annotation and scene tables; returns their paths."""
    if not cfg.synth.is_configured():
        raise ConfigError("synth section is not configured (scene_event_prob missing)")
    cfg.synth.validate(len(cfg.scenes), len(cfg.events))
    syn = cfg.synth
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng([cfg.seed, 2])
    rate = syn.sample_rate
    n_samples = int(round(syn.duration_s * rate))
    kinds = syn.event_kinds or ["tone"] * len(cfg.events)
    prob = np.asarray(syn.scene_event_prob, dtype=np.float64)

    annotations = []
    scene_map = {}
    for i in range(syn.n_files):
        scene_idx = i % len(cfg.scenes)
        file_id = f"synth_{i:04d}"
        scene_map[file_id] = cfg.scenes[scene_idx]

        audio = colored_noise(rng, n_samples, syn.noise_colors[scene_idx]) * syn.background_level
        for k, event in enumerate(cfg.events):
            p = prob[scene_idx, k]
            count = 0
            if rng.random() < p:
                count = int(rng.integers(1, syn.max_instances + 1))
            for _ in range(count):
                dur = min(rng.uniform(syn.event_min_dur, syn.event_max_dur), syn.duration_s)
                onset = rng.uniform(0.0, syn.duration_s - dur)
                conf = rng.uniform(syn.confidence_range[0], syn.confidence_range[1])
                start = int(round(onset * rate))
                length = min(int(round(dur * rate)), n_samples - start)
                if length < 2:
                    continue
                if kinds[k] == "tone":
                    burst = tone_burst(rng, length, syn.event_freqs[k], rate)
                else:
                    burst = band_burst(rng, length, syn.event_freqs[k], rate)
                audio[start:start + length] += syn.event_level * conf * burst
                annotations.append(Annotation(file_id, onset, onset + dur, event, conf))
        write_wav(audio_dir / f"{file_id}.wav", audio, rate)

    annotations.sort(key=lambda a: (a.file_id, a.onset_s, a.event))
    ann_path = out_dir / "annotations.csv"
    scene_path = out_dir / "scenes.csv"
    write_annotations(ann_path, annotations)
    write_scene_map(scene_path, scene_map)
    return {"audio_dir": audio_dir, "annotations": ann_path, "scene_map": scene_path,
            "n_files": syn.n_files, "n_events": len(annotations)}
