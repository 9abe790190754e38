"""Shared builders for test configurations and corpora."""

import copy

from softsed.config import RunConfig

BASE_CONFIG = {
    "seed": 123,
    "events": ["beep", "chirp", "rumble"],
    "scenes": ["indoor", "outdoor"],
    "paths": {
        "audio_dir": "corpus/audio",
        "annotations": "corpus/annotations.csv",
        "scene_map": "corpus/scenes.csv",
        "feature_cache": "cache",
        "output_dir": "runs/test",
    },
    "features": {"sample_rate": 16000, "window_s": 0.5, "hop_s": 0.25,
                 "n_mels": 32, "log_eps": 1e-10},
    "model": {"channels": [4, 6, 8], "pools": [2, 2, 2], "conformer_dim": 16,
              "conformer_heads": 2, "conformer_blocks": 1, "ffn_expansion": 2,
              "conv_kernel": 3, "dropout": 0.1},
    "train": {"batch_size": 8, "lr0": 1e-3, "plateau_patience": 10,
              "max_halvings": 5, "max_epochs": 4, "chunk_frames": 16,
              "folds": 2, "loss_mode": "combined", "sim_mode": "none",
              "sim_embed_dim": 8, "sim_statistic": "frame_presence",
              "monitor": "val_loss"},
    "synth": {"n_files": 6, "duration_s": 4.0, "sample_rate": 16000,
              "noise_colors": [0.0, 1.0],
              "event_freqs": [400.0, 1200.0, 2800.0],
              "event_kinds": ["tone", "tone", "band"],
              "scene_event_prob": [[0.9, 0.5, 0.0], [0.0, 0.5, 0.9]],
              "confidence_range": [0.6, 1.0],
              "event_min_dur": 0.8, "event_max_dur": 2.0,
              "background_level": 0.05, "event_level": 0.3,
              "max_instances": 2},
}


def config_dict(**section_updates) -> dict:
    """Deep copy of the base test config with per-section updates."""
    raw = copy.deepcopy(BASE_CONFIG)
    for section, updates in section_updates.items():
        if isinstance(updates, dict):
            raw.setdefault(section, {}).update(updates)
        else:
            raw[section] = updates
    return raw


def make_config(base_dir, **section_updates) -> RunConfig:
    return RunConfig.from_dict(config_dict(**section_updates), base_dir=base_dir)
