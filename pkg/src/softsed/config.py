"""Run configuration: YAML schema, validation, overrides, hashing.

A run is fully described by one YAML file; ``key.path=value`` overrides
are merged before validation. The configuration hash identifies a run
in checkpoints and metric reports.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError

LOSS_MODES = ("combined", "loss_a", "loss_b")
SIM_MODES = ("none", "v1", "v2")
SIM_STATISTICS = ("frame_presence", "mean_soft", "clip_presence")
MONITORS = ("val_loss", "f1_macro_opt")
MASK_ATTACHMENTS = ("masked", "literal")


def _check_fields(name: str, raw: dict, cls):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}")


def _build(name: str, raw: dict, cls):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    _check_fields(name, raw, cls)
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad section '{name}': {exc}") from exc


@dataclass
class FeatureConfig:
    sample_rate: int = 44100
    window_s: float = 0.5
    hop_s: float = 0.25
    n_mels: int = 128
    log_eps: float = 1e-10

    def validate(self):
        if self.sample_rate <= 0:
            raise ConfigError("features.sample_rate must be positive")
        if self.window_s <= 0 or self.hop_s <= 0:
            raise ConfigError("features.window_s and hop_s must be positive")
        if self.n_mels < 1:
            raise ConfigError("features.n_mels must be >= 1")
        if self.log_eps <= 0:
            raise ConfigError("features.log_eps must be positive")


@dataclass
class ModelConfig:
    channels: list = field(default_factory=lambda: [32, 64, 128])
    pools: list = field(default_factory=lambda: [5, 2, 2])
    conformer_dim: int = 144
    conformer_heads: int = 4
    conformer_blocks: int = 2
    ffn_expansion: int = 4
    conv_kernel: int = 7
    dropout: float = 0.1

    def validate(self, n_mels: int):
        if len(self.channels) != len(self.pools) or not self.channels:
            raise ConfigError("model.channels and model.pools must align and be non-empty")
        f = n_mels
        for p in self.pools:
            if p < 1:
                raise ConfigError("model.pools entries must be >= 1")
            f //= p
        if f < 1:
            raise ConfigError("model.pools collapse the frequency axis")
        if self.conformer_dim % self.conformer_heads != 0:
            raise ConfigError("model.conformer_dim must be divisible by conformer_heads")
        if self.conv_kernel % 2 == 0:
            raise ConfigError("model.conv_kernel must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout must be in [0, 1)")


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr0: float = 1e-3
    plateau_patience: int = 10
    max_halvings: int = 5
    max_epochs: int = 200
    chunk_frames: int = 100
    folds: int = 5
    loss_mode: str = "combined"
    sim_mode: str = "none"
    sim_embed_dim: int = 128
    sim_statistic: str = "frame_presence"
    sim_scale: float = 1.0
    mask_loss_attachment: str = "masked"
    monitor: str = "val_loss"
    binarize_threshold: float = 0.5
    segment_s: float = 1.0
    clip_norm: float = 0.0   # global gradient norm cap; 0 disables

    def validate(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.chunk_frames < 1:
            raise ConfigError("train sizes must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("train.lr0 must be positive")
        if self.plateau_patience < 1 or self.max_halvings < 0:
            raise ConfigError("train.plateau_patience must be >= 1, max_halvings >= 0")
        if self.folds < 1:
            raise ConfigError("train.folds must be >= 1")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"train.loss_mode must be one of {LOSS_MODES}")
        if self.sim_mode not in SIM_MODES:
            raise ConfigError(f"train.sim_mode must be one of {SIM_MODES}")
        if self.sim_statistic not in SIM_STATISTICS:
            raise ConfigError(f"train.sim_statistic must be one of {SIM_STATISTICS}")
        if self.sim_mode == "v2" and self.sim_embed_dim < 2:
            raise ConfigError("train.sim_embed_dim must be >= 2 for sim_mode v2")
        if self.mask_loss_attachment not in MASK_ATTACHMENTS:
            raise ConfigError(f"train.mask_loss_attachment must be one of {MASK_ATTACHMENTS}")
        if self.monitor not in MONITORS:
            raise ConfigError(f"train.monitor must be one of {MONITORS}")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ConfigError("train.binarize_threshold must be in (0, 1)")
        if self.segment_s <= 0:
            raise ConfigError("train.segment_s must be positive")
        if self.clip_norm < 0:
            raise ConfigError("train.clip_norm must be >= 0")


@dataclass
class SynthConfig:
    n_files: int = 20
    duration_s: float = 10.0
    sample_rate: int = 16000
    noise_colors: list = field(default_factory=list)      # one exponent per scene
    event_freqs: list = field(default_factory=list)       # one center (Hz) per event
    event_kinds: list = field(default_factory=list)       # "tone" or "band" per event
    scene_event_prob: list = field(default_factory=list)  # (scenes, events) in [0, 1]
    confidence_range: list = field(default_factory=lambda: [0.6, 1.0])
    event_min_dur: float = 1.0
    event_max_dur: float = 3.0
    background_level: float = 0.05
    event_level: float = 0.25
    max_instances: int = 2

    def is_configured(self) -> bool:
        return bool(self.scene_event_prob or self.noise_colors or self.event_freqs)

    def validate(self, n_scenes: int, n_events: int):
        if self.n_files < 1:
            raise ConfigError("synth.n_files must be >= 1")
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise ConfigError("synth duration and sample rate must be positive")
        if len(self.noise_colors) != n_scenes:
            raise ConfigError("synth.noise_colors must list one exponent per scene")
        if len(self.event_freqs) != n_events:
            raise ConfigError("synth.event_freqs must list one frequency per event")
        if self.event_kinds and len(self.event_kinds) != n_events:
            raise ConfigError("synth.event_kinds must be empty or one kind per event")
        for kind in self.event_kinds:
            if kind not in ("tone", "band"):
                raise ConfigError(f"unknown event kind '{kind}'")
        prob = self.scene_event_prob
        if len(prob) != n_scenes or any(len(row) != n_events for row in prob):
            raise ConfigError("synth.scene_event_prob must be scenes x events")
        for row in prob:
            for p in row:
                if not 0.0 <= p <= 1.0:
                    raise ConfigError("synth.scene_event_prob entries must be in [0, 1]")
        lo, hi = self.confidence_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("synth.confidence_range must be ordered within [0, 1]")
        if not 0 < self.event_min_dur <= self.event_max_dur:
            raise ConfigError("synth event durations must satisfy 0 < min <= max")
        if self.max_instances < 1:
            raise ConfigError("synth.max_instances must be >= 1")
        for f in self.event_freqs:
            if not 0 < f < self.sample_rate / 2:
                raise ConfigError(f"event frequency {f} outside (0, Nyquist)")


@dataclass
class PathsConfig:
    audio_dir: str = "data/audio"
    annotations: str = "data/annotations.csv"
    scene_map: str = "data/scenes.csv"
    feature_cache: str = ""
    output_dir: str = "runs/latest"

    def validate(self):
        if not self.output_dir:
            raise ConfigError("paths.output_dir must be set")


@dataclass
class RunConfig:
    seed: int = 0
    events: list = field(default_factory=list)
    scenes: list = field(default_factory=list)
    paths: PathsConfig = field(default_factory=PathsConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    base_dir: Path = field(default_factory=Path, repr=False, compare=False)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration root must be a mapping")
        known = {"seed", "events", "scenes", "paths", "features", "model", "train", "synth"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        cfg = cls(
            seed=raw.get("seed", 0),
            events=list(raw.get("events", [])),
            scenes=list(raw.get("scenes", [])),
            paths=_build("paths", raw.get("paths"), PathsConfig),
            features=_build("features", raw.get("features"), FeatureConfig),
            model=_build("model", raw.get("model"), ModelConfig),
            train=_build("train", raw.get("train"), TrainConfig),
            synth=_build("synth", raw.get("synth"), SynthConfig),
            base_dir=Path(base_dir),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path, overrides: list = None) -> "RunConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if raw is None:
            raw = {}
        if overrides:
            raw = apply_overrides(raw, overrides)
        return cls.from_dict(raw, base_dir=path.parent)

    def validate(self):
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if not self.events:
            raise ConfigError("events vocabulary must be non-empty")
        if len(set(self.events)) != len(self.events):
            raise ConfigError("events vocabulary has duplicates")
        if not self.scenes:
            raise ConfigError("scenes vocabulary must be non-empty")
        if len(set(self.scenes)) != len(self.scenes):
            raise ConfigError("scenes vocabulary has duplicates")
        self.paths.validate()
        self.features.validate()
        self.model.validate(self.features.n_mels)
        self.train.validate()
        # the synth section is optional for runs that use existing data
        if self.synth.is_configured():
            self.synth.validate(len(self.scenes), len(self.events))

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        def plain(obj):
            if isinstance(obj, (list, tuple)):
                return [plain(v) for v in obj]
            return obj

        out = {"seed": self.seed, "events": plain(self.events), "scenes": plain(self.scenes)}
        for section in ("paths", "features", "model", "train", "synth"):
            obj = getattr(self, section)
            out[section] = {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def apply_overrides(raw: dict, overrides: list) -> dict:
    """Merge ``section.key=value`` strings; values parse as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, _, value = item.partition("=")
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"override '{item}' has an empty path segment")
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override value '{value}' is not valid YAML: {exc}") from exc
        node = raw
        for part in parts[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"override '{item}' descends into a non-mapping")
            node = nxt
        node[parts[-1]] = parsed
    return raw
