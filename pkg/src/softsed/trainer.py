"""Training loop: optimizer, plateau schedule, cross-validation, prediction.

Everything here is deterministic for a fixed config and seed. Each fold
draws two generator streams, one for parameter init and one for the
epoch loop (shuffling and dropout), so changing the epoch count never
perturbs initialization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .audio import read_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import (binarize, chunk_file, fold_split, group_by_file,
                     parse_annotations, parse_scene_map, rasterize, Annotation)
from .errors import ConfigError, DataError
from .features import Normalizer, extract, load_cache, save_cache
from .losses import detection_loss
from .metrics import MetricReport, evaluate_files, frames_per_segment
from .model import SedModel
from .sim import SimV2, apply_mask, build_dictionary_v1, mask_v1


class Adam:
    """Adam with bias correction, visiting parameters in sorted-name order."""

    def __init__(self, named_params: dict, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = {name: named_params[name] for name in sorted(named_params)}
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_tensors(self) -> dict:
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict, t: int):
        self.t = int(t)
        for name in self.params:
            self.m[name] = tensors[f"adam.m.{name}"].copy()
            self.v[name] = tensors[f"adam.v.{name}"].copy()


class PlateauScheduler:
    """Halve the learning rate after ``patience`` epochs without strict
    improvement; stop once ``max_halvings`` halvings are exhausted and
    another full patience window passes.

    The first observation sets the baseline and already counts toward
    the patience window, so a monitor that never improves halves at
    epochs patience, 2*patience, ... exactly.
    """

    def __init__(self, lr0: float, patience: int, max_halvings: int, mode: str = "min"):
        if mode not in ("min", "max"):
            raise ValueError("mode must be 'min' or 'max'")
        self.lr0 = lr0
        self.lr = lr0
        self.patience = patience
        self.max_halvings = max_halvings
        self.mode = mode
        self.best = None
        self.bad = 0
        self.halvings = 0

    def _improved(self, value: float) -> bool:
        if self.best is None:
            return False
        return value < self.best if self.mode == "min" else value > self.best

    def observe(self, value: float) -> str:
        """Returns 'continue', 'halved', or 'stop'."""
        value = float(value)
        if self._improved(value):
            self.best = value
            self.bad = 0
            return "continue"
        if self.best is None:
            self.best = value
        self.bad += 1
        if self.bad >= self.patience:
            self.bad = 0
            if self.halvings >= self.max_halvings:
                return "stop"
            self.halvings += 1
            self.lr = self.lr0 / (2 ** self.halvings)
            return "halved"
        return "continue"

    def state(self) -> dict:
        return {"lr": self.lr, "best": self.best, "bad": self.bad,
                "halvings": self.halvings}

    def load_state(self, state: dict):
        self.lr = float(state["lr"])
        self.best = None if state["best"] is None else float(state["best"])
        self.bad = int(state["bad"])
        self.halvings = int(state["halvings"])


# -- dataset assembly ------------------------------------------------------


@dataclass
class FileData:
    file_id: str
    scene: str
    scene_index: int
    features: np.ndarray   # raw log-mel (T, n_mels)
    soft: np.ndarray       # (T, K)
    hard: np.ndarray       # (T, K)


def features_from_wav(cfg: RunConfig, wav_path) -> np.ndarray:
    audio, rate = read_wav(wav_path)
    f = cfg.features
    if rate != f.sample_rate:
        raise DataError(f"{wav_path}: sample rate {rate} does not match "
                        f"configured {f.sample_rate}")
    return extract(audio, rate, window_s=f.window_s, hop_s=f.hop_s,
                   n_mels=f.n_mels, log_eps=f.log_eps)


def file_features(cfg: RunConfig, file_id: str, write_cache: bool = True) -> np.ndarray:
    """Features for one corpus file, via the cache directory when set."""
    f = cfg.features
    cache_path = None
    if cfg.paths.feature_cache:
        cache_path = cfg.resolve(cfg.paths.feature_cache) / f"{file_id}.ssfc"
        if cache_path.exists():
            feats, hop_s, rate = load_cache(cache_path)
            if rate != f.sample_rate or hop_s != f.hop_s or feats.shape[1] != f.n_mels:
                raise DataError(f"{cache_path}: cached features do not match the "
                                "feature config; delete the cache to rebuild")
            return feats
    feats = features_from_wav(cfg, cfg.resolve(cfg.paths.audio_dir) / f"{file_id}.wav")
    if cache_path is not None and write_cache:
        save_cache(cache_path, feats, f.hop_s, f.sample_rate)
    return feats


def load_dataset(cfg: RunConfig) -> dict:
    """All corpus files as FileData, keyed by file id.

    The scene map defines the file universe; every annotated file must
    appear in it. Files without annotations get all-zero label grids.
    """
    scene_map = parse_scene_map(cfg.resolve(cfg.paths.scene_map), cfg.scenes)
    annotations = parse_annotations(cfg.resolve(cfg.paths.annotations), cfg.events)
    grouped = group_by_file(annotations)
    orphans = sorted(set(grouped) - set(scene_map))
    if orphans:
        raise DataError(f"annotated files missing from the scene map: {orphans}")
    scene_index = {s: i for i, s in enumerate(cfg.scenes)}
    dataset = {}
    for file_id in sorted(scene_map):
        feats = file_features(cfg, file_id)
        duration = feats.shape[0] * cfg.features.hop_s
        soft = rasterize(grouped.get(file_id, []), duration, cfg.features.hop_s,
                         cfg.events)
        hard = binarize(soft, cfg.train.binarize_threshold)
        scene = scene_map[file_id]
        dataset[file_id] = FileData(file_id, scene, scene_index[scene],
                                    feats, soft, hard)
    if not dataset:
        raise DataError("scene map lists no files")
    return dataset


def build_model(cfg: RunConfig, rng: np.random.Generator) -> SedModel:
    m = cfg.model
    return SedModel(n_events=len(cfg.events), n_mels=cfg.features.n_mels,
                    channels=tuple(m.channels), pools=tuple(m.pools),
                    conformer_dim=m.conformer_dim, conformer_heads=m.conformer_heads,
                    conformer_blocks=m.conformer_blocks, ffn_expansion=m.ffn_expansion,
                    conv_kernel=m.conv_kernel, dropout=m.dropout, rng=rng)


# -- one fold ---------------------------------------------------------------


def _batch_arrays(chunks: list, idxs) -> tuple:
    feats = np.stack([chunks[i].features for i in idxs])
    soft = np.stack([chunks[i].soft for i in idxs])
    hard = np.stack([chunks[i].hard for i in idxs])
    valid = np.stack([chunks[i].valid for i in idxs])
    scenes = np.array([chunks[i].scene_index for i in idxs], dtype=np.int64)
    return feats, soft, hard, valid, scenes


def _mask_for(sim_mode: str, scenes: np.ndarray, dictionary, sim, scale: float):
    if sim_mode == "v1":
        return ad.Tensor(mask_v1(dictionary, scenes, scale))
    if sim_mode == "v2":
        return sim(scenes)
    return None


def clip_global_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm. A max_norm of 0 disables clipping.
    """
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def train_epoch(model: SedModel, chunks: list, optimizer: Adam, cfg: RunConfig,
                rng: np.random.Generator, dictionary=None, sim: SimV2 = None) -> dict:
    """One pass over the shuffled chunk list; returns chunk-weighted mean
    loss terms plus 'loss' for the total."""
    tc = cfg.train
    model.train()
    if sim is not None:
        sim.train()
    order = rng.permutation(len(chunks))
    sums, total_chunks = {}, 0
    for start in range(0, len(order), tc.batch_size):
        idxs = order[start:start + tc.batch_size]
        feats, soft, hard, valid, scenes = _batch_arrays(chunks, idxs)
        model.zero_grad()
        if sim is not None:
            sim.zero_grad()
        e1, e2, fused = model(feats)
        mask = _mask_for(tc.sim_mode, scenes, dictionary, sim, tc.sim_scale)
        if mask is not None and tc.mask_loss_attachment == "masked":
            out = apply_mask(fused, mask)
        else:
            out = fused
        loss, terms = detection_loss(tc.loss_mode, e1, e2, out, soft, hard, valid)
        ad.check_finite(loss, "training loss")
        loss.backward()
        if tc.clip_norm > 0:
            clip_global_norm(optimizer.params, tc.clip_norm)
        optimizer.step()
        terms["loss"] = loss.item()
        n = len(idxs)
        for key, value in terms.items():
            sums[key] = sums.get(key, 0.0) + value * n
        total_chunks += n
    return {key: value / total_chunks for key, value in sums.items()}


def validate(model: SedModel, dataset: dict, val_ids: list, normalizer: Normalizer,
             cfg: RunConfig, dictionary=None, sim: SimV2 = None) -> tuple:
    """Full-file forward passes on the validation files.

    Returns (val_loss, MetricReport, score_grids). Scores are the
    system output: the fused posterior, gated by the scene mask
    whenever a mask is active.
    """
    tc = cfg.train
    model.eval()
    if sim is not None:
        sim.eval()
    seg_frames = frames_per_segment(tc.segment_s, cfg.features.hop_s)
    scores, refs = {}, {}
    loss_sum, frame_sum = 0.0, 0
    with ad.no_grad():
        for file_id in sorted(val_ids):
            d = dataset[file_id]
            feats = normalizer.transform(d.features)[None]
            e1, e2, fused = model(feats)
            scene = np.array([d.scene_index], dtype=np.int64)
            mask = _mask_for(tc.sim_mode, scene, dictionary, sim, tc.sim_scale)
            out = apply_mask(fused, mask) if mask is not None else fused
            loss_out = out if (mask is not None and tc.mask_loss_attachment == "masked") else fused
            loss, _ = detection_loss(tc.loss_mode, e1, e2, loss_out,
                                     d.soft[None], d.hard[None])
            T = d.features.shape[0]
            loss_sum += loss.item() * T
            frame_sum += T
            scores[file_id] = out.data[0].copy()
            refs[file_id] = d.hard
    report = evaluate_files(refs, scores, seg_frames, tc.binarize_threshold)
    return loss_sum / frame_sum, report, scores


@dataclass
class FoldResult:
    fold: int
    train_files: list
    val_files: list
    epochs_run: int
    history: list = field(repr=False)
    report: MetricReport = None
    val_scores: dict = field(default=None, repr=False)
    checkpoint_path: Path = None


def _monitor_value(monitor: str, val_loss: float, report: MetricReport) -> float:
    return val_loss if monitor == "val_loss" else report.f1_macro_optimal


def _monitor_mode(monitor: str) -> str:
    return "min" if monitor == "val_loss" else "max"


def _gather_params(model: SedModel, sim: SimV2 = None) -> dict:
    params = dict(model.named_parameters())
    if sim is not None:
        params.update({f"sim.{name}": p for name, p in sim.named_parameters()})
    return params


def _training_tensors(model, optimizer, normalizer, dictionary, sim) -> dict:
    tensors = {f"model.{name}": arr for name, arr in model.state_dict().items()}
    tensors.update(optimizer.state_tensors())
    tensors["norm.mean"] = normalizer.mean
    tensors["norm.std"] = normalizer.std
    if dictionary is not None:
        tensors["sim.dictionary"] = dictionary
    if sim is not None:
        tensors.update({f"sim.{name}": arr for name, arr in sim.state_dict().items()})
    return tensors


def save_training_state(path, cfg: RunConfig, model, optimizer, scheduler,
                        normalizer, loop_rng, epoch: int, fold: int,
                        dictionary=None, sim=None):
    meta = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "epoch": int(epoch),
        "fold": int(fold),
        "adam_t": int(optimizer.t),
        "scheduler": scheduler.state(),
        "rng_state": loop_rng.bit_generator.state,
    }
    save_checkpoint(path, _training_tensors(model, optimizer, normalizer,
                                            dictionary, sim), meta)


def restore_training_state(path, model, optimizer, scheduler, loop_rng,
                           sim=None) -> tuple:
    """Load a training checkpoint back into live objects.

    Returns (meta, normalizer, dictionary). After this, continuing the
    epoch loop reproduces an uninterrupted run bit for bit.
    """
    tensors, meta = load_checkpoint(path)
    model.load_state_dict({name[len("model."):]: arr for name, arr in tensors.items()
                           if name.startswith("model.")})
    optimizer.load_state_tensors(tensors, meta["adam_t"])
    scheduler.load_state(meta["scheduler"])
    loop_rng.bit_generator.state = meta["rng_state"]
    if sim is not None:
        sim.load_state_dict({name[len("sim."):]: arr for name, arr in tensors.items()
                             if name.startswith("sim.")})
    normalizer = Normalizer(tensors["norm.mean"], tensors["norm.std"])
    dictionary = tensors.get("sim.dictionary")
    return meta, normalizer, dictionary


def train_fold(cfg: RunConfig, dataset: dict, train_ids: list, val_ids: list,
               fold: int, out_dir: Path) -> FoldResult:
    """Train one fold to plateau exhaustion and checkpoint the result."""
    tc = cfg.train
    train_ids = sorted(train_ids)
    val_ids = sorted(val_ids)
    init_rng = np.random.default_rng([cfg.seed, fold, 0])
    loop_rng = np.random.default_rng([cfg.seed, fold, 1])

    model = build_model(cfg, init_rng)
    model.set_rng(loop_rng)
    sim = None
    dictionary = None
    if tc.sim_mode == "v2":
        sim = SimV2(len(cfg.scenes), len(cfg.events), tc.sim_embed_dim, init_rng)
    elif tc.sim_mode == "v1":
        dictionary = build_dictionary_v1(
            {fid: dataset[fid].soft for fid in train_ids},
            {fid: dataset[fid].scene for fid in train_ids},
            cfg.scenes, tc.sim_statistic, tc.binarize_threshold)

    normalizer = Normalizer.fit([dataset[fid].features for fid in train_ids])
    chunks = []
    for fid in train_ids:
        d = dataset[fid]
        chunks.extend(chunk_file(normalizer.transform(d.features), d.soft, d.hard,
                                 d.scene_index, fid, tc.chunk_frames))

    optimizer = Adam(_gather_params(model, sim), tc.lr0)
    scheduler = PlateauScheduler(tc.lr0, tc.plateau_patience, tc.max_halvings,
                                 _monitor_mode(tc.monitor))

    history = []
    report, scores = None, None
    epoch = 0
    for epoch in range(1, tc.max_epochs + 1):
        optimizer.lr = scheduler.lr
        terms = train_epoch(model, chunks, optimizer, cfg, loop_rng, dictionary, sim)
        val_loss, report, scores = validate(model, dataset, val_ids, normalizer,
                                            cfg, dictionary, sim)
        action = scheduler.observe(_monitor_value(tc.monitor, val_loss, report))
        row = {"epoch": epoch, "lr": optimizer.lr, "val_loss": val_loss,
               "val_f1_micro": report.f1_micro, "val_er_micro": report.er_micro,
               "val_f1_macro": report.f1_macro,
               "val_f1_macro_opt": report.f1_macro_optimal, "action": action}
        for key in sorted(terms):
            row[f"train_{key}"] = terms[key]
        history.append(row)
        if action == "stop":
            break

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"fold_{fold}.ckpt"
    save_training_state(ckpt_path, cfg, model, optimizer, scheduler, normalizer,
                        loop_rng, epoch, fold, dictionary, sim)
    log_path = out_dir / f"fold_{fold}_log.csv"
    with log_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items()})
    return FoldResult(fold, train_ids, val_ids, epoch, history, report, scores,
                      ckpt_path)


def cross_validate(cfg: RunConfig) -> dict:
    """K-fold training; writes per-fold checkpoints, logs, and metrics.json.

    With folds == 1 the single fold trains and validates on the full
    file list (an overfit run for capacity checks).
    """
    dataset = load_dataset(cfg)
    out_dir = cfg.resolve(cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    folds = fold_split(sorted(dataset), cfg.train.folds, cfg.seed)

    results = []
    pooled_scores, pooled_refs = {}, {}
    for k, val_ids in enumerate(folds):
        if cfg.train.folds == 1:
            train_ids = list(val_ids)
        else:
            train_ids = sorted(set(dataset) - set(val_ids))
        result = train_fold(cfg, dataset, train_ids, val_ids, k, out_dir)
        results.append(result)
        pooled_scores.update(result.val_scores)
        pooled_refs.update({fid: dataset[fid].hard for fid in val_ids})

    seg_frames = frames_per_segment(cfg.train.segment_s, cfg.features.hop_s)
    pooled = evaluate_files(pooled_refs, pooled_scores, seg_frames,
                            cfg.train.binarize_threshold)
    summary = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "folds": [
            {"fold": r.fold, "val_files": r.val_files, "epochs": r.epochs_run,
             "metrics": r.report.to_dict()}
            for r in results
        ],
        "pooled": pooled.to_dict(),
    }
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


# -- prediction from a checkpoint -------------------------------------------


@dataclass
class ModelBundle:
    """Everything needed to run inference from a saved checkpoint."""

    cfg: RunConfig
    model: SedModel
    normalizer: Normalizer
    dictionary: np.ndarray = None
    sim: SimV2 = None

    @property
    def sim_active(self) -> bool:
        return self.cfg.train.sim_mode != "none"


def load_model_bundle(ckpt_path, base_dir=None) -> ModelBundle:
    tensors, meta = load_checkpoint(ckpt_path)
    if "config" not in meta:
        raise DataError(f"{ckpt_path}: checkpoint has no embedded config")
    try:
        cfg = RunConfig.from_dict(meta["config"],
                                  base_dir=base_dir or Path(ckpt_path).parent)
    except ConfigError as exc:
        raise DataError(f"{ckpt_path}: embedded config invalid: {exc}") from exc
    model = build_model(cfg, np.random.default_rng(0))
    model.load_state_dict({name[len("model."):]: arr for name, arr in tensors.items()
                           if name.startswith("model.")})
    model.eval()
    if "norm.mean" not in tensors or "norm.std" not in tensors:
        raise DataError(f"{ckpt_path}: checkpoint lacks normalizer statistics")
    normalizer = Normalizer(tensors["norm.mean"], tensors["norm.std"])
    dictionary, sim = None, None
    if cfg.train.sim_mode == "v1":
        if "sim.dictionary" not in tensors:
            raise DataError(f"{ckpt_path}: sim_mode v1 checkpoint lacks a dictionary")
        dictionary = tensors["sim.dictionary"]
    elif cfg.train.sim_mode == "v2":
        sim = SimV2(len(cfg.scenes), len(cfg.events), cfg.train.sim_embed_dim,
                    np.random.default_rng(0))
        sim.load_state_dict({name[len("sim."):]: arr for name, arr in tensors.items()
                             if name.startswith("sim.")})
        sim.eval()
    return ModelBundle(cfg, model, normalizer, dictionary, sim)


def predict_posteriors(bundle: ModelBundle, features_raw: np.ndarray,
                       scene_index: int = None) -> np.ndarray:
    """System posterior grid (T, K) for one file's raw features."""
    feats = bundle.normalizer.transform(features_raw)[None]
    with ad.no_grad():
        _, _, fused = bundle.model(feats)
        if bundle.sim_active:
            if scene_index is None:
                raise DataError("scene masks are active; the file needs a scene")
            scene = np.array([scene_index], dtype=np.int64)
            mask = _mask_for(bundle.cfg.train.sim_mode, scene, bundle.dictionary,
                             bundle.sim, bundle.cfg.train.sim_scale)
            fused = apply_mask(fused, mask)
    return fused.data[0].copy()


def write_posteriors(path, grids: dict, events: list):
    """Per-frame posterior table: file_id, frame, one column per event.

    Floats are written with repr so the file round-trips bit-exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file_id", "frame"] + list(events))
        for file_id in sorted(grids):
            grid = np.asarray(grids[file_id])
            for t in range(grid.shape[0]):
                writer.writerow([file_id, t] + [repr(float(v)) for v in grid[t]])


def read_posteriors(path, events: list) -> dict:
    """Read a posterior table back into per-file (T, K) grids."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(lines))
    if not rows or rows[0] != ["file_id", "frame"] + list(events):
        raise DataError(f"{path}: not a posterior table for these events")
    values = {}
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != 2 + len(events):
            raise DataError(f"{path}: ragged posterior row")
        try:
            values.setdefault(row[0], []).append(
                (int(row[1]), [float(v) for v in row[2:]]))
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric posterior value") from exc
    grids = {}
    for file_id, entries in values.items():
        entries.sort()
        if [t for t, _ in entries] != list(range(len(entries))):
            raise DataError(f"{path}: frame gaps for file '{file_id}'")
        grids[file_id] = np.array([v for _, v in entries])
    return grids


def posterior_events(grid: np.ndarray, threshold: float, hop_s: float,
                     events: list, file_id: str) -> list:
    """Threshold runs of a posterior grid into event annotations.

    Confidence is the peak posterior inside the run; boundaries land on
    the frame grid.
    """
    grid = np.asarray(grid)
    found = []
    for k, label in enumerate(events):
        active = grid[:, k] >= threshold
        t = 0
        T = len(active)
        while t < T:
            if not active[t]:
                t += 1
                continue
            start = t
            while t < T and active[t]:
                t += 1
            found.append(Annotation(
                file_id=file_id, onset_s=start * hop_s, offset_s=t * hop_s,
                event=label, confidence=float(grid[start:t, k].max())))
    found.sort(key=lambda a: (a.file_id, a.onset_s, a.event))
    return found
