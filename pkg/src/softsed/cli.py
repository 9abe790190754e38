"""Command line entry point.

Subcommands: synth, features, sim-stats, train, eval, predict. Every
command loads a YAML config (``--config``) with optional dotted
overrides (``--set section.key=value``), prints a one-line JSON result
to stdout, and maps failures to exit codes: config 2, data 3,
numerics 4. Failure details go to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import synthgen, trainer
from .config import RunConfig
from .corpus import (binarize, group_by_file, parse_annotations,
                     parse_scene_map, rasterize, write_annotations)
from .errors import ConfigError, DataError, SoftSedError
from .metrics import evaluate_files, frames_per_segment
from .sim import (build_dictionary_v1, extract_dictionary_v2, read_dictionary,
                  write_dictionary)


def _load_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    return RunConfig.from_yaml(args.config, args.set or [])


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out) if args.out else cfg.resolve(cfg.paths.audio_dir).parent
    paths = synthgen.generate(cfg, out_dir)
    _emit({"audio_dir": str(paths["audio_dir"]),
           "annotations": str(paths["annotations"]),
           "scene_map": str(paths["scene_map"]),
           "n_files": paths["n_files"], "n_events": paths["n_events"]})
    return 0


def cmd_features(args) -> int:
    cfg = _load_config(args)
    if not cfg.paths.feature_cache:
        raise ConfigError("paths.feature_cache must be set to precompute features")
    scene_map = parse_scene_map(cfg.resolve(cfg.paths.scene_map), cfg.scenes)
    frames = 0
    for file_id in sorted(scene_map):
        frames += trainer.file_features(cfg, file_id).shape[0]
    _emit({"files": len(scene_map), "frames": frames,
           "cache_dir": str(cfg.resolve(cfg.paths.feature_cache))})
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    summary = trainer.cross_validate(cfg)
    _emit(summary)
    return 0


def cmd_sim_stats(args) -> int:
    if args.checkpoint:
        bundle = trainer.load_model_bundle(args.checkpoint)
        mode = bundle.cfg.train.sim_mode
        if mode == "v1":
            table = bundle.dictionary
        elif mode == "v2":
            table = extract_dictionary_v2(bundle.sim)
        else:
            raise DataError(f"{args.checkpoint}: trained without scene masks, "
                            "no statistics to extract")
        scenes, events = bundle.cfg.scenes, bundle.cfg.events
        out = Path(args.out) if args.out else Path(args.checkpoint).parent / "dictionary.csv"
    else:
        cfg = _load_config(args)
        scene_map = parse_scene_map(cfg.resolve(cfg.paths.scene_map), cfg.scenes)
        grouped = group_by_file(
            parse_annotations(cfg.resolve(cfg.paths.annotations), cfg.events))
        orphans = sorted(set(grouped) - set(scene_map))
        if orphans:
            raise DataError(f"annotated files missing from the scene map: {orphans}")
        soft_grids, scene_of = {}, {}
        for file_id in sorted(scene_map):
            feats = trainer.file_features(cfg, file_id, write_cache=False)
            duration = feats.shape[0] * cfg.features.hop_s
            soft_grids[file_id] = rasterize(grouped.get(file_id, []), duration,
                                            cfg.features.hop_s, cfg.events)
            scene_of[file_id] = scene_map[file_id]
        table = build_dictionary_v1(soft_grids, scene_of, cfg.scenes,
                                    cfg.train.sim_statistic,
                                    cfg.train.binarize_threshold)
        scenes, events = cfg.scenes, cfg.events
        out = Path(args.out) if args.out else cfg.resolve(cfg.paths.output_dir) / "dictionary.csv"
    write_dictionary(out, table, scenes, events)
    _emit({"dictionary": str(out), "scenes": len(scenes), "events": len(events)})
    return 0


def cmd_predict(args) -> int:
    bundle = trainer.load_model_bundle(args.checkpoint)
    if args.config:
        data_cfg = RunConfig.from_yaml(args.config, args.set or [])
        if data_cfg.events != bundle.cfg.events or data_cfg.scenes != bundle.cfg.scenes:
            raise DataError("config vocabularies do not match the checkpoint")
    else:
        data_cfg = bundle.cfg
        data_cfg.base_dir = Path.cwd()
    if args.dictionary:
        if bundle.cfg.train.sim_mode != "v1":
            raise ConfigError("--dictionary only applies to checkpoints trained "
                              "with sim_mode v1")
        table, scenes, events = read_dictionary(args.dictionary)
        if scenes != bundle.cfg.scenes or events != bundle.cfg.events:
            raise DataError(f"{args.dictionary}: vocabularies do not match "
                            "the checkpoint")
        bundle.dictionary = table

    scene_map = parse_scene_map(data_cfg.resolve(data_cfg.paths.scene_map),
                                bundle.cfg.scenes)
    scene_index = {s: i for i, s in enumerate(bundle.cfg.scenes)}
    threshold = args.threshold if args.threshold is not None \
        else bundle.cfg.train.binarize_threshold
    audio_dir = data_cfg.resolve(data_cfg.paths.audio_dir)
    found = []
    grids = {}
    for file_id in sorted(scene_map):
        feats = trainer.features_from_wav(bundle.cfg, audio_dir / f"{file_id}.wav")
        grid = trainer.predict_posteriors(bundle, feats,
                                          scene_index[scene_map[file_id]])
        grids[file_id] = grid
        found.extend(trainer.posterior_events(grid, threshold,
                                              bundle.cfg.features.hop_s,
                                              bundle.cfg.events, file_id))
    out = Path(args.out) if args.out else \
        data_cfg.resolve(data_cfg.paths.output_dir) / "predictions.csv"
    write_annotations(out, found)
    post_out = Path(args.posteriors) if args.posteriors else \
        out.with_name(out.stem + "_posteriors.csv")
    trainer.write_posteriors(post_out, grids, bundle.cfg.events)
    _emit({"predictions": str(out), "posteriors": str(post_out),
           "files": len(scene_map), "events": len(found)})
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    ref_rows = parse_annotations(args.ref, cfg.events)
    ref_by_file = group_by_file(ref_rows)
    hop = cfg.features.hop_s
    refs, scores = {}, {}
    if args.posteriors:
        # soft scores on the original frame grid; the table fixes each
        # file's timeline, so sub-threshold detail survives into F1_mo
        scores = trainer.read_posteriors(args.pred, cfg.events)
        if not scores:
            raise DataError(f"{args.pred}: no posterior rows")
        for file_id, grid in scores.items():
            soft_ref = rasterize(ref_by_file.get(file_id, []),
                                 grid.shape[0] * hop, hop, cfg.events)
            refs[file_id] = binarize(soft_ref, cfg.train.binarize_threshold)
        file_ids = sorted(scores)
    else:
        pred_by_file = group_by_file(parse_annotations(args.pred, cfg.events))
        file_ids = sorted(set(ref_by_file) | set(pred_by_file))
        if not file_ids:
            raise DataError("no annotations in either file")
        for file_id in file_ids:
            rows = ref_by_file.get(file_id, []) + pred_by_file.get(file_id, [])
            # no audio at hand: the timeline runs to the frame boundary
            # at or after the last annotated offset
            longest = max(a.offset_s for a in rows)
            # 1e-9 absorbs decimal offsets landing a hair past a boundary
            duration = math.ceil(longest / hop - 1e-9) * hop
            soft_ref = rasterize(ref_by_file.get(file_id, []), duration, hop,
                                 cfg.events)
            refs[file_id] = binarize(soft_ref, cfg.train.binarize_threshold)
            scores[file_id] = rasterize(pred_by_file.get(file_id, []), duration,
                                        hop, cfg.events)
    seg_frames = frames_per_segment(cfg.train.segment_s, hop)
    report = evaluate_files(refs, scores, seg_frames, cfg.train.binarize_threshold)
    payload = report.to_dict()
    payload["files"] = len(file_ids)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    _emit(payload)
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softsed",
        description="Sound event detection with soft labels and scene masks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (repeatable), "
                             "e.g. --set train.folds=2")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled corpus")
    p.add_argument("--out", help="corpus directory (default: from config paths)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", parents=[common],
                       help="precompute log-mel features into the cache")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("sim-stats", parents=[common],
                       help="build or extract the scene-event dictionary")
    p.add_argument("--checkpoint", help="extract from a trained checkpoint "
                                        "instead of counting label statistics")
    p.add_argument("--out", help="dictionary CSV path")
    p.set_defaults(func=cmd_sim_stats)

    p = sub.add_parser("train", parents=[common],
                       help="run k-fold training and write metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="segment metrics for predictions against references")
    p.add_argument("--ref", required=True, help="reference annotation CSV")
    p.add_argument("--pred", required=True, help="predicted annotation CSV")
    p.add_argument("--posteriors", action="store_true",
                   help="treat --pred as a per-frame posterior table from "
                        "`predict`; its files define the evaluation set")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common],
                       help="decode event lists for a corpus with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="trained fold checkpoint")
    p.add_argument("--threshold", type=float,
                   help="decision threshold (default: the training threshold)")
    p.add_argument("--dictionary", help="override the stored scene dictionary CSV")
    p.add_argument("--out", help="output annotation CSV")
    p.add_argument("--posteriors", help="output per-frame posterior CSV "
                                        "(default: next to the annotation CSV)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SoftSedError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
