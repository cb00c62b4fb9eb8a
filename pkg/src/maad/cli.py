"""Command-line entry point: generate, train, score, eval, gridsearch-ocsvm.

Exit codes: 0 success, 2 usage or bad input, 3 I/O failure, 4 numerical or
runtime failure.  ``MAAD_LOG`` (error, info, debug) sets the log level.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ArchitectureMismatch,
    ConfigError,
    DegenerateLabels,
    EmptyTrainingSet,
    GridError,
    InvalidScene,
    IoFailure,
    MaadError,
    MissingLabel,
    NoPositives,
    ParseError,
    SceneTooShort,
    SchemaError,
    SingleClass,
)

log = logging.getLogger("maad")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
_USAGE_ERRORS = (
    ConfigError,
    SchemaError,
    ParseError,
    GridError,
    InvalidScene,
    MissingLabel,
    DegenerateLabels,
    EmptyTrainingSet,
    SceneTooShort,
    SingleClass,
    NoPositives,
)


class UsageError(MaadError):
    pass


def _provenance(args, out_dir, extra=None):
    from .dataio import write_json

    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["version"] = __version__
    if extra:
        cfg.update(extra)
    write_json(Path(out_dir) / "run_config.json", cfg)


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {path}: {e}") from e


def _scenes(directory, what="scenes"):
    from .dataio import list_scenes, read_scene

    paths = list_scenes(directory)
    if not paths:
        raise UsageError(f"no {what} found in {directory}")
    return [read_scene(p) for p in paths]


# ------------------------------------------------------------------ generate


def cmd_generate(args):
    from .datagen import generate_dataset

    manifest = generate_dataset(args.config, args.out, seed=args.seed, jobs=args.jobs)
    for split, d in manifest["splits"].items():
        print(f"{split:5s} {d['scenes']:6d} scenes {d['frames']:8d} frames")
    t = manifest["test"]
    print(f"test  {t['normal_scenes']} normal / {t['abnormal_scenes']} abnormal scenes, {len(t['per_class'])} classes")
    return EXIT_OK


# ------------------------------------------------------------------ train


def cmd_train(args):
    from .dataio import save_model, write_csv
    from .models import ModelDescriptor, train
    from .models.training import LINEAR

    if args.model in LINEAR:
        raise UsageError(f"{args.model} requires no training")
    train_scenes = _scenes(args.data, "training scenes")
    val_scenes = _scenes(args.val, "validation scenes") if args.val else []
    _mkdir(args.out)
    desc = ModelDescriptor(args.model, args.objective)
    model = train(desc, train_scenes, val_scenes, seed=args.seed, epochs=args.epochs, batch_size=args.batch)
    cols = ("epoch", "lr", "loss", "recon", "dsvdd", "val_loss", "val_recon", "val_dsvdd")
    write_csv(Path(args.out) / "epochs.csv", cols, [tuple(r[c] for c in cols) for r in model.history])
    bad = [r["epoch"] for r in model.history if not all(math.isfinite(r[c]) for c in ("loss", "val_loss"))]
    if bad:
        raise FloatingPointError(f"non-finite loss at epochs {bad}; lower the learning rate or check the data")
    save_model(model, Path(args.out) / "model.ckpt")
    _provenance(args, args.out, {"best_epoch": model.best_epoch})
    best = model.history[model.best_epoch - 1]
    print(f"{args.model}/{args.objective}: best epoch {model.best_epoch} val loss {best['val_loss']:.6g}")
    return EXIT_OK


# ------------------------------------------------------------------ score


def _load_detector(args):
    from .dataio import checkpoint_architecture, load_model, load_ocsvm
    from .models import linear_model

    if args.model:
        if args.checkpoint:
            raise UsageError("give either --model or --checkpoint, not both")
        return linear_model(args.model)
    if not args.checkpoint:
        raise UsageError("score needs --checkpoint or --model cvm|lti")
    arch = checkpoint_architecture(args.checkpoint)
    if args.architecture and arch != args.architecture:
        raise ArchitectureMismatch(f"{args.checkpoint} holds {arch!r}, expected {args.architecture!r}")
    if arch == "ocsvm":
        return load_ocsvm(args.checkpoint)
    return load_model(args.checkpoint)


def cmd_score(args):
    from .dataio import write_scores
    from .eval import score_scenes

    model = _load_detector(args)
    scenes = _scenes(args.data)
    _mkdir(args.out)
    for series in score_scenes(model, scenes, jobs=args.jobs):
        write_scores(Path(args.out) / f"{series.scene_id}.scores.csv", series.frames, series.scores)
    _provenance(args, args.out, {"architecture": model.architecture})
    print(f"scored {len(scenes)} scenes with {model.architecture}")
    return EXIT_OK


# ------------------------------------------------------------------ eval


def cmd_eval(args):
    from .eval import evaluate_dirs

    if args.out:
        _mkdir(args.out)
    rep = evaluate_dirs(args.scores, args.labels or args.scores, args.out)
    if args.out:
        _provenance(args, args.out)
    print(f"AUPR-Abnormal {rep.aupr_abnormal:.4f}")
    print(f"AUPR-Normal   {rep.aupr_normal:.4f}")
    print(f"AUROC         {rep.auroc:.4f}")
    print(f"FPR@95%TPR    {rep.fpr_at_95_tpr:.4f}")
    return EXIT_OK


# ------------------------------------------------------------------ gridsearch-ocsvm


def _latents(model, scenes, with_frames=False):
    """Latent features for every window; optionally the (scene id, frame) of each."""
    from .core import FIRST_SCORED_FRAME
    from .models import lane_nodes, scene_windows

    feats, keys = [], []
    for s in scenes:
        ws = scene_windows(s)
        nodes = [lane_nodes(s.lane_graph)] * len(ws) if model.architecture == "lanegcn_ae" else None
        feats.append(model.encode(ws, nodes))
        keys.extend((s.scene_id, f) for f in range(FIRST_SCORED_FRAME, s.length))
    return (np.concatenate(feats), keys) if with_frames else np.concatenate(feats)


def cmd_gridsearch_ocsvm(args):
    from .core import Category
    from .dataio import load_model, read_labels, save_ocsvm, write_csv, write_json
    from .oneclass import OcSvmDetector, fit_ocsvm, grid_search, select_subset, subsample

    enc = load_model(args.checkpoint)
    if enc.network is None:
        raise UsageError(f"{enc.architecture} has no latent features; use a deep model checkpoint")
    train_scenes = _scenes(args.train_data, "training scenes")
    test_scenes = _scenes(args.test_data, "test scenes")
    labels_dir = Path(args.labels or args.test_data)
    _mkdir(args.out)

    ss_train, ss_subset = np.random.SeedSequence(args.seed).spawn(2)
    train_feats = _latents(enc, train_scenes)
    train_feats = train_feats[subsample(len(train_feats), args.max_train, ss_train)]

    feats, keys = _latents(enc, test_scenes, with_frames=True)
    lut = {}
    for s in test_scenes:
        path = labels_dir / f"{s.scene_id}.labels.json"
        if not path.exists():
            raise MissingLabel(s.scene_id, -1)
        lut[s.scene_id] = {lb.frame_index: lb for lb in read_labels(path)}
    keep, flags = [], []
    for i, (sid, f) in enumerate(keys):
        lb = lut[sid].get(f)
        if lb is None:
            raise MissingLabel(sid, f)
        if lb.category is not Category.IGNORE:
            keep.append(i)
            flags.append(lb.category is Category.ABNORMAL)
    keep, flags = np.array(keep), np.array(flags, dtype=bool)
    pick = select_subset(len(keep), args.subset_frac, ss_subset)
    result = grid_search(train_feats, feats[keep[pick]], flags[pick], jobs=args.jobs)

    write_csv(Path(args.out) / "grid.csv", ("gamma", "nu", "aupr_abnormal"), result.table)
    write_json(Path(args.out) / "subset.json", [list(keys[i]) for i in keep[pick]])
    svm = fit_ocsvm(train_feats, result.gamma, result.nu)
    save_ocsvm(OcSvmDetector(enc, svm), Path(args.out) / "ocsvm.ckpt")
    _provenance(args, args.out, {"gamma": result.gamma, "nu": result.nu, "train_features": len(train_feats)})
    print(f"best gamma {result.gamma:g} nu {result.nu:g} AUPR-Abnormal {result.aupr:.4f} on {len(pick)} frames")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="maad", description="Trajectory anomaly detection toolkit.")
    p.add_argument("--version", action="version", version=f"maad {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def jobs(q):
        q.add_argument("--jobs", type=int, default=1, help="worker cap (default 1)")

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--config", type=Path, help="JSON config (defaults if omitted)")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, help="overrides the config seed")
    jobs(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a deep model")
    t.add_argument("--model", required=True, choices=("cvm", "lti", "seq2seq", "stgae", "lanegcn_ae"))
    t.add_argument("--objective", default="recon", choices=("recon", "dsvdd"))
    t.add_argument("--data", type=Path, required=True, help="training scene directory")
    t.add_argument("--val", type=Path, help="validation scene directory")
    t.add_argument("--epochs", type=int, default=36)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, required=True)
    jobs(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="write per-frame anomaly scores")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--model", choices=("cvm", "lti"), help="score with a training-free linear model")
    s.add_argument("--architecture", help="fail unless the checkpoint holds this architecture")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    jobs(s)
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="frame-level metrics from score files")
    e.add_argument("--scores", type=Path, required=True)
    e.add_argument("--labels", type=Path, help="label directory (defaults to --scores)")
    e.add_argument("--out", type=Path)
    jobs(e)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("gridsearch-ocsvm", help="fit an OC-SVM on frozen latent features")
    o.add_argument("--checkpoint", type=Path, required=True)
    o.add_argument("--train-data", type=Path, required=True)
    o.add_argument("--test-data", type=Path, required=True)
    o.add_argument("--labels", type=Path, help="label directory (defaults to --test-data)")
    o.add_argument("--subset-frac", type=float, default=0.2)
    o.add_argument("--max-train", type=int, default=3000, help="cap on training features (seeded subsample)")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", type=Path, required=True)
    jobs(o)
    o.set_defaults(func=cmd_gridsearch_ocsvm)
    return p


def _setup_logging():
    name = os.environ.get("MAAD_LOG", "info").strip().lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"MAAD_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def exit_code(exc) -> int:
    if isinstance(exc, (UsageError,) + _USAGE_ERRORS):
        return EXIT_USAGE
    if isinstance(exc, (IoFailure, OSError)):
        return EXIT_IO
    if isinstance(exc, ValueError) and not isinstance(exc, MaadError):
        return EXIT_USAGE
    return EXIT_RUNTIME


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        return args.func(args)
    except (MaadError, OSError, ValueError, FloatingPointError) as e:
        print(f"maad {args.command}: error: {e}", file=sys.stderr)
        return exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
