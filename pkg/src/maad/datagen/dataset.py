"""Dataset generation: config handling, split planning and the manifest."""
from __future__ import annotations

import copy
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..core import ABNORMAL_CLASSES, NORMAL_CLASSES, TAXONOMY, Category
from ..dataio import write_json, write_scene
from ..errors import ConfigError, InfeasibleScript, IoFailure
from .kinematics import A_MAX, V_MAX
from .scripts import MAX_FRAMES, MIN_FRAMES, generate_scene, plan_scene
from .worlds import TEMPLATES

# relative share of annotated abnormal timesteps per class in the reference benchmark
ABNORMAL_SHARE = {
    "ghost_driver": 202,
    "leave_road": 186,
    "thwarting": 179,
    "cancel_turn": 156,
    "last_minute_turn": 114,
    "enter_wrong_lane": 101,
    "staggering": 92,
    "pushing_away": 84,
    "swerving_left": 77,
    "swerving_right": 26,
    "tailgating": 69,
    "aggressive_shearing_left": 62,
    "aggressive_shearing_right": 64,
}
SPLITS = ("train", "val", "test")


def allocate(total, weights) -> dict:
    """Largest-remainder split of ``total`` over ``weights`` (dict), order-stable."""
    keys = list(weights)
    w = np.array([float(weights[k]) for k in keys])
    raw = total * w / w.sum()
    base = np.floor(raw).astype(int)
    rest = total - int(base.sum())
    order = sorted(range(len(keys)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return {k: int(v) for k, v in zip(keys, base)}


def default_config() -> dict:
    """160 labelled test scenes (80 normal, 80 abnormal) plus normal train/val splits."""
    classes = [{"subclass": k, "count": v} for k, v in allocate(80, {c: 1 for c in NORMAL_CLASSES}).items()]
    classes += [{"subclass": k, "count": v} for k, v in allocate(80, ABNORMAL_SHARE).items()]
    return {
        "seed": 0,
        "world": "auto",
        "duration_s": [4.0, 10.1],
        "train_duration_s": 5.0,
        "v_max": V_MAX,
        "a_max": A_MAX,
        "splits": {"train": 2000, "val": 400},
        "classes": classes,
    }


# anomalies whose signature lies in the target's own motion
BENCHMARK_ABNORMAL = (
    "staggering",
    "swerving_left",
    "swerving_right",
    "aggressive_shearing_left",
    "aggressive_shearing_right",
    "last_minute_turn",
    "cancel_turn",
    "tailgating",
)


def mini_benchmark_config(seed=7, n_train=200, n_val=40, n_normal=20, n_abnormal=20, abnormal=BENCHMARK_ABNORMAL):
    """Small seeded benchmark: normal train/val scenes, a balanced labelled test split."""
    classes = [{"subclass": k, "count": v} for k, v in allocate(n_normal, {c: 1 for c in NORMAL_CLASSES}).items()]
    classes += [{"subclass": k, "count": v} for k, v in allocate(n_abnormal, {c: 1 for c in abnormal}).items()]
    return {"seed": seed, "splits": {"train": n_train, "val": n_val}, "classes": classes}


def _duration(value, name):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        lo = hi = float(value)
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = float(value[0]), float(value[1])
    else:
        raise ConfigError(f"{name} must be a number or a [min, max] pair")
    if not (MIN_FRAMES / 10 - 1e-9 <= lo <= hi <= MAX_FRAMES / 10 + 1e-9):
        raise ConfigError(f"{name} must lie within [{MIN_FRAMES / 10}, {MAX_FRAMES / 10}] s")
    return [lo, hi]


def load_config(source=None) -> dict:
    """Validated config; ``source`` is a dict, a JSON path or None (defaults).

    Keys missing from ``source`` take their default values.
    """
    cfg = default_config()
    if source is not None:
        if isinstance(source, (str, Path)):
            try:
                user = json.loads(Path(source).read_text())
            except OSError as e:
                raise IoFailure(f"cannot read config {source}: {e}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"{source}: invalid JSON ({e.msg} at line {e.lineno})") from e
        else:
            user = copy.deepcopy(dict(source))
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(cfg) - {"train_classes"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(user)
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    if cfg["world"] != "auto" and cfg["world"] not in TEMPLATES:
        raise ConfigError(f"unknown world template {cfg['world']!r}; choose auto or one of {', '.join(TEMPLATES)}")
    cfg["duration_s"] = _duration(cfg["duration_s"], "duration_s")
    cfg["train_duration_s"] = _duration(cfg["train_duration_s"], "train_duration_s")
    for key in ("v_max", "a_max"):
        if not isinstance(cfg[key], (int, float)) or cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    splits = cfg["splits"]
    if not isinstance(splits, dict) or set(splits) - {"train", "val"}:
        raise ConfigError("splits must map train/val to scene counts")
    for k, v in splits.items():
        if not isinstance(v, int) or v < 0:
            raise ConfigError(f"splits.{k} must be a non-negative integer")
    for key in ("classes", "train_classes"):
        if key not in cfg:
            continue
        entries = cfg[key]
        if not isinstance(entries, list):
            raise ConfigError(f"{key} must be a list")
        for e in entries:
            if not isinstance(e, dict) or "subclass" not in e:
                raise ConfigError(f"{key} entries need a subclass")
            if e["subclass"] not in TAXONOMY:
                raise ConfigError(f"unknown subclass {e['subclass']!r}")
            if key == "train_classes" and e["subclass"] in ABNORMAL_CLASSES:
                raise ConfigError(f"training data must be normal, got {e['subclass']!r}")
            if not isinstance(e.get("count", 1), int) or e.get("count", 1) < 0:
                raise ConfigError(f"count for {e['subclass']} must be a non-negative integer")
            world = e.get("world", cfg["world"])
            if world != "auto" and world not in TEMPLATES:
                raise ConfigError(f"unknown world template {world!r}")
            if not isinstance(e.get("params", {}), dict):
                raise ConfigError(f"params for {e['subclass']} must be an object")
    return cfg


def _train_classes(cfg, split):
    entries = cfg.get("train_classes")
    total = cfg["splits"].get(split, 0)
    if entries:
        weights = {e["subclass"]: e.get("count", 1) for e in entries}
    else:
        weights = {c: 1 for c in NORMAL_CLASSES}
    alloc = allocate(total, weights) if total else {}
    return [{"subclass": k, "count": v} for k, v in alloc.items()]


def plan_jobs(cfg) -> list:
    """Every scene to generate as a self-contained job description."""
    jobs = []
    for split_code, split in enumerate(SPLITS):
        entries = cfg["classes"] if split == "test" else _train_classes(cfg, split)
        duration = cfg["duration_s"] if split == "test" else cfg["train_duration_s"]
        i = 0
        for e in entries:
            for _ in range(e.get("count", 1)):
                jobs.append(
                    {
                        "split": split,
                        "index": i,
                        "scene_id": f"{split}_{i:05d}",
                        "subclass": e["subclass"],
                        "world": e.get("world", cfg["world"]),
                        "params": e.get("params", {}),
                        "duration": duration,
                        "entropy": [cfg["seed"], split_code, i],
                        "v_max": cfg["v_max"],
                        "a_max": cfg["a_max"],
                    }
                )
                i += 1
    return jobs


def build_scene(job):
    """Plan and render one job; the scene depends only on the job itself."""
    rng = np.random.default_rng(np.random.SeedSequence(job["entropy"]))
    lo, hi = job["duration"]
    duration = lo if hi <= lo else float(rng.uniform(lo, hi))
    try:
        ws, script = plan_scene(job["subclass"], rng, duration, job["world"], overrides=job["params"])
        seed = int(rng.integers(2**31))
        return generate_scene(ws, script, seed, scene_id=job["scene_id"], v_max=job["v_max"], a_max=job["a_max"]), ws
    except InfeasibleScript as e:
        raise InfeasibleScript(str(e), job["scene_id"]) from e


def _run(job, out_dir):
    scene, ws = build_scene(job)
    split_dir = Path(out_dir) / job["split"]
    if job["split"] != "test":
        # training data is unlabelled
        from dataclasses import replace

        scene = replace(scene, labels=None)
    write_scene(scene, split_dir)
    counts = {c.value: 0 for c in Category}
    for lb in scene.labels or ():
        counts[lb.category.value] += 1
    return {
        "id": job["scene_id"],
        "split": job["split"],
        "subclass": job["subclass"],
        "template": ws.template,
        "frames": scene.length,
        "label_counts": counts,
    }


def generate_dataset(config, out_dir, seed=None, jobs=1) -> dict:
    """Write train/val (unlabelled normal) and test (labelled) splits plus a manifest.

    ``seed`` overrides the config seed.  Output is identical for any ``jobs``.
    """
    cfg = load_config(config)
    if seed is not None:
        cfg["seed"] = int(seed)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {out}: {e}") from e
    work = plan_jobs(cfg)
    if jobs and jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run, work, [out] * len(work), chunksize=8))
    else:
        records = [_run(j, out) for j in work]
    manifest = summarize(cfg, records)
    write_json(out / "config.json", cfg)
    write_json(out / "manifest.json", manifest)
    return manifest


def summarize(cfg, records) -> dict:
    splits = {}
    for s in SPLITS:
        rs = [r for r in records if r["split"] == s]
        splits[s] = {"scenes": len(rs), "frames": int(sum(r["frames"] for r in rs))}
    per_class = {}
    for r in records:
        if r["split"] != "test":
            continue
        d = per_class.setdefault(r["subclass"], {"scenes": 0, "frames": 0, "NORMAL": 0, "ABNORMAL": 0, "IGNORE": 0})
        d["scenes"] += 1
        d["frames"] += r["frames"]
        for k, v in r["label_counts"].items():
            d[k] += v
    test = [r for r in records if r["split"] == "test"]
    return {
        "seed": cfg["seed"],
        "splits": splits,
        "test": {
            "normal_scenes": sum(r["subclass"] in NORMAL_CLASSES for r in test),
            "abnormal_scenes": sum(r["subclass"] in ABNORMAL_CLASSES for r in test),
            "per_class": {k: per_class[k] for k in sorted(per_class)},
        },
        "scenes": [{k: r[k] for k in ("id", "split", "subclass", "template", "frames")} for r in records],
    }
