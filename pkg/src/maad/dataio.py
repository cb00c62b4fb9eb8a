"""On-disk formats: scene CSV + sidecars, score series and checkpoints.

Scene CSV columns follow the Argoverse forecasting schema
(TIMESTAMP, TRACK_ID, OBJECT_TYPE, X, Y, CITY_NAME).  Labels and the lane
graph live next to it as ``<scene_id>.labels.json`` and ``<scene_id>.map.json``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DT, GRID_TOLERANCE, Category, FrameLabel, Lane, LaneGraph, Role, Scene, Trajectory
from .errors import (
    ArchitectureMismatch,
    GridError,
    InvalidScene,
    IoFailure,
    ParseError,
    SchemaError,
    VersionMismatch,
)

COLUMNS = ("TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y", "CITY_NAME")
REQUIRED = ("TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y")
_TYPE_OF_ROLE = {Role.TARGET: "AGENT", Role.EGO: "AV", Role.OTHER: "OTHERS"}
_ROLE_OF_TYPE = {v: k for k, v in _TYPE_OF_ROLE.items()}

MAGIC = b"MAADCKPT"
FORMAT_VERSION = 1


def fmt(x: float) -> str:
    """17 significant digits: exact float round trip."""
    return format(float(x), ".17g")


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def _read_text(path) -> str:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            return f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


# ------------------------------------------------------------------ scenes


def scene_paths(directory, scene_id):
    d = Path(directory)
    return d / f"{scene_id}.csv", d / f"{scene_id}.map.json", d / f"{scene_id}.labels.json"


def write_scene(scene: Scene, out_dir) -> list:
    """Write CSV, map and (when present) labels; returns the written paths."""
    csv_path, map_path, labels_path = scene_paths(out_dir, scene.scene_id)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for k in range(scene.length):
        ts = fmt(scene.timestamps[k])
        for tr in scene.trajectories:
            if tr.valid[k]:
                w.writerow((ts, tr.agent_id, _TYPE_OF_ROLE[tr.role], fmt(tr.xy[k, 0]), fmt(tr.xy[k, 1]), scene.city))
    _write_text(csv_path, buf.getvalue())
    paths = [csv_path]
    _write_text(map_path, _dumps(map_to_json(scene.lane_graph)))
    paths.append(map_path)
    if scene.labels:
        _write_text(labels_path, _dumps(labels_to_json(scene.labels)))
        paths.append(labels_path)
    return paths


def map_to_json(graph: LaneGraph) -> dict:
    return {
        "lanes": [
            {
                "id": lane.id,
                "centerline": [[float(x), float(y)] for x, y in lane.centerline],
                "successors": list(lane.successors),
                "predecessors": list(lane.predecessors),
                "left_neighbor": lane.left_neighbor,
                "right_neighbor": lane.right_neighbor,
            }
            for lane in graph.lanes
        ]
    }


def map_from_json(obj) -> LaneGraph:
    try:
        lanes = tuple(
            Lane(
                str(d["id"]),
                np.asarray(d["centerline"], dtype=np.float64).reshape(-1, 2),
                tuple(d.get("successors", ())),
                tuple(d.get("predecessors", ())),
                d.get("left_neighbor"),
                d.get("right_neighbor"),
            )
            for d in obj["lanes"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed lane graph: {e}") from e
    return LaneGraph(lanes)


def labels_to_json(labels) -> list:
    return [{"frame": lb.frame_index, "category": lb.category.value, "subclass": lb.subclass} for lb in labels]


def labels_from_json(obj) -> tuple:
    try:
        return tuple(FrameLabel(int(d["frame"]), Category(d["category"]), d.get("subclass", "") or "") for d in obj)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed labels: {e}") from e


def read_labels(path) -> tuple:
    return labels_from_json(_load_json(path))


def _load_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg}", e.lineno) from e


def read_scene(csv_path, map_path=None, labels_path=None, scene_id=None) -> Scene:
    """Parse a scene CSV; sidecar files default to ``<stem>.map.json`` / ``<stem>.labels.json``.

    Missing sidecars are fine when not requested explicitly.
    """
    csv_path = Path(csv_path)
    stem = csv_path.name[: -len(".csv")] if csv_path.name.endswith(".csv") else csv_path.stem
    sid = scene_id or stem
    text = _read_text(csv_path)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{csv_path}: empty file, expected columns {', '.join(REQUIRED)}") from None
    header = [h.strip() for h in header]
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise SchemaError(f"{csv_path}: missing columns {', '.join(missing)}")
    col = {c: header.index(c) for c in header}
    rows = []
    for rn, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < len(header):
            raise ParseError(f"{csv_path}: expected {len(header)} fields, got {len(row)}", rn)
        try:
            t = float(row[col["TIMESTAMP"]])
            x = float(row[col["X"]])
            y = float(row[col["Y"]])
        except ValueError as e:
            raise ParseError(f"{csv_path}: {e}", rn) from None
        if not (math.isfinite(t) and math.isfinite(x) and math.isfinite(y)):
            raise ParseError(f"{csv_path}: non-finite value", rn)
        otype = row[col["OBJECT_TYPE"]].strip()
        if otype not in _ROLE_OF_TYPE:
            raise ParseError(f"{csv_path}: unknown OBJECT_TYPE {otype!r}", rn)
        city = row[col["CITY_NAME"]] if "CITY_NAME" in col else ""
        rows.append((rn, t, row[col["TRACK_ID"]], otype, x, y, city))
    if not rows:
        raise SchemaError(f"{csv_path}: no data rows")
    for prev, cur in zip(rows, rows[1:]):
        if cur[1] < prev[1]:
            raise ParseError(f"{csv_path}: rows not sorted by TIMESTAMP", cur[0])

    t0 = rows[0][1]
    frames = {}
    for rn, t, *_ in rows:
        k = int(round((t - t0) / DT))
        if abs(t - t0 - k * DT) > GRID_TOLERANCE:
            raise GridError(f"{csv_path}: row {rn} timestamp {t!r} is {abs(t - t0 - k * DT) * 1e3:.3f} ms off the 10 Hz grid")
        frames[rn] = k
    n = max(frames.values()) + 1
    ts = t0 + np.arange(n) * DT
    for rn, t, *_ in rows:
        ts[frames[rn]] = t

    tracks, order, types = {}, [], {}
    for rn, t, tid, otype, x, y, _ in rows:
        if tid not in tracks:
            tracks[tid] = (np.zeros((n, 2)), np.zeros(n, dtype=bool))
            order.append(tid)
            types[tid] = otype
        elif types[tid] != otype:
            raise SchemaError(f"{csv_path}: track {tid} changes OBJECT_TYPE")
        xy, valid = tracks[tid]
        k = frames[rn]
        if valid[k]:
            raise ParseError(f"{csv_path}: duplicate row for track {tid} at frame {k}", rn)
        xy[k] = (x, y)
        valid[k] = True
    agents = [tid for tid in order if types[tid] == "AGENT"]
    if len(agents) != 1:
        raise SchemaError(f"{csv_path}: expected exactly one AGENT track, found {len(agents)}")
    trajs = tuple(Trajectory(tid, tracks[tid][0], tracks[tid][1], _ROLE_OF_TYPE[types[tid]]) for tid in order)

    base = csv_path.parent
    mp = Path(map_path) if map_path is not None else base / f"{stem}.map.json"
    lp = Path(labels_path) if labels_path is not None else base / f"{stem}.labels.json"
    graph = map_from_json(_load_json(mp)) if (map_path is not None or mp.exists()) else LaneGraph()
    labels = read_labels(lp) if (labels_path is not None or lp.exists()) else None
    try:
        return Scene(sid, trajs, graph, labels, ts, rows[0][6])
    except InvalidScene as e:
        raise SchemaError(str(e)) from e


def list_scenes(directory) -> list:
    """Scene CSV paths in a directory, sorted by name."""
    d = Path(directory)
    if not d.is_dir():
        raise IoFailure(f"{d} is not a directory")
    return sorted(p for p in d.glob("*.csv") if not p.name.endswith(".scores.csv"))


def read_scenes(directory) -> list:
    return [read_scene(p) for p in list_scenes(directory)]


# ------------------------------------------------------------------ score series


def write_scores(path, frames, scores):
    lines = ["frame,score"] + [f"{int(f)},{fmt(s)}" for f, s in zip(frames, scores)]
    _write_text(Path(path), "\n".join(lines) + "\n")


def read_scores(path):
    text = _read_text(path)
    lines = text.splitlines()
    if not lines or lines[0].strip() != "frame,score":
        raise SchemaError(f"{path}: expected header 'frame,score'")
    frames, scores = [], []
    for rn, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            f, s = line.split(",")
            frames.append(int(f))
            scores.append(float(s))
        except ValueError:
            raise ParseError(f"{path}: cannot parse {line!r}", rn) from None
    return np.array(frames, dtype=np.int64), np.array(scores, dtype=np.float64)


# ------------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    header: dict
    arrays: dict = field(default_factory=dict)

    @property
    def architecture(self):
        return self.header["architecture"]


def write_checkpoint(path, header: dict, arrays: dict):
    """Magic, uint32 LE header length, JSON header, then float64 LE arrays."""
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC + struct.pack("<I", len(blob)) + blob + body)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_checkpoint(path, expected_architecture: Optional[str] = None) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise VersionMismatch(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if start + hlen > len(raw):
        raise ParseError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"{path}: corrupt header ({e})") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {header.get('format_version')!r}, expected {FORMAT_VERSION}")
    if expected_architecture is not None and header.get("architecture") != expected_architecture:
        raise ArchitectureMismatch(
            f"{path}: checkpoint holds {header.get('architecture')!r}, requested {expected_architecture!r}"
        )
    arrays, off = {}, start + hlen
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(raw):
            raise ParseError(f"{path}: truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=off).astype(np.float64).reshape(shape)
        off += nbytes
    if off != len(raw):
        raise ParseError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(header, arrays)


def save_checkpoint(descriptor, parameters: dict, norm_stats, path, extra: Optional[dict] = None):
    """Persist a model descriptor, its parameter arrays and normalisation stats."""
    header = {
        "architecture": descriptor.architecture,
        "objective": descriptor.objective,
        "dims": descriptor.dims,
        "norm_stats": norm_stats.to_dict(),
        "dsvdd_center": None if descriptor.dsvdd_center is None else [float(v) for v in descriptor.dsvdd_center],
    }
    if extra:
        header["extra"] = extra
    write_checkpoint(path, header, dict(parameters))


def load_checkpoint(path, expected_architecture: Optional[str] = None):
    """Returns (descriptor, parameters, norm_stats, extra)."""
    from .models.batching import NormStats
    from .models.training import ModelDescriptor

    ck = read_checkpoint(path, expected_architecture)
    h = ck.header
    if h.get("architecture") == "ocsvm":
        raise ArchitectureMismatch(f"{path}: holds an OC-SVM; use load_ocsvm")
    dims = h.get("dims", {})
    desc = ModelDescriptor(
        h["architecture"],
        h["objective"],
        embed=int(dims.get("embed", 8)),
        hidden=int(dims.get("hidden", 16)),
        latent=int(dims.get("latent", 16)),
        dsvdd_center=None if h.get("dsvdd_center") is None else np.array(h["dsvdd_center"], dtype=np.float64),
    )
    return desc, ck.arrays, NormStats.from_dict(h["norm_stats"]), h.get("extra", {})


def save_model(model, path):
    """Save a :class:`~maad.models.TrainedModel` (linear models have no arrays)."""
    params = {} if model.network is None else model.network.state_dict()
    extra = {"best_epoch": model.best_epoch, "history": model.history}
    save_checkpoint(model.descriptor, params, model.norm, path, extra)


def load_model(path, expected_architecture: Optional[str] = None):
    from .models.networks import build_network
    from .models.training import LINEAR, TrainedModel

    desc, arrays, norm, extra = load_checkpoint(path, expected_architecture)
    net = None
    if desc.architecture not in LINEAR:
        net = build_network(desc.architecture, 0, embed=desc.embed, hidden=desc.hidden)
        net.load_state_dict(arrays)
    return TrainedModel(desc, net, norm, list(extra.get("history", [])), int(extra.get("best_epoch", 0)))


def save_ocsvm(detector, path):
    """Persist an encoder + OC-SVM pair under the ``ocsvm`` architecture tag."""
    enc = detector.encoder
    oc = detector.svm
    header = {
        "architecture": "ocsvm",
        "encoder": {
            "architecture": enc.descriptor.architecture,
            "objective": enc.descriptor.objective,
            "dims": enc.descriptor.dims,
            "norm_stats": enc.norm.to_dict(),
            "dsvdd_center": None
            if enc.descriptor.dsvdd_center is None
            else [float(v) for v in enc.descriptor.dsvdd_center],
        },
        "gamma": oc.gamma,
        "nu": oc.nu,
        "rho": oc.rho,
    }
    arrays = {f"encoder/{k}": v for k, v in enc.network.state_dict().items()}
    arrays.update(
        {"ocsvm/support": oc.support_vectors, "ocsvm/alpha": oc.dual_coeffs, "ocsvm/mean": oc.mean, "ocsvm/std": oc.std}
    )
    write_checkpoint(path, header, arrays)


def load_ocsvm(path):
    from .models.batching import NormStats
    from .models.networks import build_network
    from .models.training import ModelDescriptor, TrainedModel
    from .oneclass import OcSvmDetector, OcSvmModel

    ck = read_checkpoint(path, "ocsvm")
    h, a = ck.header, ck.arrays
    e = h["encoder"]
    desc = ModelDescriptor(
        e["architecture"],
        e["objective"],
        embed=int(e["dims"]["embed"]),
        hidden=int(e["dims"]["hidden"]),
        latent=int(e["dims"]["latent"]),
        dsvdd_center=None if e.get("dsvdd_center") is None else np.array(e["dsvdd_center"]),
    )
    net = build_network(desc.architecture, 0, embed=desc.embed, hidden=desc.hidden)
    net.load_state_dict({k[len("encoder/") :]: v for k, v in a.items() if k.startswith("encoder/")})
    enc = TrainedModel(desc, net, NormStats.from_dict(e["norm_stats"]))
    svm = OcSvmModel(
        a["ocsvm/support"], a["ocsvm/alpha"], float(h["rho"]), float(h["gamma"]), float(h["nu"]), a["ocsvm/mean"], a["ocsvm/std"]
    )
    return OcSvmDetector(enc, svm)


def checkpoint_architecture(path) -> str:
    return read_checkpoint(path).architecture


def write_json(path, obj):
    _write_text(Path(path), _dumps(obj))


def read_json(path):
    return _load_json(path)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in r])
    _write_text(Path(path), buf.getvalue())
