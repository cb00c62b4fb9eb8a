"""Sliding-window scoring and frame-level detection metrics.

Every sweep processes tied scores as one block, so results do not depend on
the order of equal scores.  AUPR is average precision (step integration).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FIRST_SCORED_FRAME, WINDOW, Category, Scene, n_windows, to_target_frame
from .errors import MissingLabel, NoPositives, SceneTooShort, SingleClass

log = logging.getLogger(__name__)

TPR_TARGET = 95  # percent


@dataclass
class ScoreSeries:
    scene_id: str
    frames: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.frames.shape != self.scores.shape or self.frames.ndim != 1:
            raise ValueError("frames and scores must be 1-D and aligned")
        if len(self.frames) and (self.frames[0] < FIRST_SCORED_FRAME or np.any(np.diff(self.frames) <= 0)):
            raise ValueError(f"{self.scene_id}: frames must be >= {FIRST_SCORED_FRAME} and strictly increasing")

    def __len__(self):
        return len(self.frames)


@dataclass
class Pairs:
    """Scored, labelled frames after IGNORE filtering (True = abnormal)."""

    scores: np.ndarray
    labels: np.ndarray
    subclasses: list = field(default_factory=list)
    n_ignored: int = 0

    @property
    def n_abnormal(self):
        return int(np.sum(self.labels))

    @property
    def n_normal(self):
        return int(len(self.labels) - np.sum(self.labels))


@dataclass
class MetricsReport:
    aupr_abnormal: float
    aupr_normal: float
    auroc: float
    fpr_at_95_tpr: float
    pr_curve: np.ndarray  # (K, 2) recall, precision
    roc_curve: np.ndarray  # (K, 2) fpr, tpr
    counts: dict
    per_subclass: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "aupr_abnormal": self.aupr_abnormal,
            "aupr_normal": self.aupr_normal,
            "auroc": self.auroc,
            "fpr_at_95_tpr": self.fpr_at_95_tpr,
            "counts": self.counts,
            "per_subclass": self.per_subclass,
        }


# ------------------------------------------------------------------ scoring


def _score_fn(model):
    from .models.batching import lane_nodes

    arch = getattr(model, "input_architecture", getattr(model, "architecture", None))

    def score(scene, windows):
        nodes = None
        if arch == "lanegcn_ae":
            nodes = [lane_nodes(scene.lane_graph)] * len(windows)
        return model.score_windows(windows, nodes)

    return score


def score_scene(model, scene: Scene) -> ScoreSeries:
    """One score per frame 15..L-1 from the window ending at that frame."""
    if scene.length < WINDOW:
        raise SceneTooShort(f"{scene.scene_id}: {scene.length} frames, need at least {WINDOW}")
    frames = np.arange(FIRST_SCORED_FRAME, scene.length)
    windows = [to_target_frame(scene, int(f)) for f in frames]
    scores = np.asarray(_score_fn(model)(scene, windows), dtype=np.float64)
    assert len(scores) == n_windows(scene.length)
    return ScoreSeries(scene.scene_id, frames, scores)


def score_scenes(model, scenes, jobs=1) -> list:
    """Scores for many scenes; ``jobs`` > 1 scores scenes on a thread pool."""
    scenes = list(scenes)
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda s: score_scene(model, s), scenes))
    return [score_scene(model, s) for s in scenes]


# ------------------------------------------------------------------ pairing


def _label_lookup(labels):
    if isinstance(labels, Scene):
        return labels.label_map()
    if isinstance(labels, dict):
        return labels
    return {lb.frame_index: lb for lb in (labels or ())}


def collect(series, labels) -> Pairs:
    """Pair every scored frame with its label; IGNORE frames are dropped.

    ``labels`` maps scene id to a Scene, a FrameLabel sequence or a
    frame -> FrameLabel dict.
    """
    scores, flags, subs, ignored = [], [], [], 0
    for s in series:
        if s.scene_id not in labels:
            raise MissingLabel(s.scene_id, int(s.frames[0]) if len(s.frames) else -1)
        lut = _label_lookup(labels[s.scene_id])
        for f, v in zip(s.frames, s.scores):
            lb = lut.get(int(f))
            if lb is None:
                raise MissingLabel(s.scene_id, int(f))
            if lb.category is Category.IGNORE:
                ignored += 1
                continue
            scores.append(float(v))
            flags.append(lb.category is Category.ABNORMAL)
            subs.append(lb.subclass)
    return Pairs(np.array(scores, dtype=np.float64), np.array(flags, dtype=bool), subs, ignored)


def _unpack(scores, labels):
    if labels is None:
        if isinstance(scores, Pairs):
            return scores.scores, scores.labels
        arr = list(scores)
        return np.array([a for a, _ in arr], dtype=np.float64), np.array([bool(b) for _, b in arr])
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=bool)


def _blocks(scores, labels):
    """Cumulative (tp, fp) at the end of each tied-score block, descending."""
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y, dtype=np.int64)
    fp = np.cumsum(~y, dtype=np.int64)
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    return tp[ends], fp[ends], s[ends]


def roc_curve(scores, labels=None):
    s, y = _unpack(scores, labels)
    p, n = int(y.sum()), int((~y).sum())
    if p == 0 or n == 0:
        raise SingleClass("ROC needs both classes")
    tp, fp, _ = _blocks(s, y)
    return np.column_stack([np.r_[0, fp] / n, np.r_[0, tp] / p])


def auroc(scores, labels=None) -> float:
    """Trapezoidal ROC area; equals the Mann-Whitney statistic with ties as 1/2."""
    s, y = _unpack(scores, labels)
    p, n = int(y.sum()), int((~y).sum())
    if p == 0 or n == 0:
        raise SingleClass("AUROC needs both classes")
    tp, fp, _ = _blocks(s, y)
    tp, fp = np.r_[0, tp], np.r_[0, fp]
    twice = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return twice / (2.0 * p * n)


def pr_curve(scores, labels=None):
    s, y = _unpack(scores, labels)
    p = int(y.sum())
    if p == 0:
        raise NoPositives("PR curve needs at least one positive")
    tp, fp, _ = _blocks(s, y)
    return np.column_stack([tp / p, tp / (tp + fp)])


def aupr(scores, labels=None, positive=True) -> float:
    """Average precision with ``positive`` as the positive class.

    For the normal class the labels flip and the scores are negated, so low
    anomaly scores rank first.
    """
    s, y = _unpack(scores, labels)
    if not positive:
        s, y = -s, ~y
    p = int(y.sum())
    if p == 0:
        raise NoPositives("average precision needs at least one positive")
    tp, fp, _ = _blocks(s, y)
    d_tp = np.diff(np.r_[0, tp])
    # recall steps are grouped by their precision value so that a perfect
    # ranking gives exactly 1 and a constant scorer exactly the prevalence
    prec, inv = np.unique(tp / (tp + fp), return_inverse=True)
    steps = np.bincount(inv, weights=d_tp)
    return math.fsum(prec * (steps / p))


def fpr_at_95_tpr(scores, labels=None) -> float:
    """Smallest FPR over thresholds with TPR >= 0.95 (integer comparison)."""
    s, y = _unpack(scores, labels)
    p, n = int(y.sum()), int((~y).sum())
    if p == 0 or n == 0:
        raise SingleClass("FPR at 95% TPR needs both classes")
    tp, fp, _ = _blocks(s, y)
    ok = np.flatnonzero(tp * 100 >= TPR_TARGET * p)
    return float(fp[ok[0]] / n)


def per_subclass(pairs: Pairs) -> dict:
    """Recall of each abnormal subclass at 5% frame FPR, plus its AUROC vs all normal frames."""
    normal = pairs.scores[~pairs.labels]
    out = {}
    if len(normal) == 0:
        return out
    thr = float(np.quantile(normal, 0.95, method="higher"))
    subs = np.array(pairs.subclasses, dtype=object)
    for name in sorted({s for s, y in zip(pairs.subclasses, pairs.labels) if y}):
        m = pairs.labels & (subs == name)
        sc = pairs.scores[m]
        both = np.r_[sc, normal]
        lab = np.r_[np.ones(len(sc), bool), np.zeros(len(normal), bool)]
        out[name] = {"frames": int(m.sum()), "recall_at_5pct_fpr": float(np.mean(sc > thr)), "auroc": auroc(both, lab)}
    return out


def metrics(pairs: Pairs) -> MetricsReport:
    return MetricsReport(
        aupr_abnormal=aupr(pairs, positive=True),
        aupr_normal=aupr(pairs, positive=False),
        auroc=auroc(pairs),
        fpr_at_95_tpr=fpr_at_95_tpr(pairs),
        pr_curve=pr_curve(pairs),
        roc_curve=roc_curve(pairs),
        counts={"n_abnormal": pairs.n_abnormal, "n_normal": pairs.n_normal, "n_ignored": pairs.n_ignored},
        per_subclass=per_subclass(pairs),
    )


def evaluate(series, labels, out_dir=None) -> MetricsReport:
    """Metrics over all scenes; writes metrics.json, pr_curve.csv and roc_curve.csv when ``out_dir`` is given."""
    report = metrics(collect(series, labels))
    if out_dir is not None:
        from .dataio import write_csv, write_json

        out = Path(out_dir)
        write_json(out / "metrics.json", report.to_dict())
        write_csv(out / "pr_curve.csv", ("recall", "precision"), [tuple(map(float, r)) for r in report.pr_curve])
        write_csv(out / "roc_curve.csv", ("fpr", "tpr"), [tuple(map(float, r)) for r in report.roc_curve])
    return report


def evaluate_dirs(scores_dir, labels_dir, out_dir=None) -> MetricsReport:
    """Evaluate ``<id>.scores.csv`` files against ``<id>.labels.json`` files."""
    from .dataio import read_labels, read_scores

    scores_dir, labels_dir = Path(scores_dir), Path(labels_dir)
    series, labels = [], {}
    paths = sorted(scores_dir.glob("*.scores.csv"))
    for p in paths:
        sid = p.name[: -len(".scores.csv")]
        frames, scores = read_scores(p)
        series.append(ScoreSeries(sid, frames, scores))
        lp = labels_dir / f"{sid}.labels.json"
        if not lp.exists():
            raise MissingLabel(sid, int(frames[0]) if len(frames) else -1)
        labels[sid] = read_labels(lp)
    return evaluate(series, labels, out_dir)
