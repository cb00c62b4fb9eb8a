"""Domain types and target-centric window geometry."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import FrameOutOfRange, InvalidScene, MissingTarget, SceneTooShort

DT = 0.1
WINDOW = 16
FIRST_SCORED_FRAME = WINDOW - 1
GRID_TOLERANCE = 1e-3
MOVING_EPS = 1e-9


class Role(str, enum.Enum):
    TARGET = "TARGET"
    OTHER = "OTHER"
    EGO = "EGO"


class Category(str, enum.Enum):
    NORMAL = "NORMAL"
    ABNORMAL = "ABNORMAL"
    IGNORE = "IGNORE"


ABNORMAL_CLASSES = (
    "ghost_driver",
    "leave_road",
    "thwarting",
    "cancel_turn",
    "last_minute_turn",
    "enter_wrong_lane",
    "staggering",
    "pushing_away",
    "swerving_left",
    "swerving_right",
    "tailgating",
    "aggressive_shearing_left",
    "aggressive_shearing_right",
)
NORMAL_CLASSES = (
    "straight",
    "turn_left",
    "turn_right",
    "following",
    "side_by_side",
    "lane_change_left",
    "lane_change_right",
    "brake",
    "accelerate",
)
TAXONOMY = frozenset(ABNORMAL_CLASSES + NORMAL_CLASSES)


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    valid: bool = True

    def __post_init__(self):
        if self.valid:
            if not (math.isfinite(self.x) and math.isfinite(self.y)):
                raise InvalidScene(f"non-finite state ({self.x}, {self.y})")
        elif self.x != 0.0 or self.y != 0.0:
            raise InvalidScene("padded state must be exactly (0, 0)")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One agent over the scene's frame grid.

    ``xy`` has shape (L, 2); frames without an observation are flagged in
    ``valid`` and hold exactly (0, 0).
    """

    agent_id: str
    xy: np.ndarray
    valid: np.ndarray
    role: Role = Role.OTHER

    def __post_init__(self):
        xy = np.array(self.xy, dtype=np.float64).reshape(-1, 2)
        valid = np.array(self.valid, dtype=bool).reshape(-1)
        if len(valid) != len(xy):
            raise InvalidScene(f"{self.agent_id}: {len(xy)} states but {len(valid)} flags")
        if not np.all(np.isfinite(xy[valid])):
            raise InvalidScene(f"{self.agent_id}: non-finite coordinates")
        xy[~valid] = 0.0
        object.__setattr__(self, "xy", _frozen(xy))
        object.__setattr__(self, "valid", _frozen(valid, bool))
        object.__setattr__(self, "role", Role(self.role))

    @classmethod
    def from_states(cls, agent_id, states: Sequence[AgentState], role=Role.OTHER):
        xy = [(s.x, s.y) for s in states]
        return cls(agent_id, np.array(xy, dtype=float).reshape(-1, 2), [s.valid for s in states], role)

    @property
    def states(self) -> list[AgentState]:
        return [AgentState(float(x), float(y), bool(v)) for (x, y), v in zip(self.xy, self.valid)]

    def __len__(self):
        return len(self.valid)


@dataclass(frozen=True, eq=False)
class Lane:
    id: str
    centerline: np.ndarray
    successors: tuple = ()
    predecessors: tuple = ()
    left_neighbor: Optional[str] = None
    right_neighbor: Optional[str] = None

    def __post_init__(self):
        cl = np.array(self.centerline, dtype=np.float64).reshape(-1, 2)
        if len(cl) < 2:
            raise InvalidScene(f"lane {self.id}: centerline needs at least 2 points")
        if not np.all(np.isfinite(cl)):
            raise InvalidScene(f"lane {self.id}: NaN in centerline")
        object.__setattr__(self, "centerline", _frozen(cl))
        object.__setattr__(self, "successors", tuple(self.successors))
        object.__setattr__(self, "predecessors", tuple(self.predecessors))


@dataclass(frozen=True, eq=False)
class LaneGraph:
    lanes: tuple = ()

    def __post_init__(self):
        lanes = tuple(self.lanes)
        object.__setattr__(self, "lanes", lanes)
        ids = {lane.id for lane in lanes}
        if len(ids) != len(lanes):
            raise InvalidScene("duplicate lane ids")
        for lane in lanes:
            refs = list(lane.successors) + list(lane.predecessors)
            refs += [r for r in (lane.left_neighbor, lane.right_neighbor) if r is not None]
            missing = [r for r in refs if r not in ids]
            if missing:
                raise InvalidScene(f"lane {lane.id} references unknown lanes {missing}")

    def __len__(self):
        return len(self.lanes)

    def get(self, lane_id) -> Lane:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise KeyError(lane_id)

    @property
    def ids(self):
        return [lane.id for lane in self.lanes]


@dataclass(frozen=True)
class FrameLabel:
    frame_index: int
    category: Category
    subclass: str = ""

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        if self.category is Category.IGNORE:
            if self.subclass:
                raise InvalidScene(f"frame {self.frame_index}: IGNORE label carries subclass {self.subclass!r}")
        elif self.subclass not in TAXONOMY:
            raise InvalidScene(f"frame {self.frame_index}: unknown subclass {self.subclass!r}")


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    trajectories: tuple
    lane_graph: LaneGraph = field(default_factory=LaneGraph)
    labels: Optional[tuple] = None
    timestamps: Optional[np.ndarray] = None
    city: str = ""

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if not trajs:
            raise InvalidScene(f"{self.scene_id}: no trajectories")
        lengths = {len(t) for t in trajs}
        if len(lengths) != 1:
            raise InvalidScene(f"{self.scene_id}: trajectories cover different frame ranges {sorted(lengths)}")
        n = lengths.pop()
        if sum(t.role is Role.TARGET for t in trajs) > 1:
            raise InvalidScene(f"{self.scene_id}: more than one TARGET trajectory")
        if self.timestamps is None:
            ts = np.arange(n) * DT
        else:
            ts = np.array(self.timestamps, dtype=np.float64)
            if len(ts) != n:
                raise InvalidScene(f"{self.scene_id}: {len(ts)} timestamps for {n} frames")
            if n > 1 and np.max(np.abs(np.diff(ts) - DT)) > GRID_TOLERANCE:
                raise InvalidScene(f"{self.scene_id}: timestamps are not on a 10 Hz grid")
        object.__setattr__(self, "timestamps", _frozen(ts))
        if self.labels is not None:
            labels = tuple(sorted(self.labels, key=lambda lb: lb.frame_index))
            for lb in labels:
                if not 0 <= lb.frame_index < n:
                    raise InvalidScene(f"{self.scene_id}: label frame {lb.frame_index} outside [0, {n})")
            if len({lb.frame_index for lb in labels}) != len(labels):
                raise InvalidScene(f"{self.scene_id}: duplicate frame labels")
            object.__setattr__(self, "labels", labels or None)

    @property
    def length(self) -> int:
        return len(self.trajectories[0])

    @property
    def target(self) -> Trajectory:
        for t in self.trajectories:
            if t.role is Role.TARGET:
                return t
        raise MissingTarget(f"scene {self.scene_id} has no TARGET trajectory")

    @property
    def target_index(self) -> int:
        for i, t in enumerate(self.trajectories):
            if t.role is Role.TARGET:
                return i
        raise MissingTarget(f"scene {self.scene_id} has no TARGET trajectory")

    def label_map(self) -> dict:
        return {lb.frame_index: lb for lb in (self.labels or ())}


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform world -> local: ``local = R(-heading) @ (world - origin)``."""

    origin: np.ndarray
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _frozen(np.asarray(self.origin, dtype=float).reshape(2)))

    def to_local(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.origin) @ rotation(self.heading)

    def to_world(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ rotation(self.heading).T + self.origin


@dataclass(frozen=True, eq=False)
class Window:
    """T consecutive frames of every agent present at the last frame.

    ``frames`` has shape (N, T, 2) in the target-centric frame, ``valid``
    (N, T).  Padded entries are exactly zero.
    """

    frames: np.ndarray
    valid: np.ndarray
    target_index: int
    frame_of_score: int
    pose: Pose
    agent_ids: tuple = ()
    scene_id: str = ""

    @property
    def target(self) -> np.ndarray:
        return self.frames[self.target_index]

    @property
    def n_agents(self) -> int:
        return self.frames.shape[0]


def _heading(xy: np.ndarray, valid: np.ndarray, end: int, start: int) -> float:
    """Heading of the most recent moving segment ending at or before ``end``."""
    for k in range(end, start, -1):
        if valid[k] and valid[k - 1]:
            d = xy[k] - xy[k - 1]
            if math.hypot(d[0], d[1]) >= MOVING_EPS:
                return math.atan2(d[1], d[0])
    return 0.0


def to_target_frame(scene: Scene, end_frame: int, length: int = WINDOW) -> Window:
    """Cut the window ending at ``end_frame`` and express it in the target frame.

    The origin is the target's position at ``end_frame``; +x points along
    its last displacement.  If the target did not move over the last step
    the most recent moving step inside the window defines the heading, and
    the identity rotation is used when there is none.
    """
    n = scene.length
    if end_frame < length - 1 or end_frame >= n:
        raise FrameOutOfRange(f"end_frame {end_frame} outside [{length - 1}, {n - 1}]")
    ti = scene.target_index
    target = scene.trajectories[ti]
    if not target.valid[end_frame]:
        raise MissingTarget(f"scene {scene.scene_id}: target not observed at frame {end_frame}")
    start = end_frame - length + 1
    heading = _heading(target.xy, target.valid, end_frame, start)
    pose = Pose(target.xy[end_frame], heading)

    keep = [i for i, t in enumerate(scene.trajectories) if t.valid[end_frame]]
    frames = np.zeros((len(keep), length, 2))
    valid = np.zeros((len(keep), length), dtype=bool)
    for row, i in enumerate(keep):
        t = scene.trajectories[i]
        v = t.valid[start : end_frame + 1]
        frames[row, v] = pose.to_local(t.xy[start : end_frame + 1][v])
        valid[row] = v
    # exact zeros for the target at t=0 and for padding
    frames[keep.index(ti), -1] = 0.0
    frames[~valid] = 0.0
    frames.setflags(write=False)
    valid.setflags(write=False)
    return Window(
        frames,
        valid,
        keep.index(ti),
        end_frame,
        pose,
        tuple(scene.trajectories[i].agent_id for i in keep),
        scene.scene_id,
    )


def to_displacements(window: Window) -> np.ndarray:
    """Per-agent step displacements, shape (N, T-1, 2).

    A step touching a padded state is (0, 0).
    """
    f = window.frames
    d = f[:, 1:] - f[:, :-1]
    ok = window.valid[:, 1:] & window.valid[:, :-1]
    d[~ok] = 0.0
    return d


def from_displacements(first: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_displacements` for fully observed agents."""
    first = np.asarray(first, dtype=np.float64)
    cum = np.cumsum(displacements, axis=-2)
    return np.concatenate([first[..., None, :], first[..., None, :] + cum], axis=-2)


def n_windows(length: int, window: int = WINDOW) -> int:
    return max(0, length - window + 1)


def window_iter(scene: Scene, length: int = WINDOW) -> Iterator[Window]:
    """Stride-1 windows; window k scores frame ``length - 1 + k``."""
    if scene.length < length:
        raise SceneTooShort(f"scene {scene.scene_id} has {scene.length} frames, need {length}")
    for end in range(length - 1, scene.length):
        yield to_target_frame(scene, end, length)
