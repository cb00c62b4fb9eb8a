import numpy as np
import pytest

from maad.core import Category, FrameLabel, Lane, LaneGraph, Role, Scene, Trajectory

# lines printed at the end of the run by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_scene(target_xy, others=(), labels=None, graph=None, scene_id="s", others_valid=None):
    """Scene from a target (L, 2) array and optional other-agent arrays."""
    target_xy = np.asarray(target_xy, dtype=float)
    n = len(target_xy)
    trajs = [Trajectory("target", target_xy, np.ones(n, bool), Role.TARGET)]
    for i, xy in enumerate(others):
        valid = np.ones(n, bool) if others_valid is None else np.asarray(others_valid[i], bool)
        xy = np.where(valid[:, None], np.asarray(xy, dtype=float), 0.0)
        trajs.append(Trajectory(f"a{i}", xy, valid, Role.EGO if i == 0 else Role.OTHER))
    return Scene(scene_id, tuple(trajs), graph or LaneGraph(), labels)


def line_xy(n, v=(1.0, 0.0), start=(0.0, 0.0)):
    t = np.arange(n)[:, None]
    return np.asarray(start) + t * np.asarray(v)


def normal_labels(n, subclass="straight"):
    return tuple(FrameLabel(k, Category.NORMAL, subclass) for k in range(n))


def straight_graph(length=200.0):
    return LaneGraph(
        (
            Lane("a", [[-length, 0.0], [0.0, 0.0], [length, 0.0]], right_neighbor="b"),
            Lane("b", [[-length, -3.5], [length, -3.5]], left_neighbor="a"),
        )
    )


def tiny_scenes(n, seed, length=30):
    """Gently curving target with one companion in the next lane."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        v = rng.uniform(5, 12)
        k = rng.uniform(-0.01, 0.01)
        th = np.cumsum(np.full(length, k * v * 0.1))
        xy = np.cumsum(np.column_stack([np.cos(th), np.sin(th)]) * v * 0.1, axis=0)
        other = xy + [rng.uniform(-10, 10), 3.5]
        out.append(make_scene(xy, [other], graph=straight_graph(), scene_id=f"t{i}"))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)
