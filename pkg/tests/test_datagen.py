import filecmp
import math
from pathlib import Path

import numpy as np
import pytest

from maad.core import ABNORMAL_CLASSES, NORMAL_CLASSES, DT, Category, Role, rotation
from maad.datagen import (
    A_MAX,
    V_MAX,
    ControlCommand,
    ManeuverScript,
    VehicleState,
    WorldSpec,
    default_config,
    generate_dataset,
    generate_scene,
    load_config,
    mini_benchmark_config,
    plan_jobs,
    plan_scene,
    road_template,
    step_kinematics,
    track_reference,
    wrap_angle,
)
from maad.datagen.dataset import ABNORMAL_SHARE, allocate
from maad.datagen.scripts import IGNORE_MARGIN, label_frames
from maad.errors import ConfigError, InfeasibleScript

ALL_CLASSES = NORMAL_CLASSES + ABNORMAL_CLASSES


def canonical(scene, ws):
    """Target positions mapped back into the template's own frame."""
    tf = ws.transform
    return (scene.target.xy - np.asarray(tf.offset)) @ rotation(tf.angle)


def polyline_distance(p, line):
    a, b = line[:-1], line[1:]
    d = b - a
    u = np.clip(np.sum((p - a) * d, axis=1) / np.sum(d * d, axis=1), 0, 1)
    foot = a + u[:, None] * d
    dist = np.linalg.norm(p - foot, axis=1)
    k = int(np.argmin(dist))
    return dist[k], d[k] / np.linalg.norm(d[k])


def scene_for(subclass, seed, duration=6.0, template="auto", overrides=None):
    rng = np.random.default_rng(seed)
    ws, script = plan_scene(subclass, rng, duration, template, overrides=overrides)
    return generate_scene(ws, script, seed), ws, script


# ------------------------------------------------------------------ kinematics


def test_step_straight():
    s = step_kinematics(VehicleState(0.0, 0.0, 0.0, 10.0), ControlCommand(0.0, 0.0))
    assert (s.x, s.y, s.heading, s.speed) == (1.0, 0.0, 0.0, 10.0)


def test_step_steering_closed_form():
    s = step_kinematics(VehicleState(0.0, 0.0, 0.0, 10.0), ControlCommand(0.0, 0.1))
    assert s.heading == pytest.approx(10 / 2.5 * math.tan(0.1) * 0.1, abs=1e-15)
    assert s.heading == pytest.approx(0.04013, abs=1e-5)


def test_zero_steer_keeps_line(rng):
    s = VehicleState(1.0, 2.0, 0.0, 5.0)
    for _ in range(100):
        s = step_kinematics(s, ControlCommand(float(rng.uniform(-4, 4)), 0.0))
        assert s.y == 2.0 and s.heading == 0.0 and s.speed >= 0.0


def test_commands_clipped():
    s = step_kinematics(VehicleState(0.0, 0.0, 0.0, 10.0), ControlCommand(50.0, 3.0))
    assert s.speed == pytest.approx(10.0 + A_MAX * DT)
    assert s.heading == pytest.approx(10 / 2.5 * math.tan(0.5) * 0.1)
    s = step_kinematics(VehicleState(0.0, 0.0, 0.0, 0.1), ControlCommand(-4.0, 0.0))
    assert s.speed == 0.0


def test_state_invariants():
    with pytest.raises(ValueError):
        VehicleState(0, 0, 0, -1.0)
    with pytest.raises(ValueError):
        VehicleState(0, 0, 4.0, 1.0)
    for a in np.linspace(-20, 20, 101):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)
    assert wrap_angle(math.pi) == math.pi and wrap_angle(-math.pi) == math.pi


def test_tracker_matches_step_kinematics():
    s = np.arange(40) * 1.0
    ref = np.column_stack([s, 2 * np.sin(s / 10)])
    states, cmds = track_reference(ref, use_numba=False)
    st = VehicleState(*states[0])
    for k in range(39):
        st = step_kinematics(st, ControlCommand(*cmds[k]))
        assert np.allclose([st.x, st.y, st.heading, st.speed], states[k + 1], atol=1e-9)


def test_tracker_numba_matches_python(rng):
    ref = np.cumsum(np.column_stack([np.full(80, 1.0), 0.05 * rng.normal(size=80)]), axis=0)
    a = track_reference(ref, use_numba=True)
    b = track_reference(ref, use_numba=False)
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-9) and np.allclose(a[1], b[1], rtol=0, atol=1e-9)


# ------------------------------------------------------------------ scene examples


@pytest.mark.parametrize("seed", range(5))
def test_straight_stays_on_centerline(seed):
    scene, ws, _ = scene_for("straight", seed, template="straight")
    tpl = road_template(ws.template)
    lane = tpl.lanes[ws.route[0]].centerline
    can = canonical(scene, ws)
    worst = max(polyline_distance(p, lane)[0] for p in can)
    assert worst <= 0.05
    assert all(lb.category is Category.NORMAL and lb.subclass == "straight" for lb in scene.labels)


def test_staggering_amplitude():
    for seed in range(5):
        scene, ws, script = scene_for("staggering", seed, 8.0, "straight", {"amplitude": 1.0, "period": 2.0})
        path = road_template(ws.template).route_path(ws.route)
        can = canonical(scene, ws)
        lateral = np.array([path.project(p)[1] for p in can])
        abn = np.array([lb.category is Category.ABNORMAL for lb in scene.labels])
        assert abn.any()
        assert 0.9 <= np.max(np.abs(lateral[abn])) <= 1.1


@pytest.mark.parametrize("seed", range(12))
def test_ghost_driver_opposes_lane(seed):
    scene, ws, _ = scene_for("ghost_driver", seed)
    lanes = [lane.centerline for lane in scene.lane_graph.lanes]
    xy = scene.target.xy
    abn = [lb.frame_index for lb in scene.labels if lb.category is Category.ABNORMAL]
    assert abn
    for k in abn:
        step = xy[k] - xy[k - 1]
        heading = step / np.linalg.norm(step)
        nearest = min((polyline_distance(xy[k], cl) for cl in lanes), key=lambda t: t[0])
        assert float(heading @ nearest[1]) < 0


# ------------------------------------------------------------------ properties


@pytest.mark.parametrize("subclass", ALL_CLASSES)
def test_every_class_generates_within_bounds(subclass):
    for seed, duration in ((1, 1.7), (2, 5.0), (3, 10.1)):
        scene, ws, script = scene_for(subclass, seed, duration)
        n = scene.length
        assert 17 <= n <= 101
        xy = scene.target.xy
        speed = np.linalg.norm(np.diff(xy, axis=0), axis=1) / DT
        assert np.all(speed <= V_MAX + 1e-9)
        assert np.all(np.abs(np.diff(speed)) / DT <= A_MAX + 1e-6)
        # one label per frame, ABNORMAL present iff the class is abnormal
        assert [lb.frame_index for lb in scene.labels] == list(range(n))
        cats = {lb.category for lb in scene.labels}
        assert (Category.ABNORMAL in cats) == (subclass in ABNORMAL_CLASSES)
        runs = script.label_intervals(n)
        assert runs[0][0] == 0 and runs[-1][1] == n
        assert all(a[1] == b[0] for a, b in zip(runs, runs[1:]))
        assert sum(t.role is Role.TARGET for t in scene.trajectories) == 1


def test_ignore_margin_around_transitions():
    labels = label_frames(40, [(15, 30)], "straight", "staggering")
    cats = [lb.category for lb in labels]
    for b in (15, 30):
        assert all(cats[k] is Category.IGNORE for k in range(b - IGNORE_MARGIN, b + IGNORE_MARGIN))
    assert cats[11] is Category.NORMAL and cats[18] is Category.ABNORMAL and cats[33] is Category.NORMAL
    assert labels[20].subclass == "staggering" and labels[5].subclass == "straight"


def test_background_shared_across_scripts():
    rng = np.random.default_rng(4)
    ws, script = plan_scene("straight", rng, 6.0, "straight")
    other = ManeuverScript.make(
        "staggering", v0=script["v0"], phases=(), lateral=(("wave", 2.0, 2.0, 1.0),), abnormal=((20, ws.frames),)
    )
    a = generate_scene(ws, script, 99)
    b = generate_scene(ws, other, 99)
    bg_a = {t.agent_id: t for t in a.trajectories if t.agent_id.startswith("bg")}
    bg_b = {t.agent_id: t for t in b.trajectories if t.agent_id.startswith("bg")}
    assert bg_a.keys() == bg_b.keys() and bg_a
    for k in bg_a:
        assert np.array_equal(bg_a[k].xy, bg_b[k].xy) and np.array_equal(bg_a[k].valid, bg_b[k].valid)
    assert not np.array_equal(a.target.xy, b.target.xy)


def test_generate_scene_deterministic():
    rng = np.random.default_rng(8)
    ws, script = plan_scene("tailgating", rng, 7.0)
    a, b = generate_scene(ws, script, 5), generate_scene(ws, script, 5)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert np.array_equal(ta.xy, tb.xy)


def test_background_follows_lanes_at_constant_speed():
    scene, ws, _ = scene_for("following", 6)
    for t in scene.trajectories:
        if not t.agent_id.startswith("bg"):
            continue
        xy = t.xy[t.valid]
        speed = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        assert np.ptp(speed) < 0.05 * max(speed.mean(), 1e-9) + 1e-9


def test_infeasible_scripts():
    rng = np.random.default_rng(0)
    ws, script = plan_scene("straight", rng, 5.0, "straight")
    bad = WorldSpec(ws.template, ("nope",), ws.start_s, ws.frames)
    with pytest.raises(InfeasibleScript):
        generate_scene(bad, script, 0)
    with pytest.raises(InfeasibleScript):
        plan_scene("ghost_driver", rng, 5.0, "t_junction_with_typo")
    with pytest.raises(InfeasibleScript):
        plan_scene("unicorn", rng)
    lead_needed = ManeuverScript.make("tailgating", v0=10.0, tau=1.0)
    with pytest.raises(InfeasibleScript):
        generate_scene(ws, lead_needed, 0)


# ------------------------------------------------------------------ datasets


def test_default_config_has_160_test_scenes():
    jobs = plan_jobs(load_config())
    test = [j for j in jobs if j["split"] == "test"]
    assert len(test) == 160
    assert sum(j["subclass"] in NORMAL_CLASSES for j in test) == 80
    abn = [j["subclass"] for j in test if j["subclass"] in ABNORMAL_CLASSES]
    assert len(abn) == 80
    counts = {c: abn.count(c) for c in ABNORMAL_SHARE}
    assert counts == allocate(80, ABNORMAL_SHARE)
    assert counts["ghost_driver"] == max(counts.values())
    assert all(j["subclass"] in NORMAL_CLASSES for j in jobs if j["split"] != "test")


def test_allocate_is_exact():
    assert sum(allocate(80, ABNORMAL_SHARE).values()) == 80
    assert allocate(5, {"a": 1, "b": 1, "c": 1}) == {"a": 2, "b": 2, "c": 1}


def test_mini_benchmark_config():
    cfg = load_config(mini_benchmark_config(7))
    jobs = plan_jobs(cfg)
    test = [j["subclass"] for j in jobs if j["split"] == "test"]
    assert len(test) == 40
    assert sum(c in ABNORMAL_CLASSES for c in test) == 20
    assert len({c for c in test if c in ABNORMAL_CLASSES}) >= 6
    assert sum(j["split"] == "train" for j in jobs) == 200


def _small_config():
    return {
        "seed": 3,
        "splits": {"train": 3, "val": 2},
        "classes": [{"subclass": "straight", "count": 2}, {"subclass": "staggering", "count": 1},
                    {"subclass": "cancel_turn", "count": 1}],
    }


def _tree(root):
    return sorted(p.relative_to(root) for p in Path(root).rglob("*") if p.is_file())


def test_dataset_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    ma = generate_dataset(_small_config(), a)
    mb = generate_dataset(_small_config(), b, jobs=2)
    assert ma == mb
    files = _tree(a)
    assert files == _tree(b)
    _, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
    assert not mismatch and not errors
    # training splits carry no labels; every test scene does
    assert not list((a / "train").glob("*.labels.json"))
    assert len(list((a / "test").glob("*.labels.json"))) == 4
    pc = ma["test"]["per_class"]
    assert pc["staggering"]["ABNORMAL"] > 0 and pc["straight"]["ABNORMAL"] == 0
    assert ma["splits"]["train"]["scenes"] == 3


def test_seed_override_changes_output(tmp_path):
    generate_dataset(_small_config(), tmp_path / "a")
    generate_dataset(_small_config(), tmp_path / "b", seed=4)
    assert (tmp_path / "a/test/test_00000.csv").read_bytes() != (tmp_path / "b/test/test_00000.csv").read_bytes()


@pytest.mark.parametrize(
    "patch",
    [
        {"world": "moon"},
        {"duration_s": [1.0, 5.0]},
        {"duration_s": [2.0, 12.0]},
        {"classes": [{"subclass": "flying"}]},
        {"train_classes": [{"subclass": "ghost_driver"}]},
        {"splits": {"train": -1}},
        {"seed": "x"},
        {"colour": 1},
    ],
)
def test_config_errors(patch):
    with pytest.raises(ConfigError):
        load_config({**default_config(), **patch})


def test_config_from_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"seed": 5, "splits": {"train": 1, "val": 0}}')
    assert load_config(p)["seed"] == 5
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
