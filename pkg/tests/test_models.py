import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_scene, straight_graph, tiny_scenes
from gradcases import random_scene
from maad import diffcalc as dc
from maad.core import Lane, LaneGraph, Role, Scene, Trajectory, to_target_frame
from maad.datagen import RigidTransform
from maad.datagen.worlds import transform_graph
from maad.errors import CenterUninitialized, EmptyMap, EmptyTrainingSet
from maad.models import (
    LaneGCNAE,
    ModelDescriptor,
    NormStats,
    Seq2Seq,
    STGAE,
    build_network,
    cvm_reconstruct,
    dsvdd_loss,
    dsvdd_score,
    init_center,
    lane_nodes,
    lanegcn_ae_forward,
    linear_model,
    lti_reconstruct,
    prepare_batch,
    recon_loss,
    scene_windows,
    seq2seq_forward,
    stgae_forward,
    train,
)
from maad.models import training as training_mod
from maad.models.linear import cvm_scores, lti_scores
from maad.models.networks import EPS_D, distance_adjacency_row

coords = st.floats(-50, 50, allow_nan=False)


# ------------------------------------------------------------------ linear models


def test_cvm_hand_examples():
    _, a = cvm_reconstruct(np.array([[0, 0], [1, 0], [2, 0], [3, 0]], float))
    assert a == 0.0
    rec, a = cvm_reconstruct(np.array([[0, 0], [1, 0], [3, 0], [6, 0]], float))
    assert np.array_equal(rec, [[0, 0], [1, 0], [2, 0], [3, 0]])
    assert abs(a - 1.0) <= 1e-12


def test_lti_hand_examples():
    rec, a = lti_reconstruct(np.array([[0, 0], [0, 2], [4, 0]], float))
    assert np.allclose(rec, [[0, 0], [2, 0], [4, 0]], atol=0)
    assert abs(a - math.sqrt(8) / 3) <= 1e-12
    _, a = lti_reconstruct(np.array([[1, 1], [2, 3], [3, 5], [4, 7]], float))
    assert a <= 1e-12


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (16, 2), elements=coords), coords, coords)
def test_linear_translation_invariance_and_sign(s, dx, dy):
    for fn in (cvm_reconstruct, lti_reconstruct):
        rec, a = fn(s)
        assert a >= 0
        assert abs(fn(s + [dx, dy])[1] - a) <= 1e-9
    rec, _ = lti_reconstruct(s)
    assert np.allclose(rec[[0, -1]], s[[0, -1]], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (2,), elements=coords), hnp.arrays(np.float64, (2,), elements=st.floats(-5, 5)),
       st.integers(2, 14), hnp.arrays(np.float64, (2,), elements=st.floats(0.01, 3)))
def test_linear_exactness(s0, v, k, bump):
    s = s0 + np.arange(16)[:, None] * v
    assert cvm_reconstruct(s)[1] <= 1e-9
    assert lti_reconstruct(s)[1] <= 1e-9
    moved = s.copy()
    moved[k] += bump
    assert cvm_reconstruct(moved)[1] > 0
    assert lti_reconstruct(moved)[1] > 0


def test_vectorised_linear_scores(rng):
    t = np.cumsum(rng.normal(size=(7, 16, 2)), axis=1)
    assert np.allclose(cvm_scores(t), [cvm_reconstruct(x)[1] for x in t], atol=1e-12)
    assert np.allclose(lti_scores(t), [lti_reconstruct(x)[1] for x in t], atol=1e-12)


# ------------------------------------------------------------------ networks


def _window(seed=0, n_agents=4):
    return to_target_frame(random_scene(np.random.default_rng(seed), n_agents=n_agents), 19)


def test_seq2seq_zero_head_gives_zero_reconstruction():
    net = Seq2Seq(np.random.default_rng(0))
    net.core.head[0].data[:] = 0.0
    z, rec = seq2seq_forward(_window(), net)
    assert z.shape == (16,)
    assert np.array_equal(rec, np.zeros((16, 2)))


def test_stgae_single_agent_reduces_to_self_loop():
    net = STGAE(np.random.default_rng(1))
    w = _window(n_agents=1)
    batch = prepare_batch("stgae", [w], NormStats())
    assert np.array_equal(batch["adj_row"], np.ones((1, 16, 1)))
    x = batch["agents"][0, :, 0, :]
    e = np.tanh(x @ net.embed[0].data + net.embed[1].data)
    expect = np.maximum(e @ net.w_graph.data, 0.0) + e @ net.w_res.data
    with dc.no_grad():
        feats = net.features(batch)
    assert np.allclose(feats.data[0], expect, atol=1e-14)
    with dc.no_grad():
        z_core = net.core.encode(feats).data[0]
    z, _ = stgae_forward(w, net)
    assert np.array_equal(z, z_core)


def test_adjacency_coincident_agents_is_finite():
    pos = np.zeros((2, 2))
    row = distance_adjacency_row(pos, np.ones(2, bool))
    # A = [[1, 1/eps], [1/eps, 1]]: equal degrees
    deg = 1.0 + 1.0 / EPS_D
    assert np.allclose(row, [1.0 / deg, (1.0 / EPS_D) / deg])
    xy = np.cumsum(np.ones((20, 2)), axis=0)
    w = to_target_frame(make_scene(xy, [xy.copy()]), 19)
    z, rec = stgae_forward(w, STGAE(np.random.default_rng(0)))
    assert np.all(np.isfinite(z)) and np.all(np.isfinite(rec))


def test_adjacency_ignores_invalid_nodes():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    row = distance_adjacency_row(pos, np.array([True, True, False]))
    assert row[2] == 0.0
    # two valid nodes with equal degree: the row sums to one
    assert row.sum() == pytest.approx(1.0, abs=1e-12)


def _permuted_scene(scene, perm):
    trajs = [scene.trajectories[0]] + [scene.trajectories[1:][i] for i in perm]
    return Scene(scene.scene_id, tuple(trajs), scene.lane_graph)


def test_stgae_permutation_invariance():
    rng = np.random.default_rng(5)
    scene = random_scene(rng, n_agents=6)
    net = STGAE(np.random.default_rng(2))
    z0, _ = stgae_forward(to_target_frame(scene, 19), net)
    for _ in range(20):
        perm = rng.permutation(5)
        z, _ = stgae_forward(to_target_frame(_permuted_scene(scene, perm), 19), net)
        assert np.allclose(z, z0, atol=1e-12)


def test_lanegcn_empty_map_equals_actor_path():
    net = LaneGCNAE(np.random.default_rng(3))
    w = _window(2)
    with pytest.warns(EmptyMap):
        z, _ = lanegcn_ae_forward(w, LaneGraph(), net)
    with pytest.warns(EmptyMap):
        batch = prepare_batch("lanegcn_ae", [w], NormStats(), [lane_nodes(LaneGraph())])
    with dc.no_grad():
        actors = net.actor_features(batch)
        expect = net.fuse(actors, dc.Tensor(np.zeros(actors.shape)), batch).data[0]
    assert np.allclose(z, expect, atol=1e-14)


def test_lanegcn_far_map_warns():
    net = LaneGCNAE(np.random.default_rng(3))
    far = LaneGraph((Lane("x", [[1000.0, 1000.0], [1100.0, 1000.0]]),))
    with pytest.warns(EmptyMap):
        z, rec = lanegcn_ae_forward(_window(2), far, net)
    assert np.all(np.isfinite(z))


def test_lanegcn_rigid_motion_invariance():
    rng = np.random.default_rng(9)
    scene = random_scene(rng, n_agents=4)
    net = LaneGCNAE(np.random.default_rng(4))
    z0, rec0 = lanegcn_ae_forward(to_target_frame(scene, 19), scene.lane_graph, net)
    for _ in range(5):
        tf = RigidTransform(float(rng.uniform(-math.pi, math.pi)), tuple(rng.uniform(-500, 500, 2)))
        trajs = tuple(Trajectory(t.agent_id, np.where(t.valid[:, None], tf.apply(t.xy), 0.0), t.valid, t.role)
                      for t in scene.trajectories)
        moved = Scene("m", trajs, transform_graph(scene.lane_graph, tf))
        z, rec = lanegcn_ae_forward(to_target_frame(moved, 19), moved.lane_graph, net)
        assert np.allclose(z, z0, atol=1e-9)
        assert np.allclose(rec, rec0, atol=1e-9)


def test_lanegcn_reconstruction_ends_at_origin():
    z, rec = lanegcn_ae_forward(_window(1), straight_graph(), LaneGCNAE(np.random.default_rng(0)))
    assert rec.shape == (16, 2)
    assert np.array_equal(rec[-1], [0.0, 0.0])


def test_build_network_is_seeded():
    a = build_network("stgae", 11).state_dict()
    b = build_network("stgae", 11).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    lstm_b = a["enc.b"]
    assert np.array_equal(lstm_b[16:32], np.ones(16)) and not lstm_b[:16].any()


# ------------------------------------------------------------------ objectives


def test_recon_loss_examples(rng):
    s = rng.normal(size=(16, 2))
    assert recon_loss(s, s) == 0.0
    shift = np.tile([0.6, 0.8], (16, 1))
    assert recon_loss(s, s + shift) == pytest.approx(1.0, abs=1e-12)
    r = rng.normal(size=(16, 2))
    assert recon_loss(s[::-1], r[::-1]) == pytest.approx(recon_loss(s, r), abs=1e-12)
    t = recon_loss(dc.Tensor(s), dc.Tensor(r))
    assert t.item() == pytest.approx(recon_loss(s, r), abs=1e-12)


def test_dsvdd_examples():
    c = np.arange(16, dtype=float)
    assert dsvdd_score(c, c) == 0.0
    assert dsvdd_loss(c[None], c) == 0.0
    z = c.copy()
    z[:2] += [3.0, 4.0]
    assert dsvdd_score(z, c) == 5.0
    assert dsvdd_loss(z[None], c) == 25.0
    assert dsvdd_score(3.0 * z, 3.0 * c) == pytest.approx(15.0, abs=1e-12)
    with pytest.raises(CenterUninitialized):
        dsvdd_score(z, None)
    with pytest.raises(CenterUninitialized):
        dsvdd_loss(z[None], None)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (4, 16), elements=coords), hnp.arrays(np.float64, (16,), elements=coords))
def test_dsvdd_score_nonnegative_and_consistent(z, c):
    s = dsvdd_score(z, c)
    assert np.all(s >= 0)
    assert dsvdd_loss(z, c) == pytest.approx(np.mean(s**2), rel=1e-9, abs=1e-9)


def test_init_center_examples():
    scenes = tiny_scenes(3, 0)
    model = train(ModelDescriptor("seq2seq", "dsvdd"), scenes, [], seed=0, epochs=0)
    w = scene_windows(scenes[0])
    c1 = init_center(model, w[:1])
    assert np.array_equal(c1, model.encode(w[:1])[0])
    c = init_center(model, w)
    assert np.allclose(init_center(model, w + w), c, atol=1e-14)
    assert np.array_equal(init_center(model, w), c)
    with pytest.raises(EmptyTrainingSet):
        init_center(model, [])
    sub = init_center(model, w, max_samples=4, seed=1)
    assert np.array_equal(sub, init_center(model, w, max_samples=4, seed=1))


def test_descriptor_invariants():
    with pytest.raises(ValueError):
        ModelDescriptor("cvm", "dsvdd")
    with pytest.raises(ValueError):
        ModelDescriptor("seq2seq", "recon", dsvdd_center=np.zeros(16))
    with pytest.raises(ValueError):
        ModelDescriptor("transformer")
    assert ModelDescriptor("stgae").dims == {"embed": 8, "hidden": 16, "latent": 16}


# ------------------------------------------------------------------ training


def test_train_lr_schedule_and_progress():
    scenes = tiny_scenes(12, 1)
    model = train(ModelDescriptor("seq2seq"), scenes, scenes[:4], seed=0, epochs=34, batch_size=4)
    lrs = [r["lr"] for r in model.history]
    assert len(lrs) == 34
    assert lrs[31] == 1e-3 and lrs[32] == 1e-4
    assert model.history[-1]["recon"] < model.history[0]["recon"]


def test_train_restores_best_epoch(monkeypatch):
    vals = iter([5.0, 4.0, 3.0, 0.5, 2.0, 1.0, 0.7, 3.0])

    def fake_eval(model, windows, nodes=None):
        v = next(vals)
        return np.array([v, v, 0.0])

    monkeypatch.setattr(training_mod, "evaluate_loss", fake_eval)
    scenes = tiny_scenes(6, 2)
    model = train(ModelDescriptor("seq2seq"), scenes, scenes[:2], seed=0, epochs=8, keep_snapshots=True)
    assert model.best_epoch == 4
    state = model.network.state_dict()
    assert all(np.array_equal(state[k], model.snapshots[3][k]) for k in state)
    assert not all(np.array_equal(state[k], model.snapshots[-1][k]) for k in state)


@pytest.mark.parametrize("arch", ["seq2seq", "stgae", "lanegcn_ae"])
def test_train_deterministic(arch):
    scenes = tiny_scenes(6, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyMap)
        a = train(ModelDescriptor(arch), scenes, scenes[:2], seed=4, epochs=3, batch_size=4)
        b = train(ModelDescriptor(arch), scenes, scenes[:2], seed=4, epochs=3, batch_size=4)
    assert a.history == b.history and a.best_epoch == b.best_epoch
    sa, sb = a.network.state_dict(), b.network.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    w = scene_windows(scenes[0])
    nodes = [lane_nodes(scenes[0].lane_graph)] * len(w) if arch == "lanegcn_ae" else None
    s = a.score_windows(w, nodes)
    assert s.shape == (len(w),) and np.all(s >= 0)


def test_joint_loss_decomposes():
    scenes = tiny_scenes(8, 4)
    model = train(ModelDescriptor("stgae", "dsvdd"), scenes, scenes[:3], seed=1, epochs=4, batch_size=4)
    for r in model.history:
        assert abs(r["loss"] - (r["recon"] + r["dsvdd"])) <= 1e-12
        assert abs(r["val_loss"] - (r["val_recon"] + r["val_dsvdd"])) <= 1e-12
    assert model.descriptor.dsvdd_center.shape == (16,)
    s = model.score_windows(scene_windows(scenes[0]))
    assert np.allclose(s, dsvdd_score(model.encode(scene_windows(scenes[0])), model.descriptor.dsvdd_center))


def test_train_errors():
    with pytest.raises(ValueError, match="requires no training"):
        train(ModelDescriptor("cvm"), tiny_scenes(2, 0), [], seed=0)
    with pytest.raises(EmptyTrainingSet):
        train(ModelDescriptor("seq2seq"), [], [], seed=0)


def test_linear_model_scores_windows():
    xy = np.cumsum(np.tile([1.0, 0.5], (30, 1)), axis=0)
    w = scene_windows(make_scene(xy))
    assert np.allclose(linear_model("cvm").score_windows(w), 0.0, atol=1e-12)
    assert np.allclose(linear_model("lti").score_windows(w), 0.0, atol=1e-12)


@pytest.mark.parametrize("arch", ["seq2seq", "stgae", "lanegcn_ae"])
def test_full_model_gradcheck(arch):
    rng = np.random.default_rng(21)
    scenes = [random_scene(rng) for _ in range(2)]
    windows = [to_target_frame(s, 19) for s in scenes]
    nodes = [lane_nodes(s.lane_graph, spacing=40.0) for s in scenes] if arch == "lanegcn_ae" else None
    if arch == "lanegcn_ae":
        net = LaneGCNAE(rng, embed=2, latent=3)
    else:
        net = {"seq2seq": Seq2Seq, "stgae": STGAE}[arch](rng, embed=2, hidden=3)
    batch = prepare_batch(arch, windows, NormStats(10.0, 1.0), nodes)

    def loss():
        _, rec = net.forward(batch)
        return recon_loss(batch["target"], rec)

    assert dc.gradcheck(loss, net.parameters()) < 1e-4
