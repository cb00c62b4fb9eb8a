import numpy as np
import pytest

from conftest import line_xy, make_scene, normal_labels, straight_graph, tiny_scenes
from maad import dataio
from maad.core import Category, FrameLabel
from maad.datagen import generate_scene, plan_scene
from maad.errors import ArchitectureMismatch, GridError, IoFailure, ParseError, SchemaError, VersionMismatch
from maad.eval import score_scene
from maad.models import ModelDescriptor, train
from maad.oneclass import OcSvmDetector, fit_ocsvm

HEADER = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n"


def _csv(tmp_path, body, header=HEADER):
    p = tmp_path / "x.csv"
    p.write_text(header + body)
    return p


def _rows(n, track="t", kind="AGENT", dt=0.1):
    return "".join(f"{k * dt:.6f},{track},{kind},{k},0,SIM\n" for k in range(n))


def _generated(seed=2, subclass="staggering"):
    rng = np.random.default_rng(seed)
    ws, script = plan_scene(subclass, rng, 6.0)
    return generate_scene(ws, script, seed, scene_id="g")


def _same_scene(a, b):
    assert a.scene_id == b.scene_id and a.length == b.length
    by_id = {t.agent_id: t for t in b.trajectories}
    assert sorted(by_id) == sorted(t.agent_id for t in a.trajectories)
    for ta in a.trajectories:
        tb = by_id[ta.agent_id]
        assert ta.role is tb.role
        assert np.array_equal(ta.valid, tb.valid)
        assert np.array_equal(ta.xy, tb.xy)
    assert a.labels == b.labels
    assert [ln.id for ln in a.lane_graph.lanes] == [ln.id for ln in b.lane_graph.lanes]
    for la, lb in zip(a.lane_graph.lanes, b.lane_graph.lanes):
        assert np.array_equal(la.centerline, lb.centerline)
        assert (la.successors, la.left_neighbor, la.right_neighbor) == (lb.successors, lb.left_neighbor, lb.right_neighbor)


def test_scene_round_trip_exact(tmp_path):
    scene = _generated()
    paths = dataio.write_scene(scene, tmp_path)
    assert [p.name for p in paths] == ["g.csv", "g.map.json", "g.labels.json"]
    back = dataio.read_scene(*dataio.scene_paths(tmp_path, "g"))
    _same_scene(scene, back)
    # a second write of the loaded scene is byte-identical
    out = tmp_path / "again"
    dataio.write_scene(back, out)
    for p in paths:
        assert (out / p.name).read_bytes() == p.read_bytes()


def test_scene_round_trip_partial_tracks(tmp_path):
    n = 30
    valid = [np.arange(n) >= 7, np.arange(n) < 12]
    scene = make_scene(line_xy(n) * 0.37, [line_xy(n, start=(1e-3, 2.0)), line_xy(n, v=(0.1, 1 / 3))],
                       normal_labels(n), straight_graph(), "p", others_valid=valid)
    dataio.write_scene(scene, tmp_path)
    back = dataio.read_scene(*dataio.scene_paths(tmp_path, "p"))
    _same_scene(scene, back)
    # tracks come back ordered by first appearance
    assert [t.agent_id for t in back.trajectories] == ["target", "a1", "a0"]


def test_no_labels_no_sidecar(tmp_path):
    dataio.write_scene(make_scene(line_xy(20), scene_id="u"), tmp_path)
    assert not (tmp_path / "u.labels.json").exists()
    assert not dataio.read_scene(tmp_path / "u.csv").labels


def test_read_scenes_sorted(tmp_path):
    for sid in ("b", "a", "c"):
        dataio.write_scene(make_scene(line_xy(20), scene_id=sid), tmp_path)
    assert [s.scene_id for s in dataio.read_scenes(tmp_path)] == ["a", "b", "c"]
    with pytest.raises(IoFailure):
        dataio.list_scenes(tmp_path / "missing")


def test_two_agent_tracks(tmp_path):
    body = "".join(f"{k * 0.1:.6f},{t},AGENT,{k},0,SIM\n" for k in range(5) for t in ("a", "b"))
    with pytest.raises(SchemaError):
        dataio.read_scene(_csv(tmp_path, body))


def test_no_agent_track(tmp_path):
    with pytest.raises(SchemaError):
        dataio.read_scene(_csv(tmp_path, _rows(5, kind="AV")))


def test_missing_columns(tmp_path):
    with pytest.raises(SchemaError, match="X"):
        dataio.read_scene(_csv(tmp_path, "0.0,t,AGENT,0,SIM\n", "TIMESTAMP,TRACK_ID,OBJECT_TYPE,Y,CITY_NAME\n"))
    with pytest.raises(SchemaError):
        dataio.read_scene(_csv(tmp_path, "", ""))
    with pytest.raises(SchemaError):
        dataio.read_scene(_csv(tmp_path, ""))


def test_bad_values_report_row(tmp_path):
    bad = _rows(3) + "0.300000,t,AGENT,abc,0,SIM\n"
    with pytest.raises(ParseError) as e:
        dataio.read_scene(_csv(tmp_path, bad))
    assert e.value.row == 5
    with pytest.raises(ParseError):
        dataio.read_scene(_csv(tmp_path, _rows(3) + "0.300000,t,BICYCLE,3,0,SIM\n"))
    with pytest.raises(ParseError):
        dataio.read_scene(_csv(tmp_path, _rows(3) + "0.300000,t,AGENT,nan,0,SIM\n"))
    with pytest.raises(ParseError):
        dataio.read_scene(_csv(tmp_path, _rows(3) + "0.300000,t,AGENT\n"))


def test_unsorted_and_duplicate_rows(tmp_path):
    rows = _rows(4).splitlines(keepends=True)
    with pytest.raises(ParseError):
        dataio.read_scene(_csv(tmp_path, "".join([rows[0], rows[2], rows[1], rows[3]])))
    with pytest.raises(ParseError):
        dataio.read_scene(_csv(tmp_path, "".join([rows[0], rows[1], rows[1], rows[2]])))


def test_off_grid_timestamp(tmp_path):
    rows = _rows(3) + "0.3015,t,AGENT,3,0,SIM\n"
    with pytest.raises(GridError):
        dataio.read_scene(_csv(tmp_path, rows))
    # within a millisecond is accepted and snapped
    ok = dataio.read_scene(_csv(tmp_path, _rows(3) + "0.3005,t,AGENT,3,0,SIM\n"))
    assert ok.length == 4


def test_labels_and_map_round_trip():
    labels = (FrameLabel(0, Category.NORMAL, "straight"), FrameLabel(1, Category.IGNORE),
              FrameLabel(2, Category.ABNORMAL, "ghost_driver"))
    assert dataio.labels_from_json(dataio.labels_to_json(labels)) == labels
    g = straight_graph()
    back = dataio.map_from_json(dataio.map_to_json(g))
    assert [ln.id for ln in back.lanes] == ["a", "b"]
    with pytest.raises(SchemaError):
        dataio.map_from_json({"lanes": [{"id": "a"}]})
    with pytest.raises(SchemaError):
        dataio.labels_from_json([{"frame": 0, "category": "WEIRD"}])


def test_scores_round_trip(tmp_path, rng):
    frames = np.arange(15, 60)
    scores = rng.normal(size=45) * 10.0 ** rng.integers(-8, 8, size=45)
    p = tmp_path / "s.scores.csv"
    dataio.write_scores(p, frames, scores)
    f2, s2 = dataio.read_scores(p)
    assert np.array_equal(f2, frames) and np.array_equal(s2, scores)
    p.write_text("frame,value\n")
    with pytest.raises(SchemaError):
        dataio.read_scores(p)
    p.write_text("frame,score\n15,x\n")
    with pytest.raises(ParseError):
        dataio.read_scores(p)


@pytest.fixture(scope="module")
def small_model():
    scenes = tiny_scenes(4, 0)
    return train(ModelDescriptor("stgae"), scenes, scenes[:1], seed=0, epochs=1, batch_size=8), scenes


def test_checkpoint_round_trip(tmp_path, small_model):
    model, scenes = small_model
    p = tmp_path / "m.ckpt"
    dataio.save_model(model, p)
    back = dataio.load_model(p, "stgae")
    sa, sb = model.network.state_dict(), back.network.state_dict()
    assert sa.keys() == sb.keys()
    assert max(float(np.max(np.abs(sa[k] - sb[k]))) for k in sa) == 0.0
    assert back.norm == model.norm and back.best_epoch == model.best_epoch
    assert np.array_equal(score_scene(model, scenes[0]).scores, score_scene(back, scenes[0]).scores)
    assert dataio.checkpoint_architecture(p) == "stgae"


def test_checkpoint_errors(tmp_path, small_model):
    model, _ = small_model
    p = tmp_path / "m.ckpt"
    dataio.save_model(model, p)
    with pytest.raises(ArchitectureMismatch):
        dataio.load_model(p, "seq2seq")
    raw = p.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ParseError):
        dataio.load_model(tmp_path / "trunc.ckpt")
    (tmp_path / "tail.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(ParseError):
        dataio.load_model(tmp_path / "tail.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(VersionMismatch):
        dataio.load_model(tmp_path / "magic.ckpt")
    with pytest.raises(IoFailure):
        dataio.load_model(tmp_path / "absent.ckpt")


def test_checkpoint_version_mismatch(tmp_path):
    p = tmp_path / "v.ckpt"
    dataio.write_checkpoint(p, {"architecture": "seq2seq"}, {})
    raw = p.read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
    p.write_bytes(raw)
    with pytest.raises(VersionMismatch):
        dataio.read_checkpoint(p)


def test_ocsvm_checkpoint_round_trip(tmp_path, small_model, rng):
    model, scenes = small_model
    feats = rng.normal(size=(30, model.descriptor.latent))
    det = OcSvmDetector(model, fit_ocsvm(feats, 0.1, 0.2))
    p = tmp_path / "oc.ckpt"
    dataio.save_ocsvm(det, p)
    back = dataio.load_ocsvm(p)
    assert np.array_equal(back.svm.support_vectors, det.svm.support_vectors)
    assert back.svm.rho == det.svm.rho
    assert np.array_equal(score_scene(det, scenes[1]).scores, score_scene(back, scenes[1]).scores)
    with pytest.raises(ArchitectureMismatch):
        dataio.load_model(p)
