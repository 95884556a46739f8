import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from crossloc.engine import CrossFilter
from crossloc.estimators import CrossLocalizer
from crossloc.sim import SimFrontEnd, generate, make_frames


@pytest.fixture(scope="module")
def loop_fit():
    sc = generate("loop", 3, query_start_known=True)
    est = CrossLocalizer(front_end=SimFrontEnd(sc)).fit([make_frames(sc, 0)])
    return sc, est


def test_params_roundtrip():
    est = CrossLocalizer(beta=0.4, window=8, accept=5)
    p = est.get_params()
    assert p["beta"] == 0.4 and p["window"] == 8
    c = clone(est)
    assert c.get_params()["accept"] == 5 and not hasattr(c, "graph_")


@pytest.mark.parametrize("kw", [{"eps_birth": 0.0}, {"beta": 1.5}, {"accept": 11}, {"k_max": 0}, {"cluster_eps": -1.0}])
def test_bad_params(kw):
    sc = generate("loop", 0)
    with pytest.raises(ValueError):
        CrossLocalizer(front_end=SimFrontEnd(sc), **kw).fit([make_frames(sc, 0)])


def test_requires_front_end():
    with pytest.raises(ValueError):
        CrossLocalizer().fit([[]])


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CrossLocalizer().predict([])


def test_fit_builds_map(loop_fit):
    sc, est = loop_fit
    assert est.n_nodes_ > 20
    kinds = {e.kind for e in est.graph_.edges}
    assert "odometry" in kinds
    # a session's odometry edges form a simple path in creation order
    odo = [(e.src, e.dst) for e in est.graph_.edges if e.kind == "odometry"]
    assert all(b == a + 1 for a, b in odo)


def test_predict_tracks_known_start(loop_fit):
    sc, est = loop_fit
    frames = make_frames(sc, 1)
    P = est.predict(frames, start_known=True)
    truth = np.array([f.true_pose.translation for f in frames])
    err = np.linalg.norm(P - truth, axis=1)
    assert P.shape == (len(frames), 3) and np.median(err) < 0.3 and err[-1] < sc.eval.r_d
    assert est.n_nodes_ == len(est.graph_)  # queries never add nodes


def test_lost_start_relocalises(loop_fit):
    sc, est = loop_fit
    frames = make_frames(sc, 1)
    P = est.predict(frames, start_known=False)
    assert np.isnan(P[0]).all() or np.isfinite(P[0]).all()
    truth = np.array([f.true_pose.translation for f in frames])
    assert np.linalg.norm(P[-1] - truth[-1]) < sc.eval.r_d


def test_kidnap_merge_conserves_weight():
    sc = generate("kidnap", 0)
    est = CrossLocalizer(front_end=SimFrontEnd(sc)).fit([make_frames(sc, 0)])
    frames = make_frames(sc, 1)
    est.start_session(frames[0].true_pose)
    merged = 0
    for f in frames:
        before = dict(zip(est.belief().ids.tolist(), est.belief().weights.tolist()))
        info, _ = est.process(f)
        if info.merged is not None:
            merged += 1
            assert abs(est.belief().weights.sum() - 1.0) < 1e-12
            assert 0 in est.belief().ids.tolist() and info.merged not in est.belief().ids.tolist()
        assert len(est.hypotheses()) == len(est.belief())
    assert merged >= 1
    assert est.filter_.closer.log_text().count("merged") == merged


def test_empty_step_is_prediction_only():
    f = CrossFilter()
    info = f.step(0, None, None, [])
    assert info.n_hyp == 0 and info.estimate is None
