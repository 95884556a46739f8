import copy
import json

import numpy as np
import pytest

from crossloc import se3
from crossloc.estimators import CrossLocalizer
from crossloc.exceptions import ConfigError
from crossloc.sim import SimFrontEnd, generate, inject_odometry_noise, load_scenario, make_frames, save_scenario
from crossloc.sim.scenario import dumps, loads
from crossloc.sim.sensing import odometry_sigmas
from crossloc.se3 import Pose


def test_noise_limits(rng):
    T = se3.exp_map([1.0, 0.2, 0, 0, 0, 0.3])
    assert inject_odometry_noise(T, np.inf, rng).allclose(T, atol=0)
    assert inject_odometry_noise(T, None, rng).allclose(T, atol=0)
    assert inject_odometry_noise(Pose(), 0.5, rng).allclose(Pose(), atol=0)
    with pytest.raises(ValueError):
        inject_odometry_noise(T, 0.0, rng)


def test_noise_sigmas():
    st, sr = odometry_sigmas(Pose.from_xyz_yaw(3.0, 4.0, 0, 0.6), 2.0)
    assert st == pytest.approx(5 / (2 * np.sqrt(3))) and sr == pytest.approx(0.6 / (2 * np.sqrt(3)))
    # pure translation leaves the rotation axes noiseless
    assert odometry_sigmas(Pose(None, [1, 0, 0]), 1.0)[1] == 0.0


def test_noise_energy_identity():
    # E|d rho|^2 = 3 sigma_t^2 with |t| = 1, snr = 1
    rng = np.random.default_rng(7)
    T = Pose(None, [1.0, 0, 0])
    d = np.array([se3.log_map(T.inverse() @ inject_odometry_noise(T, 1.0, rng))[:3] for _ in range(20_000)])
    ratio = np.mean(np.sum(d**2, axis=1)) / (3 * (1 / 3))
    assert 0.96 < ratio < 1.04


def test_generate_is_deterministic():
    a, b = generate("alias_corridor", 4), generate("alias_corridor", 4)
    assert dumps(a) == dumps(b)
    assert dumps(generate("loop", 1)) != dumps(generate("loop", 2))
    with pytest.raises(ConfigError):
        generate("nope", 0)
    with pytest.raises(ConfigError):
        generate("loop", 0, bogus=1)


def test_scenario_roundtrip(tmp_path):
    sc = generate("kidnap", 3)
    save_scenario(sc, tmp_path / "w.json")
    back = load_scenario(tmp_path / "w.json")
    assert dumps(back) == dumps(sc)
    d = json.loads(dumps(sc))
    d["places"][0]["descriptor"][0] += 0.5
    with pytest.raises(ConfigError):
        loads(json.dumps(d))


def test_frames_reproducible_and_flagged():
    sc = generate("kidnap", 5)
    f1, f2 = make_frames(sc, 1), make_frames(sc, 1)
    assert all(a.odometry.allclose(b.odometry, atol=0) for a, b in zip(f1, f2))
    kid = next(e for e in sc.events if e.kind == "kidnap").step
    assert f1[kid].kidnapped and f1[kid].odometry.allclose(Pose(), atol=0)
    # the teleport shows as a jump in truth only
    jump = np.linalg.norm(f1[kid].true_pose.translation - f1[kid - 1].true_pose.translation)
    assert jump > 5.0


def _mapped(sc):
    est = CrossLocalizer(front_end=SimFrontEnd(sc))
    est.fit([make_frames(sc, k) for k, s in enumerate(sc.sessions) if s.mode == "map"])
    return est


def test_occlusion_gives_no_candidates():
    sc = generate("kidnap", 2)
    est = _mapped(sc)
    fe = est.front_end
    frames = make_frames(sc, 1)
    occ = next(e for e in sc.events if e.kind == "occlude")
    for f in frames[occ.step : occ.step + occ.duration]:
        assert f.occluded and fe.observe(f, est.graph_).candidates == []
    assert fe.observe(frames[0], est.graph_).candidates


def test_alias_twin_retrieved():
    sc = generate("alias_corridor", 0)
    est = _mapped(sc)
    fe = est.front_end
    q = sc.query_sessions()[0]
    frame = make_frames(sc, q)[5]
    obs = fe.observe(frame, est.graph_)
    y = frame.true_pose.translation[1]
    far = [c for c in obs.candidates if abs(est.graph_.node(c.node_id).meta["y"].translation[1] - y) > 15]
    near = [c for c in obs.candidates if c not in far]
    assert far and near
    assert max(c.vpr_score for c in far) > 0.5 * max(c.vpr_score for c in near)


def test_top_candidate_is_nearest_without_noise():
    sc = generate("loop", 0, query_shift=0.0)
    sc.noise.outlier_rate = 0.0
    est = _mapped(sc)
    fe = est.front_end
    for f in make_frames(sc, 1)[::10]:
        obs = fe.observe(f, est.graph_)
        top = obs.candidates[0].node_id
        d = [np.linalg.norm(n.meta["y"].translation - f.true_pose.translation) for n in est.graph_.nodes]
        assert top == int(np.argmin(d))


def test_noise_free_closed_loop():
    sc = generate("loop", 0, query_shift=0.0, query_start_known=True)
    sc.sessions[1] = copy.deepcopy(sc.sessions[0])
    sc.sessions[1].mode = "query"
    sc.noise.rel_pose_sigma = [1e-7, 1e-7]
    sc.noise.outlier_rate = 0.0
    est = _mapped(sc)
    frames = make_frames(sc, 1)
    P = est.predict(frames, start_known=True)
    truth = np.array([f.true_pose.translation for f in frames])
    assert np.abs(P - truth).max() < 1e-3


def test_full_shift_is_prediction_only():
    sc = generate("loop", 0, query_shift=1.0, query_start_known=True)
    est = _mapped(sc)
    fe = est.front_end
    for f in make_frames(sc, 1)[:40]:
        assert all(c.vpr_score < est.beta for c in fe.observe(f, est.graph_).candidates)
