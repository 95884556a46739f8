import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import spd
from crossloc import se3
from crossloc.belief import BeliefMixture, GaussianComponent, check_mixture, normalize
from crossloc.exceptions import ChartInvalid
from crossloc.hypotheses import (
    HypothesisStore,
    fuse,
    fuse_detail,
    fuse_pairs,
    pair_scores,
    update_step,
)
from crossloc.measurement import ClusterSummary
from crossloc.se3 import Pose


def clus(pose, cov, w=1.0):
    return ClusterSummary(pose, cov, w, [0], set())


def test_fuse_identical(rng):
    S = spd(rng)
    mu = se3.random_pose(rng)
    f = fuse(GaussianComponent(mu, S, 1.0, 4), clus(mu, S))
    assert f.mean.allclose(mu, atol=1e-12) and np.allclose(f.cov, S / 2, atol=1e-14) and f.hyp_id == 4


def test_fuse_scalar_information_filter():
    eps = 1e-10
    cov = np.diag([1.0, 1, 1, eps, eps, eps])
    f = fuse(GaussianComponent(Pose(), cov, 1, 0), clus(Pose(None, [1, 0, 0]), cov))
    assert f.mean.translation[0] == pytest.approx(0.5, abs=1e-8)
    assert f.cov[0, 0] == pytest.approx(0.5, abs=1e-8)


def test_fuse_uninformative_cluster(rng):
    S = spd(rng)
    mu = se3.random_pose(rng)
    f = fuse(GaussianComponent(mu, S, 1, 0), clus(mu @ se3.exp_map([0.5, 0, 0, 0, 0, 0.1]), S * 1e6))
    assert f.mean.allclose(mu, atol=1e-3) and np.allclose(f.cov, S, rtol=1e-3, atol=1e-9)


def test_fuse_chart_invalid():
    a = GaussianComponent(Pose(), np.eye(6), 1, 0)
    with pytest.raises(ChartInvalid):
        fuse_detail(a, clus(se3.exp_map([0, 0, 0, 0, 0, np.pi - 1e-8]), np.eye(6)))


def test_batched_fusion_matches_scalar(rng):
    comps = [GaussianComponent(se3.random_pose(rng), spd(rng, 0.3), w, k) for k, w in enumerate([0.2, 0.5, 0.3])]
    prior = BeliefMixture.from_components(comps)
    cls = [clus(comps[k].mean @ se3.exp_map(rng.normal(scale=0.2, size=6)), spd(rng, 0.3), 0.5) for k in range(2)]
    logc, m2, delta, Sc = pair_scores(prior, cls, details=True)
    for i in range(3):
        for c in range(2):
            f, lc, mm = fuse_detail(comps[i], cls[c])
            assert lc == pytest.approx(logc[i, c], rel=1e-9) and mm == pytest.approx(m2[i, c], rel=1e-9)
            R, t, S = fuse_pairs(prior, np.array([i]), delta[i, c][None], Sc[i, c][None])
            assert np.allclose(R[0], f.mean.rotation, atol=1e-12) and np.allclose(t[0], f.mean.translation, atol=1e-12)
            assert np.allclose(S[0], f.cov, atol=1e-14)


def test_update_no_clusters(rng):
    prior = BeliefMixture.single(se3.random_pose(rng), spd(rng))
    post, ev = update_step(prior, [])
    assert np.array_equal(post.t, prior.t) and np.array_equal(post.covs, prior.covs)
    assert not ev.births and not ev.matched


def test_update_coincident_cluster(rng):
    mu, S = se3.random_pose(rng), spd(rng)
    post, ev = update_step(BeliefMixture.single(mu, S, 3), [clus(mu, S)], next_id=4)
    assert len(post) == 1 and post.weights[0] == 1.0 and post.ids[0] == 3
    assert ev.matched == {3: 0} and not ev.births


def test_restart_kernel_weights():
    S = np.eye(6) * 0.01
    prior = BeliefMixture.single(Pose(), S)
    far = [clus(Pose(None, [100, 0, 0]), S)]
    # restart kernel alone: (1 - eps, eps)
    post, ev = update_step(prior, far, eps_birth=0.05, next_id=1, miss_factor=1.0)
    assert np.allclose(post.weights, [0.95, 0.05]) and list(post.ids) == [0, 1] and ev.births == {1: 0}
    # default: the unmatched component also loses half its mass
    post, _ = update_step(prior, far, eps_birth=0.05, next_id=1)
    assert np.allclose(post.weights, [0.475 / 0.525, 0.05 / 0.525])


def test_lost_start_births_all(rng):
    cls = [clus(se3.random_pose(rng, 10), spd(rng), w) for w in (0.7, 0.3)]
    post, ev = update_step(BeliefMixture.empty(), cls, next_id=5)
    assert list(post.ids) == [5, 6] and np.allclose(post.weights, [0.7, 0.3])


def test_no_birth_when_all_overlap(rng):
    comps = [GaussianComponent(Pose(None, [10 * k, 0, 0]), np.eye(6) * 0.05, 0.5, k) for k in range(2)]
    prior = BeliefMixture.from_components(comps)
    cls = [clus(Pose(None, [10 * k + 0.1, 0, 0]), np.eye(6) * 0.05, 0.5) for k in range(2)]
    post, ev = update_step(prior, cls, next_id=2)
    assert not ev.births and ev.matched == {0: 0, 1: 1}


def test_truncation_to_k_max(rng):
    cls = [clus(Pose(None, [20.0 * k, 0, 0]), np.eye(6) * 0.01, 1 / 8) for k in range(8)]
    post, ev = update_step(BeliefMixture.empty(), cls, next_id=0)
    assert len(post) == 5 and len(ev.pruned) == 3 and set(ev.births) == set(post.ids.tolist())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_update_hygiene(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(0, 6))
    comps = [GaussianComponent(se3.random_pose(rng, 5), spd(rng, 0.3), w, k) for k, w in enumerate(rng.uniform(0.05, 1, K))]
    prior = normalize(BeliefMixture.from_components(comps)) if K else BeliefMixture.empty()
    C = int(rng.integers(1, 6))
    ws = rng.uniform(0.05, 1, C)
    ws /= ws.sum()
    cls = []
    for c in range(C):
        base = comps[rng.integers(K)].mean if K and rng.random() < 0.6 else se3.random_pose(rng, 5)
        cls.append(clus(base @ se3.exp_map(rng.normal(scale=0.2, size=6)), spd(rng, 0.3), ws[c]))
    post, ev = update_step(prior, cls, next_id=10)
    check_mixture(post)
    old = set(prior.ids.tolist())
    for hid in post.ids.tolist():
        assert hid in old or hid in ev.births
    assert all(h >= 10 for h in ev.births)


def test_store_bookkeeping(rng):
    store = HypothesisStore()
    m = BeliefMixture.single(Pose(), np.eye(6) * 0.01, 0)
    store.bookkeep(m, 0)
    assert len(store.live[0].trajectory) == 1
    m2 = BeliefMixture.from_components(
        [GaussianComponent(Pose(), np.eye(6) * 0.01, 0.9, 0), GaussianComponent(Pose(None, [9, 0, 0]), np.eye(6), 0.1, 1)]
    )
    store.bookkeep(m2, 1)
    assert len(store.live[0].trajectory) == 2 and len(store.live[1].trajectory) == 1 and store.next_id == 2
    store.bookkeep(m2.take([0]), 2)
    assert 1 not in store.live and store.archive[0].id == 1 and store.archive[0].death_time == 2
    assert store.archive[0].weight == pytest.approx(0.1)
