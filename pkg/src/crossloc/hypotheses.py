"""Fusion of motion and clustered measurement messages; hypothesis lifecycle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import se3
from .belief import K_MAX, BeliefMixture, GaussianComponent, normalize, regularize, transport_cov
from .exceptions import AngleNearPi, ChartInvalid
from .se3 import Pose

EPS_BIRTH = 0.05
MISS_FACTOR = 0.5
PRUNE_WEIGHT = 1e-3
# chi-square(6) 0.9999 quantile; pairs further apart than this never fuse
GATE = 27.856

_LOG2PI6 = 6.0 * np.log(2.0 * np.pi)


@dataclass
class VisualConstraint:
    step: int
    node_from: int | None  # map node created at this step, if any
    node_to: int  # matched map node
    rel_pose: Pose
    cov: np.ndarray


@dataclass
class Hypothesis:
    id: int
    trajectory: list = field(default_factory=list)
    traj_covs: list = field(default_factory=list)
    weight: float = 0.0
    visual_constraints: list = field(default_factory=list)
    birth_time: int = 0
    steps: list = field(default_factory=list)
    # odometry[k] links trajectory[k-1] -> trajectory[k]; None for the first entry
    odometry: list = field(default_factory=list)
    death_time: int | None = None

    @property
    def alive(self):
        return self.death_time is None

    def pose_at(self, step):
        k = self.steps.index(step)
        return self.trajectory[k]


def fuse_detail(mot, clus):
    """Information-form product of a motion component and a cluster.

    Returns ``(component, log_overlap, mahalanobis_sq)``; the component's
    weight is ``mot.weight * clus.weight * overlap``.
    """
    D = mot.mean.inverse() @ clus.mean
    try:
        delta = se3.log_map(D)
    except AngleNearPi as exc:
        raise ChartInvalid(str(exc)) from exc
    Sc = transport_cov(clus.cov, D)
    Pc = np.linalg.inv(Sc)
    Sf = np.linalg.inv(np.linalg.inv(mot.cov) + Pc)
    Sf = regularize(Sf)
    mean = mot.mean @ se3.exp_map(Sf @ Pc @ delta)
    S = mot.cov + Sc
    L = np.linalg.cholesky(S)
    z = np.linalg.solve(L, delta)
    m2 = float(z @ z)
    logc = -0.5 * (_LOG2PI6 + m2) - float(np.sum(np.log(np.diag(L))))
    w = float(mot.weight) * float(clus.weight) * float(np.exp(logc))
    return GaussianComponent(mean, Sf, w, mot.hyp_id), logc, m2


def fuse(mot, clus):
    return fuse_detail(mot, clus)[0]


def pair_scores(prior, clusters, details=False):
    """Vectorised log-overlap and Mahalanobis^2 for every (component, cluster) pair.

    Chart failures give ``-inf`` / ``inf``. With ``details`` also returns the
    chart offsets ``delta`` and transported cluster covariances, both shaped
    ``(K, C, ...)``, for :func:`fuse_pairs`.
    """
    return _pair_scores(prior, *_stack_clusters(clusters), details=details)


def _stack_clusters(clusters):
    Rc = np.stack([c.mean.rotation for c in clusters])
    tc = np.stack([c.mean.translation for c in clusters])
    covc = np.stack([c.cov for c in clusters])
    return Rc, tc, covc


def _pair_scores(prior, Rc, tc, covc, details=False):
    K, C = len(prior), len(Rc)
    Rr, tr = se3.between_batch(prior.R[:, None], prior.t[:, None], Rc[None], tc[None])
    Rr = Rr.reshape(-1, 3, 3)
    tr = tr.reshape(-1, 3)
    delta = se3.rel_log(prior.R[:, None], prior.t[:, None], Rc[None], tc[None], strict=False)
    bad = np.isnan(delta).any(axis=1)
    delta = np.nan_to_num(delta)
    Sc = se3.transport_batch(np.broadcast_to(covc[None], (K, C, 6, 6)).reshape(-1, 6, 6), Rr, tr)
    S = np.broadcast_to(prior.covs[:, None], (K, C, 6, 6)).reshape(-1, 6, 6) + Sc
    L = np.linalg.cholesky(S)
    z = np.linalg.solve(L, delta[..., None])[..., 0]
    m2 = np.einsum("ni,ni->n", z, z)
    logdet = np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    logc = -0.5 * (_LOG2PI6 + m2) - logdet
    logc = np.where(bad, -np.inf, logc)
    m2 = np.where(bad, np.inf, m2)
    if details:
        return logc.reshape(K, C), m2.reshape(K, C), delta.reshape(K, C, 6), Sc.reshape(K, C, 6, 6)
    return logc.reshape(K, C), m2.reshape(K, C)


def fuse_pairs(prior, ii, delta, Sc):
    """Batched :func:`fuse_detail` means and covariances for prior rows ``ii``.

    ``delta`` and ``Sc`` are the chart offsets and transported cluster
    covariances of the chosen pairs. Returns ``(R, t, covs)``.
    """
    Pc = np.linalg.inv(Sc)
    Sf = regularize(np.linalg.inv(np.linalg.inv(prior.covs[ii]) + Pc))
    step = np.einsum("nij,njk,nk->ni", Sf, Pc, delta)
    R, t = se3.right_exp(prior.R[ii], prior.t[ii], step)
    return R, t, Sf


@dataclass
class UpdateEvents:
    matched: dict = field(default_factory=dict)  # hyp_id -> cluster index
    births: dict = field(default_factory=dict)  # hyp_id -> cluster index
    unmatched: list = field(default_factory=list)
    pruned: list = field(default_factory=list)


def update_step(
    prior,
    clusters,
    eps_birth=EPS_BIRTH,
    next_id=0,
    miss_factor=MISS_FACTOR,
    gate=GATE,
    prune=PRUNE_WEIGHT,
    k_max=K_MAX,
):
    """One measurement update of the mixture with the restart kernel.

    Returns ``(posterior, events)``. Newly born components get ids starting
    at ``next_id`` in decreasing cluster-weight order.
    """
    ev = UpdateEvents()
    if len(clusters) == 0:
        return prior.copy(), ev
    wbar = np.array([c.weight for c in clusters], dtype=float)
    Rc, tc, covc = _stack_clusters(clusters)
    K, C = len(prior), len(clusters)
    if K == 0:
        # lost start: every cluster is a birth, mass proportional to its weight
        R, t, covs, w = Rc.copy(), tc.copy(), covc.copy(), wbar.copy()
        ids = next_id + np.arange(C)
        ev.births = {int(next_id + c): c for c in range(C)}
    else:
        logc, m2, delta, Sc = _pair_scores(prior, Rc, tc, covc, details=True)
        with np.errstate(divide="ignore"):
            lw = np.log(prior.weights)[:, None] + np.log(wbar)[None, :] + logc
        top = np.max(lw)
        if np.isfinite(top):
            pn = np.exp(lw - top)
            pn /= pn.sum()
        else:
            pn = np.zeros_like(lw)
        valid = (pn >= prune) & (m2 <= gate)
        # greedy one-to-one assignment by descending overlap, index tie-break
        vi, vc = np.nonzero(valid)
        order = np.lexsort((vc, vi, -logc[vi, vc]))
        used_i, used_c, pairs = set(), set(), []
        for n in order:
            i, c = int(vi[n]), int(vc[n])
            if i in used_i or c in used_c:
                continue
            used_i.add(i)
            used_c.add(c)
            pairs.append((i, c))
        pairs.sort()
        R, t, covs, ids = prior.R.copy(), prior.t.copy(), prior.covs.copy(), prior.ids.copy()
        w = (1.0 - eps_birth) * prior.weights * miss_factor
        if pairs:
            pi = np.array([i for i, _ in pairs])
            pc = np.array([c for _, c in pairs])
            matched_mass = (1.0 - eps_birth) * float(prior.weights[pi].sum())
            plw = lw[pi, pc]
            share = np.exp(plw - plw.max())
            w[pi] = share / share.sum() * matched_mass
            R[pi], t[pi], covs[pi] = fuse_pairs(prior, pi, delta[pi, pc], Sc[pi, pc])
            ev.matched = {int(ids[i]): c for i, c in pairs}
        ev.unmatched = [int(ids[i]) for i in range(K) if i not in used_i]
        born = np.flatnonzero(~valid.any(axis=0))
        if len(born):
            R = np.concatenate([R, Rc[born]])
            t = np.concatenate([t, tc[born]])
            covs = np.concatenate([covs, covc[born]])
            w = np.concatenate([w, eps_birth * wbar[born]])
            ids = np.concatenate([ids, next_id + np.arange(len(born))])
            ev.births = {int(next_id + n): int(c) for n, c in enumerate(born)}
    post = normalize(BeliefMixture(R, t, covs, w, ids.astype(int)))
    # prune, truncate, renormalise
    keep = np.flatnonzero(post.weights >= prune)
    if len(keep) > k_max:
        order = sorted(keep, key=lambda k: (-post.weights[k], k))
        keep = np.array(sorted(order[:k_max]))
    dropped = sorted(set(range(len(post))) - set(int(k) for k in keep))
    ev.pruned = [int(post.ids[k]) for k in dropped]
    for k in dropped:
        hid = int(post.ids[k])
        ev.births.pop(hid, None)
        ev.matched.pop(hid, None)
    post = normalize(post.take(keep))
    post.covs = regularize(post.covs)
    return post, ev


class HypothesisStore:
    """Live and archived hypotheses keyed by component id."""

    def __init__(self):
        self.live = {}
        self.archive = []
        self.next_id = 0

    def reset(self):
        self.__init__()

    def ids(self):
        return sorted(self.live)

    def weights(self):
        return {l: h.weight for l, h in self.live.items()}

    def bookkeep(self, posterior, step, events=None, odometry=None, constraints=None):
        """Sync the store with ``posterior`` after an update.

        ``odometry`` is the ``(u, Q)`` applied during prediction this step,
        ``constraints`` maps a hyp id to the visual constraints it gained.
        """
        constraints = constraints or {}
        seen = set()
        for k in range(len(posterior)):
            hid = int(posterior.ids[k])
            seen.add(hid)
            mean = posterior.mean_of(k)
            cov = posterior.covs[k].copy()
            h = self.live.get(hid)
            if h is None:
                h = Hypothesis(id=hid, birth_time=step)
                self.live[hid] = h
                h.odometry.append(None)
            else:
                h.odometry.append(odometry)
            h.trajectory.append(mean)
            h.traj_covs.append(cov)
            h.steps.append(step)
            h.weight = float(posterior.weights[k])
            h.visual_constraints.extend(constraints.get(hid, []))
            self.next_id = max(self.next_id, hid + 1)
        for hid in sorted(set(self.live) - seen):
            h = self.live.pop(hid)
            h.death_time = step
            self.archive.append(h)
        return self.live

    def relabel(self, old, new):
        h = self.live.pop(old)
        h.id = new
        self.live[new] = h
