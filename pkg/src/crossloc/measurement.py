"""Global measurement message and its reduction by SE(3)-aware DBSCAN."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import se3
from .belief import BeliefMixture, normalize, regularize
from .exceptions import EmptyCandidates
from .se3 import Pose

INLIER_FLOOR = 8
DEFAULT_EPS = 1.0
DEFAULT_MIN_PTS = 1
DEFAULT_W = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
MIN_CLUSTER_WEIGHT = 1e-3
REL_COV = np.diag([0.05**2] * 3 + [0.02**2] * 3)


@dataclass
class MeasurementCandidate:
    node_id: int
    vpr_score: float
    inliers: int
    max_features: int
    rel_pose: Pose
    rel_cov: np.ndarray = field(default_factory=lambda: REL_COV.copy())

    def __post_init__(self):
        if self.inliers > self.max_features:
            raise ValueError(f"inliers {self.inliers} exceed max_features {self.max_features}")


@dataclass
class ClusterSummary:
    mean: Pose
    cov: np.ndarray
    weight: float
    members: list
    source_nodes: set


def filter_candidates(cands, floor=INLIER_FLOOR):
    """Drop candidates whose inlier count is below the RANSAC-style floor."""
    return [c for c in cands if c.inliers >= floor]


def association_probs(cands, temperature=1.0):
    """softmax over candidates of ``score * inliers / M``."""
    if len(cands) == 0:
        raise EmptyCandidates("no candidates")
    s = np.array([c.vpr_score * c.inliers / c.max_features for c in cands]) / temperature
    s = np.exp(s - s.max())
    return s / s.sum()


def build_measurement_message(cands, probs, graph):
    """Push every node component through its candidate's relative pose.

    ``source`` on the returned mixture holds the candidate index of each
    component; ``ids`` are simply 0..N-1.
    """
    rows = [(i, graph.node(c.node_id).pose_mixture) for i, (c, p) in enumerate(zip(cands, probs)) if p > 0.0]
    if not rows:
        raise EmptyCandidates("all candidates carry zero probability")
    mixes = [m for _, m in rows]
    src = np.concatenate([np.full(len(m), i) for i, m in rows])
    Rn = np.concatenate([m.R for m in mixes])
    tn = np.concatenate([m.t for m in mixes])
    cn = np.concatenate([m.covs for m in mixes])
    RT = np.stack([c.rel_pose.rotation for c in cands])[src]
    tT = np.stack([c.rel_pose.translation for c in cands])[src]
    rel_cov = np.stack([c.rel_cov for c in cands])[src]
    R, t = se3.compose_batch(Rn, tn, RT, tT)
    covs = se3.transport_batch(cn, RT, tT) + rel_cov
    w = np.asarray(probs, dtype=float)[src] * np.concatenate([m.weights for m in mixes])
    keep = w > 0
    if not keep.any():
        raise EmptyCandidates("all candidates carry zero probability")
    msg = BeliefMixture(R[keep], t[keep], covs[keep], w[keep], np.arange(int(keep.sum())), src[keep])
    return normalize(msg)


def pairwise_distance(R, t, W=DEFAULT_W, return_logs=False):
    """Weighted SE(3) distances between all pairs; chart failures map to inf.

    With ``return_logs`` also returns the raw ``log(a^-1 b)`` array.
    """
    xi = se3.pairwise_log(R, t, strict=False)
    W = np.asarray(W, dtype=float)
    d = np.linalg.norm(xi * (np.diag(W) if W.ndim == 2 else W), axis=-1)
    d = np.where(np.isnan(d), np.inf, d)
    # log(a^-1 b) = -log(b^-1 a) analytically; enforce it numerically
    d = np.minimum(d, d.T)
    return (d, xi) if return_logs else d


def dbscan(D, eps, min_pts):
    """Plain DBSCAN on a precomputed distance matrix.

    Points are visited in index order, so labels are deterministic. A point
    is core when it has at least ``min_pts`` neighbours counting itself.
    Noise is labelled -1.
    """
    n = len(D)
    nbrs = D <= eps
    core = nbrs.sum(axis=1) >= min_pts
    labels = np.full(n, -1)
    cur = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cur
        stack = [i]
        while stack:
            p = stack.pop()
            if not core[p]:
                continue
            for q in np.flatnonzero(nbrs[p]):
                if labels[q] == -1:
                    labels[q] = cur
                    stack.append(q)
        cur += 1
    return labels


def cluster_measurements(
    msg,
    eps=DEFAULT_EPS,
    min_pts=DEFAULT_MIN_PTS,
    W=DEFAULT_W,
    k_max=5,
    min_weight=MIN_CLUSTER_WEIGHT,
    node_of_source=None,
):
    """Reduce a message to at most ``k_max`` cluster summaries.

    Noise points become singleton clusters. ``node_of_source`` maps the
    message's ``source`` tags to map-node ids for ``source_nodes``.
    """
    n = len(msg)
    if n == 0:
        return []
    D, xi_pairs = pairwise_distance(msg.R, msg.t, W, return_logs=True)
    labels = dbscan(D, eps, min_pts)
    nxt = labels.max() + 1
    for i in np.flatnonzero(labels == -1):
        labels[i] = nxt
        nxt += 1
    alpha = msg.weights
    beta = np.bincount(labels, weights=alpha, minlength=nxt)
    counts = np.bincount(labels, minlength=nxt)
    Rc, tc, _, conv = se3.frechet_mean_groups(msg.R, msg.t, alpha, labels, pair_logs=xi_pairs)
    for g in np.flatnonzero(~conv):
        # pathological spread: fall back to the heaviest member
        idx = np.flatnonzero(labels == g)
        k = idx[int(np.argmax(alpha[idx]))]
        Rc[g], tc[g] = msg.R[k], msg.t[k]
    # spread covariance: transport every member into its cluster's chart
    Rr, tr = se3.between_batch(Rc[labels], tc[labels], msg.R, msg.t)
    xi = np.nan_to_num(se3.rel_log(Rc[labels], tc[labels], msg.R, msg.t, strict=False))
    covs = se3.transport_batch(msg.covs, Rr, tr)
    terms = alpha[:, None, None] * (covs + xi[:, :, None] * xi[:, None, :])
    cov_sum = np.zeros((nxt, 6, 6))
    np.add.at(cov_sum, labels, terms)
    single = counts == 1
    cov_all = cov_sum / np.where(beta > 0.0, beta, 1.0)[:, None, None]
    # a singleton keeps its member covariance exactly
    lone = np.flatnonzero(single[labels])
    cov_all[labels[lone]] = msg.covs[lone]
    cov_all = regularize(cov_all)
    out = []
    for lab in range(nxt):
        if beta[lab] <= 0.0:
            continue
        idx = np.flatnonzero(labels == lab)
        cov = cov_all[lab]
        src = set()
        if msg.source is not None:
            tags = msg.source[idx]
            src = {int(node_of_source[s]) if node_of_source is not None else int(s) for s in tags}
        out.append(ClusterSummary(Pose(Rc[lab].copy(), tc[lab].copy()), cov, float(beta[lab]), [int(i) for i in idx], src))
    total = sum(c.weight for c in out)
    for c in out:
        c.weight /= total
    # heaviest first, earliest member breaks ties
    out.sort(key=lambda c: (-c.weight, c.members[0]))
    kept = [c for c in out[:k_max] if c.weight > min_weight]
    total = sum(c.weight for c in kept)
    for c in kept:
        c.weight /= total
    return kept
