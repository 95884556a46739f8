"""Gaussian mixtures on SE(3) and the motion-message prediction step.

A :class:`BeliefMixture` stores its components as stacked arrays (rotations,
translations, covariances, weights, ids) because every hot-path operation is
vectorised over components. :class:`GaussianComponent` is the per-component
view used by the scalar API and by tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import se3
from .exceptions import AngleNearPi, ZeroMass
from .se3 import Pose

log = logging.getLogger(__name__)

K_MAX = 5
JITTER = 1e-12
ZERO_MASS = 1e-300
SMALL_INCREMENT = 0.05
# merges of components further apart than this (rad) are flagged as lossy
LOSSY_MERGE_ANGLE = 0.5

_LOG2PI6 = 6.0 * np.log(2.0 * np.pi)


def regularize(cov):
    """Symmetrise and add ``JITTER * I`` where the smallest eigenvalue is tiny.

    Works on a single 6x6 matrix or a stack.
    """
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    ev = np.linalg.eigvalsh(cov)
    low = ev[..., 0] < JITTER
    if np.any(low):
        cov = cov + np.where(low[..., None, None], JITTER * np.eye(6), 0.0)
    return cov


@dataclass
class GaussianComponent:
    mean: Pose
    cov: np.ndarray
    weight: float = 1.0
    hyp_id: int = 0

    def copy(self):
        return GaussianComponent(self.mean.copy(), self.cov.copy(), float(self.weight), int(self.hyp_id))


@dataclass
class BeliefMixture:
    """Weighted set of right-chart Gaussians.

    ``source`` is optional per-component provenance (an integer tag); the
    measurement message uses it to remember which candidate produced a
    component.
    """

    R: np.ndarray
    t: np.ndarray
    covs: np.ndarray
    weights: np.ndarray
    ids: np.ndarray
    source: np.ndarray | None = field(default=None)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros((0, 6, 6)), np.zeros(0), np.zeros(0, dtype=int))

    @classmethod
    def from_components(cls, comps, source=None):
        if len(comps) == 0:
            return cls.empty()
        R, t = se3.stack([c.mean for c in comps])
        covs = np.stack([np.asarray(c.cov, dtype=float) for c in comps])
        w = np.array([c.weight for c in comps], dtype=float)
        ids = np.array([c.hyp_id for c in comps], dtype=int)
        return cls(R, t, covs, w, ids, None if source is None else np.asarray(source, dtype=int))

    @classmethod
    def single(cls, mean, cov, hyp_id=0):
        return cls.from_components([GaussianComponent(mean, np.asarray(cov, dtype=float), 1.0, hyp_id)])

    def __len__(self):
        return len(self.weights)

    def component(self, k):
        return GaussianComponent(
            Pose(self.R[k].copy(), self.t[k].copy()), self.covs[k].copy(), float(self.weights[k]), int(self.ids[k])
        )

    @property
    def components(self):
        return [self.component(k) for k in range(len(self))]

    def __iter__(self):
        return iter(self.components)

    def index_of(self, hyp_id):
        hit = np.flatnonzero(self.ids == hyp_id)
        return int(hit[0]) if len(hit) else None

    def dominant(self):
        """Index of the highest-weight component (lowest index on ties)."""
        if len(self) == 0:
            return None
        return int(np.argmax(self.weights))

    def mean_of(self, k):
        return Pose(self.R[k].copy(), self.t[k].copy())

    def take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return BeliefMixture(
            self.R[idx],
            self.t[idx],
            self.covs[idx],
            self.weights[idx],
            self.ids[idx],
            None if self.source is None else self.source[idx],
        )

    def copy(self):
        return BeliefMixture(
            self.R.copy(),
            self.t.copy(),
            self.covs.copy(),
            self.weights.copy(),
            self.ids.copy(),
            None if self.source is None else self.source.copy(),
        )

    def with_weights(self, w):
        out = self.copy()
        out.weights = np.asarray(w, dtype=float).copy()
        return out


def normalize(m):
    total = float(np.sum(m.weights))
    if not total > ZERO_MASS:
        raise ZeroMass(f"mixture mass {total!r}")
    return m.with_weights(m.weights / total)


def transport_cov(cov, T):
    """``Ad_{T^-1} cov Ad_{T^-1}^T``, symmetrised."""
    return se3.transport_batch(np.asarray(cov, dtype=float), T.rotation, T.translation)


def predict(m, u, Q, small_increment=False):
    """Push every component through the odometry increment ``u``.

    With ``small_increment`` the covariance update collapses to ``cov + Q``
    whenever ``|log u| < SMALL_INCREMENT``.
    """
    Q = np.asarray(Q, dtype=float)
    R, t = se3.compose_batch(m.R, m.t, u.rotation, u.translation)
    if small_increment and np.linalg.norm(se3.log_map(u)) < SMALL_INCREMENT:
        covs = m.covs + Q
    else:
        covs = se3.transport_batch(m.covs, u.rotation, u.translation) + Q
    return BeliefMixture(R, t, covs, m.weights.copy(), m.ids.copy(), m.source)


def log_gaussian(delta, S):
    """log N(delta; 0, S) for a single 6-vector, via Cholesky."""
    L = np.linalg.cholesky(S)
    z = np.linalg.solve(L, delta)
    return -0.5 * (_LOG2PI6 + float(z @ z)) - float(np.sum(np.log(np.diag(L))))


def log_overlap(a, b):
    """log of the Gaussian overlap of two components, ``-inf`` if the chart is invalid."""
    D = a.mean.inverse() @ b.mean
    try:
        delta = se3.log_map(D)
    except AngleNearPi:
        return -np.inf
    S = a.cov + transport_cov(b.cov, D)
    return log_gaussian(delta, S)


def gaussian_overlap(a, b):
    """N(delta; 0, Sa + Sb') with delta = log(a^-1 b); underflow returns 0."""
    return float(np.exp(log_overlap(a, b)))


def moment_match_merge(a, b):
    """Collapse two components into one, in the chart of the heavier one."""
    wa, wb = float(a.weight), float(b.weight)
    if wb == 0.0:
        out = a.copy()
        return out
    if wa == 0.0:
        return b.copy()
    host, other, wh, wo = (a, b, wa, wb) if wa >= wb else (b, a, wb, wa)
    D = host.mean.inverse() @ other.mean
    xi = se3.log_map(D)
    if np.linalg.norm(xi[3:]) > LOSSY_MERGE_ANGLE:
        log.debug("lossy merge: components %.3f rad apart", np.linalg.norm(xi[3:]))
    total = wh + wo
    ah, ao = wh / total, wo / total
    m = ao * xi
    dh = -m
    do = xi - m
    cov = ah * (host.cov + np.outer(dh, dh)) + ao * (transport_cov(other.cov, D) + np.outer(do, do))
    mean = host.mean @ se3.exp_map(m)
    return GaussianComponent(mean, regularize(cov), total, a.hyp_id if wa >= wb else b.hyp_id)


def check_mixture(m, k_max=K_MAX, tol=1e-9):
    """Raise AssertionError if the mixture breaks a hygiene invariant."""
    assert len(m) <= k_max, f"{len(m)} components > {k_max}"
    assert abs(float(np.sum(m.weights)) - 1.0) <= tol, f"weights sum to {np.sum(m.weights)!r}"
    assert np.all(m.weights >= 0)
    assert len(np.unique(m.ids)) == len(m.ids), "duplicate hyp ids"
    if len(m):
        assert np.allclose(m.covs, np.swapaxes(m.covs, -1, -2), atol=1e-12)
        assert np.all(np.linalg.eigvalsh(m.covs)[:, 0] > 0), "non-SPD covariance"
