"""SE(3) / se(3) numerics.

Conventions
-----------
* Twists are flat 6-vectors ordered ``(rho, phi)``: translational part first,
  rotational part second. Every 6x6 covariance in the package uses the same
  ordering.
* Perturbations are applied on the right, ``x = mu @ exp(xi)``, so a
  covariance lives in the tangent space at its own mean.
* ``log`` is restricted to the principal branch; rotations with angle at or
  beyond ``pi - 1e-6`` raise :class:`AngleNearPi` (or map to NaN in the
  non-strict batch variants).

Most functions come in two flavours: a scalar one taking :class:`Pose` and a
``*_batch`` one operating on stacked ``(N, 3, 3)`` rotations and ``(N, 3)``
translations. The filter hot path uses the batch versions, and a few of
those (``rel_log``, ``right_exp``, ``transport_batch``, ``pairwise_log``)
switch to compiled kernels when numba is importable. Set ``CROSS_NO_JIT=1``
to force the numpy reference code.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .exceptions import AngleNearPi, NoConvergence

try:
    from . import _fast
except ImportError:  # numba missing: numpy paths only
    _fast = None

USE_JIT = _fast is not None and os.environ.get("CROSS_NO_JIT", "") not in ("1", "true", "yes")

SMALL_ANGLE = 1e-8
# coefficient functions switch to Taylor series below this angle
SERIES_ANGLE = 1e-2
PI_CUTOFF = np.pi - 1e-6

_I3 = np.eye(3)


class Pose:
    """Rigid transform with a 3x3 rotation and a translation in meters."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        self.rotation = _I3.copy() if rotation is None else np.asarray(rotation, dtype=float)
        self.translation = (
            np.zeros(3) if translation is None else np.asarray(translation, dtype=float).reshape(3)
        )

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3].copy(), T[:3, 3].copy())

    @classmethod
    def from_xyz_yaw(cls, x, y, z=0.0, yaw=0.0):
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(R, [x, y, z])

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def copy(self):
        return Pose(self.rotation.copy(), self.translation.copy())

    @property
    def yaw(self):
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def allclose(self, other, atol=1e-9):
        return np.allclose(self.rotation, other.rotation, atol=atol) and np.allclose(
            self.translation, other.translation, atol=atol
        )

    def __repr__(self):
        t = np.array2string(self.translation, precision=4, suppress_small=True)
        return f"Pose(t={t}, yaw={self.yaw:.4f})"


def stack(poses):
    """Stack a sequence of poses into ``(R, t)`` arrays."""
    if len(poses) == 0:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    R = np.stack([p.rotation for p in poses])
    t = np.stack([p.translation for p in poses])
    return R, t


def unstack(R, t):
    return [Pose(R[i], t[i]) for i in range(len(R))]


# ---------------------------------------------------------------------------
# so(3) helpers
# ---------------------------------------------------------------------------


_HAT_POS = [7, 2, 3]  # flat indices of (v0, v1, v2) in the skew matrix
_HAT_NEG = [5, 6, 1]


def hat(v):
    """Skew matrix of a 3-vector (or a stack of them)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (9,))
    out[..., _HAT_POS] = v
    out[..., _HAT_NEG] = -v
    return out.reshape(v.shape[:-1] + (3, 3))


def vee(M):
    M = np.asarray(M)
    return M.reshape(M.shape[:-2] + (9,))[..., _HAT_POS]


def _coeffs(theta, need="ABCD"):
    """Return (A, B, C, D) for the rotation angles ``theta``.

    A = sin/θ, B = (1-cos)/θ², C = (θ-sin)/θ³, D = (1 - A/(2B))/θ².
    Coefficients not listed in ``need`` come back as None.
    """
    theta = np.asarray(theta, dtype=float)
    small = theta < SERIES_ANGLE
    any_small = bool(small.any())
    th = np.where(small, 1.0, theta) if any_small else theta
    t2 = theta * theta
    out = {}
    # th is bounded away from 0 here, and B > 0 for every angle below 2*pi
    s = np.sin(th)
    half = np.sin(0.5 * th)
    A = s / th
    B = 2.0 * half * half / (th * th)
    if "A" in need:
        out["A"] = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, A) if any_small else A
    if "B" in need:
        out["B"] = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, B) if any_small else B
    if "C" in need:
        C = (th - s) / th**3
        out["C"] = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, C) if any_small else C
    if "D" in need:
        D = (1.0 - A / (2.0 * B)) / (th * th)
        out["D"] = np.where(small, 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0, D) if any_small else D
    return out.get("A"), out.get("B"), out.get("C"), out.get("D")


def so3_exp_batch(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    A, B, _, _ = _coeffs(theta, "AB")
    K = hat(phi)
    return _I3 + A[..., None, None] * K + B[..., None, None] * (K @ K)


def so3_log_batch(R, strict=True):
    """Rotation vectors of a stack of rotations.

    Rows whose angle reaches the principal-branch cutoff raise
    :class:`AngleNearPi` when ``strict``; otherwise they come back as NaN.
    """
    return _so3_log(np.asarray(R, dtype=float), strict)[0]


def _so3_log(R, strict):
    """``(phi, theta)``; theta is the rotation angle (also for NaN rows)."""
    w = 0.5 * vee(R - np.swapaxes(R, -1, -2))
    c = 0.5 * (R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0)
    sn = np.sqrt(np.sum(w * w, axis=-1))
    theta = np.arctan2(sn, c)
    bad = theta >= PI_CUTOFF
    if strict and np.any(bad):
        raise AngleNearPi(f"rotation angle {float(np.max(theta)):.9f} too close to pi")
    small = theta < SERIES_ANGLE
    t2 = theta * theta
    factor = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / np.where(small, 1.0, sn))
    phi = w * factor[..., None]
    if not strict and np.any(bad):
        phi = np.where(bad[..., None], np.nan, phi)
    return phi, theta


_P1 = [1, 2, 0]
_P2 = [2, 0, 1]


def _cross(a, b):
    return a[..., _P1] * b[..., _P2] - a[..., _P2] * b[..., _P1]


def so3_left_jacobian(phi):
    theta = np.linalg.norm(phi, axis=-1)
    _, B, C, _ = _coeffs(theta, "BC")
    K = hat(phi)
    return _I3 + B[..., None, None] * K + C[..., None, None] * (K @ K)


def so3_left_jacobian_inv(phi):
    theta = np.linalg.norm(phi, axis=-1)
    _, _, _, D = _coeffs(theta, "D")
    K = hat(phi)
    return _I3 - 0.5 * K + D[..., None, None] * (K @ K)


# ---------------------------------------------------------------------------
# SE(3) batch
# ---------------------------------------------------------------------------


def exp_batch(xi):
    """``(N, 6)`` twists to ``(R, t)`` stacks."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    rho, phi = xi[:, :3], xi[:, 3:]
    t2 = np.einsum("ni,ni->n", phi, phi)
    A, B, C, _ = _coeffs(np.sqrt(t2), "ABC")
    K = hat(phi)
    # K^2 = phi phi^T - |phi|^2 I
    R = (1.0 - B * t2)[:, None, None] * _I3 + A[:, None, None] * K + B[:, None, None] * (phi[:, :, None] * phi[:, None, :])
    pr = np.einsum("ni,ni->n", phi, rho)
    t = rho + B[:, None] * _cross(phi, rho) + C[:, None] * (phi * pr[:, None] - t2[:, None] * rho)
    return R, t


def log_batch(R, t, strict=True):
    """Twists of a stack of poses, ``(N, 6)``."""
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    if R.ndim == 2:
        R, t = R[None], t[None]
    phi, theta = _so3_log(R, strict)
    if not strict:
        nan = np.isnan(phi[:, 0])
        if nan.any():
            safe = np.where(nan[:, None], 0.0, phi)
            theta = np.where(nan, 0.0, theta)
        else:
            safe = phi
    else:
        safe = phi
    _, _, _, D = _coeffs(theta, "D")
    pt = np.einsum("ni,ni->n", safe, t)
    rho = t - 0.5 * _cross(safe, t) + D[:, None] * (safe * pt[:, None] - (theta * theta)[:, None] * t)
    return np.concatenate([rho, phi], axis=-1)


def compose_batch(Ra, ta, Rb, tb):
    R = Ra @ Rb
    t = np.einsum("...ij,...j->...i", Ra, tb) + ta
    return R, t


def inverse_batch(R, t):
    Rt = np.swapaxes(R, -1, -2)
    return Rt, -np.einsum("...ij,...j->...i", Rt, t)


def between_batch(Ra, ta, Rb, tb):
    """``a^-1 b`` for stacks (broadcasting over leading axes)."""
    Rat = np.swapaxes(Ra, -1, -2)
    R = Rat @ Rb
    t = np.einsum("...ij,...j->...i", Rat, tb - ta)
    return R, t


def adjoint_batch(R, t):
    R = np.asarray(R, dtype=float)
    n = R.shape[:-2]
    Ad = np.zeros(n + (6, 6))
    Ad[..., :3, :3] = R
    Ad[..., :3, 3:] = hat(t) @ R
    Ad[..., 3:, 3:] = R
    return Ad


def _flat_stacks(*arrays_and_tails):
    """Broadcast ``(array, trailing_ndim)`` pairs over their leading axes; flatten those."""
    arrs = [(a if isinstance(a, np.ndarray) and a.dtype == np.float64 else np.asarray(a, dtype=float), k) for a, k in arrays_and_tails]
    heads = [a.shape[: a.ndim - k] for a, k in arrs]
    lead = heads[0]
    if len(lead) == 1 and all(h == lead for h in heads) and all(a.flags.c_contiguous for a, _ in arrs):
        return lead, [a for a, _ in arrs]
    lead = np.broadcast_shapes(*heads)
    out = []
    for a, k in arrs:
        tail = a.shape[a.ndim - k :]
        out.append(np.ascontiguousarray(np.broadcast_to(a, lead + tail)).reshape((-1,) + tail))
    return lead, out


def transport_batch(covs, R, t):
    """``Ad_{T^-1} cov Ad_{T^-1}^T`` for stacks of covariances and poses."""
    if USE_JIT:
        lead, (c, Rf, tf) = _flat_stacks((covs, 2), (R, 2), (t, 1))
        return _fast.transport(c, Rf, tf).reshape(lead + (6, 6))
    return _transport_np(covs, R, t)


def rel_log(Ra, ta, Rb, tb, strict=True):
    """``log(a^-1 b)`` row-wise for (broadcastable) stacks, ``(N, 6)``."""
    if USE_JIT:
        _, (Ra, ta, Rb, tb) = _flat_stacks((Ra, 2), (ta, 1), (Rb, 2), (tb, 1))
        xi = _fast.rel_log(Ra, ta, Rb, tb)
        if strict and np.isnan(xi).any():
            raise AngleNearPi("relative rotation too close to pi")
        return xi
    Rr, tr = between_batch(Ra, ta, Rb, tb)
    return log_batch(np.reshape(Rr, (-1, 3, 3)), np.reshape(tr, (-1, 3)), strict=strict)


def right_exp(Rm, tm, xi):
    """``mu_k exp(xi_k)`` row-wise; returns ``(R, t)`` stacks."""
    if USE_JIT:
        _, (Rm, tm, xi) = _flat_stacks((Rm, 2), (tm, 1), (xi, 1))
        return _fast.right_exp(Rm, tm, xi)
    dR, dt = exp_batch(np.reshape(xi, (-1, 6)))
    return compose_batch(Rm, tm, dR, dt)


def _transport_np(covs, R, t):
    Ri, ti = inverse_batch(R, t)
    Ad = adjoint_batch(Ri, ti)
    out = Ad @ covs @ np.swapaxes(Ad, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


# ---------------------------------------------------------------------------
# SE(3) scalar API
# ---------------------------------------------------------------------------


def _exp_one(xi):
    """``(R, t)`` of a single twist; scalar coefficients, same formulas as the batch path."""
    rho, phi = xi[:3], xi[3:]
    t2 = float(phi @ phi)
    th = math.sqrt(t2)
    if th < SERIES_ANGLE:
        A = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        B = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        C = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        s, h = math.sin(th), math.sin(0.5 * th)
        A, B, C = s / th, 2.0 * h * h / t2, (th - s) / (th * t2)
    K = hat(phi)
    K2 = K @ K
    return _I3 + A * K + B * K2, rho + (B * K + C * K2) @ rho


def exp_map(xi):
    """Closed-form exponential; angles below ``SERIES_ANGLE`` use Taylor series."""
    R, t = _exp_one(np.asarray(xi, dtype=float).reshape(6))
    return Pose(R, t)


def log_map(T):
    return log_batch(T.rotation[None], T.translation[None], strict=True)[0]


def compose(A, B):
    return A @ B


def inverse(T):
    return T.inverse()


def adjoint(T):
    return adjoint_batch(T.rotation, T.translation)


def ad(xi):
    """Small adjoint ``ad(xi)`` so that ``Ad_{exp(xi)} = expm(ad(xi))``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    out = np.zeros((6, 6))
    out[:3, :3] = hat(xi[3:])
    out[:3, 3:] = hat(xi[:3])
    out[3:, 3:] = hat(xi[3:])
    return out


def left_jacobian(xi):
    """Exact SE(3) left Jacobian in ``(rho, phi)`` ordering."""
    xi = np.asarray(xi, dtype=float)
    batch = xi.ndim == 2
    xi = np.atleast_2d(xi)
    rho, phi = xi[:, :3], xi[:, 3:]
    theta = np.linalg.norm(phi, axis=-1)
    _, _, C, _ = _coeffs(theta)
    small = theta < SERIES_ANGLE
    th = np.where(small, 1.0, theta)
    t2 = theta * theta
    c2 = np.where(
        small,
        1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
        (th * th + 2.0 * np.cos(th) - 2.0) / (2.0 * th**4),
    )
    c3 = np.where(
        small,
        1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        (2.0 * th - 3.0 * np.sin(th) + th * np.cos(th)) / (2.0 * th**5),
    )
    P = hat(phi)
    Rh = hat(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    Q = (
        0.5 * Rh
        + C[:, None, None] * (PR + RP + PRP)
        + c2[:, None, None] * (P @ PR + RP @ P - 3.0 * PRP)
        + c3[:, None, None] * (PRP @ P + P @ PRP)
    )
    J3 = so3_left_jacobian(phi)
    J = np.zeros((len(xi), 6, 6))
    J[:, :3, :3] = J3
    J[:, :3, 3:] = Q
    J[:, 3:, 3:] = J3
    return J if batch else J[0]


def left_jacobian_inv(xi):
    J = left_jacobian(xi)
    xi = np.asarray(xi, dtype=float)
    Jb = np.atleast_3d(J) if J.ndim == 3 else J[None]
    Ji3 = so3_left_jacobian_inv(np.atleast_2d(xi)[:, 3:])
    Q = Jb[:, :3, 3:]
    out = np.zeros_like(Jb)
    out[:, :3, :3] = Ji3
    out[:, :3, 3:] = -Ji3 @ Q @ Ji3
    out[:, 3:, 3:] = Ji3
    return out if J.ndim == 3 else out[0]


def right_jacobian_inv(xi):
    """``J_r^{-1}(xi) = J_l^{-1}(-xi)``; satisfies log(exp(xi)exp(d)) ~ xi + J_r^{-1} d."""
    return left_jacobian_inv(-np.asarray(xi, dtype=float))


def weighted_distance(a, b, W=None):
    """``|| W log(a^-1 b) ||`` with ``W`` a diagonal (6-vector or 6x6)."""
    d = log_map(a.inverse() @ b)
    if W is not None:
        W = np.asarray(W, dtype=float)
        d = (np.diag(W) if W.ndim == 2 else W) * d
    return float(np.linalg.norm(d))


def pairwise_log(R, t, strict=False):
    """``log(mu_a^-1 mu_b)`` for all pairs; returns ``(N, N, 6)``."""
    n = len(R)
    if USE_JIT:
        xi = _fast.pair_logs(np.ascontiguousarray(R, dtype=float), np.ascontiguousarray(t, dtype=float))
        if strict and np.isnan(xi).any():
            raise AngleNearPi("pair rotation too close to pi")
        return xi
    Rr, tr = between_batch(R[:, None], t[:, None], R[None, :], t[None, :])
    return log_batch(Rr.reshape(-1, 3, 3), tr.reshape(-1, 3), strict=strict).reshape(n, n, 6)


def frechet_mean_batch(R, t, weights, max_iter=100, tol=1e-10, init=None):
    """Weighted Fréchet mean of a stack of poses; returns ``(R, t, iterations)``."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    k = int(np.argmax(w)) if init is None else init
    Rm, tm = R[k].copy(), t[k].copy()
    if len(w) == 1:
        return Rm, tm, 0
    for it in range(1, max_iter + 1):
        step = w @ rel_log(Rm[None], tm[None], R, t, strict=True)
        Rn, tn = right_exp(Rm[None], tm[None], step[None])
        Rm, tm = Rn[0], tn[0]
        if math.sqrt(step @ step) < tol:
            return Rm, tm, it
    raise NoConvergence(f"Fréchet mean did not converge in {max_iter} iterations")


def frechet_mean_groups(R, t, weights, labels, max_iter=100, tol=1e-10, pair_logs=None):
    """Fréchet means of several groups at once, one batched log per iteration.

    ``labels[j]`` in ``0..G-1`` names the group of pose ``j``. Each group runs
    the same fixed-point iteration as :func:`frechet_mean_batch` and stops on
    its own, so results match group-by-group calls. Returns ``(R, t, iters,
    converged)``; a group that hits ``max_iter`` keeps its last iterate and
    reports ``converged = False``. ``pair_logs`` (``log(a^-1 b)`` for all
    pairs, as from :func:`pairwise_log`) spares the first iteration's logs.
    """
    labels = np.asarray(labels, dtype=int)
    w = np.asarray(weights, dtype=float)
    G = int(labels.max()) + 1
    tot = np.zeros(G)
    np.add.at(tot, labels, w)
    wn = w / tot[labels]
    # initial iterate: heaviest member, first one on ties
    order = np.lexsort((np.arange(len(w)), -w, labels))
    first = np.ones(len(order), dtype=bool)
    first[1:] = labels[order][1:] != labels[order][:-1]
    init = order[first]
    Rm, tm = R[init].copy(), t[init].copy()
    counts = np.bincount(labels, minlength=G)
    # row g averages the tangent vectors of group g
    M = np.zeros((G, len(w)))
    M[labels, np.arange(len(w))] = wn
    iters = np.zeros(G, dtype=int)
    done = counts == 1
    for it in range(1, max_iter + 1):
        if done.all():
            break
        if it == 1 and pair_logs is not None:
            xi = pair_logs[init[labels], np.arange(len(w))]
            if np.isnan(xi).any():
                raise AngleNearPi("cluster member too close to pi from its seed")
        else:
            # members of finished groups are still evaluated (and must not hit the cutoff)
            xi = rel_log(Rm[labels], tm[labels], R, t, strict=True)
        step = M @ xi
        Rn, tn = right_exp(Rm, tm, step)
        live = ~done
        tm = np.where(live[:, None], tn, tm)
        Rm = np.where(live[:, None, None], Rn, Rm)
        iters[live] = it
        done = done | (np.sqrt(np.einsum("ni,ni->n", step, step)) < tol)
    return Rm, tm, iters, done


def frechet_mean(poses, weights, max_iter=100, tol=1e-10):
    R, t = stack(poses)
    Rm, tm, _ = frechet_mean_batch(R, t, weights, max_iter=max_iter, tol=tol)
    return Pose(Rm, tm)


def random_pose(rng, trans_scale=1.0, max_angle=np.pi - 0.1):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    R, _ = exp_batch(np.concatenate([np.zeros(3), axis * angle])[None])
    return Pose(R[0], rng.normal(scale=trans_scale, size=3))
