"""Levenberg-Marquardt pose-graph optimisation over SE(3).

Residual of a factor ``(i, j, T_ij, Lambda)`` is ``log(T_ij^-1 mu_i^-1 mu_j)``
and the cost is ``sum r^T Lambda r``. Updates are right perturbations,
``mu <- mu exp(dx)``. The normal equations are assembled sparse so the same
code handles a 3-node toy and a few-hundred-pose merge problem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import se3
from .exceptions import SingularNormalEquations
from .se3 import Pose

log = logging.getLogger(__name__)

LAMBDA0 = 1e-4
LAMBDA_MAX = 1e8
NUMERIC_STEP = 1e-6
LOOP_SIGMA = 1e-4
SMOOTH_EVERY = 25
# joint loop-closure problems use at most this many of the latest shared steps
MERGE_HORIZON = 50
# factors whose residual hits the chart cutoff are down-weighted to this
GUARD_WEIGHT = 1e-12


@dataclass
class Factor:
    i: object
    j: object
    meas: Pose
    info: np.ndarray
    kind: str = "odometry"


@dataclass
class PgoProblem:
    variables: dict
    factors: list
    gauge: set = field(default_factory=set)

    def validate(self):
        for f in self.factors:
            if f.i not in self.variables or f.j not in self.variables:
                raise KeyError(f"factor {f.kind} references unknown variable ({f.i}, {f.j})")
        if not self.gauge:
            raise ValueError("no gauge variable fixed")


@dataclass
class PgoResult:
    poses: dict
    cost: float
    iterations: int
    history: list = field(default_factory=list)
    grad_norm: float = 0.0
    n_factors: int = 0
    n_free: int = 0

    def __iter__(self):
        return iter((self.poses, self.cost, self.iterations))


def residual(factor, mu_i, mu_j):
    E = factor.meas.inverse() @ mu_i.inverse() @ mu_j
    return se3.log_map(E)


def _residuals(Rm, tm, Ri, ti, Rj, tj):
    Rb, tb = se3.between_batch(Ri, ti, Rj, tj)
    Rmi, tmi = se3.inverse_batch(Rm, tm)
    RE, tE = se3.compose_batch(Rmi, tmi, Rb, tb)
    return se3.log_batch(RE, tE, strict=False)


def _analytic_jacobians(r, Ri, ti, Rj, tj):
    Jri = se3.left_jacobian_inv(-r)
    Rji, tji = se3.between_batch(Rj, tj, Ri, ti)
    Ad = se3.adjoint_batch(Rji, tji)
    return -Jri @ Ad, Jri


def _numeric_jacobians(Rm, tm, Ri, ti, Rj, tj, h=NUMERIC_STEP):
    n = len(Ri)
    Ji = np.zeros((n, 6, 6))
    Jj = np.zeros((n, 6, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        dRp, dtp = se3.exp_batch(e[None])
        dRm, dtm = se3.exp_batch(-e[None])
        for which, J in ((0, Ji), (1, Jj)):
            if which == 0:
                Rp, tp = se3.compose_batch(Ri, ti, dRp[0], dtp[0])
                Rn, tn = se3.compose_batch(Ri, ti, dRm[0], dtm[0])
                rp = _residuals(Rm, tm, Rp, tp, Rj, tj)
                rn = _residuals(Rm, tm, Rn, tn, Rj, tj)
            else:
                Rp, tp = se3.compose_batch(Rj, tj, dRp[0], dtp[0])
                Rn, tn = se3.compose_batch(Rj, tj, dRm[0], dtm[0])
                rp = _residuals(Rm, tm, Ri, ti, Rp, tp)
                rn = _residuals(Rm, tm, Ri, ti, Rn, tn)
            J[:, :, k] = (rp - rn) / (2.0 * h)
    return Ji, Jj


def factor_jacobians(factor, mu_i, mu_j, analytic=False):
    """Jacobians of one factor residual w.r.t. right perturbations of mu_i and mu_j."""
    Rm, tm = factor.meas.rotation[None], factor.meas.translation[None]
    Ri, ti = mu_i.rotation[None], mu_i.translation[None]
    Rj, tj = mu_j.rotation[None], mu_j.translation[None]
    if analytic:
        r = _residuals(Rm, tm, Ri, ti, Rj, tj)
        Ji, Jj = _analytic_jacobians(r, Ri, ti, Rj, tj)
    else:
        Ji, Jj = _numeric_jacobians(Rm, tm, Ri, ti, Rj, tj)
    return Ji[0], Jj[0]


class _Linearizer:
    """Stacked-array state plus a sparsity pattern built once per problem."""

    def __init__(self, problem, analytic):
        self.p = problem
        self.analytic = analytic
        self.keys = list(problem.variables)
        pos = {k: n for n, k in enumerate(self.keys)}
        self.free = [k for k in self.keys if k not in problem.gauge]
        self.free_pos = np.array([pos[k] for k in self.free], dtype=int)
        index = {k: n for n, k in enumerate(self.free)}
        fs = problem.factors
        self.Rm = np.stack([f.meas.rotation for f in fs])
        self.tm = np.stack([f.meas.translation for f in fs])
        self.info = np.stack([np.asarray(f.info, dtype=float) for f in fs])
        self.vi = np.array([pos[f.i] for f in fs], dtype=int)
        self.vj = np.array([pos[f.j] for f in fs], dtype=int)
        self.ii = np.array([index.get(f.i, -1) for f in fs], dtype=int)
        self.jj = np.array([index.get(f.j, -1) for f in fs], dtype=int)
        self.n = 6 * len(self.free)
        # block (row var, col var) for ii, jj, ij, ji; -1 rows are dropped
        base = np.arange(6)
        rr = np.repeat(base, 6)
        cc = np.tile(base, 6)
        self._masks = (self.ii >= 0, self.jj >= 0, (self.ii >= 0) & (self.jj >= 0))
        mi, mj, mij = self._masks
        blocks = [(self.ii[mi], self.ii[mi]), (self.jj[mj], self.jj[mj]), (self.ii[mij], self.jj[mij]), (self.jj[mij], self.ii[mij])]
        self._rows = np.concatenate([(6 * r)[:, None] + rr for r, _ in blocks] + [np.zeros((0, 36), int)]).ravel()
        self._cols = np.concatenate([(6 * c)[:, None] + cc for _, c in blocks] + [np.zeros((0, 36), int)]).ravel()

    def stack(self, poses):
        R = np.stack([poses[k].rotation for k in self.keys])
        t = np.stack([poses[k].translation for k in self.keys])
        return R, t

    def unstack(self, R, t):
        return {k: Pose(R[n], t[n]) for n, k in enumerate(self.keys)}

    def cost(self, R, t):
        r, w = self._res(R, t)
        return float(np.einsum("ni,nij,nj,n->", r, self.info, r, w))

    def _res(self, R, t):
        r = _residuals(self.Rm, self.tm, R[self.vi], t[self.vi], R[self.vj], t[self.vj])
        bad = np.isnan(r).any(axis=1)
        if bad.any():
            w = np.where(bad, GUARD_WEIGHT, 1.0)
            r = np.where(bad[:, None], 0.0, r)
        else:
            w = np.ones(len(r))
        return r, w

    def system(self, R, t):
        r, w = self._res(R, t)
        Ri, ti, Rj, tj = R[self.vi], t[self.vi], R[self.vj], t[self.vj]
        if self.analytic:
            Ji, Jj = _analytic_jacobians(r, Ri, ti, Rj, tj)
        else:
            Ji, Jj = _numeric_jacobians(self.Rm, self.tm, Ri, ti, Rj, tj)
        Ji = np.nan_to_num(Ji)
        Jj = np.nan_to_num(Jj)
        L = self.info * w[:, None, None]
        JiT, JjT = np.swapaxes(Ji, 1, 2), np.swapaxes(Jj, 1, 2)
        LJi, LJj = L @ Ji, L @ Jj
        mi, mj, mij = self._masks
        Hij = (JiT @ LJj)[mij]
        vals = np.concatenate(
            [(JiT @ LJi)[mi].reshape(-1), (JjT @ LJj)[mj].reshape(-1), Hij.reshape(-1), np.swapaxes(Hij, 1, 2).reshape(-1)]
        )
        Lr = np.einsum("nkl,nl->nk", L, r)
        gi = np.einsum("nki,nk->ni", Ji, Lr)
        gj = np.einsum("nki,nk->ni", Jj, Lr)
        g = np.zeros((len(self.free), 6))
        np.add.at(g, self.ii[mi], gi[mi])
        np.add.at(g, self.jj[mj], gj[mj])
        H = sp.coo_matrix((vals, (self._rows, self._cols)), shape=(self.n, self.n)).tocsc()
        return H, g.reshape(-1)

    def retract(self, R, t, dx):
        R, t = R.copy(), t.copy()
        if len(self.free) == 0:
            return R, t
        dR, dt = se3.exp_batch(dx.reshape(-1, 6))
        fp = self.free_pos
        Rf, tf = R[fp], t[fp]
        R[fp] = Rf @ dR
        t[fp] = np.einsum("nij,nj->ni", Rf, dt) + tf
        return R, t


def optimize(problem, max_iters=100, tol=1e-12, analytic=True, lambda0=LAMBDA0):
    """Levenberg-Marquardt; returns a :class:`PgoResult`.

    Stops when an accepted step lowers the cost by less than ``tol`` or after
    ``max_iters`` linearisations. ``history`` lists the cost after every
    accepted step (starting with the initial cost).
    """
    problem.validate()
    poses = {k: v.copy() for k, v in problem.variables.items()}
    if not problem.factors:
        return PgoResult(poses, 0.0, 0, [0.0])
    lin = _Linearizer(problem, analytic)
    R, t = lin.stack(poses)
    cost = lin.cost(R, t)
    history = [cost]
    lam = lambda0
    n = lin.n
    nf = (len(problem.factors), len(lin.free))
    if n == 0:
        return PgoResult(poses, cost, 0, history, 0.0, *nf)
    eye = sp.identity(n, format="csc")
    it = 0
    gnorm = np.inf
    while it < max_iters:
        it += 1
        H, g = lin.system(R, t)
        gnorm = float(np.linalg.norm(g))
        if gnorm < 1e-14 * max(1.0, cost) or cost == 0.0:
            break
        while True:
            try:
                dx = spla.spsolve((H + lam * eye).tocsc(), -g)
            except RuntimeError:
                dx = np.full(n, np.nan)
            if np.all(np.isfinite(dx)):
                Rc, tc = lin.retract(R, t, dx)
                new_cost = lin.cost(Rc, tc)
                if new_cost <= cost:
                    break
            lam *= 10.0
            if lam > LAMBDA_MAX:
                if gnorm < 1e-6 * (1.0 + cost):
                    # already at a stationary point; nothing left to gain
                    return PgoResult(lin.unstack(R, t), cost, it, history, gnorm, *nf)
                raise SingularNormalEquations(f"damping exceeded {LAMBDA_MAX:g} (|g|={gnorm:.3e})")
        decrease = cost - new_cost
        R, t, cost = Rc, tc, new_cost
        history.append(cost)
        lam = max(lam / 10.0, 1e-12)
        if decrease < tol:
            break
    H, g = lin.system(R, t)
    return PgoResult(lin.unstack(R, t), cost, it, history, float(np.linalg.norm(g)), *nf)


def dump_factors(problem):
    """Debug dump: one ``FACTOR`` line per factor (same pose layout as graph files)."""
    from .graph import _pose_fields

    lines = []
    for f in problem.factors:
        info_diag = " ".join(format(float(v), ".17g") for v in np.diag(f.info))
        lines.append(f"FACTOR {f.kind} {f.i} {f.j} " + " ".join(_pose_fields(f.meas)) + " " + info_diag)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# problems built from the map / hypotheses
# ---------------------------------------------------------------------------


def _component_index(node, hyp_id):
    return node.pose_mixture.index_of(hyp_id)


def smooth_hypothesis(graph, hyp_id, max_iters=50, analytic=True):
    """Refine component ``hyp_id`` of every node carrying it.

    Uses odometry edges plus the visual edges of that hypothesis; all other
    components are left untouched. Returns the dict of updated means.
    """
    carriers = {n.id: _component_index(n, hyp_id) for n in graph.nodes}
    carriers = {k: v for k, v in carriers.items() if v is not None}
    vis = [e for e in graph.edges_of_kind("visual", hyp_id) if e.src in carriers and e.dst in carriers]
    if not vis or len(carriers) < 2:
        return {}
    variables = {k: graph.node(k).pose_mixture.mean_of(c) for k, c in carriers.items()}
    factors = []
    for e in graph.edges:
        if e.kind == "odometry" or (e.kind == "visual" and e.hyp_id == hyp_id):
            if e.src in carriers and e.dst in carriers:
                factors.append(Factor(e.src, e.dst, e.rel_pose, np.linalg.inv(e.cov), e.kind))
    prob = PgoProblem(variables, factors, {min(carriers)})
    res = optimize(prob, max_iters=max_iters, analytic=analytic)
    for k, c in carriers.items():
        m = graph.node(k).pose_mixture
        m.R[c] = res.poses[k].rotation
        m.t[c] = res.poses[k].translation
    graph.invalidate()
    return res.poses


def joint_loop_pgo(h0, hl, graph=None, loop_sigma=LOOP_SIGMA, max_iters=100, analytic=True, horizon=MERGE_HORIZON):
    """Jointly refine two hypotheses over their common time steps.

    Only the latest ``horizon`` shared steps enter the problem (None: all), so
    a long-lived branch does not make every merge attempt more expensive.
    Variables are ``("h0", step)`` and ``("hl", step)`` for every shared step;
    factors are each branch's odometry, its visual constraints to fixed map
    nodes ``("node", id)``, and identity factors tying the two branches at
    each shared step. Returns ``(steps, merged_poses, result)``.
    """
    steps = sorted(set(h0.steps) & set(hl.steps))
    if not steps:
        raise ValueError("hypotheses share no time steps")
    if horizon is not None:
        steps = steps[-horizon:]
    variables, factors, gauge = {}, [], set()
    shared = set(steps)
    n_vis = [sum(v.step in shared for v in h.visual_constraints) for h in (h0, hl)]
    # both branches start from the better anchored one; far-apart branches
    # would otherwise put the identity factors near the chart cutoff
    src = h0 if (n_vis[0], h0.weight) >= (n_vis[1], hl.weight) else hl
    src_pos = {s: k for k, s in enumerate(src.steps)}
    for tag, h in (("h0", h0), ("hl", hl)):
        pos = {s: k for k, s in enumerate(h.steps)}
        for s in steps:
            variables[(tag, s)] = src.trajectory[src_pos[s]]
        for a, b in zip(steps[:-1], steps[1:]):
            # chain the stored per-step odometry between consecutive shared steps
            u = Pose()
            Q = np.zeros((6, 6))
            for s in range(a + 1, b + 1):
                od = h.odometry[pos[s]] if s in pos else None
                if od is None:
                    continue
                du, dQ = od
                Q = se3.transport_batch(Q, du.rotation, du.translation) + dQ
                u = u @ du
            factors.append(Factor((tag, a), (tag, b), u, np.linalg.inv(Q + 1e-9 * np.eye(6)), "odometry"))
        if graph is not None:
            for vc in h.visual_constraints:
                if (tag, vc.step) not in variables:
                    continue
                key = ("node", vc.node_to)
                if key not in variables:
                    variables[key] = graph.node(vc.node_to).dominant_mean()
                    gauge.add(key)
                factors.append(Factor(key, (tag, vc.step), vc.rel_pose, np.linalg.inv(vc.cov), "visual"))
    info = np.eye(6) / loop_sigma**2
    for s in steps:
        factors.append(Factor(("h0", s), ("hl", s), Pose(), info, "loop"))
    if not gauge:
        # no absolute anchor: hold the heavier branch's first shared pose
        tag = "h0" if h0.weight >= hl.weight else "hl"
        gauge.add((tag, steps[0]))
    res = optimize(PgoProblem(variables, factors, gauge), max_iters=max_iters, analytic=analytic)
    merged = [res.poses[("h0", s)] for s in steps]
    return steps, merged, res
