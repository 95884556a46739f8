"""Worst-case step timing on a synthetic stream.

Five aliased copies of a straight corridor, 20 m apart. Every map node
carries three of the five copies as mixture components: copy 0 (heaviest)
plus two of the other four in rotation. Five retrieved nodes give a
15-component message that clusters into five groups, one per copy, and the
belief keeps all five components. Copy 0 stays the best-supported branch,
so the stream measures the regular step rather than loop-closure attempts.
"""

from __future__ import annotations

import time

import numpy as np

from .. import graph as tg
from ..belief import BeliefMixture, GaussianComponent
from ..engine import CrossFilter, FilterConfig
from ..measurement import REL_COV, MeasurementCandidate
from ..se3 import Pose, exp_map

N_COPIES = 5
PER_NODE = 3
SPACING = 20.0
NODE_STEP = 1.0
STEP = 0.5


def _offset(a):
    return Pose.from_xyz_yaw(0.0, SPACING * a, 0.0, 0.0)


def stress_graph(n_nodes=60, seed=0):
    rng = np.random.default_rng(seed)
    g = tg.TopoGraph()
    cov = np.diag([0.02**2] * 3 + [0.005**2] * 3)
    for i in range(n_nodes):
        y = Pose.from_xyz_yaw(i * NODE_STEP, 0.0, 0.0, 0.0)
        copies = [0] + [1 + (i + k) % (N_COPIES - 1) for k in range(PER_NODE - 1)]
        comps = []
        for k, a in enumerate(copies):
            m = _offset(a) @ y
            comps.append(GaussianComponent(m, cov, [0.5, 0.3, 0.2][k], a))
        mix = BeliefMixture.from_components(comps)
        g.add_node(rng.normal(size=16), mix, step=i, session="map")
    return g


def stress_stream(n_steps=100, seed=0, n_cand=5, rel_sigma=(0.02, 0.005)):
    """Odometry, process noise and candidate lists for ``n_steps`` steps."""
    rng = np.random.default_rng([seed, 1])
    Q = np.diag([0.01**2] * 3 + [0.003**2] * 3)
    u = Pose.from_xyz_yaw(STEP, 0.0, 0.0, 0.0)
    rel_cov = np.diag([rel_sigma[0] ** 2] * 3 + [rel_sigma[1] ** 2] * 3)
    out = []
    for k in range(n_steps):
        x = Pose.from_xyz_yaw(5.0 + k * STEP, 0.0, 0.0, 0.0)
        near = int(round(x.translation[0] / NODE_STEP))
        cands = []
        for j, nid in enumerate(range(near - n_cand // 2, near - n_cand // 2 + n_cand)):
            y = Pose.from_xyz_yaw(nid * NODE_STEP, 0.0, 0.0, 0.0)
            xi = np.concatenate([rng.normal(size=3) * rel_sigma[0], rng.normal(size=3) * rel_sigma[1]])
            rel = y.inverse() @ x @ exp_map(xi)
            cands.append(MeasurementCandidate(nid, 0.9 - 0.05 * j, 80 - 5 * j, 100, rel, rel_cov.copy()))
        out.append((k, u, Q, cands))
    return out


def stress_filter(graph, config=None):
    f = CrossFilter(config or FilterConfig(), graph)
    x0 = Pose.from_xyz_yaw(5.0 - STEP, 0.0, 0.0, 0.0)
    cov = np.diag([0.05**2] * 3 + [0.01**2] * 3)
    comps = [GaussianComponent(_offset(a) @ x0, cov, 1.0 / N_COPIES, a) for a in range(N_COPIES)]
    f.reset(None)
    f.belief = BeliefMixture.from_components(comps)
    f.store.bookkeep(f.belief, -1)
    f.store.next_id = N_COPIES
    return f


def time_steps(n_steps=100, seed=0, repeats=3):
    """Per-step wall times (seconds) plus the per-step mixture sizes."""
    g = stress_graph(n_nodes=int(5 + n_steps * STEP / NODE_STEP + 10), seed=seed)
    stream = stress_stream(n_steps, seed)
    times, sizes = [], []
    for _ in range(repeats):
        f = stress_filter(g)
        for k, u, Q, cands in stream:
            t0 = time.perf_counter()
            info = f.step(k, u, Q, cands)
            times.append(time.perf_counter() - t0)
            sizes.append(info.n_hyp)
    return np.array(times), np.array(sizes)
