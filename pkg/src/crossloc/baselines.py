"""Discrete topological localisation baselines.

* GM  - greedy matching: take the best-scoring node.
* SM  - sequence matching: median score along a short aligned node sequence.
* PBU - probabilistic belief update: a discrete Bayes filter over nodes with
  a hop-distance motion kernel.

All three read the same candidate lists as the continuous filter and never
look at the relative poses.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path
from sklearn.base import BaseEstimator

TAU = 0.6
SM_H = 2
PBU_ALPHA = 0.9
PBU_BETA = 0.01
PBU_WU = 2
LIKELIHOOD_FLOOR = 1e-6


@dataclass
class DiscreteBelief:
    probs: np.ndarray  # indexed by node id

    def normalized(self):
        s = float(self.probs.sum())
        return DiscreteBelief(self.probs / s)

    def argmax(self):
        return int(np.argmax(self.probs))


def score_row(candidates, n_nodes):
    """Dense similarity row over node ids (0 where a node was not retrieved)."""
    row = np.zeros(n_nodes)
    for c in candidates:
        row[c.node_id] = max(row[c.node_id], c.vpr_score)
    return row


def gm_step(candidates, tau=TAU, prev=None):
    if not candidates:
        return prev
    best = max(candidates, key=lambda c: (c.vpr_score, -c.node_id))
    return best.node_id if best.vpr_score >= tau else prev


def session_predecessors(graph):
    """``pred[i]`` = previous node of the same session (-1 for the first)."""
    pred = np.full(len(graph), -1)
    last = {}
    for n in graph.nodes:
        pred[n.id] = last.get(n.session_tag, -1)
        last[n.session_tag] = n.id
    return pred


def step_chains(graph, L):
    """``chain[k, v]``: the node of ``v``'s session that covered map step ``created(v) - k``.

    Keyframes are sparser than frames, so a query offset of ``k`` frames is
    matched with the keyframe in force ``k`` map steps earlier (-1 before the
    session's first node).
    """
    n = len(graph)
    chain = np.full((L, n), -1)
    by_sess = {}
    for nd in graph.nodes:
        by_sess.setdefault(nd.session_tag, []).append(nd)
    for nodes in by_sess.values():
        steps = np.array([nd.created_step for nd in nodes])
        ids = np.array([nd.id for nd in nodes])
        for k in range(L):
            pos = np.searchsorted(steps, steps - k, side="right") - 1
            chain[k, ids] = np.where(pos >= 0, ids[np.maximum(pos, 0)], -1)
    return chain


def sm_step(window, h=SM_H, tau=TAU, pred=None, chain=None):
    """Sequence match over the last ``2h+1`` score rows.

    The query frame ``t-k`` is paired with ``chain[k, v]`` for candidate end
    node ``v`` (default: its ``k``-th session predecessor via ``pred``) and
    the median of those scores is compared with ``tau``. Returns the end
    node or None.
    """
    rows = np.asarray(window, dtype=float)
    L = 2 * h + 1
    if len(rows) != L:
        raise ValueError(f"window must hold {L} rows, got {len(rows)}")
    n = rows.shape[1]
    if chain is None:
        if pred is None:
            pred = np.arange(n) - 1
        chain = np.empty((L, n), dtype=int)
        chain[0] = np.arange(n)
        for k in range(1, L):
            prev = chain[k - 1]
            chain[k] = np.where(prev >= 0, pred[np.maximum(prev, 0)], -1)
    # row L-1-k of the window is frame t-k
    vals = np.where(chain >= 0, rows[L - 1 - np.arange(L)[:, None], np.maximum(chain, 0)], 0.0)
    med = np.median(vals, axis=0)
    j = int(np.argmax(med))
    return j if med[j] >= tau else None


def hop_distances(graph):
    n = len(graph)
    if n == 0:
        return np.zeros((0, 0))
    rows, cols = [], []
    for e in graph.edges:
        if e.kind in ("odometry", "proximity"):
            rows += [e.src, e.dst]
            cols += [e.dst, e.src]
    A = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return shortest_path(A, unweighted=True, directed=False)


def transition_matrix(hops, alpha=PBU_ALPHA, beta_t=PBU_BETA, w_u=PBU_WU):
    """Row-stochastic ``P[src, dst]``: alpha within ``w_u`` hops, beta_t elsewhere."""
    K = np.where(hops <= w_u, alpha, beta_t)
    s = K.sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    return K / s


def pbu_step(belief, candidates, P):
    """Predict with the transition matrix, weight by clipped similarity."""
    prior = belief.probs @ P
    if candidates:
        g = np.clip(score_row(candidates, len(prior)), LIKELIHOOD_FLOOR, 1.0)
        post = prior * g
    else:
        post = prior
    s = post.sum()
    if not s > 0:
        return DiscreteBelief(np.full(len(prior), 1.0 / len(prior)))
    return DiscreteBelief(post / s)


class _Discrete(BaseEstimator):
    """Shared plumbing: ``fit(graph)`` on a finished map, then stream candidates.

    ``start_session`` resets the per-session state and ``process`` consumes
    one frame's candidate list, returning the current node guess.
    """

    def _setup(self, graph):
        self.graph_ = graph
        Rs, ts = graph.dominant_stack()
        self.node_xyz_ = ts.copy()

    def node_position(self, nid):
        return None if nid is None else self.node_xyz_[nid]


class GMLocalizer(_Discrete):
    def __init__(self, tau=TAU):
        self.tau = tau

    def fit(self, graph):
        self._setup(graph)
        return self

    def start_session(self, pose=None):
        self.current_ = None

    def process(self, candidates):
        self.current_ = gm_step(candidates, self.tau, self.current_)
        return self.current_


class SMLocalizer(_Discrete):
    def __init__(self, h=SM_H, tau=TAU):
        self.h = h
        self.tau = tau

    def fit(self, graph):
        self._setup(graph)
        self.chain_ = step_chains(graph, 2 * self.h + 1)
        return self

    def start_session(self, pose=None):
        self.window_ = deque(maxlen=2 * self.h + 1)
        self.current_ = None

    def process(self, candidates):
        self.window_.append(score_row(candidates, len(self.graph_)))
        if len(self.window_) == self.window_.maxlen:
            hit = sm_step(list(self.window_), self.h, self.tau, chain=self.chain_)
            if hit is not None:
                self.current_ = hit
        return self.current_


class PBULocalizer(_Discrete):
    def __init__(self, alpha=PBU_ALPHA, beta_t=PBU_BETA, w_u=PBU_WU):
        self.alpha = alpha
        self.beta_t = beta_t
        self.w_u = w_u

    def fit(self, graph):
        self._setup(graph)
        self.P_ = transition_matrix(hop_distances(graph), self.alpha, self.beta_t, self.w_u)
        return self

    def start_session(self, pose=None):
        n = len(self.graph_)
        self.belief_ = DiscreteBelief(np.full(n, 1.0 / n))
        self.current_ = None

    def process(self, candidates):
        self.belief_ = pbu_step(self.belief_, candidates, self.P_)
        if candidates:
            self.current_ = self.belief_.argmax()
        return self.current_
