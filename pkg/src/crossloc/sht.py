"""Sequential hypothesis testing for loop closure / kidnapped-robot recovery."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import pgo
from .exceptions import CrossError, InconsistentMerge, NullDead
from .hypotheses import Hypothesis

WINDOW = 10
ACCEPT = 7
# joint solutions whose cost exceeds this chi-square quantile are refused
MERGE_CONFIDENCE = 0.999


@dataclass
class OddsWindow:
    W: int = WINDOW
    r: int = ACCEPT
    buffers: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.r <= self.W:
            raise ValueError(f"need 0 < r <= W, got r={self.r}, W={self.W}")

    def count(self, l):
        return sum(self.buffers.get(l, ()))

    def clear(self, l):
        self.buffers.pop(l, None)
        self.history.pop(l, None)


def log_odds(weights):
    """``log(w_l / w_0)`` for every alternative ``l != 0``."""
    w0 = weights.get(0, 0.0)
    if not w0 > 0.0:
        raise NullDead("hypothesis 0 is not alive")
    return {l: float(np.log(w / w0)) for l, w in weights.items() if l != 0}


def window_update(win, odds):
    """Push sign indicators; return the accepted ids, highest odds first."""
    for l in list(win.buffers):
        if l not in odds:
            win.clear(l)
    for l, v in odds.items():
        buf = win.buffers.setdefault(l, deque(maxlen=win.W))
        buf.append(v > 0.0)
        win.history.setdefault(l, deque(maxlen=win.W)).append(v)
    acc = [l for l in odds if win.count(l) >= win.r]
    return sorted(acc, key=lambda l: (-odds[l], l))


def promote_null(weights):
    """Id that should become the new null when 0 has died (heaviest, lowest id on ties)."""
    if 0 in weights:
        return None
    if not weights:
        return None
    return min(weights, key=lambda l: (-weights[l], l))


def merge(h0, hl, graph=None, analytic=True):
    """Fold ``hl`` into ``h0`` after a joint loop-closure PGO.

    Returns a new id-0 :class:`Hypothesis` whose shared-step poses are the
    jointly optimised ones; the current covariance is the tighter of the two.
    Raises :class:`InconsistentMerge` when the two branches cannot describe
    the same trajectory (their joint optimum fails a chi-square test).
    """
    steps, merged, res = pgo.joint_loop_pgo(h0, hl, graph, analytic=analytic)
    dof = max(1, 6 * res.n_factors - 6 * res.n_free)
    if res.cost > chi2.ppf(MERGE_CONFIDENCE, dof):
        raise InconsistentMerge(f"joint cost {res.cost:.3g} on {dof} dof")
    out = Hypothesis(id=0, birth_time=min(h0.birth_time, hl.birth_time))
    by_step = dict(zip(steps, merged))
    # keep the null's history before the overlap, the optimised poses inside it
    pos0 = {s: k for k, s in enumerate(h0.steps)}
    for s in h0.steps:
        k = pos0[s]
        out.steps.append(s)
        out.trajectory.append(by_step.get(s, h0.trajectory[k]))
        out.traj_covs.append(h0.traj_covs[k])
        out.odometry.append(h0.odometry[k])
    c0, cl = h0.traj_covs[-1], hl.traj_covs[-1]
    out.traj_covs[-1] = (c0 if np.trace(c0) <= np.trace(cl) else cl).copy()
    out.weight = h0.weight + hl.weight
    out.visual_constraints = list(h0.visual_constraints) + [
        v for v in hl.visual_constraints if v not in h0.visual_constraints
    ]
    return out


@dataclass
class SHTEvent:
    step: int
    hyp: int
    status: str  # accepted, merged, deferred, promoted
    odds: list

    def line(self):
        hist = ",".join(format(v, ".6g") for v in self.odds)
        return f"{self.step} {self.hyp} {self.status} {hist}"


class LoopCloser:
    """Window bookkeeping plus merge execution; at most one merge per step."""

    def __init__(self, W=WINDOW, r=ACCEPT):
        self.window = OddsWindow(W, r)
        self.events = []

    def reset(self):
        self.window = OddsWindow(self.window.W, self.window.r)
        self.events = []

    def check(self, weights, step):
        """Return the id to merge this step (or None)."""
        odds = log_odds(weights)
        acc = window_update(self.window, odds)
        if not acc:
            return None
        l = acc[0]
        self.events.append(SHTEvent(step, l, "accepted", list(self.window.history.get(l, []))))
        return l

    def defer(self, l, step):
        self.events.append(SHTEvent(step, l, "deferred", list(self.window.history.get(l, []))))
        self.window.clear(l)

    def merged(self, l, step):
        self.events.append(SHTEvent(step, l, "merged", list(self.window.history.get(l, []))))
        self.window.clear(l)

    def promoted(self, l, step):
        self.events.append(SHTEvent(step, l, "promoted", []))
        self.window.clear(l)

    def log_text(self):
        return "".join(e.line() + "\n" for e in self.events)


def safe_merge(h0, hl, graph=None):
    """merge() that returns None instead of raising on optimiser failure."""
    try:
        return merge(h0, hl, graph)
    except (CrossError, np.linalg.LinAlgError, ValueError):
        return None
