"""Map/query trials for the continuous filter and the discrete baselines.

One job is one (scenario, seed): build the map from the map sessions, then
run every requested method over the same query observations. The query
sessions are cut into fixed-length trials, each scored on its own.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import baselines as bl
from ..estimators import CrossLocalizer
from ..exceptions import ConfigError
from ..sim import SimFrontEnd, generate, make_frames

METHODS = ("cross", "gm", "sm", "pbu")
LOG_FIELDS = ["step", "tx", "ty", "tz", "est_tx", "est_ty", "est_tz", "err_m", "n_hyp", "w0", "w_dom", "node_id", "event"]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "nan"
    return f"{x:.6f}"


@dataclass
class StepRow:
    step: int
    truth: np.ndarray
    est: np.ndarray | None
    n_hyp: int | None = None
    w0: float | None = None
    w_dom: float | None = None
    node_id: int | None = None
    event: str = ""

    @property
    def err(self):
        if self.est is None:
            return math.nan
        return float(np.linalg.norm(self.est - self.truth))

    def cells(self):
        e = [None] * 3 if self.est is None else list(self.est)
        return [self.step, *self.truth, *e, self.err, self.n_hyp, self.w0, self.w_dom, self.node_id, self.event]


def log_text(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow([_fmt(c) if not isinstance(c, str) else c for c in r.cells()])
    return buf.getvalue()


@dataclass
class TrialRun:
    scenario: str
    method: str
    seed: int
    trial: int
    rows: list
    seconds: float
    meta: dict = field(default_factory=dict)

    @property
    def trial_id(self):
        # unique within a scenario: seed-major
        return self.seed * 1000 + self.trial

    @property
    def name(self):
        return f"{self.scenario}__{self.method}__s{self.seed}__t{self.trial}"


def split_trials(frames, trial_len):
    """Consecutive ``trial_len`` chunks; a shorter query is one trial."""
    if trial_len <= 0 or len(frames) <= trial_len:
        return [frames]
    n = len(frames) // trial_len
    return [frames[k * trial_len : (k + 1) * trial_len] for k in range(n)]


def map_world(sc, **params):
    """Fitted :class:`CrossLocalizer` whose graph covers every map session."""
    est = CrossLocalizer(front_end=SimFrontEnd(sc), **params)
    maps = [make_frames(sc, k) for k, s in enumerate(sc.sessions) if s.mode == "map"]
    if not maps:
        raise ConfigError("scenario has no map session", "sessions")
    est.fit(maps)
    return est


def _make_baseline(method):
    return {"gm": bl.GMLocalizer, "sm": bl.SMLocalizer, "pbu": bl.PBULocalizer}[method]()


def run_cross(est, frames, observations, start_known):
    est.filter_.reset(frames[0].true_pose if start_known else None, step=frames[0].step)
    rows = []
    for fr, obs in zip(frames, observations):
        info = est.process_observation(fr, obs)
        e = info.estimate
        rows.append(
            StepRow(
                fr.step,
                fr.true_pose.translation.copy(),
                None if e is None else e.translation.copy(),
                info.n_hyp,
                info.w0,
                info.w_dom,
                None,
                info.event,
            )
        )
    return rows


def run_discrete(model, frames, observations, start_known):
    model.start_session(frames[0].true_pose if start_known else None)
    rows = []
    for fr, obs in zip(frames, observations):
        nid = model.process(obs.candidates)
        pos = model.node_position(nid)
        rows.append(StepRow(fr.step, fr.true_pose.translation.copy(), None if pos is None else pos.copy(), node_id=nid))
    return rows


def run_scenario(sc, methods=METHODS, trial_len=None, cross_params=None):
    """All trials of one generated scenario; returns a list of :class:`TrialRun`."""
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method {bad[0]!r}; choose from {list(METHODS)}", "methods")
    trial_len = sc.eval.trial_len if trial_len is None else trial_len
    est = map_world(sc, **(cross_params or {}))
    # snapshot for the baselines before any query-time merge touches the map
    discrete = {}
    for m in methods:
        if m != "cross":
            discrete[m] = _make_baseline(m).fit(est.graph_)
    fe = est.front_end
    out = []
    for q in sc.query_sessions():
        frames = make_frames(sc, q)
        obs = [fe.observe(f, est.graph_) for f in frames]
        known = sc.sessions[q].start_known
        for k, chunk in enumerate(split_trials(list(zip(frames, obs)), trial_len)):
            fr = [c[0] for c in chunk]
            ob = [c[1] for c in chunk]
            for m in methods:
                t0 = time.perf_counter()
                if m == "cross":
                    rows = run_cross(est, fr, ob, known)
                else:
                    rows = run_discrete(discrete[m], fr, ob, known)
                dt = time.perf_counter() - t0
                meta = {"r_d": sc.eval.r_d, "metric": sc.eval.metric, "deadline": sc.eval.deadline}
                out.append(TrialRun(sc.name, m, sc.seed, k, rows, dt, meta))
    return out


def run_preset(preset, seed, methods=METHODS, overrides=None, trial_len=None):
    return run_scenario(generate(preset, seed, **(overrides or {})), methods, trial_len)
