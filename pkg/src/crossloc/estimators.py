"""Estimator-style front door.

``CrossLocalizer.fit(map_sessions)`` builds the topological map online;
``predict(query_session)`` relocalises against it and returns one position
per frame (NaN while lost). With ``isolate_sessions`` each map session only
retrieves its own nodes, so a session never relocalises into an earlier
session's map while it is being built. The perception front end is a constructor
parameter exposing ``observe(frame, graph)`` and ``node_meta(frame)``; the
simulator's :class:`~crossloc.sim.SimFrontEnd` is the only one shipped.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import graph as tg
from .engine import CrossFilter, FilterConfig
from .validation import check_scalar_range, check_sessions


class CrossLocalizer(BaseEstimator):
    def __init__(
        self,
        front_end=None,
        k_max=5,
        eps_birth=0.05,
        miss_factor=0.5,
        beta=0.55,
        cluster_eps=1.0,
        inlier_floor=8,
        window=10,
        accept=7,
        smooth_every=25,
        small_increment=False,
        isolate_sessions=True,
    ):
        self.front_end = front_end
        self.k_max = k_max
        self.eps_birth = eps_birth
        self.miss_factor = miss_factor
        self.beta = beta
        self.cluster_eps = cluster_eps
        self.inlier_floor = inlier_floor
        self.window = window
        self.accept = accept
        self.smooth_every = smooth_every
        self.small_increment = small_increment
        self.isolate_sessions = isolate_sessions

    def _config(self):
        check_scalar_range(self.k_max, "k_max", 1, kind=int)
        check_scalar_range(self.eps_birth, "eps_birth", 0.0, 1.0, include_low=False, include_high=False)
        check_scalar_range(self.miss_factor, "miss_factor", 0.0, 1.0, include_low=False)
        check_scalar_range(self.beta, "beta", 0.0, 1.0)
        check_scalar_range(self.cluster_eps, "cluster_eps", 0.0, include_low=False)
        check_scalar_range(self.accept, "accept", 1, self.window, kind=int)
        if self.front_end is None:
            raise ValueError("front_end is required")
        return FilterConfig(
            k_max=self.k_max,
            eps_birth=self.eps_birth,
            miss_factor=self.miss_factor,
            beta=self.beta,
            cluster_eps=self.cluster_eps,
            inlier_floor=self.inlier_floor,
            window=self.window,
            accept=self.accept,
            smooth_every=self.smooth_every,
            small_increment=self.small_increment,
        )

    # -- fitting (mapping) ---------------------------------------------------

    def fit(self, X, y=None, start_known=True):
        """Map every session in ``X`` (a list of frame lists, or one frame list)."""
        sessions = check_sessions(X)
        self.filter_ = CrossFilter(self._config(), tg.TopoGraph())
        self.graph_ = self.filter_.graph
        self.map_log_ = []
        for frames in sessions:
            self.map_log_.extend(self._run(frames, mapping=True, start_known=start_known))
        self.n_nodes_ = len(self.graph_)
        return self

    def partial_fit(self, X, y=None, start_known=True):
        if not hasattr(self, "filter_"):
            return self.fit(X, start_known=start_known)
        for frames in check_sessions(X):
            self.map_log_.extend(self._run(frames, mapping=True, start_known=start_known))
        self.n_nodes_ = len(self.graph_)
        return self

    # -- querying -------------------------------------------------------------

    def predict(self, X, start_known=False):
        """Dominant-hypothesis positions, ``(n_frames, 3)``; NaN rows while lost."""
        check_is_fitted(self, "graph_")
        out = []
        self.log_ = []
        for frames in check_sessions(X):
            recs = self._run(frames, mapping=False, start_known=start_known)
            self.log_.extend(recs)
            out.extend(r["estimate"] for r in recs)
        return np.array(
            [np.full(3, np.nan) if e is None else e.translation for e in out],
        ).reshape(-1, 3)

    def start_session(self, pose=None):
        check_is_fitted(self, "graph_")
        self.filter_.reset(pose)

    def process(self, frame, mapping=False):
        """Advance one frame; returns the engine's step record and the observation."""
        if mapping and self.isolate_sessions:
            obs = self.front_end.observe(frame, self.graph_, own_session=True)
        else:
            obs = self.front_end.observe(frame, self.graph_)
        return self.process_observation(frame, obs, mapping), obs

    def process_observation(self, frame, obs, mapping=False):
        meta = self.front_end.node_meta(frame) if mapping else None
        return self.filter_.step(
            frame.step,
            frame.odometry,
            frame.odo_cov,
            obs.candidates,
            mapping=mapping,
            descriptor=obs.descriptor,
            session=str(frame.session),
            meta=meta,
        )

    def _run(self, frames, mapping, start_known):
        self.filter_.reset(frames[0].true_pose if start_known else None, step=frames[0].step)
        recs = []
        for fr in frames:
            info, obs = self.process(fr, mapping)
            recs.append({"frame": fr, "info": info, "estimate": info.estimate, "obs": obs})
        return recs

    # -- introspection --------------------------------------------------------

    def belief(self):
        check_is_fitted(self, "graph_")
        return self.filter_.belief

    def hypotheses(self):
        check_is_fitted(self, "graph_")
        return self.filter_.store.live
