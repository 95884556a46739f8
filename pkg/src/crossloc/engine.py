"""Per-step localisation and mapping pipeline.

predict -> measurement message -> clustering -> fusion/birth -> bookkeeping
-> null promotion -> sequential test / merge -> (map mode) node creation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import graph as tg
from . import hypotheses as hm
from . import measurement as mm
from . import pgo, sht
from .belief import K_MAX, BeliefMixture, predict, transport_cov
from .exceptions import EmptyCandidates, ZeroMass
from .se3 import Pose

log = logging.getLogger(__name__)

# matches against this many of the session's latest nodes count as tracking
RECENT_NODES = 5
INIT_COV = np.diag([0.01**2] * 3 + [0.005**2] * 3)


@dataclass
class FilterConfig:
    k_max: int = K_MAX
    eps_birth: float = hm.EPS_BIRTH
    miss_factor: float = hm.MISS_FACTOR
    gate: float = hm.GATE
    prune: float = hm.PRUNE_WEIGHT
    cluster_eps: float = mm.DEFAULT_EPS
    min_pts: int = mm.DEFAULT_MIN_PTS
    dist_weights: tuple = tuple(mm.DEFAULT_W)
    inlier_floor: int = mm.INLIER_FLOOR
    temperature: float = 1.0
    window: int = sht.WINDOW
    accept: int = sht.ACCEPT
    smooth_every: int = pgo.SMOOTH_EVERY
    beta: float = tg.BETA
    proximity_radius: float = tg.PROXIMITY_RADIUS
    small_increment: bool = False


@dataclass
class StepInfo:
    step: int
    n_hyp: int
    w0: float
    estimate: Pose | None
    w_dom: float = 0.0
    births: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    merged: int | None = None
    promoted: int | None = None
    zero_mass: bool = False
    new_node: int | None = None
    n_clusters: int = 0

    @property
    def event(self):
        tags = []
        if self.zero_mass:
            tags.append("zeromass")
        if self.births:
            tags.append("birth")
        if self.promoted is not None:
            tags.append("promote")
        if self.merged is not None:
            tags.append("merge")
        if self.new_node is not None:
            tags.append("node")
        return "+".join(tags)


class CrossFilter:
    def __init__(self, config=None, graph=None):
        self.cfg = config or FilterConfig()
        self.graph = graph if graph is not None else tg.TopoGraph()
        self.store = hm.HypothesisStore()
        self.closer = sht.LoopCloser(self.cfg.window, self.cfg.accept)
        self.belief = BeliefMixture.empty()
        self.zero_mass_count = 0
        self._odo_since_node = {}
        self._steps_since_smooth = 0

    # -- lifecycle ---------------------------------------------------------

    def reset(self, start_pose=None, start_cov=None, step=0):
        """Start a session: known pose, or lost (empty belief) when ``start_pose`` is None."""
        self.store.reset()
        self.closer.reset()
        self._steps_since_smooth = 0
        if start_pose is None:
            self.belief = BeliefMixture.empty()
        else:
            cov = INIT_COV if start_cov is None else np.asarray(start_cov, dtype=float)
            self.belief = BeliefMixture.single(start_pose, cov, 0)
            self.store.bookkeep(self.belief, step)

    def estimate(self):
        k = self.belief.dominant()
        return None if k is None else self.belief.mean_of(k)

    def estimate_cov(self):
        k = self.belief.dominant()
        return None if k is None else self.belief.covs[k]

    # -- one step ----------------------------------------------------------

    def step(self, step, u, Q, candidates, mapping=False, descriptor=None, session="0", meta=None):
        cfg = self.cfg
        info = StepInfo(step, 0, 0.0, None)
        prior = self.belief
        if len(prior):
            prior = predict(prior, u, Q, small_increment=cfg.small_increment)
        if mapping:
            od = self._odo_since_node.get(session)
            if od is not None:
                self._odo_since_node[session] = (od[0] @ u, transport_cov(od[1], u) + Q)

        cands = mm.filter_candidates(candidates, cfg.inlier_floor)
        clusters = []
        if cands:
            try:
                probs = mm.association_probs(cands, cfg.temperature)
                msg = mm.build_measurement_message(cands, probs, self.graph)
                clusters = mm.cluster_measurements(
                    msg,
                    cfg.cluster_eps,
                    cfg.min_pts,
                    np.asarray(cfg.dist_weights),
                    cfg.k_max,
                    node_of_source=[c.node_id for c in cands],
                )
            except EmptyCandidates:
                clusters = []
        info.n_clusters = len(clusters)

        try:
            post, ev = hm.update_step(
                prior,
                clusters,
                cfg.eps_birth,
                next_id=self.store.next_id,
                miss_factor=cfg.miss_factor,
                gate=cfg.gate,
                prune=cfg.prune,
                k_max=cfg.k_max,
            )
        except ZeroMass:
            # filter divergence: restart from the measurement alone
            info.zero_mass = True
            self.zero_mass_count += 1
            for h in list(self.store.live):
                self.store.live[h].death_time = step
                self.store.archive.append(self.store.live.pop(h))
            self.closer.reset()
            post, ev = hm.update_step(BeliefMixture.empty(), clusters, cfg.eps_birth, next_id=self.store.next_id)
        if ev.births:
            self.store.next_id = max(self.store.next_id, max(ev.births) + 1)
        info.births = sorted(ev.births)
        info.pruned = ev.pruned

        constraints = self._constraints(ev, clusters, cands, step, session)
        self.belief = post
        self.store.bookkeep(post, step, ev, odometry=(u, Q), constraints=constraints)

        if len(self.belief):
            self._promote_if_needed(step, info)
            self._test_and_merge(step, info)

        if mapping:
            self._maybe_map(step, candidates, descriptor, session, meta, info)
            self._visual_edges(step, session)
            self._steps_since_smooth += 1
            if self._steps_since_smooth >= cfg.smooth_every:
                self.smooth()
        info.n_hyp = len(self.belief)
        k0 = self.belief.index_of(0)
        info.w0 = float(self.belief.weights[k0]) if k0 is not None else 0.0
        info.estimate = self.estimate()
        kd = self.belief.dominant()
        info.w_dom = float(self.belief.weights[kd]) if kd is not None else 0.0
        return info

    # -- pieces ------------------------------------------------------------

    def _constraints(self, ev, clusters, cands, step, session):
        out = {}
        if not ev.matched:
            return out
        node_from = self.graph.previous_in_session(session)
        for hid, c_idx in ev.matched.items():
            nodes = clusters[c_idx].source_nodes
            recs = []
            for c in cands:
                if c.node_id in nodes:
                    recs.append(hm.VisualConstraint(step, node_from, c.node_id, c.rel_pose, c.rel_cov))
            out[hid] = recs
        return out

    def _promote_if_needed(self, step, info):
        w = {int(l): float(x) for l, x in zip(self.belief.ids, self.belief.weights)}
        new0 = sht.promote_null(w)
        if new0 is None:
            return
        self.belief.ids[self.belief.index_of(new0)] = 0
        self.store.relabel(new0, 0)
        self.closer.promoted(new0, step)
        info.promoted = new0

    def _test_and_merge(self, step, info):
        w = {int(l): float(x) for l, x in zip(self.belief.ids, self.belief.weights)}
        l = self.closer.check(w, step)
        if l is None:
            return
        if self.cfg.smooth_every and len(self.graph):
            self.smooth()
        h0, hl = self.store.live[0], self.store.live[l]
        merged = sht.safe_merge(h0, hl, self.graph)
        if merged is None:
            self.closer.defer(l, step)
            return
        k0, kl = self.belief.index_of(0), self.belief.index_of(l)
        b = self.belief.copy()
        b.R[k0] = merged.trajectory[-1].rotation
        b.t[k0] = merged.trajectory[-1].translation
        b.covs[k0] = merged.traj_covs[-1]
        b.weights[k0] = b.weights[k0] + b.weights[kl]
        keep = [k for k in range(len(b)) if k != kl]
        self.belief = b.take(keep)
        self.store.live.pop(l)
        hl.death_time = step
        self.store.archive.append(hl)
        self.store.live[0] = merged
        self._fold_nodes(l)
        self.closer.merged(l, step)
        info.merged = l

    def _fold_nodes(self, l):
        for n in self.graph.nodes:
            m = n.pose_mixture
            kl = m.index_of(l)
            if kl is None:
                continue
            k0 = m.index_of(0)
            if k0 is None:
                m.ids[kl] = 0
            else:
                m.weights[k0] += m.weights[kl]
                n.pose_mixture = m.take([k for k in range(len(m)) if k != kl])
        for e in self.graph.edges:
            if e.kind == "visual" and e.hyp_id == l:
                e.hyp_id = 0
        self.graph.invalidate()

    def _maybe_map(self, step, candidates, descriptor, session, meta, info):
        if descriptor is None or len(self.belief) == 0:
            return
        max_sim = max((c.vpr_score for c in candidates), default=0.0)
        node = tg.maybe_create_node(self.graph, max_sim, self.cfg.beta, self.belief, descriptor, step, session, meta)
        if node is None:
            return
        od = self._odo_since_node.get(session)
        tg.add_edges(
            node,
            self.graph,
            self.cfg.proximity_radius,
            odo_rel=None if od is None else od[0],
            odo_cov=None if od is None else od[1] + 1e-9 * np.eye(6),
        )
        self._odo_since_node[session] = (Pose(), np.zeros((6, 6)))
        info.new_node = node.id

    def _visual_edges(self, step, session):
        """Turn this step's loop-closing matches into visual edges of the map.

        Each edge joins the session's latest node to the matched node; the
        measurement is ``mu_from^-1 x T^-1`` with ``x`` the hypothesis' current
        mean and ``T`` the candidate's relative pose. Matches against the
        session's own recent nodes are plain tracking and add nothing.
        """
        src = self.graph.previous_in_session(session)
        if src is None:
            return
        recent = set(self.graph.session_path(session)[-RECENT_NODES:])
        src_mix = self.graph.node(src).pose_mixture
        for k in range(len(self.belief)):
            hid = int(self.belief.ids[k])
            ks = src_mix.index_of(hid)
            h = self.store.live.get(hid)
            if ks is None or h is None:
                continue
            x = self.belief.mean_of(k)
            mu_from = src_mix.mean_of(ks)
            for vc in h.visual_constraints[::-1]:
                if vc.step != step:
                    break
                if vc.node_to in recent:
                    continue
                rel = mu_from.inverse() @ x @ vc.rel_pose.inverse()
                self.graph.add_edge(tg.MapEdge("visual", src, vc.node_to, rel, vc.cov, hid))

    def smooth(self):
        self._steps_since_smooth = 0
        for hid in sorted(self.store.live):
            try:
                pgo.smooth_hypothesis(self.graph, hid)
            except Exception as exc:  # smoothing is best effort
                log.debug("smoothing hypothesis %s failed: %s", hid, exc)
