"""Perception surrogate: odometry noise, appearance model, simulated retrieval + PnP.

Every random draw comes from a generator seeded with
``(scenario seed, session, step, stream)`` so results do not depend on the
order in which frames or trials are processed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import se3
from ..measurement import INLIER_FLOOR, MeasurementCandidate
from ..se3 import Pose

ODO_STREAM = 1 << 20
DESC_STREAM = 7
# floor on the odometry covariance handed to the filter
Q_FLOOR = np.array([0.003**2] * 3 + [0.001**2] * 3)


def inject_odometry_noise(T, snr, rng):
    """``T exp(xi)`` with per-axis sigmas ``|t|/(snr sqrt 3)`` and ``|log R|/(snr sqrt 3)``."""
    if snr is None or not np.isfinite(snr):
        return T.copy()
    if snr <= 0:
        raise ValueError("snr must be positive")
    sig_t, sig_r = odometry_sigmas(T, snr)
    xi = np.concatenate([rng.normal(scale=1.0, size=3) * sig_t, rng.normal(scale=1.0, size=3) * sig_r])
    if not xi.any():
        return T.copy()
    return T @ se3.exp_map(xi)


def odometry_sigmas(T, snr):
    if snr is None or not np.isfinite(snr):
        return 0.0, 0.0
    k = 1.0 / (snr * np.sqrt(3.0))
    return float(np.linalg.norm(T.translation)) * k, float(np.linalg.norm(se3.so3_log_batch(T.rotation[None])[0])) * k


def odometry_cov(u_noisy, snr):
    """Process noise the filter assumes for a reported increment."""
    st, sr = odometry_sigmas(u_noisy, snr)
    return np.diag(np.array([st**2] * 3 + [sr**2] * 3) + Q_FLOOR)


@dataclass
class Frame:
    step: int
    session: int
    true_pose: Pose
    odometry: Pose  # reported (noisy) increment from the previous frame
    odo_cov: np.ndarray
    occluded: bool = False
    blurred: bool = False
    kidnapped: bool = False


@dataclass
class Observation:
    step: int
    candidates: list
    true_pose: Pose
    max_similarity: float = 0.0
    descriptor: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _rng(seed, session, step, stream):
    return np.random.default_rng([int(seed), int(session), int(step), int(stream)])


def make_frames(sc, session):
    """Frames of one session: truth, noisy odometry and event flags."""
    ses = sc.sessions[session]
    poses = ses.poses()
    snr = sc.session_snr(session)
    occl, blur, kid = set(), set(), set()
    for e in sc.events_for(session):
        rng_steps = range(e.step, e.step + max(1, e.duration))
        if e.kind == "occlude":
            occl.update(rng_steps)
        elif e.kind == "blur":
            blur.update(rng_steps)
        elif e.kind == "kidnap":
            kid.add(e.step)
    frames = []
    for k, x in enumerate(poses):
        if k == 0 or k in kid:
            u = Pose()
        else:
            u_true = poses[k - 1].inverse() @ x
            u = inject_odometry_noise(u_true, snr, _rng(sc.seed, session, k, ODO_STREAM))
        frames.append(Frame(k, session, x, u, odometry_cov(u, snr), k in occl, k in blur, k in kid))
    return frames


def session_descriptors(sc, session):
    """Appearance of every place under a session's shift.

    Each descriptor is rotated towards a random direction orthogonal to it by
    ``shift * pi/2``. The direction is keyed by (session, alias group) so twins
    stay identical within a session.
    """
    D = sc.descriptor_matrix()
    a = sc.sessions[session].appearance_shift
    if a == 0.0:
        return D.copy()
    groups = sc.group_of()
    out = np.empty_like(D)
    for p, g in enumerate(groups):
        r = _rng(sc.seed, session, g, DESC_STREAM).normal(size=sc.dim)
        d = D[p]
        r = r - (r @ d) * d
        r /= np.linalg.norm(r)
        out[p] = np.cos(a * np.pi / 2) * d + np.sin(a * np.pi / 2) * r
    return out


class SimFrontEnd:
    """Stands in for retrieval + feature matching + PnP against map keyframes.

    A map node remembers the true keyframe pose and the place it was created
    at (``node.meta``). For a query at ``x`` every node is also considered at
    the equivalent location next to each alias twin of its place, which is how
    twins far apart end up retrieved with the same appearance score.
    """

    def __init__(self, scenario):
        self.sc = scenario
        self.place_R, self.place_t = se3.stack(scenario.place_poses())
        self.groups = scenario.group_of()
        members = {}
        for p, g in enumerate(self.groups):
            members.setdefault(g, []).append(p)
        self.members = members
        self._desc = {}
        self._graph_id = None
        self._n_seen = 0
        self._E_node = np.zeros(0, dtype=int)
        self._E_place = np.zeros(0, dtype=int)
        self._E_sess = np.zeros(0, dtype=int)
        self._E_R = np.zeros((0, 3, 3))
        self._E_t = np.zeros((0, 3))

    def descriptors(self, session):
        if session not in self._desc:
            self._desc[session] = session_descriptors(self.sc, session)
        return self._desc[session]

    def nearest_place(self, x):
        return int(np.argmin(np.linalg.norm(self.place_t - x.translation, axis=1)))

    def node_meta(self, frame):
        return {
            "y": frame.true_pose.copy(),
            "place": self.nearest_place(frame.true_pose),
            "session": frame.session,
        }

    def _sync(self, graph):
        if self._graph_id != id(graph) or len(graph) < self._n_seen:
            self._graph_id = id(graph)
            self._n_seen = 0
            self._E_node = np.zeros(0, dtype=int)
            self._E_place = np.zeros(0, dtype=int)
            self._E_sess = np.zeros(0, dtype=int)
            self._E_R = np.zeros((0, 3, 3))
            self._E_t = np.zeros((0, 3))
        if len(graph) == self._n_seen:
            return
        nodes, places, sess, Rs, ts = [], [], [], [], []
        for n in graph.nodes[self._n_seen :]:
            y, q = n.meta["y"], n.meta["place"]
            for p in self.members[self.groups[q]]:
                # P_p P_q^-1 y
                Rq, tq = se3.inverse_batch(self.place_R[q], self.place_t[q])
                R1, t1 = se3.compose_batch(self.place_R[p], self.place_t[p], Rq, tq)
                R2, t2 = se3.compose_batch(R1, t1, y.rotation, y.translation)
                nodes.append(n.id)
                places.append(p)
                sess.append(n.meta["session"])
                Rs.append(R2)
                ts.append(t2)
        self._E_node = np.concatenate([self._E_node, nodes]).astype(int)
        self._E_place = np.concatenate([self._E_place, places]).astype(int)
        self._E_sess = np.concatenate([self._E_sess, sess]).astype(int)
        self._E_R = np.concatenate([self._E_R, np.array(Rs).reshape(-1, 3, 3)])
        self._E_t = np.concatenate([self._E_t, np.array(ts).reshape(-1, 3)])
        self._n_seen = len(graph)

    def observe(self, frame, graph, own_session=False):
        """Candidates for one frame; ``own_session`` hides nodes mapped by other sessions."""
        sc = self.sc
        x = frame.true_pose
        Ds = self.descriptors(frame.session)
        desc = Ds[self.nearest_place(x)]
        obs = Observation(frame.step, [], x, 0.0, desc)
        if frame.occluded or len(graph) == 0:
            return obs
        self._sync(graph)
        d = np.linalg.norm(self._E_t - x.translation, axis=1)
        keep = d <= sc.sensing.radius
        if own_session:
            keep &= self._E_sess == frame.session
        near = np.flatnonzero(keep)
        if len(near) == 0:
            return obs
        node_desc = np.stack([graph.nodes[i].descriptor for i in self._E_node[near]])
        cos = np.einsum("ij,ij->i", node_desc, Ds[self._E_place[near]])
        score = np.clip(cos, 0.0, 1.0) * np.exp(-0.5 * (d[near] / sc.sensing.geom_sigma) ** 2)
        # best equivalent location per node
        best = {}
        for e, s in zip(near, score):
            nid = int(self._E_node[e])
            if nid not in best or s > best[nid][0]:
                best[nid] = (float(s), int(e))
        ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))[: sc.sensing.top_n]
        obs.max_similarity = ranked[0][1][0] if ranked else 0.0
        sig_t, sig_r = sc.noise.rel_pose_sigma
        if frame.blurred:
            sig_t, sig_r = 10 * sig_t, 10 * sig_r
        rel_cov = np.diag([sig_t**2] * 3 + [sig_r**2] * 3)
        M = sc.sensing.max_features
        penalty = sc.noise.blur_penalty if frame.blurred else 0.0
        for nid, (s, e) in ranked:
            rng = _rng(sc.seed, frame.session, frame.step, nid)
            Ry, ty = self._E_R[e], self._E_t[e]
            Rr, tr = se3.between_batch(Ry, ty, x.rotation, x.translation)
            if rng.random() < sc.noise.outlier_rate:
                rel = _uniform_ball_pose(rng)
                inl = int(rng.integers(0, INLIER_FLOOR))
            else:
                xi = np.concatenate([rng.normal(size=3) * sig_t, rng.normal(size=3) * sig_r])
                rel = Pose(Rr, tr) @ se3.exp_map(xi)
                inl = int(round(M * s * (1.0 - penalty)))
            obs.candidates.append(MeasurementCandidate(nid, s, min(inl, M), M, rel, rel_cov.copy()))
        return obs


def _uniform_ball_pose(rng, radius=5.0, max_angle=np.pi - 1e-3):
    v = rng.normal(size=3)
    t = v / np.linalg.norm(v) * radius * rng.random() ** (1 / 3)
    a = rng.normal(size=3)
    a = a / np.linalg.norm(a) * rng.uniform(0.0, max_angle)
    return se3.exp_map(np.concatenate([t, a]))
