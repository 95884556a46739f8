"""Pose-aware topological map: nodes carry a descriptor and a pose mixture.

Text serialisation (one record per line, whitespace separated)::

    NODE id session step d_0 ... d_{D-1}
    COMP node hyp_id weight tx ty tz qx qy qz qw c_00 c_01 ... c_55   (upper triangle, 21 values)
    EDGE kind from to tx ty tz qx qy qz qw s_0 ... s_5                 (covariance diagonal)

Floats are written with 17 significant digits so parsing and re-writing a
file reproduces it byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import se3
from .belief import BeliefMixture, GaussianComponent
from .exceptions import EmptyGraph, UnknownNode
from .se3 import Pose

BETA = 0.55
PROXIMITY_RADIUS = 0.5
EDGE_KINDS = ("odometry", "proximity", "visual", "loop")
# translation-only metric used for proximity edges
TRANSLATION_W = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
_IU = np.triu_indices(6)


@dataclass
class MapNode:
    id: int
    descriptor: np.ndarray
    pose_mixture: BeliefMixture
    created_step: int = 0
    session_tag: str = "0"
    # simulator payload (true keyframe pose etc.); never read by the filter
    meta: dict = field(default_factory=dict)

    def dominant_mean(self):
        k = self.pose_mixture.dominant()
        return self.pose_mixture.mean_of(k)


@dataclass
class MapEdge:
    kind: str
    src: int
    dst: int
    rel_pose: Pose
    cov: np.ndarray
    hyp_id: int | None = None  # only for visual edges

    @property
    def tag(self):
        return f"visual:{self.hyp_id}" if self.kind == "visual" else self.kind


class TopoGraph:
    """Append-only node store plus typed edges."""

    def __init__(self):
        self.nodes = []
        self.edges = []
        self._last_in_session = {}
        self._cache = None

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node_id):
        return 0 <= node_id < len(self.nodes)

    def node(self, node_id):
        if not (0 <= node_id < len(self.nodes)):
            raise UnknownNode(node_id)
        return self.nodes[node_id]

    def add_node(self, descriptor, mixture, step=0, session="0", meta=None):
        d = np.asarray(descriptor, dtype=float)
        d = d / np.linalg.norm(d)
        node = MapNode(len(self.nodes), d, mixture.copy(), int(step), str(session), dict(meta or {}))
        self.nodes.append(node)
        self._cache = None
        return node

    def add_edge(self, edge):
        self.node(edge.src)
        self.node(edge.dst)
        self.edges.append(edge)
        return edge

    def previous_in_session(self, session):
        return self._last_in_session.get(str(session))

    def mark_last(self, node):
        self._last_in_session[node.session_tag] = node.id

    def invalidate(self):
        """Call after editing node mixtures in place."""
        self._cache = None

    def dominant_stack(self):
        if self._cache is None:
            Rs = np.zeros((len(self.nodes), 3, 3))
            ts = np.zeros((len(self.nodes), 3))
            for n in self.nodes:
                k = n.pose_mixture.dominant()
                Rs[n.id] = n.pose_mixture.R[k]
                ts[n.id] = n.pose_mixture.t[k]
            self._cache = (Rs, ts)
        return self._cache

    def descriptors(self):
        return np.stack([n.descriptor for n in self.nodes]) if self.nodes else np.zeros((0, 0))

    def edges_of_kind(self, kind, hyp_id=None):
        return [e for e in self.edges if e.kind == kind and (hyp_id is None or e.hyp_id == hyp_id)]

    def session_path(self, session):
        return [n.id for n in self.nodes if n.session_tag == str(session)]


def maybe_create_node(graph, max_similarity, beta, belief, descriptor, step, session="0", meta=None):
    """Insert a node copying ``belief`` when ``max_similarity < beta``."""
    if not max_similarity < beta:
        return None
    return graph.add_node(descriptor, belief, step, session, meta)


def add_edges(new_node, graph, radius_d=PROXIMITY_RADIUS, odo_rel=None, odo_cov=None):
    """Odometry edge to the session predecessor plus proximity edges.

    ``odo_rel`` is the odometry accumulated since the predecessor; when absent
    the relative pose between dominant means is used.
    """
    out = []
    prev = graph.previous_in_session(new_node.session_tag)
    if prev is not None and prev != new_node.id:
        if odo_rel is None:
            odo_rel = graph.node(prev).dominant_mean().inverse() @ new_node.dominant_mean()
        cov = np.eye(6) * 1e-4 if odo_cov is None else np.asarray(odo_cov, dtype=float)
        out.append(graph.add_edge(MapEdge("odometry", prev, new_node.id, odo_rel, cov)))
    graph.mark_last(new_node)
    Rs, ts = graph.dominant_stack()
    d = np.linalg.norm(ts - ts[new_node.id], axis=1)
    for j in np.flatnonzero(d <= radius_d):
        j = int(j)
        if j == new_node.id or j == prev:
            continue
        rel = se3.Pose(*se3.between_batch(Rs[new_node.id], ts[new_node.id], Rs[j], ts[j]))
        out.append(graph.add_edge(MapEdge("proximity", new_node.id, j, rel, np.eye(6) * 1e-2)))
    return out


def nearest_node(pose, graph, W=None):
    """Node whose dominant mean is closest to ``pose``; lowest id wins ties."""
    if len(graph) == 0:
        raise EmptyGraph("no nodes")
    Rs, ts = graph.dominant_stack()
    Rr, tr = se3.between_batch(pose.rotation[None], pose.translation[None], Rs, ts)
    xi = se3.log_batch(Rr, tr, strict=False)
    if W is not None:
        W = np.asarray(W, dtype=float)
        xi = xi * (np.diag(W) if W.ndim == 2 else W)
    d = np.linalg.norm(xi, axis=1)
    d = np.where(np.isnan(d), np.inf, d)
    return int(np.argmin(d))


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _f(x):
    return format(float(x), ".17g")


def _pose_fields(p):
    q = Rotation.from_matrix(p.rotation).as_quat()
    return [_f(v) for v in p.translation] + [_f(v) for v in q]


def _parse_pose(vals):
    t = np.array(vals[:3], dtype=float)
    R = Rotation.from_quat(np.array(vals[3:7], dtype=float)).as_matrix()
    return Pose(R, t)


def dumps(graph):
    lines = []
    for n in graph.nodes:
        lines.append(" ".join(["NODE", str(n.id), n.session_tag, str(n.created_step)] + [_f(v) for v in n.descriptor]))
        m = n.pose_mixture
        for k in range(len(m)):
            c = m.component(k)
            lines.append(
                " ".join(
                    ["COMP", str(n.id), str(c.hyp_id), _f(c.weight)]
                    + _pose_fields(c.mean)
                    + [_f(v) for v in c.cov[_IU]]
                )
            )
    for e in graph.edges:
        lines.append(
            " ".join(["EDGE", e.tag, str(e.src), str(e.dst)] + _pose_fields(e.rel_pose) + [_f(v) for v in np.diag(e.cov)])
        )
    return "\n".join(lines) + "\n"


def loads(text):
    graph = TopoGraph()
    pending = {}
    raw_nodes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        kind = parts[0]
        if kind == "NODE":
            raw_nodes.append((int(parts[1]), parts[2], int(parts[3]), np.array(parts[4:], dtype=float)))
        elif kind == "COMP":
            nid = int(parts[1])
            vals = [float(v) for v in parts[4:]]
            cov = np.zeros((6, 6))
            cov[_IU] = vals[7:28]
            cov = cov + np.triu(cov, 1).T
            pending.setdefault(nid, []).append(GaussianComponent(_parse_pose(vals[:7]), cov, float(parts[3]), int(parts[2])))
        elif kind == "EDGE":
            continue
        else:
            raise ValueError(f"line {lineno}: unknown record {kind!r}")
    for nid, session, step, desc in sorted(raw_nodes, key=lambda r: r[0]):
        if nid != len(graph.nodes):
            raise ValueError(f"node ids must be contiguous, got {nid}")
        mix = BeliefMixture.from_components(pending.get(nid, []))
        node = MapNode(nid, desc, mix, step, session)
        graph.nodes.append(node)
        graph._last_in_session[session] = nid
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0] != "EDGE":
            continue
        tag = parts[1]
        kind, _, hid = tag.partition(":")
        vals = [float(v) for v in parts[4:]]
        graph.edges.append(
            MapEdge(kind, int(parts[2]), int(parts[3]), _parse_pose(vals[:7]), np.diag(vals[7:13]), int(hid) if hid else None)
        )
    return graph


def save(graph, path):
    with open(path, "w") as fh:
        fh.write(dumps(graph))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
