"""Scenario generators.

``loop``            rectangular loop of distinct places; map one lap, then query.
``alias_corridor``  two parallel corridors 20 m apart whose places are pairwise
                    identical in appearance; the twin corridor's places are
                    jittered non-rigidly, so only motion context tells them apart.
``kidnap``          the loop world with the query robot carried across the map
                    during a short occlusion.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError
from .scenario import EvalSpec, Event, Noise, Place, Scenario, Session

STEP = 0.5
DIM = 64


def _chaikin(pts, closed, iters=4):
    pts = np.asarray(pts, dtype=float)
    for _ in range(iters):
        if closed:
            a, b = pts, np.roll(pts, -1, axis=0)
            q = 0.75 * a + 0.25 * b
            r = 0.25 * a + 0.75 * b
            pts = np.stack([q, r], axis=1).reshape(-1, pts.shape[1])
        else:
            a, b = pts[:-1], pts[1:]
            q = 0.75 * a + 0.25 * b
            r = 0.25 * a + 0.75 * b
            mid = np.stack([q, r], axis=1).reshape(-1, pts.shape[1])
            pts = np.vstack([pts[:1], mid, pts[-1:]])
    return pts


class Path2D:
    """Arc-length parameterised planar curve (closed or open)."""

    def __init__(self, corners, closed, smooth=True):
        pts = _chaikin(corners, closed) if smooth else np.asarray(corners, dtype=float)
        if closed:
            pts = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.pts = pts
        self.closed = closed
        self.length = float(self.s[-1])

    def at(self, s, lateral=0.0):
        """(x, y, yaw) at arc length ``s`` shifted ``lateral`` metres to the left."""
        if self.closed:
            s = np.mod(s, self.length)
        s = np.clip(s, 0.0, self.length)
        x = np.interp(s, self.s, self.pts[:, 0])
        y = np.interp(s, self.s, self.pts[:, 1])
        h = 0.25
        s0, s1 = s - h, s + h
        if self.closed:
            s0, s1 = np.mod(s0, self.length), np.mod(s1, self.length)
        else:
            s0, s1 = np.clip(s0, 0, self.length), np.clip(s1, 0, self.length)
        dx = np.interp(s1, self.s, self.pts[:, 0]) - np.interp(s0, self.s, self.pts[:, 0])
        dy = np.interp(s1, self.s, self.pts[:, 1]) - np.interp(s0, self.s, self.pts[:, 1])
        yaw = np.arctan2(dy, dx)
        return x - lateral * np.sin(yaw), y + lateral * np.cos(yaw), yaw

    def walk(self, s0, n, step=STEP, lateral=0.0):
        return [[float(v) for v in (*self.at(s0 + k * step, lateral)[:2], 0.0, self.at(s0 + k * step)[2])] for k in range(n)]


def _unit_vectors(rng, n, dim=DIM):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rect_path(w=30.0, h=16.0):
    return Path2D([[0, 0], [w, 0], [w, h], [0, h]], closed=True)


def _places_along(path, spacing, rng):
    n = int(path.length // spacing)
    desc = _unit_vectors(rng, n)
    out = []
    for k in range(n):
        x, y, yaw = path.at(k * spacing)
        out.append(Place([float(x), float(y), 0.0], float(yaw), [float(v) for v in desc[k]]))
    return out


def make_loop(seed, query_snr=None, query_steps=200, query_start_known=False, query_shift=0.2, map_snr=None):
    rng = np.random.default_rng([seed, 101])
    path = _rect_path()
    places = _places_along(path, 2.0, rng)
    n_map = int(np.ceil(path.length / STEP)) + 2
    s0 = float(rng.uniform(0, path.length))
    lat = float(rng.uniform(-0.5, 0.5))
    sessions = [
        Session("map", "map", path.walk(0.0, n_map), 0.0, True, map_snr),
        Session("query", "query", path.walk(s0, query_steps, lateral=lat), query_shift, query_start_known, query_snr),
    ]
    return Scenario("loop", seed, places, [], sessions, Noise(), [], eval=EvalSpec(2.0, "final", 30, query_steps))


def make_kidnap(seed, query_snr=None, query_steps=200, kidnap_range=(40, 80), occlusion=3):
    sc = make_loop(seed, query_snr=query_snr, query_steps=query_steps, query_start_known=True)
    rng = np.random.default_rng([seed, 202])
    path = _rect_path()
    k = int(rng.integers(kidnap_range[0], kidnap_range[1] + 1))
    q = sc.sessions[1]
    x0 = q.trajectory[0]
    s0 = _arc_of(path, x0)
    s_kid = s0 + k * STEP + path.length / 2.0
    traj = q.trajectory[:k] + path.walk(s_kid, query_steps - k)
    q.trajectory = traj
    sc.name = "kidnap"
    sc.events = [
        Event(1, k, "kidnap", 1, list(traj[k])),
        Event(1, k, "occlude", occlusion),
    ]
    return sc


def _arc_of(path, wp):
    d = np.linalg.norm(path.pts[:, :2] - np.array(wp[:2]), axis=1)
    return float(path.s[int(np.argmin(d))])


def make_alias_corridor(
    seed,
    length=40.0,
    spacing=2.5,
    separation=20.0,
    jitter_t=0.7,
    jitter_yaw=np.deg2rad(10.0),
    query_steps=40,
    query_snr=None,
    map_shift=0.5,
):
    rng = np.random.default_rng([seed, 303])
    n = int(length // spacing) + 1
    desc = _unit_vectors(rng, n)
    places, groups = [], []
    for k in range(n):
        places.append(Place([k * spacing, 0.0, 0.0], 0.0, [float(v) for v in desc[k]]))
    for k in range(n):
        jx, jy = rng.normal(scale=jitter_t, size=2)
        jyaw = rng.normal(scale=jitter_yaw)
        places.append(Place([k * spacing + jx, separation + jy, 0.0], float(jyaw), [float(v) for v in desc[k]]))
        groups.append([k, n + k])
    lanes = {"a": 0.0, "b": separation}
    map_lat = 1.0
    n_map = int((length + 4.0) / STEP) + 1
    map_sessions = {
        c: Session(f"map_{c}", "map", Path2D([[-2.0, y], [length + 2.0, y]], closed=False, smooth=False).walk(0.0, n_map, lateral=map_lat), map_shift, True, None)
        for c, y in lanes.items()
    }
    order = ["a", "b"] if rng.random() < 0.5 else ["b", "a"]
    corridor = "a" if rng.random() < 0.5 else "b"
    lat = float(rng.uniform(-1.5, 1.5))
    xs = float(rng.uniform(0.0, length - query_steps * STEP))
    y = lanes[corridor]
    qpath = Path2D([[-2.0, y], [length + 2.0, y]], closed=False, smooth=False)
    query = Session(f"query_{corridor}", "query", qpath.walk(xs + 2.0, query_steps, lateral=lat), 0.0, False, query_snr)
    sessions = [map_sessions[order[0]], map_sessions[order[1]], query]
    return Scenario(
        "alias_corridor", seed, places, groups, sessions, Noise(), [], eval=EvalSpec(2.0, "alias", 30, query_steps)
    )


PRESETS = {
    "loop": make_loop,
    "alias_corridor": make_alias_corridor,
    "kidnap": make_kidnap,
}


def generate(preset, seed, **overrides):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", "preset")
    try:
        return PRESETS[preset](int(seed), **overrides).validate()
    except TypeError as exc:
        raise ConfigError(str(exc), "overrides") from exc
