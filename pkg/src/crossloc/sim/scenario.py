"""Scenario description and its JSON file format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ConfigError
from ..se3 import Pose

EVENT_KINDS = ("kidnap", "occlude", "blur")
MODES = ("map", "query")


@dataclass
class Place:
    position: list
    yaw: float
    descriptor: list

    def pose(self):
        x, y, z = self.position
        return Pose.from_xyz_yaw(x, y, z, self.yaw)


@dataclass
class Session:
    name: str
    mode: str
    trajectory: list  # [x, y, z, yaw] per step
    appearance_shift: float = 0.0
    start_known: bool = True
    snr: float | None = None  # None: inherit noise.snr; inf/None there means noiseless

    def poses(self):
        return [Pose.from_xyz_yaw(*w) for w in self.trajectory]


@dataclass
class Noise:
    snr: float | None = None
    rel_pose_sigma: list = field(default_factory=lambda: [0.05, 0.02])
    outlier_rate: float = 0.05
    blur_penalty: float = 0.5


@dataclass
class Sensing:
    radius: float = 8.0
    top_n: int = 5
    max_features: int = 100
    geom_sigma: float = 2.0


@dataclass
class Event:
    session: int
    step: int
    kind: str
    duration: int = 1
    target: list | None = None


@dataclass
class EvalSpec:
    r_d: float = 2.0
    # "final": error at the last step; "alias": confident and correct by ``deadline``
    metric: str = "final"
    deadline: int = 30
    trial_len: int = 200


@dataclass
class Scenario:
    name: str
    seed: int
    places: list
    alias_groups: list
    sessions: list
    noise: Noise = field(default_factory=Noise)
    events: list = field(default_factory=list)
    sensing: Sensing = field(default_factory=Sensing)
    eval: EvalSpec = field(default_factory=EvalSpec)
    dim: int = 64

    # -- derived -----------------------------------------------------------

    def place_poses(self):
        return [p.pose() for p in self.places]

    def descriptor_matrix(self):
        return np.array([p.descriptor for p in self.places], dtype=float)

    def group_of(self):
        """Group index per place; places outside alias groups get their own."""
        g = {}
        for k, grp in enumerate(self.alias_groups):
            for p in grp:
                g[p] = k
        nxt = len(self.alias_groups)
        out = []
        for p in range(len(self.places)):
            if p in g:
                out.append(g[p])
            else:
                out.append(nxt)
                nxt += 1
        return out

    def events_for(self, session):
        return [e for e in self.events if e.session == session]

    def query_sessions(self):
        return [k for k, s in enumerate(self.sessions) if s.mode == "query"]

    def session_snr(self, k):
        s = self.sessions[k].snr
        return self.noise.snr if s is None else s

    # -- checks ------------------------------------------------------------

    def validate(self):
        if not self.places:
            raise ConfigError("scenario has no places", "places")
        for k, p in enumerate(self.places):
            if len(p.descriptor) != self.dim:
                raise ConfigError(f"descriptor length {len(p.descriptor)} != dim {self.dim}", f"places[{k}]")
            n = float(np.linalg.norm(p.descriptor))
            if abs(n - 1.0) > 1e-9:
                raise ConfigError(f"descriptor norm {n:.12f} is not 1", f"places[{k}]")
        seen = set()
        for k, grp in enumerate(self.alias_groups):
            for p in grp:
                if p in seen:
                    raise ConfigError(f"place {p} in more than one alias group", f"alias_groups[{k}]")
                if not 0 <= p < len(self.places):
                    raise ConfigError(f"unknown place {p}", f"alias_groups[{k}]")
                seen.add(p)
        for k, s in enumerate(self.sessions):
            if s.mode not in MODES:
                raise ConfigError(f"mode must be one of {MODES}", f"sessions[{k}].mode")
            if not 0.0 <= s.appearance_shift <= 1.0:
                raise ConfigError("appearance_shift outside [0, 1]", f"sessions[{k}].appearance_shift")
            if not s.trajectory:
                raise ConfigError("empty trajectory", f"sessions[{k}].trajectory")
        if not 0.0 <= self.noise.outlier_rate <= 1.0:
            raise ConfigError("outlier_rate outside [0, 1]", "noise.outlier_rate")
        for k, e in enumerate(self.events):
            if e.kind not in EVENT_KINDS:
                raise ConfigError(f"unknown event kind {e.kind!r}", f"events[{k}].kind")
            if not 0 <= e.session < len(self.sessions):
                raise ConfigError("unknown session", f"events[{k}].session")
            if e.kind == "kidnap" and e.target is None:
                raise ConfigError("kidnap needs a target", f"events[{k}].target")
        return self


def _num(x):
    # JSON has no inf; store it as null
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return None
    return x


def to_dict(sc):
    d = asdict(sc)
    d["noise"]["snr"] = _num(d["noise"]["snr"])
    for s in d["sessions"]:
        s["snr"] = _num(s["snr"])
    return d


def from_dict(d):
    try:
        sc = Scenario(
            name=d["name"],
            seed=int(d["seed"]),
            places=[Place(**p) for p in d["places"]],
            alias_groups=[list(g) for g in d.get("alias_groups", [])],
            sessions=[Session(**s) for s in d["sessions"]],
            noise=Noise(**d.get("noise", {})),
            events=[Event(**e) for e in d.get("events", [])],
            sensing=Sensing(**d.get("sensing", {})),
            eval=EvalSpec(**d.get("eval", {})),
            dim=int(d.get("dim", 64)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing field {exc.args[0]!r}", "scenario") from exc
    except TypeError as exc:
        raise ConfigError(str(exc), "scenario") from exc
    return sc.validate()


def dumps(sc):
    return json.dumps(to_dict(sc), indent=1, sort_keys=True)


def loads(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"line {exc.lineno}") from exc
    return from_dict(d)


def save_scenario(sc, path):
    with open(path, "w") as fh:
        fh.write(dumps(sc))


def load_scenario(path):
    with open(path) as fh:
        return loads(fh.read())
