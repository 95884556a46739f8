"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError


def check_scalar_range(x, name, low=None, high=None, include_low=True, include_high=True, kind=numbers.Real):
    if not isinstance(x, kind) or isinstance(x, bool):
        raise ConfigError(f"expected {kind.__name__}, got {type(x).__name__}", name)
    if low is not None and (x < low or (x == low and not include_low)):
        raise ConfigError(f"value {x!r} below {'' if include_low else 'or equal to '}{low}", name)
    if high is not None and (x > high or (x == high and not include_high)):
        raise ConfigError(f"value {x!r} above {'' if include_high else 'or equal to '}{high}", name)
    return x


def check_cov6(cov, name="cov"):
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (6, 6):
        raise ValueError(f"{name}: expected 6x6, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError(f"{name}: not symmetric")
    return cov


def check_sessions(X, name="X"):
    """Accept one session (a list of frames) or a list of sessions; return the latter."""
    if X is None or len(X) == 0:
        raise ValueError(f"{name}: no frames")
    first = X[0]
    if hasattr(first, "true_pose"):
        return [list(X)]
    out = [list(s) for s in X]
    for k, s in enumerate(out):
        if not s or not hasattr(s[0], "true_pose"):
            raise ValueError(f"{name}[{k}]: expected a non-empty list of frames")
    return out


def parse_seed_range(text):
    """``"a..b"`` (inclusive), ``"a,b,c"`` or a single integer."""
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ConfigError(f"empty seed range {text!r}", "--seeds")
            return list(range(a, b + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}", "--seeds") from exc
