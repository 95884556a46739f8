"""``crossloc`` command line.

Exit codes: 0 ok, 2 configuration error, 3 failure while running.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import harness, report
from .bench.runner import METHODS
from .exceptions import ConfigError
from .sim import generate
from .sim.presets import PRESETS
from .sim.scenario import dumps
from .validation import parse_seed_range

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _scenario_spec(text):
    """Preset name, stored world file, or a ``{"preset", "overrides"}`` spec file."""
    if text in PRESETS:
        return harness.ScenarioSpec(preset=text)
    if not os.path.exists(text):
        raise ConfigError(f"not a preset or file: {text!r}; presets are {sorted(PRESETS)}", "scenario")
    with open(text) as fh:
        raw = fh.read()
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{text}: line {exc.lineno}") from exc
    if isinstance(d, dict) and "places" in d:
        return harness.ScenarioSpec(world=text)
    if not isinstance(d, dict) or "preset" not in d:
        raise ConfigError("expected a world file or an object with 'preset'", text)
    if d["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {d['preset']!r}", f"{text}: preset")
    return harness.ScenarioSpec(preset=d["preset"], overrides=d.get("overrides", {}), r_d=d.get("r_d"))


def _methods(text):
    if text == "all":
        return list(METHODS)
    out = [m.strip() for m in text.split(",") if m.strip()]
    for m in out:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {list(METHODS)} or 'all'", "--method")
    return out


def _print_summary(summary, out=None):
    out = out or sys.stdout
    for s in summary:
        print(f"{s['scenario']:<16} {s['method']:<6} RS {s['rs']:.3f} ({s['n_success']}/{s['n_trials']})", file=out)


def cmd_gen_world(a):
    spec = _scenario_spec(a.spec)
    if spec.world is not None:
        sc = spec.build(a.seed)
    else:
        sc = generate(spec.preset, a.seed, **spec.overrides)
    text = dumps(sc) + "\n"
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(a):
    spec = _scenario_spec(a.scenario)
    runs = harness.run_trials([spec], parse_seed_range(a.seeds), _methods(a.method), a.trial_len)
    harness.write_run(runs, a.out)
    _, summary = harness.evaluate_dir(a.out)
    _print_summary(summary)


def cmd_eval(a):
    if a.rd is not None and not a.rd > 0:
        raise ConfigError("must be positive", "--rd")
    _, summary = harness.evaluate_dir(a.logs, a.rd)
    _print_summary(summary)


def cmd_report(a):
    for p in report.write_report(getattr(a, "in"), a.format):
        print(p)


def cmd_bench(a):
    out = harness.run_benchmark(a.config, out=a.out)
    _, _, summary = report._load(out)
    _print_summary(summary)


def build_parser():
    p = argparse.ArgumentParser(prog="crossloc", description="multi-hypothesis localisation benchmark")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-world", help="generate a scenario and write it as JSON")
    g.add_argument("spec", help="preset name or JSON spec file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output file (default stdout)")
    g.set_defaults(func=cmd_gen_world)

    r = sub.add_parser("run", help="map/query trials for one scenario")
    r.add_argument("--scenario", required=True, help="preset name, world file or spec file")
    r.add_argument("--method", default="all", help="comma list of cross,gm,sm,pbu or 'all'")
    r.add_argument("--seeds", default="0", help="a..b (inclusive), a,b,c or a single seed")
    r.add_argument("--out", required=True)
    r.add_argument("--trial-len", type=int, default=None)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score the step logs of a run directory")
    e.add_argument("--logs", required=True)
    e.add_argument("--rd", type=float, default=None, help="success radius in meters (default: per scenario)")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("report", help="write csv, json or svg reports for a scored run")
    o.add_argument("--in", required=True)
    o.add_argument("--format", choices=harness.FORMATS, default="csv")
    o.set_defaults(func=cmd_report)

    b = sub.add_parser("bench", help="run a benchmark config end to end")
    b.add_argument("config")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
