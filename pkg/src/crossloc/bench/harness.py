"""Benchmark configs, the trial pool and the on-disk run layout.

A run directory holds::

    logs/<scenario>__<method>__s<seed>__t<trial>.csv   step logs
    manifest.json                                     scoring spec per log
    results.csv, summary.csv                          scored trials
    timings.csv                                       wall-clock per trial

Everything except ``timings.csv`` is a pure function of the config, so two
runs of the same config are byte-identical there.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..exceptions import ConfigError
from ..sim import generate, load_scenario
from ..sim.presets import PRESETS
from ..validation import parse_seed_range
from . import report, scoring
from .runner import METHODS, log_text, run_scenario

FORMATS = ("csv", "json", "svg")


@dataclass
class ScenarioSpec:
    preset: str | None = None
    world: str | None = None
    overrides: dict = field(default_factory=dict)
    r_d: float | None = None

    def build(self, seed):
        if self.world is not None:
            sc = load_scenario(self.world)
            # a stored world keeps its geometry; the seed re-draws the noise
            sc.seed = int(seed)
        else:
            sc = generate(self.preset, seed, **self.overrides)
        if self.r_d is not None:
            sc.eval.r_d = float(self.r_d)
        return sc


@dataclass
class BenchConfig:
    scenarios: list
    methods: list
    seeds: list
    out: str | None = None
    trial_len: int | None = None
    formats: list = field(default_factory=lambda: list(FORMATS))


def _need(d, key, where, kind):
    if key not in d:
        raise ConfigError(f"missing field {key!r}", where)
    v = d[key]
    if not isinstance(v, kind) or isinstance(v, bool):
        raise ConfigError(f"field {key!r} should be {getattr(kind, '__name__', kind)}", f"{where}.{key}")
    return v


def parse_config(text, base_dir="."):
    """Config JSON text to :class:`BenchConfig`; errors name the line or field."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{exc.msg} (column {exc.colno})", f"line {exc.lineno}") from exc
    if not isinstance(d, dict):
        raise ConfigError("top level must be an object", "config")
    unknown = set(d) - {"scenarios", "methods", "seeds", "out", "trial_len", "formats"}
    if unknown:
        raise ConfigError(f"unknown field {sorted(unknown)[0]!r}", "config")
    scs = []
    for k, s in enumerate(_need(d, "scenarios", "config", list)):
        where = f"scenarios[{k}]"
        if isinstance(s, str):
            s = {"preset": s}
        if not isinstance(s, dict):
            raise ConfigError("expected a preset name or an object", where)
        if ("preset" in s) == ("world" in s):
            raise ConfigError("give exactly one of 'preset' or 'world'", where)
        if "preset" in s and s["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {s['preset']!r}; choose from {sorted(PRESETS)}", f"{where}.preset")
        world = s.get("world")
        if world is not None:
            world = str(Path(base_dir) / world)
            if not os.path.exists(world):
                raise ConfigError(f"no such world file {s['world']!r}", f"{where}.world")
        ov = s.get("overrides", {})
        if not isinstance(ov, dict):
            raise ConfigError("overrides must be an object", f"{where}.overrides")
        r_d = s.get("r_d")
        if r_d is not None and (not isinstance(r_d, (int, float)) or r_d <= 0):
            raise ConfigError("r_d must be a positive number", f"{where}.r_d")
        scs.append(ScenarioSpec(s.get("preset"), world, ov, r_d))
    if not scs:
        raise ConfigError("no scenarios", "config.scenarios")
    methods = _need(d, "methods", "config", list)
    for k, m in enumerate(methods):
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {list(METHODS)}", f"config.methods[{k}]")
    if not methods:
        raise ConfigError("no methods", "config.methods")
    seeds = d.get("seeds")
    if seeds is None:
        raise ConfigError("missing field 'seeds'", "config")
    if isinstance(seeds, list):
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in seeds):
            raise ConfigError("seeds must be integers", "config.seeds")
    else:
        seeds = parse_seed_range(seeds)
    formats = d.get("formats", list(FORMATS))
    for k, f in enumerate(formats):
        if f not in FORMATS:
            raise ConfigError(f"unknown format {f!r}; choose from {list(FORMATS)}", f"config.formats[{k}]")
    tl = d.get("trial_len")
    if tl is not None and (not isinstance(tl, int) or tl <= 0):
        raise ConfigError("trial_len must be a positive integer", "config.trial_len")
    return BenchConfig(scs, list(methods), list(seeds), d.get("out"), tl, list(formats))


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigError("no such config file", str(path))
    with open(path) as fh:
        return parse_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def pool_size():
    """Worker count: ``CROSS_THREADS`` if set, else the CPU count."""
    v = os.environ.get("CROSS_THREADS")
    if v is None:
        return os.cpu_count() or 1
    try:
        n = int(v)
    except ValueError as exc:
        raise ConfigError(f"not an integer: {v!r}", "CROSS_THREADS") from exc
    if n < 1:
        raise ConfigError("must be at least 1", "CROSS_THREADS")
    return n


def _job(args):
    spec, seed, methods, trial_len = args
    return run_scenario(spec.build(seed), methods, trial_len)


def run_trials(specs, seeds, methods, trial_len=None, workers=None):
    """Every (scenario, seed) job, in a process pool when ``workers > 1``."""
    jobs = [(s, seed, tuple(methods), trial_len) for s in specs for seed in seeds]
    workers = pool_size() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        runs = [r for j in jobs for r in _job(j)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            runs = [r for rs in ex.map(_job, jobs) for r in rs]
    return sorted(runs, key=lambda r: (r.scenario, r.method, r.trial_id))


def write_run(runs, out):
    """Step logs, manifest and timings for finished trials."""
    out = Path(out)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    manifest = []
    timing = ["scenario,method,trial_id,steps,ms_per_step"]
    for r in runs:
        (out / "logs" / f"{r.name}.csv").write_text(log_text(r.rows))
        manifest.append(
            {"log": f"logs/{r.name}.csv", "scenario": r.scenario, "method": r.method, "seed": r.seed,
             "trial": r.trial, "trial_id": r.trial_id, **r.meta}
        )
        n = max(1, len(r.rows))
        timing.append(f"{r.scenario},{r.method},{r.trial_id},{len(r.rows)},{1000.0 * r.seconds / n:.4f}")
    manifest.sort(key=lambda m: (m["scenario"], m["method"], m["trial_id"]))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (out / "timings.csv").write_text("\n".join(timing) + "\n")
    return out


def evaluate_dir(run_dir, r_d=None):
    """Score every log listed in the manifest; writes results.csv and summary.csv."""
    run_dir = Path(run_dir)
    mf = run_dir / "manifest.json"
    if not mf.exists():
        raise ConfigError("no manifest.json; not a run directory", str(run_dir))
    manifest = json.loads(mf.read_text())
    results = []
    for m in manifest:
        cols = scoring.parse_log((run_dir / m["log"]).read_text())
        res = scoring.eval_rs(
            cols,
            m["r_d"] if r_d is None else r_d,
            m.get("metric", "final"),
            m.get("deadline"),
            m["method"],
            m["scenario"],
            m["trial_id"],
        )
        results.append(res)
    results = scoring.sort_results(results)
    summary = scoring.summarize(results)
    (run_dir / "results.csv").write_text(scoring.results_text(results))
    (run_dir / "summary.csv").write_text(scoring.summary_text(summary))
    return results, summary


def run_benchmark(config, out=None, workers=None):
    """Run a config (path or :class:`BenchConfig`) end to end; returns the output dir."""
    cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else config
    out = out or cfg.out
    if out is None:
        raise ConfigError("no output directory", "config.out")
    runs = run_trials(cfg.scenarios, cfg.seeds, cfg.methods, cfg.trial_len, workers)
    write_run(runs, out)
    evaluate_dir(out)
    for f in cfg.formats:
        report.write_report(out, f)
    return Path(out)
