"""Relocalisation success from step logs."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

CONFIDENT = 0.9
RESULT_FIELDS = ["scenario", "method", "trial_id", "success", "final_err_m", "steps_to_reloc"]
SUMMARY_FIELDS = ["scenario", "method", "n_trials", "n_success", "rs"]


@dataclass
class TrialResult:
    method: str
    scenario: str
    trial_id: int
    success: bool
    final_err_m: float
    steps_to_reloc: int | None
    runtime_ms_per_step: float = math.nan

    def cells(self):
        err = "nan" if not math.isfinite(self.final_err_m) else f"{self.final_err_m:.6f}"
        s2r = "" if self.steps_to_reloc is None else str(self.steps_to_reloc)
        return [self.scenario, self.method, str(self.trial_id), str(int(self.success)), err, s2r]


def parse_log(text):
    """Step-log CSV text to a dict of columns (floats; NaN for blanks)."""
    rows = list(csv.DictReader(io.StringIO(text)))
    out = {}
    if not rows:
        return out
    for k in rows[0]:
        if k == "event":
            out[k] = [r[k] for r in rows]
        else:
            out[k] = np.array([float(r[k]) if r[k] not in ("", "nan") else math.nan for r in rows])
    return out


def _err(cols):
    est = np.stack([cols["est_tx"], cols["est_ty"], cols["est_tz"]], axis=1)
    tru = np.stack([cols["tx"], cols["ty"], cols["tz"]], axis=1)
    return np.linalg.norm(est - tru, axis=1)


def eval_rs(cols, r_d, metric="final", deadline=None, method="", scenario="", trial_id=0):
    """Score one trial.

    ``final``: success iff the last estimate lies strictly within ``r_d``.
    ``alias``: the trial is cut at ``deadline`` steps and, where the log
    carries a dominant weight, that weight must also exceed 0.9.

    ``steps_to_reloc`` counts the steps until the error drops below ``r_d``
    for good (None when the last estimate is outside or missing).
    """
    if not cols or len(cols["step"]) == 0:
        raise ValueError("empty step log")
    err = _err(cols)
    ok = err < r_d  # NaN compares False
    if metric == "alias":
        n = len(err) if deadline is None else min(int(deadline), len(err))
        err, ok = err[:n], ok[:n]
        wd = cols.get("w_dom")
        if wd is not None:
            wd = wd[:n]
            ok = ok & ~(wd <= CONFIDENT)  # blank weights (NaN) pass
    elif metric != "final":
        raise ValueError(f"unknown metric {metric!r}")
    success = bool(ok[-1])
    s2r = None
    if success:
        bad = np.flatnonzero(~ok)
        s2r = int(bad[-1] + 1) if len(bad) else 0
    return TrialResult(method, scenario, int(trial_id), success, float(err[-1]), s2r)


def summarize(results):
    """One row per (scenario, method): trial count, successes and RS."""
    groups = {}
    for r in results:
        groups.setdefault((r.scenario, r.method), []).append(r.success)
    out = []
    for (sc, m), s in sorted(groups.items()):
        out.append({"scenario": sc, "method": m, "n_trials": len(s), "n_success": int(sum(s)), "rs": sum(s) / len(s)})
    return out


def sort_results(results):
    return sorted(results, key=lambda r: (r.scenario, r.method, r.trial_id))


def results_text(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for r in sort_results(results):
        w.writerow(r.cells())
    return buf.getvalue()


def summary_text(summary):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for s in summary:
        w.writerow([s["scenario"], s["method"], s["n_trials"], s["n_success"], f"{s['rs']:.6f}"])
    return buf.getvalue()


def read_results(text):
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append(
            TrialResult(
                r["method"],
                r["scenario"],
                int(r["trial_id"]),
                r["success"] == "1",
                float(r["final_err_m"]),
                int(r["steps_to_reloc"]) if r["steps_to_reloc"] else None,
            )
        )
    return out
