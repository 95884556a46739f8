"""Reports from a scored run directory: csv, json or static svg charts."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError
from . import scoring

PALETTE = ["#1b6ca8", "#d1495b", "#66a182", "#edae49", "#6c4f77", "#3d3d3d"]


def _num(x):
    return f"{x:.2f}".rstrip("0").rstrip(".") if math.isfinite(x) else "0"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class Svg:
    """Just enough SVG for axes, bars, polylines and labels."""

    def __init__(self, width=640, height=360):
        self.w, self.h = width, height
        self.items = []

    def rect(self, x, y, w, h, fill):
        self.items.append(f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(w)}" height="{_num(h)}" fill="{fill}"/>')

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" stroke="{stroke}" stroke-width="{_num(width)}"{d}/>'
        )

    def polyline(self, pts, stroke, width=1.5):
        p = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        self.items.append(f'<polyline points="{p}" fill="none" stroke="{stroke}" stroke-width="{_num(width)}"/>')

    def text(self, x, y, s, size=12, anchor="start", fill="#000"):
        self.items.append(
            f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}" fill="{fill}">{_esc(s)}</text>'
        )

    def render(self):
        head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" viewBox="0 0 {self.w} {self.h}">'
        return "\n".join([head, f'<rect width="{self.w}" height="{self.h}" fill="#fff"/>', *self.items, "</svg>"]) + "\n"


class _Frame:
    # plot area inside margins, data -> pixel
    def __init__(self, svg, xlim, ylim, left=60, right=140, top=30, bottom=45):
        self.svg = svg
        self.x0, self.x1 = left, svg.w - right
        self.y0, self.y1 = svg.h - bottom, top
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        a, b = self.xlim
        return self.x0 + (x - a) / ((b - a) or 1.0) * (self.x1 - self.x0)

    def py(self, y):
        a, b = self.ylim
        return self.y0 + (y - a) / ((b - a) or 1.0) * (self.y1 - self.y0)

    def axes(self, xlabel, ylabel, title, yticks=5):
        s = self.svg
        s.line(self.x0, self.y0, self.x1, self.y0)
        s.line(self.x0, self.y0, self.x0, self.y1)
        for k in range(yticks + 1):
            v = self.ylim[0] + k * (self.ylim[1] - self.ylim[0]) / yticks
            y = self.py(v)
            s.line(self.x0 - 4, y, self.x0, y)
            s.text(self.x0 - 6, y + 4, f"{v:.2g}", 10, "end")
        s.text((self.x0 + self.x1) / 2, s.h - 10, xlabel, 12, "middle")
        s.text(14, (self.y0 + self.y1) / 2, ylabel, 12, "middle")
        s.text((self.x0 + self.x1) / 2, 18, title, 13, "middle")


def rs_chart(summary):
    """Grouped bars: RS per method, one group per scenario."""
    svg = Svg()
    fr = _Frame(svg, (0, 1), (0.0, 1.0))
    fr.axes("scenario", "RS", "relocalization success")
    scen = sorted({s["scenario"] for s in summary})
    meths = sorted({s["method"] for s in summary})
    by = {(s["scenario"], s["method"]): s["rs"] for s in summary}
    gw = (fr.x1 - fr.x0) / max(1, len(scen))
    bw = 0.8 * gw / max(1, len(meths))
    for i, sc in enumerate(scen):
        gx = fr.x0 + i * gw + 0.1 * gw
        for j, m in enumerate(meths):
            v = by.get((sc, m))
            if v is None:
                continue
            svg.rect(gx + j * bw, fr.py(v), bw * 0.9, fr.y0 - fr.py(v), PALETTE[j % len(PALETTE)])
        svg.text(fr.x0 + (i + 0.5) * gw, fr.y0 + 16, sc, 11, "middle")
    for j, m in enumerate(meths):
        svg.rect(fr.x1 + 15, fr.y1 + 18 * j, 10, 10, PALETTE[j % len(PALETTE)])
        svg.text(fr.x1 + 30, fr.y1 + 18 * j + 9, m, 11)
    return svg.render()


def error_chart(curves, title, r_d=None):
    """Median error over time per method; ``curves`` maps method to a step array."""
    svg = Svg()
    n = max((len(c) for c in curves.values()), default=1)
    top = max((float(np.nanmax(c)) for c in curves.values() if np.isfinite(c).any()), default=1.0)
    top = max(top, r_d or 0.0, 1e-3) * 1.05
    fr = _Frame(svg, (0, max(1, n - 1)), (0.0, top))
    fr.axes("step in trial", "position error [m]", title)
    if r_d is not None:
        svg.line(fr.x0, fr.py(r_d), fr.x1, fr.py(r_d), "#888", 1.0, "4,3")
        svg.text(fr.x1 + 4, fr.py(r_d) + 4, f"r_D={r_d:g}", 10, fill="#888")
    for j, (m, c) in enumerate(sorted(curves.items())):
        col = PALETTE[j % len(PALETTE)]
        seg = []
        for k, v in enumerate(c):
            if math.isfinite(v):
                seg.append((fr.px(k), fr.py(v)))
            elif seg:
                svg.polyline(seg, col)
                seg = []
        if seg:
            svg.polyline(seg, col)
        svg.rect(fr.x1 + 15, fr.y1 + 18 * j + 20, 10, 10, col)
        svg.text(fr.x1 + 30, fr.y1 + 18 * j + 29, m, 11)
    return svg.render()


def _load(run_dir):
    run_dir = Path(run_dir)
    if not (run_dir / "results.csv").exists():
        from .harness import evaluate_dir

        evaluate_dir(run_dir)
    results = scoring.read_results((run_dir / "results.csv").read_text())
    return run_dir, results, scoring.summarize(results)


def _stats(results):
    out = {}
    for r in results:
        out.setdefault((r.scenario, r.method), []).append(r)
    rows = {}
    for k, rs in out.items():
        err = np.array([r.final_err_m for r in rs])
        s2r = [r.steps_to_reloc for r in rs if r.steps_to_reloc is not None]
        fin = err[np.isfinite(err)]
        rows[k] = {
            "median_final_err_m": float(np.median(fin)) if len(fin) else None,
            "mean_steps_to_reloc": float(np.mean(s2r)) if s2r else None,
        }
    return rows


def write_report(run_dir, fmt):
    """Write ``report.<fmt>`` (svg: ``rs.svg`` plus ``error_<scenario>.svg``); returns the paths."""
    run_dir, results, summary = _load(run_dir)
    extra = _stats(results)
    if fmt == "csv":
        lines = ["scenario,method,n_trials,n_success,rs,median_final_err_m,mean_steps_to_reloc"]
        for s in summary:
            e = extra[(s["scenario"], s["method"])]
            f = lambda v: "" if v is None else f"{v:.6f}"  # noqa: E731
            lines.append(
                f"{s['scenario']},{s['method']},{s['n_trials']},{s['n_success']},{s['rs']:.6f},"
                f"{f(e['median_final_err_m'])},{f(e['mean_steps_to_reloc'])}"
            )
        p = run_dir / "report.csv"
        p.write_text("\n".join(lines) + "\n")
        return [p]
    if fmt == "json":
        doc = {
            "summary": [{**s, **extra[(s["scenario"], s["method"])]} for s in summary],
            "trials": [
                {
                    "scenario": r.scenario,
                    "method": r.method,
                    "trial_id": r.trial_id,
                    "success": r.success,
                    "final_err_m": r.final_err_m if math.isfinite(r.final_err_m) else None,
                    "steps_to_reloc": r.steps_to_reloc,
                }
                for r in results
            ],
        }
        p = run_dir / "report.json"
        p.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return [p]
    if fmt == "svg":
        paths = [run_dir / "rs.svg"]
        paths[0].write_text(rs_chart(summary))
        mf = json.loads((run_dir / "manifest.json").read_text()) if (run_dir / "manifest.json").exists() else []
        per = {}
        for m in mf:
            cols = scoring.parse_log((run_dir / m["log"]).read_text())
            err = np.linalg.norm(
                np.stack([cols["est_tx"] - cols["tx"], cols["est_ty"] - cols["ty"], cols["est_tz"] - cols["tz"]], 1), axis=1
            )
            per.setdefault(m["scenario"], {}).setdefault(m["method"], []).append(err)
            per[m["scenario"]].setdefault("_rd", m["r_d"])
        for sc, d in sorted(per.items()):
            r_d = d.pop("_rd")
            curves = {}
            for meth, errs in d.items():
                L = max(len(e) for e in errs)
                A = np.full((len(errs), L), np.nan)
                for k, e in enumerate(errs):
                    A[k, : len(e)] = e
                # median over trials that have an estimate at that step
                with np.errstate(all="ignore"):
                    ok = np.isfinite(A).any(axis=0)
                    med = np.full(L, np.nan)
                    med[ok] = np.nanmedian(A[:, ok], axis=0)
                curves[meth] = med
            p = run_dir / f"error_{sc}.svg"
            p.write_text(error_chart(curves, f"median error, {sc}", r_d))
            paths.append(p)
        return paths
    raise ConfigError(f"unknown format {fmt!r}; choose from csv, json, svg", "--format")
