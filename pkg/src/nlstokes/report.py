"""CSV / JSON emitters, the log-log SVG plot, and the output manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from .analysis import ERROR_COLUMNS, StudyReport
from .geometry import TAG_NAMES, PointCloud

STUDY_COLUMNS = ("delta", "h", "N") + ERROR_COLUMNS + ("stability_ratio", "energy_gap", "residual", "method", "status")


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def solution_csv(cloud: PointCloud, u: np.ndarray, p: np.ndarray) -> str:
    n = cloud.dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k + 1}" for k in range(n)] + ["tag"] + [f"u{k + 1}" for k in range(n)] + ["p"])
    for x, t, uu, pp in zip(cloud.points, cloud.tags, u, p):
        w.writerow([_num(c) for c in x] + [TAG_NAMES[int(t)]] + [_num(c) for c in uu] + [_num(pp)])
    return buf.getvalue()


def study_csv(report: StudyReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STUDY_COLUMNS)
    for r in report.records:
        w.writerow([_num(getattr(r, c)) if c not in ("method", "status") else getattr(r, c) for c in STUDY_COLUMNS])
    w.writerow([])
    w.writerow(["column", "observed_order"])
    for col in ERROR_COLUMNS:
        if col in report.observed_orders:
            w.writerow([col, _num(report.observed_orders[col])])
    return buf.getvalue()


def study_json(report: StudyReport, metadata: dict) -> dict:
    return {
        "metadata": {
            "case": report.case,
            "kernel": report.kernel,
            "domain": report.domain,
            "coupling": report.coupling,
            "solver": report.solver,
            **metadata,
        },
        "records": [
            {
                "delta": r.delta,
                "h": r.h,
                "N": r.N,
                **{c: r_val_or_none(getattr(r, c)) for c in ERROR_COLUMNS},
                "stability_ratio": r_val_or_none(r.stability_ratio),
                "energy_gap": r_val_or_none(r.energy_gap),
                "residual": r_val_or_none(r.residual),
                "method": r.method,
                "status": r.status,
            }
            for r in report.records
        ],
        "observed_orders": report.observed_orders,
    }


def r_val_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def loglog_svg(deltas, series: dict, width: int = 640, height: int = 480) -> str:
    """Error-vs-delta plot: one polyline per series plus slope-1/2 and slope-1 guides."""
    pad = 70
    xs = np.log10(np.asarray(deltas, dtype=float))
    finite = [np.asarray(v, float) for v in series.values()]
    ys_all = np.concatenate([np.log10(v[v > 0]) for v in finite if np.any(v > 0)] or [np.zeros(1)])
    x0, x1 = math.floor(xs.min()), math.ceil(xs.max())
    if x1 == x0:
        x1 = x0 + 1
    y0, y1 = math.floor(ys_all.min()), math.ceil(ys_all.max())
    if y1 == y0:
        y1 = y0 + 1

    def px(lx):
        return pad + (lx - x0) / (x1 - x0) * (width - 2 * pad)

    def py(ly):
        return height - pad - (ly - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for k in range(x0, x1 + 1):
        x = px(k)
        out.append(f'<line x1="{x:.2f}" y1="{height - pad}" x2="{x:.2f}" y2="{height - pad + 6}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{height - pad + 22}" font-size="12" text-anchor="middle">1e{k}</text>')
    for k in range(y0, y1 + 1):
        y = py(k)
        out.append(f'<line x1="{pad - 6}" y1="{y:.2f}" x2="{pad}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{pad - 10}" y="{y + 4:.2f}" font-size="12" text-anchor="end">1e{k}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 20}" font-size="14" text-anchor="middle">delta</text>')
    out.append(f'<text x="20" y="{height / 2}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 20 {height / 2})">error</text>')

    for idx, (name, vals) in enumerate(series.items()):
        vals = np.asarray(vals, dtype=float)
        keep = vals > 0
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs[keep], np.log10(vals[keep])))
        c = colors[idx % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{pts}"><title>{name}</title></polyline>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 16 * idx}" font-size="11" fill="{c}">{name}</text>')

    # guides anchored at the first point of the first series
    first = np.asarray(next(iter(series.values())), dtype=float)
    anchor = np.log10(first[0]) if first[0] > 0 else (y0 + y1) / 2
    for slope, dash in ((0.5, "6,4"), (1.0, "2,3")):
        ya = anchor
        yb = anchor + slope * (xs[-1] - xs[0])
        out.append(
            f'<polyline fill="none" stroke="gray" stroke-dasharray="{dash}" '
            f'points="{px(xs[0]):.2f},{py(ya):.2f} {px(xs[-1]):.2f},{py(yb):.2f}">'
            f"<title>slope {slope:g}</title></polyline>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(outdir: Path, files: list[str]) -> Path:
    entries = [{"file": f, "sha256": sha256_of(outdir / f)} for f in sorted(files)]
    path = outdir / "manifest.json"
    path.write_text(json.dumps({"files": entries}, indent=2) + "\n")
    return path
