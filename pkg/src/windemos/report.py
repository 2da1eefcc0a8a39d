"""Native SVG plots of summary tables.

One figure per metric: mean score against lead time on the left, skill
against the reference on the right, one line per model with a shaded
confidence ribbon. Each figure has a CSV mirror holding exactly the plotted
numbers.
"""

import re
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from .exceptions import InputError

WIDTH, HEIGHT = 900, 500
# Okabe-Ito colorblind-safe palette
PALETTE = ("#000000", "#E69F00", "#56B4E9", "#009E73", "#F0E442", "#0072B2", "#D55E00", "#CC79A7")
MIRROR_COLUMNS = ["panel", "model_id", "lead_time", "value", "ci_low", "ci_high"]
FLOAT_FORMAT = "%.17g"

_PANELS = (("mean", "mean score"), ("skill_vs_ref", "skill score"))
_LEFT, _TOP, _BOTTOM, _GAP, _RIGHT = 60, 40, 80, 70, 20


def metric_slug(metric):
    return re.sub(r"[^A-Za-z0-9]+", "_", metric.replace("@", "_at_")).strip("_")


def read_summary(path):
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise InputError(f"summary file {path} not found") from None
    missing = {"model_id", "metric", "lead_time", "mean", "skill_vs_ref", "ci_low", "ci_high"} - set(df.columns)
    if missing:
        raise InputError(f"{path} lacks columns {sorted(missing)}")
    return df


def plotted_series(summary, metric):
    """Rows plotted for ``metric`` in the layout of the CSV mirror."""
    available = sorted(summary["metric"].unique())
    if metric not in available:
        raise InputError(f"unknown metric {metric!r}; available: {', '.join(available)}")
    sub = summary[summary["metric"] == metric]
    models = list(dict.fromkeys(sub["model_id"]))
    rows = []
    for panel, _ in _PANELS:
        for mid in models:
            m = sub[sub["model_id"] == mid].sort_values("lead_time")
            for r in m.itertuples(index=False):
                value = getattr(r, panel)
                lo, hi = (r.ci_low, r.ci_high) if panel == "skill_vs_ref" else (np.nan, np.nan)
                rows.append((panel, mid, int(r.lead_time), value, lo, hi))
    return pd.DataFrame(rows, columns=MIRROR_COLUMNS)


def _ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return []
    if hi == lo:
        return [lo]
    step = 10 ** np.floor(np.log10((hi - lo) / n))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= n:
            step *= mult
            break
    start = np.ceil(lo / step) * step
    return list(np.arange(start, hi + step * 1e-9, step))


def _panel(series, x0, width, title, leads, zero_line):
    height = HEIGHT - _TOP - _BOTTOM
    vals = np.concatenate(
        [series["value"].to_numpy(float), series["ci_low"].to_numpy(float), series["ci_high"].to_numpy(float)]
    )
    vals = vals[np.isfinite(vals)]
    if zero_line and vals.size:
        vals = np.append(vals, 0.0)
    out = [f'<text x="{x0 + width / 2:.1f}" y="{_TOP - 15}" text-anchor="middle" font-size="15">{escape(title)}</text>']
    out.append(f'<rect x="{x0}" y="{_TOP}" width="{width}" height="{height}" fill="none" stroke="#444"/>')
    if vals.size == 0:
        out.append(
            f'<text x="{x0 + width / 2:.1f}" y="{_TOP + height / 2:.1f}" text-anchor="middle" '
            f'font-size="13" fill="#666">no values</text>'
        )
        return out
    lo, hi = float(vals.min()), float(vals.max())
    pad = 0.05 * (hi - lo) if hi > lo else max(abs(hi), 1.0) * 0.05
    lo, hi = lo - pad, hi + pad
    lmin, lmax = min(leads), max(leads)
    sx = lambda v: x0 + (v - lmin) / max(lmax - lmin, 1) * width
    sy = lambda v: _TOP + (hi - v) / (hi - lo) * height
    for t in _ticks(lo, hi):
        out.append(f'<line x1="{x0 - 4}" x2="{x0}" y1="{sy(t):.2f}" y2="{sy(t):.2f}" stroke="#444"/>')
        out.append(f'<text x="{x0 - 7}" y="{sy(t) + 4:.2f}" text-anchor="end" font-size="11">{t:.3g}</text>')
    for lead in leads:
        out.append(
            f'<text x="{sx(lead):.2f}" y="{_TOP + height + 16}" text-anchor="middle" font-size="11">{lead}</text>'
        )
    out.append(
        f'<text x="{x0 + width / 2:.1f}" y="{_TOP + height + 34}" text-anchor="middle" font-size="12">lead time (days)</text>'
    )
    if zero_line and lo < 0 < hi:
        out.append(
            f'<line class="zero" x1="{x0}" x2="{x0 + width}" y1="{sy(0):.2f}" y2="{sy(0):.2f}" '
            f'stroke="#888" stroke-dasharray="5,4"/>'
        )
    for k, (mid, m) in enumerate(series.groupby("model_id", sort=False)):
        color = PALETTE[k % len(PALETTE)]
        x = m["lead_time"].to_numpy()
        v = m["value"].to_numpy(float)
        clo = m["ci_low"].to_numpy(float)
        chi = m["ci_high"].to_numpy(float)
        band = np.isfinite(clo) & np.isfinite(chi)
        if band.sum() >= 1 and np.any(chi[band] > clo[band]):
            upper = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[band], chi[band]))
            lower = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[band][::-1], clo[band][::-1]))
            out.append(f'<polygon class="ribbon" points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        ok = np.isfinite(v)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], v[ok]))
        if pts:
            out.append(
                f'<polyline class="series" data-model="{escape(mid)}" points="{pts}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>'
            )
    return out


def render_svg(summary, metric):
    """SVG document for ``metric`` (raises :class:`InputError` if unknown)."""
    series = plotted_series(summary, metric)
    leads = sorted(series["lead_time"].unique())
    width = (WIDTH - _LEFT - _GAP - _RIGHT) / 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" '
        f'font-family="sans-serif">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="16" font-weight="bold">{escape(metric)}</text>',
    ]
    for i, (panel, title) in enumerate(_PANELS):
        x0 = _LEFT + i * (width + _GAP)
        parts += _panel(series[series["panel"] == panel], x0, width, title, leads, zero_line=(panel == "skill_vs_ref"))
    models = list(dict.fromkeys(series["model_id"]))
    for k, mid in enumerate(models):
        x = _LEFT + (k % 4) * 200
        y = HEIGHT - 28 + (k // 4) * 16 - 12 * (len(models) > 4)
        color = PALETTE[k % len(PALETTE)]
        parts.append(f'<line x1="{x}" x2="{x + 20}" y1="{y}" y2="{y}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="{x + 26}" y="{y + 4}" font-size="12">{escape(mid)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(summary, out_dir, metrics=None):
    """Write ``report_<metric>.svg`` and its CSV mirror per metric; returns the SVG paths."""
    if isinstance(summary, (str, Path)):
        summary = read_summary(summary)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = list(dict.fromkeys(summary["metric"])) if metrics is None else list(metrics)
    paths = []
    for metric in metrics:
        svg = render_svg(summary, metric)
        slug = metric_slug(metric)
        (out / f"report_{slug}.svg").write_text(svg)
        plotted_series(summary, metric).to_csv(
            out / f"report_{slug}.csv", index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
        paths.append(out / f"report_{slug}.svg")
    return paths
