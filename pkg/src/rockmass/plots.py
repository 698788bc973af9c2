"""Static SVG figures written by hand, each with a CSV twin.

Every SVG embeds the plotted numbers as JSON inside ``<metadata>`` so two
figures can be compared by data rather than by markup.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Sequence

import numpy as np

from rockmass.evaluation import LOG_BAND, ConfusionMatrix, log_band_outliers, normalize, qq_points


def _num(v: float) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "nan"
    return f"{float(v):.6g}"


def _esc(s) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Svg:
    def __init__(self, width: int, height: int, data: dict):
        self.width, self.height = width, height
        self.parts: list[str] = []
        self.data = data

    def rect(self, x, y, w, h, fill, stroke="none", opacity=1.0):
        self.parts.append(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(w)}" height="{_num(h)}" fill="{fill}" '
            f'stroke="{stroke}" fill-opacity="{_num(opacity)}"/>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" stroke="{stroke}" stroke-width="{_num(width)}"{d}/>'
        )

    def circle(self, x, y, r, fill):
        self.parts.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{_num(r)}" fill="{fill}"/>')

    def polyline(self, pts, stroke, width=1.0, opacity=1.0):
        p = " ".join(f"{_num(a)},{_num(b)}" for a, b in pts)
        self.parts.append(
            f'<polyline points="{p}" fill="none" stroke="{stroke}" stroke-width="{_num(width)}" stroke-opacity="{_num(opacity)}"/>'
        )

    def polygon(self, pts, fill, opacity=1.0):
        p = " ".join(f"{_num(a)},{_num(b)}" for a, b in pts)
        self.parts.append(f'<polygon points="{p}" fill="{fill}" fill-opacity="{_num(opacity)}"/>')

    def text(self, x, y, s, size=11, anchor="middle", rotate=None):
        r = f' transform="rotate({rotate} {_num(x)} {_num(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}"{r}>{_esc(s)}</text>'
        )

    def render(self) -> str:
        meta = json.dumps(self.data, sort_keys=True, separators=(",", ":"), default=_json_default)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
            f"<metadata>{_esc(meta)}</metadata>\n"
            f'<rect width="{self.width}" height="{self.height}" fill="#fff"/>\n' + "\n".join(self.parts) + "\n</svg>\n"
        )


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def svg_data(svg: str) -> dict:
    """The data block embedded in an SVG produced here."""
    start = svg.index("<metadata>") + len("<metadata>")
    end = svg.index("</metadata>")
    raw = svg[start:end].replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
    return json.loads(raw)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _blue(v: float) -> str:
    """White-to-blue ramp for values in [0, 1]."""
    v = 0.0 if not math.isfinite(v) else min(1.0, max(0.0, v))
    r = int(round(255 - v * (255 - 8)))
    g = int(round(255 - v * (255 - 69)))
    b = int(round(255 - v * (255 - 148)))
    return f"#{r:02x}{g:02x}{b:02x}"


# ---------------------------------------------------------------- confusion triptych


def confusion_triptych(cm: ConfusionMatrix, title: str = "") -> tuple[str, str]:
    """Recall-normalized, precision-normalized and raw-count heatmaps side by side."""
    roster = [str(c) for c in cm.roster]
    counts = cm.counts.astype(float)
    panels = [
        ("recall", np.nan_to_num(normalize(cm, "row"), nan=0.0)),
        ("precision", np.nan_to_num(normalize(cm, "column"), nan=0.0)),
        ("counts", counts),
    ]
    C = len(roster)
    cell = max(24, min(60, 360 // max(C, 1)))
    pw = cell * C
    margin, gap, top = 50, 40, 40
    width = margin + 3 * pw + 2 * gap + 20
    height = top + pw + 50
    data = {"roster": roster, "panels": {name: m.tolist() for name, m in panels}}
    svg = _Svg(width, height, data)
    if title:
        svg.text(width / 2, 16, title, size=13)
    rows = []
    for p, (name, m) in enumerate(panels):
        x0 = margin + p * (pw + gap)
        svg.text(x0 + pw / 2, top - 8, name, size=12)
        vmax = m.max() if name == "counts" and m.max() > 0 else 1.0
        for i in range(C):
            for j in range(C):
                v = float(m[i, j])
                svg.rect(x0 + j * cell, top + i * cell, cell, cell, _blue(v / vmax), stroke="#888")
                label = str(int(v)) if name == "counts" else f"{v:.2f}"
                svg.text(x0 + (j + 0.5) * cell, top + (i + 0.6) * cell, label, size=9)
                rows.append((name, roster[i], roster[j], v))
            svg.text(x0 - 4, top + (i + 0.6) * cell, roster[i], size=10, anchor="end")
        for j in range(C):
            svg.text(x0 + (j + 0.5) * cell, top + pw + 14, roster[j], size=10)
        svg.text(x0 + pw / 2, top + pw + 32, "predicted", size=10)
    svg.text(14, top + pw / 2, "true", size=10, rotate=-90)
    return svg.render(), _csv(["panel", "true", "predicted", "value"], rows)


# ---------------------------------------------------------------- Q vs Q-base histogram


def q_histogram(q, q_base, bins_per_decade: int = 5) -> tuple[str, str]:
    """Overlaid histograms of log10(Q) and log10(Q-base) on shared decade bins."""
    lq = np.log10(np.asarray(q, dtype=float))
    lb = np.log10(np.asarray([v for v in q_base if v is not None and np.isfinite(v)], dtype=float))
    both = np.concatenate([lq, lb]) if lb.size else lq
    lo = math.floor(both.min()) if both.size else -2
    hi = math.ceil(both.max()) if both.size else 3
    if hi <= lo:
        hi = lo + 1
    edges = np.linspace(lo, hi, (hi - lo) * bins_per_decade + 1)
    cq, _ = np.histogram(lq, edges)
    cb, _ = np.histogram(lb, edges)
    W, H, m = 520, 320, 50
    data = {"edges_log10": edges.tolist(), "q": cq.tolist(), "q_base": cb.tolist()}
    svg = _Svg(W, H, data)
    ymax = max(1, int(max(cq.max(initial=0), cb.max(initial=0))))
    pw, ph = W - 2 * m, H - 2 * m
    bw = pw / len(cq)
    for i in range(len(cq)):
        x = m + i * bw
        for c, color in ((cq[i], "#1f77b4"), (cb[i], "#ff7f0e")):
            h = ph * c / ymax
            svg.rect(x, m + ph - h, bw, h, color, opacity=0.5)
    svg.line(m, m + ph, m + pw, m + ph)
    svg.line(m, m, m, m + ph)
    for d in range(lo, hi + 1):
        x = m + pw * (d - lo) / (hi - lo)
        svg.line(x, m + ph, x, m + ph + 4)
        svg.text(x, m + ph + 16, f"1e{d}", size=10)
    svg.text(m - 6, m + 4, str(ymax), size=10, anchor="end")
    svg.text(m - 6, m + ph, "0", size=10, anchor="end")
    svg.text(W / 2, H - 8, "value (log scale)", size=11)
    svg.rect(W - m - 90, m - 30, 10, 10, "#1f77b4", opacity=0.5)
    svg.text(W - m - 76, m - 21, "Q", size=10, anchor="start")
    svg.rect(W - m - 50, m - 30, 10, 10, "#ff7f0e", opacity=0.5)
    svg.text(W - m - 36, m - 21, "Q-base", size=10, anchor="start")
    rows = [(float(edges[i]), float(edges[i + 1]), int(cq[i]), int(cb[i])) for i in range(len(cq))]
    return svg.render(), _csv(["log10_low", "log10_high", "count_q", "count_q_base"], rows)


# ---------------------------------------------------------------- regression panels


def regression_panels(y_true_log, y_pred_log, band: float = LOG_BAND) -> tuple[str, str]:
    """Predicted vs true scatter (identity line, red +-band) next to a residual QQ plot.

    Inputs are log10 values; points outside the band are drawn red.
    """
    yt = np.asarray(y_true_log, dtype=float)
    yp = np.asarray(y_pred_log, dtype=float)
    out = log_band_outliers(yt, yp, band)
    theo, obs = qq_points(yp - yt)
    W, H, m, gap = 760, 360, 50, 60
    side = min(W - 2 * m - gap, 2 * (H - 2 * m)) / 2
    data = {
        "band": band,
        "y_true": yt.tolist(),
        "y_pred": yp.tolist(),
        "outlier": out.astype(int).tolist(),
        "qq_theoretical": theo.tolist(),
        "qq_observed": obs.tolist(),
    }
    svg = _Svg(W, H, data)

    lo = float(min(yt.min(), yp.min())) - band
    hi = float(max(yt.max(), yp.max())) + band
    if hi <= lo:
        hi = lo + 1.0

    def sx(v):
        return m + side * (v - lo) / (hi - lo)

    def sy(v):
        return m + side - side * (v - lo) / (hi - lo)

    svg.text(m + side / 2, m - 12, "predicted vs true (log10)", size=12)
    svg.polygon([(sx(lo), sy(lo + band)), (sx(hi - band), sy(hi)), (sx(hi), sy(hi)), (sx(hi), sy(hi - band)),
                 (sx(lo + band), sy(lo)), (sx(lo), sy(lo))], "#d62728", opacity=0.15)
    svg.line(sx(lo), sy(lo), sx(hi), sy(hi), stroke="#000")
    svg.line(sx(lo), sy(lo + band), sx(hi - band), sy(hi), stroke="#d62728", dash="4,3")
    svg.line(sx(lo + band), sy(lo), sx(hi), sy(hi - band), stroke="#d62728", dash="4,3")
    for a, b, o in zip(yt, yp, out):
        svg.circle(sx(a), sy(b), 2.0, "#d62728" if o else "#1f77b4")
    svg.line(m, m + side, m + side, m + side)
    svg.line(m, m, m, m + side)
    svg.text(m + side / 2, m + side + 30, "true", size=11)
    svg.text(m - 30, m + side / 2, "predicted", size=11, rotate=-90)

    x0 = m + side + gap
    qlo = float(min(theo.min(initial=0), obs.min(initial=0))) - 0.5
    qhi = float(max(theo.max(initial=0), obs.max(initial=0))) + 0.5

    def qx(v):
        return x0 + side * (v - qlo) / (qhi - qlo)

    def qy(v):
        return m + side - side * (v - qlo) / (qhi - qlo)

    svg.text(x0 + side / 2, m - 12, "residual QQ", size=12)
    svg.line(qx(qlo), qy(qlo), qx(qhi), qy(qhi), stroke="#000")
    for a, b in zip(theo, obs):
        svg.circle(qx(a), qy(b), 2.0, "#1f77b4")
    svg.line(x0, m + side, x0 + side, m + side)
    svg.line(x0, m, x0, m + side)
    svg.text(x0 + side / 2, m + side + 30, "normal quantile", size=11)
    svg.text(x0 - 30, m + side / 2, "standardized residual", size=11, rotate=-90)

    rows = [(i, float(yt[i]), float(yp[i]), int(out[i])) for i in range(len(yt))]
    return svg.render(), _csv(["index", "y_true_log10", "y_pred_log10", "outlier"], rows)


def qq_table(residuals) -> str:
    theo, obs = qq_points(residuals)
    return _csv(["theoretical", "observed"], zip(theo.tolist(), obs.tolist()))


# ---------------------------------------------------------------- parallel coordinates


def parallel_coordinates_svg(pc: dict) -> tuple[str, str]:
    """Tuning history as polylines over one vertical axis per parameter plus the objective."""
    axes = list(pc["axes"])
    trials = [t for t in pc["trials"] if t.get("objective") is not None]
    names = [a["name"] for a in axes] + [pc.get("objective", "objective")]
    W = max(360, 110 * len(names))
    H, m = 340, 50

    def unit(axis, v):
        if v is None:
            return 0.0
        if axis["type"] == "categorical":
            ch = [json.dumps(c) for c in axis["choices"]]
            k = ch.index(json.dumps(v)) if json.dumps(v) in ch else 0
            return 0.5 if len(ch) == 1 else k / (len(ch) - 1)
        lo, hi = axis["low"], axis["high"]
        if axis.get("log"):
            lo, hi, v = math.log(lo), math.log(hi), math.log(v)
        return 0.0 if hi == lo else (v - lo) / (hi - lo)

    objs = [t["objective"] for t in trials]
    olo, ohi = (min(objs), max(objs)) if objs else (0.0, 1.0)
    data = {"axes": names, "lines": []}
    svg = _Svg(W, H, data)
    step = (W - 2 * m) / max(1, len(names) - 1)
    for i, n in enumerate(names):
        x = m + i * step
        svg.line(x, m, x, H - m, stroke="#444")
        svg.text(x, H - m + 18, n, size=10)
    rows = []
    best = max(objs) if objs else None
    for t in trials:
        us = [unit(a, t["params"].get(a["name"])) for a in axes]
        uo = 0.5 if ohi == olo else (t["objective"] - olo) / (ohi - olo)
        us.append(uo)
        pts = [(m + i * step, H - m - u * (H - 2 * m)) for i, u in enumerate(us)]
        color = "#d62728" if t["objective"] == best else "#1f77b4"
        svg.polyline(pts, color, width=1.0, opacity=0.6)
        data["lines"].append({"trial": t["trial"], "unit": us})
        rows.append([t["trial"]] + [json.dumps(t["params"].get(a["name"])) for a in axes] + [float(t["objective"])])
    return svg.render(), _csv(["trial"] + names, rows)
