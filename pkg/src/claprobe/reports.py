"""Deterministic CSV / JSON / SVG / PPM writers.

Every file carries the run's config hash: CSV as a leading ``#`` comment,
PPM as a ``#`` comment right after the magic number, JSON as a ``config_hash`` key, SVG as an XML comment. Floats are
written with ``repr`` so values round-trip exactly and reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .probe import ClaRecord

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, config_hash: str | None = None) -> Path:
    path = Path(path)
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_json(path, obj, config_hash: str | None = None) -> Path:
    path = Path(path)
    data = _jsonable(obj)
    if config_hash is not None and isinstance(data, dict):
        data = {"config_hash": config_hash, **data}
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")
    return path


def cla_header(latent_dim: int) -> list[str]:
    return (["latent_id", "layer", "unit", "row", "col", "activation", "cla_mean"]
            + [f"cla_axis_{d}" for d in range(latent_dim)])


def cla_rows(records: list[ClaRecord]):
    """Rows for the CLA export; ``row``/``col`` are -1 for flat layers."""
    for r in records:
        sp = tuple(r.site.spatial) + (-1, -1)
        row, col = sp[0], sp[1]
        yield [r.latent_id, r.site.layer, r.site.unit, row, col, r.activation, r.mean,
               *r.axis_curvatures.tolist()]


def write_ppm(path, image, config_hash: str | None = None) -> Path:
    """ASCII PPM of a (3, H, W) image with values in [-1, 1]."""
    img = np.asarray(image, dtype=np.float64)
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError(f"PPM needs 1 or 3 channels, got {c}")
    if c == 1:
        img = np.repeat(img, 3, axis=0)
    px = np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(int)
    lines = ["P3"]
    if config_hash is not None:
        lines.append(f"# config_hash={config_hash}")
    lines += [f"{w} {h}", "255"]
    for i in range(h):
        lines.append(" ".join(f"{px[0, i, j]} {px[1, i, j]} {px[2, i, j]}" for j in range(w)))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


# -- SVG -------------------------------------------------------------------------

def _svg_open(width, height, config_hash):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">']
    if config_hash is not None:
        out.append(f"<!-- config_hash={config_hash} -->")
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    return out


def _n(v: float) -> str:
    return f"{v:.3f}"


def _panel(out, x0, y0, w, h, title, xs, curves, labels, xlabel):
    out.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#888"/>')
    out.append(f'<text x="{_n(x0 + w / 2)}" y="{y0 - 4}" text-anchor="middle">{title}</text>')
    out.append(f'<text x="{_n(x0 + w / 2)}" y="{y0 + h + 22}" text-anchor="middle">{xlabel}</text>')
    xs = np.asarray(xs, dtype=float)
    ys = np.concatenate([np.asarray(c, dtype=float) for c in curves]) if curves else np.zeros(1)
    ys = ys[np.isfinite(ys)] if np.isfinite(ys).any() else np.zeros(1)
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    if xhi == xlo:
        xlo, xhi = xlo - 1, xhi + 1
    if yhi == ylo:
        ylo, yhi = ylo - 1, yhi + 1

    def px(x):
        return x0 + 6 + (x - xlo) / (xhi - xlo) * (w - 12)

    def py(y):
        return y0 + h - 6 - (y - ylo) / (yhi - ylo) * (h - 12)

    out.append(f'<text x="{x0 - 3}" y="{_n(py(yhi) + 3)}" text-anchor="end">{yhi:.3g}</text>')
    out.append(f'<text x="{x0 - 3}" y="{_n(py(ylo) + 3)}" text-anchor="end">{ylo:.3g}</text>')
    out.append(f'<text x="{_n(px(xlo))}" y="{y0 + h + 11}" text-anchor="middle">{xlo:.3g}</text>')
    out.append(f'<text x="{_n(px(xhi))}" y="{y0 + h + 11}" text-anchor="middle">{xhi:.3g}</text>')
    for k, ys_k in enumerate(curves):
        colour = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_n(px(x))},{_n(py(y))}" for x, y in zip(xs, ys_k) if np.isfinite(y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        for x, y in zip(xs, ys_k):
            if np.isfinite(y):
                out.append(f'<circle cx="{_n(px(x))}" cy="{_n(py(y))}" r="2" fill="{colour}"/>')
        if labels:
            out.append(f'<text x="{x0 + w - 4}" y="{y0 + 12 + 11 * k}" text-anchor="end" '
                       f'fill="{colour}">{labels[k]}</text>')


def line_panels_svg(path, panels, ncols: int, config_hash: str | None = None,
                    panel_size=(220, 150)) -> Path:
    """Grid of line panels; each panel is ``dict(title, x, curves, labels, xlabel)``."""
    pw, ph = panel_size
    nrows = (len(panels) + ncols - 1) // ncols
    width, height = ncols * (pw + 70) + 20, nrows * (ph + 60) + 20
    out = _svg_open(width, height, config_hash)
    for i, p in enumerate(panels):
        r, c = divmod(i, ncols)
        _panel(out, 60 + c * (pw + 70), 30 + r * (ph + 60), pw, ph, p["title"], p["x"],
               p["curves"], p.get("labels"), p.get("xlabel", ""))
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def heatmap_svg(path, matrix, title: str, config_hash: str | None = None, cell=(6, 14),
                row_labels=None) -> Path:
    """Diverging heatmap (blue negative, red positive) of a 2-d array."""
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    cw, ch = cell
    left = 60
    width, height = left + cols * cw + 20, 30 + rows * ch + 20
    out = _svg_open(width, height, config_hash)
    out.append(f'<text x="{left}" y="16">{title}</text>')
    scale = float(np.max(np.abs(m))) or 1.0
    for i in range(rows):
        label = row_labels[i] if row_labels else f"axis {i}"
        out.append(f'<text x="{left - 4}" y="{30 + i * ch + ch - 3}" text-anchor="end">{label}</text>')
        for j in range(cols):
            v = m[i, j] / scale
            if v >= 0:
                colour = f"rgb(255,{int(255 * (1 - v))},{int(255 * (1 - v))})"
            else:
                colour = f"rgb({int(255 * (1 + v))},{int(255 * (1 + v))},255)"
            out.append(f'<rect x="{left + j * cw}" y="{30 + i * ch}" width="{cw}" height="{ch}" fill="{colour}"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)
