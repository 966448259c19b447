"""On-disk formats: CSV tables, the HRB1 residual binary, JSON manifests and SVG figures.

All writes go to a temporary file in the target directory and are renamed
into place, so a reader never observes a half-written artifact.
"""

import csv
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, HyperRibbonError

HRB1_MAGIC = b"HRB1"
# magic, then n, T, N as little-endian uint64
HRB1_HEADER = struct.Struct("<4sQQQ")


class DataIOError(HyperRibbonError, OSError):
    """Unreadable or malformed input file (CLI exit code 4)."""


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(x):
    """Round-trippable float text."""
    return repr(float(x))


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    return atomic_write_text(path, csv_text(header, rows))


def json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj):
    return atomic_write_text(path, json_text(obj))


def matrix_csv_text(M):
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in M)


def write_matrix_csv(path, M):
    return atomic_write_text(path, matrix_csv_text(M))


# --------------------------------------------------------------------------
# residual ensembles
# --------------------------------------------------------------------------

def hrb1_bytes(residuals):
    """Serialize an (N, T, n) residual array."""
    R = np.asarray(residuals, dtype="<f8")
    if R.ndim != 3:
        raise ConfigError("residual array must be 3-D (N, T, n)")
    N, T, n = R.shape
    return HRB1_HEADER.pack(HRB1_MAGIC, n, T, N) + np.ascontiguousarray(R).tobytes()


def write_hrb1(path, residuals):
    return atomic_write_bytes(path, hrb1_bytes(residuals))


def read_hrb1(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HRB1_HEADER.size:
        raise DataIOError(f"{path}: truncated HRB1 header")
    magic, n, T, N = HRB1_HEADER.unpack_from(raw)
    if magic != HRB1_MAGIC:
        raise DataIOError(f"{path}: bad magic {magic!r}")
    expected = HRB1_HEADER.size + 8 * n * T * N
    if len(raw) != expected:
        raise DataIOError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=HRB1_HEADER.size).reshape(N, T, n).copy()


def residual_csv_text(residuals):
    """Long format ``trajectory, t, r_0 .. r_{n-1}``."""
    R = np.asarray(residuals, dtype=np.float64)
    N, T, n = R.shape
    header = ["trajectory", "t"] + [f"r_{j}" for j in range(n)]
    lines = [",".join(header)]
    for a in range(N):
        for t in range(T):
            lines.append(f"{a},{t}," + ",".join(_fmt(v) for v in R[a, t]))
    return "\n".join(lines) + "\n"


def write_residual_csv(path, residuals):
    return atomic_write_text(path, residual_csv_text(residuals))


# --------------------------------------------------------------------------
# spectra
# --------------------------------------------------------------------------

EIGEN_HEADER = ["index", "lambda_P", "lambda_P1", "lambda_sigma_w", "lambda_y", "explained_variance"]


def eigenspectrum_rows(pca):
    n = len(pca.lambda_P)
    return [
        (i + 1, float(pca.lambda_P[i]), float(pca.lambda_P1[i]), float(pca.lambda_sigma_w[i]),
         float(pca.lambda_y[i]), float(pca.explained_variance[i]))
        for i in range(n)
    ]


def write_eigenspectrum_csv(path, pca):
    return write_csv(path, EIGEN_HEADER, eigenspectrum_rows(pca))


def read_feature_csv(path):
    """Numeric matrix from CSV, one sample per row.

    A non-numeric first row is treated as a header. Errors name the line.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            values = [float(cell) for cell in row]
        except ValueError:
            if lineno == 1:
                continue
            bad = next(cell for cell in row if not _is_float(cell))
            raise DataIOError(f"{path}:{lineno}: non-numeric value {bad!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise DataIOError(f"{path}:{lineno}: non-finite value")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DataIOError(f"{path}:{lineno}: expected {width} columns, found {len(values)}")
        rows.append(values)
    if not rows:
        raise DataIOError(f"{path}: no numeric rows")
    return np.array(rows, dtype=np.float64)


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

def manifest(out_dir, files, meta):
    """Content hashes of ``files`` (relative to ``out_dir``) plus metadata."""
    out_dir = Path(out_dir)
    return {
        "hrb_schema": 1,
        "meta": meta,
        "files": {str(Path(f).relative_to(out_dir)): sha256_file(f) for f in sorted(map(Path, files))},
    }


# --------------------------------------------------------------------------
# SVG figures
# --------------------------------------------------------------------------

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _svg_doc(width, height, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n{body}</svg>\n')


def spectrum_svg(curves, title="", width=520, height=360):
    """Log-y, index-x line plot; ``curves`` maps label to a positive 1-D array."""
    left, right, top, bottom = 60, 130, 30, 40
    pw, ph = width - left - right, height - top - bottom
    series = {k: np.asarray(v, dtype=np.float64) for k, v in curves.items()}
    pos = np.concatenate([v[v > 0] for v in series.values()] or [np.array([1.0])])
    if pos.size == 0:
        pos = np.array([1.0])
    lo, hi = math.floor(math.log10(pos.min())), math.ceil(math.log10(pos.max()))
    hi = hi if hi > lo else lo + 1
    n = max(len(v) for v in series.values())

    def sx(i):
        return left + pw * (i - 1) / max(n - 1, 1)

    def sy(v):
        return top + ph * (hi - math.log10(v)) / (hi - lo)

    parts = [f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    step = max(1, (hi - lo) // 8)
    for e in range(lo, hi + 1, step):
        y = sy(10.0 ** e)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>')
    for i in sorted({1, n, *range(10, n, 10)}):
        x = sx(i)
        parts.append(f'<text x="{x:.1f}" y="{top + ph + 15}" text-anchor="middle">{i}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">index i</text>')
    if title:
        parts.append(f'<text x="{left + pw / 2}" y="18" text-anchor="middle">{title}</text>')
    for k, (label, v) in enumerate(series.items()):
        pts = " ".join(f"{sx(i + 1):.1f},{sy(val):.1f}" for i, val in enumerate(v) if val > 0)
        color = PALETTE[k % len(PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 + 16 * k
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 32}" y="{ly}">{label}</text>')
    return _svg_doc(width, height, "\n".join(parts) + "\n")


def heatmap_svg(grid2d, x_labels, y_labels, title="", x_name="T", y_name="c",
                contours=None, x_range=None, y_range=None, cell=18):
    """Integer heatmap (rows = y, columns = x) with a linear grey-to-blue colour map.

    Cells equal to -1 are drawn hatched grey. ``contours`` are polylines in
    axis coordinates spanning ``x_range`` and ``y_range``.
    """
    G = np.asarray(grid2d)
    ny, nx = G.shape
    left, top = 60, 30
    width, height = left + nx * cell + 70, top + ny * cell + 45
    valid = G[G >= 0]
    vmin, vmax = (int(valid.min()), int(valid.max())) if valid.size else (0, 1)
    span = max(vmax - vmin, 1)
    parts = []
    for r in range(ny):
        for c in range(nx):
            v = int(G[r, c])
            x, y = left + c * cell, top + (ny - 1 - r) * cell
            if v < 0:
                fill = "#bbbbbb"
            else:
                t = (v - vmin) / span
                fill = "#%02x%02x%02x" % (int(240 - 200 * t), int(240 - 160 * t), int(255 - 60 * t))
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}">'
                         f'<title>{x_name}={x_labels[c]} {y_name}={y_labels[r]} dim={v}</title></rect>')
            if v >= 0:
                parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" font-size="8" '
                             f'text-anchor="middle">{v}</text>')
    for c in range(0, nx, max(1, nx // 6)):
        parts.append(f'<text x="{left + c * cell + cell / 2}" y="{top + ny * cell + 14}" '
                     f'text-anchor="middle" font-size="9">{x_labels[c]}</text>')
    for r in range(0, ny, max(1, ny // 6)):
        parts.append(f'<text x="{left - 4}" y="{top + (ny - 1 - r) * cell + cell / 2 + 4}" '
                     f'text-anchor="end" font-size="9">{y_labels[r]}</text>')
    parts.append(f'<text x="{left + nx * cell / 2}" y="{height - 8}" text-anchor="middle">{x_name}</text>')
    parts.append(f'<text x="14" y="{top + ny * cell / 2}" transform="rotate(-90 14 {top + ny * cell / 2})" '
                 f'text-anchor="middle">{y_name}</text>')
    if title:
        parts.append(f'<text x="{left + nx * cell / 2}" y="18" text-anchor="middle">{title}</text>')
    if contours and x_range and y_range:
        (x0, x1), (y0, y1) = x_range, y_range

        def px(u):
            return left + cell / 2 + (u - x0) / max(x1 - x0, 1e-300) * (nx - 1) * cell

        def py(v):
            return top + cell / 2 + (y1 - v) / max(y1 - y0, 1e-300) * (ny - 1) * cell

        for line in contours:
            pts = " ".join(f"{px(u):.1f},{py(v):.1f}" for u, v in line)
            parts.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="2"/>')
    return _svg_doc(width, height, "\n".join(parts) + "\n")
