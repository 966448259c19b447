"""Phase diagrams of hyper-ribbon dimension over training time, sloppiness and target scale."""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import StepSizeWarning, TrainConfig
from .errors import ConfigError, HyperRibbonError
from .manifold import analytic_pca, hyper_ribbon_dim
from .specgen import DatasetSpec, synthesize_dataset

# named target-to-initialization scales (sigma_* / sigma_w)
RATIO_PRESETS = {"high": 4.38, "mid": 1.32, "low": 0.33}
FAILED = -1


def default_T_values(count=20, t_max=1e4):
    return sorted({int(round(t)) for t in np.logspace(0.0, math.log10(t_max), count)})


def default_c_values(count=20):
    return [float(c) for c in np.linspace(0.02, 1.0, count)]


def default_ratio_values(count=10):
    return [float(r) for r in np.logspace(-1.0, 1.0, count)]


@dataclass(frozen=True)
class PhaseGridSpec:
    """Axes and fixed parameters of a dimension sweep.

    Each cell uses ``sigma_w^2 = sigma_w_sq`` and ``sigma_*^2 = ratio^2 sigma_w_sq``.
    ``alpha`` of None means ``1 / lambda_1`` (which is 1 for synthetic spectra).
    """

    T_values: tuple = field(default_factory=lambda: tuple(default_T_values()))
    c_values: tuple = field(default_factory=lambda: tuple(default_c_values()))
    ratio_values: tuple = field(default_factory=lambda: tuple(default_ratio_values()))
    n: int = 50
    d: int = 100
    alpha: float = None
    sigma_w_sq: float = 1.0
    threshold: float = 0.95
    seed: int = 0

    def __post_init__(self):
        for name in ("T_values", "c_values", "ratio_values"):
            vals = tuple(getattr(self, name))
            object.__setattr__(self, name, vals)
            if not vals:
                raise ConfigError(f"{name} must not be empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"{name} must be strictly increasing")
        if any(int(t) != t or t < 1 for t in self.T_values):
            raise ConfigError("T_values must be positive integers")
        if any(r <= 0 for r in self.ratio_values):
            raise ConfigError("ratio_values must be positive")
        if not 0 < self.threshold <= 1:
            raise ConfigError(f"threshold must lie in (0, 1], got {self.threshold}")
        if not self.sigma_w_sq > 0:
            raise ConfigError("sigma_w_sq must be positive for a ratio sweep")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError("alpha must be positive")

    @property
    def shape(self):
        return len(self.T_values), len(self.c_values), len(self.ratio_values)

    def to_dict(self):
        return {
            "T_values": [int(t) for t in self.T_values],
            "c_values": list(self.c_values),
            "ratio_values": list(self.ratio_values),
            "n": self.n, "d": self.d, "alpha": self.alpha,
            "sigma_w_sq": self.sigma_w_sq, "threshold": self.threshold, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown phase keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class PhaseGrid:
    dims: np.ndarray
    spec: PhaseGridSpec
    errors: dict = field(default_factory=dict)

    @property
    def valid(self):
        return self.dims != FAILED

    def slice_for_ratio(self, ratio):
        k = int(np.argmin(np.abs(np.asarray(self.spec.ratio_values) - ratio)))
        return self.dims[:, :, k]

    def to_rows(self):
        """Long-format rows ``(T, c, ratio, dim)``; failed cells carry the error text."""
        rows = []
        s = self.spec
        for a, T in enumerate(s.T_values):
            for b, c in enumerate(s.c_values):
                for k, r in enumerate(s.ratio_values):
                    rows.append((int(T), c, r, int(self.dims[a, b, k]), self.errors.get((a, b, k), "")))
        return rows


def _column(spec, b, k):
    """All T values for one (c, ratio) pair: one dataset, many horizons."""
    c, ratio = spec.c_values[b], spec.ratio_values[k]
    out = np.full(len(spec.T_values), FAILED, dtype=np.int64)
    try:
        ds = synthesize_dataset(DatasetSpec(
            n=spec.n, d=spec.d, c=c, sigma_star_sq=ratio * ratio * spec.sigma_w_sq,
            sigma_w_sq=spec.sigma_w_sq, seed=spec.seed))
    except HyperRibbonError as exc:
        return out, {a: str(exc) for a in range(len(spec.T_values))}
    alpha = spec.alpha if spec.alpha is not None else 1.0 / ds.eigvals[0]
    errors = {}
    for a, T in enumerate(spec.T_values):
        try:
            pca = analytic_pca(ds, TrainConfig(alpha=alpha, T=int(T)), keep_matrix=False)
            out[a] = int(hyper_ribbon_dim(pca.lambda_P, spec.threshold))
        except HyperRibbonError as exc:
            errors[a] = str(exc)
    return out, errors


def sweep(spec, threads=1):
    """Hyper-ribbon dimension for every (T, c, ratio) cell, from analytic PCA.

    The result does not depend on ``threads``: cells are pure and assembled by index.
    """
    nT, nc, nr = spec.shape
    dims = np.full((nT, nc, nr), FAILED, dtype=np.int64)
    errors = {}
    jobs = [(b, k) for b in range(nc) for k in range(nr)]
    with warnings.catch_warnings():
        # alpha = 1/lambda_1 is the intended default here
        warnings.simplefilter("ignore", StepSizeWarning)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda job: _column(spec, *job), jobs))
        else:
            results = [_column(spec, *job) for job in jobs]
    for (b, k), (col, errs) in zip(jobs, results):
        dims[:, b, k] = col
        for a, msg in errs.items():
            errors[(a, b, k)] = msg
    return PhaseGrid(dims=dims, spec=spec, errors=errors)


def _axis_map(values, log=False):
    v = np.log10(np.asarray(values, dtype=np.float64)) if log else np.asarray(values, dtype=np.float64)
    idx = np.arange(v.size, dtype=np.float64)
    return lambda t: float(np.interp(t, idx, v))


def _join_segments(segs, digits=9):
    """Chain segments sharing endpoints into polylines."""
    def key(x, y):
        return (round(x, digits), round(y, digits))

    ends = {}
    for j, (x0, y0, x1, y1) in enumerate(segs):
        ends.setdefault(key(x0, y0), []).append(j)
        ends.setdefault(key(x1, y1), []).append(j)
    used = np.zeros(len(segs), dtype=bool)
    lines = []
    for start in range(len(segs)):
        if used[start]:
            continue
        used[start] = True
        x0, y0, x1, y1 = segs[start]
        line = [(x0, y0), (x1, y1)]
        for forward in (True, False):
            while True:
                tip = line[-1] if forward else line[0]
                nxt = next((j for j in ends.get(key(*tip), ()) if not used[j]), None)
                if nxt is None:
                    break
                used[nxt] = True
                a0, b0, a1, b1 = segs[nxt]
                other = (a1, b1) if key(a0, b0) == key(*tip) else (a0, b0)
                if forward:
                    line.append(other)
                else:
                    line.insert(0, other)
        lines.append(line)
    return lines


def contour_lines(field, level, x_values, y_values, log_x=False, log_y=False):
    """Polylines of ``field == level`` in axis coordinates.

    ``field`` is indexed ``[y, x]``; NaN cells are skipped.
    """
    segs = _kernels.march_segments(np.asarray(field, dtype=np.float64), level)
    fx, fy = _axis_map(x_values, log_x), _axis_map(y_values, log_y)
    return [[(fx(x), fy(y)) for x, y in line] for line in _join_segments(segs.tolist())]


def extract_isosurface(grid, level):
    """Contours of the boundary ``dims <= level`` on every ratio slice.

    Returns ``{ratio: [polyline, ...]}`` with points ``(log10 T, c)``.
    """
    if level < 1:
        raise ConfigError("contour level must be >= 1")
    s = grid.spec
    out = {}
    for k, ratio in enumerate(s.ratio_values):
        field = grid.dims[:, :, k].T.astype(np.float64)
        field[field == FAILED] = np.nan
        out[ratio] = contour_lines(field, level + 0.5, s.T_values, s.c_values, log_x=True)
    return out


def modal_dimension(dims):
    vals = np.asarray(dims)
    vals = vals[vals != FAILED]
    if vals.size == 0:
        raise ConfigError("no valid cells")
    counts = np.bincount(vals)
    return int(np.argmax(counts))
