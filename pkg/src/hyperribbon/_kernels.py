"""Hot numeric kernels with numba and pure-numpy implementations.

Each public kernel name is bound to the numba implementation when numba is
available, otherwise to the numpy one. Both variants are importable under
``<name>_numba`` / ``<name>_numpy`` so tests and the benchmark can compare
them directly.
"""

import numpy as np

from ._backend import HAS_NUMBA, njit

# |1 - q_i q_j| below this switches the finite geometric sum to its series
# expansion about q_i q_j = 1.
DEGENERATE_DENOM = 1e-12


# --------------------------------------------------------------------------
# finite geometric sums  sum_{t<T} (q_i q_j)^t,  q = 1 - x
# --------------------------------------------------------------------------

def geometric_weights_numpy(x, T):
    """Matrix ``W[i, j] = sum_{t<T} ((1 - x_i)(1 - x_j))**t`` for x in [0, 1].

    Evaluated as ``-expm1(T log(q_i q_j)) / (1 - q_i q_j)`` with the
    denominator formed as ``x_i + x_j - x_i x_j`` so that neither factor
    suffers cancellation when the contraction is close to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logq = np.log1p(-x)
    denom = x[:, None] + x[None, :] - np.outer(x, x)
    s = logq[:, None] + logq[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = -np.expm1(T * s) / denom
    series = T - 0.5 * T * (T - 1.0) * denom
    return np.where(denom < DEGENERATE_DENOM, series, exact)


def geometric_sums_numpy(x, T):
    """Vector ``sum_{t<T} (1 - x_i)**t``."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logq = np.log1p(-x)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = -np.expm1(T * logq) / x
    series = T - 0.5 * T * (T - 1.0) * x
    return np.where(x < DEGENERATE_DENOM, series, exact)


@njit(cache=True)
def _geom_entry(denom, s, T):
    if denom < DEGENERATE_DENOM:
        return T - 0.5 * T * (T - 1.0) * denom
    return -np.expm1(T * s) / denom


@njit(cache=True)
def geometric_weights_numba(x, T):
    n = x.shape[0]
    logq = np.empty(n)
    for i in range(n):
        logq[i] = np.log1p(-x[i]) if x[i] < 1.0 else -np.inf
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            denom = x[i] + x[j] - x[i] * x[j]
            v = _geom_entry(denom, logq[i] + logq[j], float(T))
            out[i, j] = v
            out[j, i] = v
    return out


@njit(cache=True)
def geometric_sums_numba(x, T):
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        logq = np.log1p(-x[i]) if x[i] < 1.0 else -np.inf
        out[i] = _geom_entry(x[i], logq, float(T))
    return out


# --------------------------------------------------------------------------
# residual evolution in the eigenbasis of K
# --------------------------------------------------------------------------

def evolve_gd_numpy(rho0, q, T):
    """Rotated residuals ``out[i, t] = q**t * rho0[i]`` for t < T."""
    rho0 = np.asarray(rho0, dtype=np.float64)
    powers = np.power(q[None, :], np.arange(T, dtype=np.float64)[:, None])
    return rho0[:, None, :] * powers[None, :, :]


@njit(cache=True)
def evolve_gd_numba(rho0, q, T):
    N, n = rho0.shape
    out = np.empty((N, T, n))
    for i in range(N):
        for k in range(n):
            out[i, 0, k] = rho0[i, k]
        for t in range(1, T):
            for k in range(n):
                out[i, t, k] = q[k] * out[i, t - 1, k]
    return out


def evolve_sgd_numpy(rho0, q, noise):
    """Noisy recursion ``rho_{t+1} = q * rho_t + noise[:, t]``.

    ``noise`` has shape (N, T - 1, n); the output has shape (N, T, n).
    """
    N, steps, n = noise.shape
    out = np.empty((N, steps + 1, n))
    out[:, 0] = rho0
    for t in range(steps):
        out[:, t + 1] = q * out[:, t] + noise[:, t]
    return out


@njit(cache=True)
def evolve_sgd_numba(rho0, q, noise):
    N, steps, n = noise.shape
    out = np.empty((N, steps + 1, n))
    for i in range(N):
        for k in range(n):
            out[i, 0, k] = rho0[i, k]
        for t in range(steps):
            for k in range(n):
                out[i, t + 1, k] = q[k] * out[i, t, k] + noise[i, t, k]
    return out


# --------------------------------------------------------------------------
# marching squares
# --------------------------------------------------------------------------

@njit(cache=True)
def _lerp(v0, v1, level):
    if v1 == v0:
        return 0.5
    return (level - v0) / (v1 - v0)


@njit(cache=True)
def march_segments_numba(field, level):
    """Iso-line segments of ``field`` at ``level``.

    Returns an (M, 4) array of ``(x0, y0, x1, y1)`` in index coordinates,
    x along columns and y along rows. Saddles are resolved by the cell mean;
    cells with a NaN corner are skipped.
    """
    ny, nx = field.shape
    segs = np.empty((max(2 * (ny - 1) * (nx - 1), 1), 4))
    m = 0
    px = np.empty(4)
    py = np.empty(4)
    for r in range(ny - 1):
        for c in range(nx - 1):
            a = field[r, c]
            b = field[r, c + 1]
            cc = field[r + 1, c + 1]
            d = field[r + 1, c]
            # cells touching a missing value carry no contour
            if np.isnan(a) or np.isnan(b) or np.isnan(cc) or np.isnan(d):
                continue
            ia = a > level
            ib = b > level
            ic = cc > level
            idd = d > level
            # edges: 0 top (a-b), 1 right (b-c), 2 bottom (d-c), 3 left (a-d)
            cross = np.zeros(4, dtype=np.bool_)
            if ia != ib:
                cross[0] = True
                px[0] = c + _lerp(a, b, level)
                py[0] = r
            if ib != ic:
                cross[1] = True
                px[1] = c + 1.0
                py[1] = r + _lerp(b, cc, level)
            if idd != ic:
                cross[2] = True
                px[2] = c + _lerp(d, cc, level)
                py[2] = r + 1.0
            if ia != idd:
                cross[3] = True
                px[3] = c
                py[3] = r + _lerp(a, d, level)
            count = 0
            for e in range(4):
                if cross[e]:
                    count += 1
            if count == 2:
                e0 = -1
                e1 = -1
                for e in range(4):
                    if cross[e]:
                        if e0 < 0:
                            e0 = e
                        else:
                            e1 = e
                segs[m, 0] = px[e0]
                segs[m, 1] = py[e0]
                segs[m, 2] = px[e1]
                segs[m, 3] = py[e1]
                m += 1
            elif count == 4:
                centre_in = 0.25 * (a + b + cc + d) > level
                # pair edges around the corners that end up isolated
                if ia == centre_in:
                    pairs = ((0, 1), (2, 3))
                else:
                    pairs = ((0, 3), (1, 2))
                for p in pairs:
                    segs[m, 0] = px[p[0]]
                    segs[m, 1] = py[p[0]]
                    segs[m, 2] = px[p[1]]
                    segs[m, 3] = py[p[1]]
                    m += 1
    return segs[:m].copy()


def march_segments_numpy(field, level):
    field = np.asarray(field, dtype=np.float64)
    ny, nx = field.shape
    segs = []
    for r in range(ny - 1):
        for c in range(nx - 1):
            a, b = field[r, c], field[r, c + 1]
            cc, d = field[r + 1, c + 1], field[r + 1, c]
            if np.isnan([a, b, cc, d]).any():
                continue
            ia, ib, ic, idd = a > level, b > level, cc > level, d > level
            pts = {}
            if ia != ib:
                pts[0] = (c + _lerp_py(a, b, level), r)
            if ib != ic:
                pts[1] = (c + 1.0, r + _lerp_py(b, cc, level))
            if idd != ic:
                pts[2] = (c + _lerp_py(d, cc, level), r + 1.0)
            if ia != idd:
                pts[3] = (c, r + _lerp_py(a, d, level))
            if len(pts) == 2:
                e0, e1 = sorted(pts)
                segs.append((*pts[e0], *pts[e1]))
            elif len(pts) == 4:
                centre_in = 0.25 * (a + b + cc + d) > level
                pairs = ((0, 1), (2, 3)) if ia == centre_in else ((0, 3), (1, 2))
                for p0, p1 in pairs:
                    segs.append((*pts[p0], *pts[p1]))
    return np.array(segs, dtype=np.float64).reshape(-1, 4)


def _lerp_py(v0, v1, level):
    if v1 == v0:
        return 0.5
    return (level - v0) / (v1 - v0)


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if HAS_NUMBA:
    def geometric_weights(x, T):
        return geometric_weights_numba(_as_f64(x), int(T))

    def geometric_sums(x, T):
        return geometric_sums_numba(_as_f64(x), int(T))

    def evolve_gd(rho0, q, T):
        return evolve_gd_numba(_as_f64(rho0), _as_f64(q), int(T))

    def evolve_sgd(rho0, q, noise):
        return evolve_sgd_numba(_as_f64(rho0), _as_f64(q), _as_f64(noise))

    def march_segments(field, level):
        return march_segments_numba(_as_f64(field), float(level))
else:
    geometric_weights = geometric_weights_numpy
    geometric_sums = geometric_sums_numpy
    evolve_gd = evolve_gd_numpy
    evolve_sgd = evolve_sgd_numpy
    march_segments = march_segments_numpy
