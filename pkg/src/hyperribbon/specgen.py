"""Synthetic sloppy regression problems and spectral slope estimation.

Randomness is hierarchical: every draw comes from a generator seeded by
``SeedSequence(seed, spawn_key=(purpose, index...))`` so any single object
(a factor matrix, the true weights, one trajectory's initial weights) can be
regenerated on its own, in any order or on any thread.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientSpectrum, NumericalError

# spawn-key purposes
STREAM_FACTOR_U = 1
STREAM_FACTOR_W = 2
STREAM_TRUE_WEIGHTS = 3
STREAM_INIT_WEIGHTS = 4
STREAM_SGD_NOISE = 5
STREAM_KERNEL_INIT = 6

DEFAULT_FIT_FLOOR = 1e-12


def stream(seed, *key):
    """Independent generator for ``(seed, key...)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of a synthetic sloppy regression problem.

    ``sigma_star_sq`` and ``sigma_w_sq`` set the prediction-space scale of the
    true and initial weights: weights are drawn as ``N(0, sigma^2 / n * I_d)``
    so that ``Cov(X w) = sigma^2 K`` with ``K = X X^T / n``.
    """

    n: int
    d: int
    c: float
    sigma_star_sq: float = 1.0
    sigma_w_sq: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}")
        if self.n >= self.d:
            raise ConfigError(
                f"n={self.n} >= d={self.d}: the model must be over-parameterized (n < d)")
        if not np.isfinite(self.c) or self.c * self.n <= 1.0:
            raise ConfigError(
                f"c={self.c} with n={self.n}: sloppy decay requires c > 1/n")
        if not self.sigma_star_sq > 0:
            raise ConfigError(f"sigma_star_sq must be positive, got {self.sigma_star_sq}")
        if not self.sigma_w_sq >= 0:
            raise ConfigError(f"sigma_w_sq must be non-negative, got {self.sigma_w_sq}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def spectrum(self):
        return np.exp(-np.arange(self.n) * self.c)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    w_star: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    spec: DatasetSpec = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def K(self):
        return self.X @ self.X.T / self.n

    @property
    def sigma_w_sq(self):
        return self.spec.sigma_w_sq if self.spec is not None else 1.0

    @property
    def seed(self):
        return self.spec.seed if self.spec is not None else 0


@dataclass(frozen=True)
class SlopeEstimate:
    c_hat: float
    r_squared: float
    index_range: tuple
    eigenvalues: np.ndarray = field(repr=False)
    flat: bool = False

    def to_dict(self):
        return {
            "c_hat": float(self.c_hat),
            "r_squared": None if np.isnan(self.r_squared) else float(self.r_squared),
            "index_range": [int(i) for i in self.index_range],
            "flat": bool(self.flat),
            "n_eigenvalues": int(len(self.eigenvalues)),
        }


def _orthonormal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # fix column signs so the factor is a deterministic function of the draw
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def sample_true_weights(spec, draw=0):
    """True weights ``w* ~ N(0, sigma_*^2 / n I_d)``; draw 0 is the dataset's own."""
    rng = stream(spec.seed, STREAM_TRUE_WEIGHTS, draw)
    return rng.standard_normal(spec.d) * np.sqrt(spec.sigma_star_sq / spec.n)


def synthesize_dataset(spec):
    """Build ``X`` whose correlation matrix ``X X^T / n`` has spectrum ``exp(-(i-1) c)``.

    ``X = U diag(sqrt(n lambda)) W^T`` with ``U`` (n x n) and ``W`` (d x n)
    random orthonormal factors, so the eigenpairs of ``K`` are known exactly.
    """
    n, d = spec.n, spec.d
    U = _orthonormal(stream(spec.seed, STREAM_FACTOR_U), n, n)
    W = _orthonormal(stream(spec.seed, STREAM_FACTOR_W), d, n)
    lam = spec.spectrum
    X = (U * np.sqrt(n * lam)) @ W.T
    w_star = sample_true_weights(spec, 0)
    y = X @ w_star
    return Dataset(X=X, y=y, w_star=w_star, eigvecs=U, eigvals=lam, spec=spec)


def sorted_eigh(A, clamp_rtol=1e-10):
    """Eigen-decomposition of a symmetric PSD matrix, descending.

    Negative eigenvalues above ``-clamp_rtol * lambda_1`` are set to zero;
    anything more negative raises.
    """
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    w, V = w[::-1].copy(), V[:, ::-1].copy()
    scale = max(abs(w[0]), abs(w[-1])) if w.size else 0.0
    if w.size and w[-1] < -clamp_rtol * scale:
        raise NumericalError(
            f"matrix is indefinite: eigenvalue {w[-1]:.3e} below tolerance")
    w[w < 0] = 0.0
    return w, V


def dataset_from_inputs(X, y=None, w_star=None, spec=None):
    """Wrap an arbitrary input matrix (and optional targets) as a Dataset."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    lam, V = sorted_eigh(X @ X.T / n)
    if y is None:
        if w_star is None:
            raise ConfigError("either y or w_star is required")
        y = X @ w_star
    if w_star is None:
        w_star = np.linalg.lstsq(X, y, rcond=None)[0]
    return Dataset(X=X, y=np.asarray(y, dtype=np.float64), w_star=np.asarray(w_star),
                   eigvecs=V, eigvals=lam, spec=spec)


def sample_initial_weights(spec, trajectory_index):
    """Initial weights ``w_0 ~ N(0, sigma_w^2 / n I_d)`` for one trajectory."""
    if trajectory_index < 0:
        raise ConfigError(f"trajectory_index must be >= 0, got {trajectory_index}")
    if spec.sigma_w_sq == 0:
        return np.zeros(spec.d)
    rng = stream(spec.seed, STREAM_INIT_WEIGHTS, trajectory_index)
    return rng.standard_normal(spec.d) * np.sqrt(spec.sigma_w_sq / spec.n)


def initial_weights_batch(spec, start, stop):
    return np.stack([sample_initial_weights(spec, i) for i in range(start, stop)]) \
        if stop > start else np.zeros((0, spec.d))


def fit_slope(eigenvalues, fit_floor=DEFAULT_FIT_FLOOR):
    """Fit ``ln lambda_i = a - c (i - 1)`` over eigenvalues above ``fit_floor * lambda_1``."""
    if not 0 < fit_floor < 1:
        raise ConfigError(f"fit_floor must lie in (0, 1), got {fit_floor}")
    lam = np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1]
    if lam.size == 0:
        raise InsufficientSpectrum()
    if lam[0] <= 0:
        return SlopeEstimate(0.0, np.nan, (1, lam.size), lam, flat=True)
    keep = np.flatnonzero(lam > fit_floor * lam[0])
    if keep.size < 3:
        raise InsufficientSpectrum()
    sel = lam[keep]
    if np.allclose(sel, sel[0], rtol=1e-10, atol=0):
        return SlopeEstimate(0.0, np.nan, (1, int(keep[-1]) + 1), lam, flat=True)
    idx = keep.astype(np.float64)
    logs = np.log(sel)
    slope, intercept = np.polyfit(idx, logs, 1)
    resid = logs - (slope * idx + intercept)
    ss_tot = np.sum((logs - logs.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot
    return SlopeEstimate(float(-slope), float(r2), (1, int(keep[-1]) + 1), lam)


def correlation_spectrum(features, center=False):
    """Eigenvalues of the empirical correlation matrix ``F F^T / n`` (descending)."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2:
        raise ConfigError("features must be a 2-D matrix")
    if center:
        F = F - F.mean(axis=0)
    n, d = F.shape
    # the n x n and d x d Gram matrices share their nonzero spectrum
    G = F @ F.T / n if n <= d else F.T @ F / n
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))[::-1]
    return np.clip(lam, 0.0, None)


def estimate_slope(features, fit_floor=DEFAULT_FIT_FLOOR, center=False):
    """Sloppy slope of a feature matrix (one sample per row)."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 3:
        raise InsufficientSpectrum()
    return fit_slope(correlation_spectrum(F, center=center), fit_floor)
