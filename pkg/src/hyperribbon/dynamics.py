"""Residual dynamics of linear models and kernel machines.

Every simulation runs in the eigenbasis of K: with ``rho = V^T r`` the
gradient-descent map ``I - alpha K`` is the diagonal contraction
``q = 1 - alpha lambda``. Residuals are rotated back only on export.
"""

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, NumericalError
from .specgen import (
    STREAM_KERNEL_INIT,
    STREAM_SGD_NOISE,
    initial_weights_batch,
    sorted_eigh,
    stream,
)

PSD_CLAMP_RTOL = 1e-10
STEP_EQ_RTOL = 1e-12


class StepSizeWarning(UserWarning):
    """alpha sits exactly at 1 / lambda_1, the edge of the contraction regime."""


@dataclass(frozen=True)
class GD:
    pass


@dataclass(frozen=True)
class SGD:
    """Langevin model of minibatch SGD.

    ``noise_model`` picks the input covariance ``D`` the noise is drawn from:
    ``"kernel"`` uses ``X^T X / n^2``, for which the residual-space noise
    covariance is exactly ``(alpha^2 / B) K^2``; ``"covariance"`` uses the
    centred input covariance ``X^T X / n - xbar^T xbar`` literally.
    """

    batch_size: int = 1
    noise: bool = True
    noise_model: str = "kernel"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.noise_model not in ("kernel", "covariance"):
            raise ConfigError(f"unknown noise model {self.noise_model!r}")


@dataclass(frozen=True)
class WeightDecay:
    lambda_wd: float = 0.0

    def __post_init__(self):
        if not self.lambda_wd >= 0:
            raise ConfigError(f"lambda_wd must be >= 0, got {self.lambda_wd}")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float
    T: int
    N: int = 1
    method: object = field(default_factory=GD)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"step size alpha must be positive, got {self.alpha}")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        if not isinstance(self.method, (GD, SGD, WeightDecay)):
            raise ConfigError(f"unknown training method {self.method!r}")

    @property
    def lambda_wd(self):
        return self.method.lambda_wd if isinstance(self.method, WeightDecay) else 0.0

    @property
    def method_name(self):
        return type(self.method).__name__

    def summary(self):
        out = {"alpha": self.alpha, "T": self.T, "N": self.N, "method": self.method_name}
        if isinstance(self.method, SGD):
            out["batch_size"] = self.method.batch_size
            out["noise"] = self.method.noise
        if isinstance(self.method, WeightDecay):
            out["lambda_wd"] = self.method.lambda_wd
        return out


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice for Gram matrices ``K_ij = k(x_i, x_j) / n``.

    ``rbf`` uses ``exp(-|x - x'|^2 / bandwidth)`` with the bandwidth
    defaulting to the input dimension. ``precomputed`` takes kernel values
    ``k(x_i, x_j)`` in ``matrix``.
    """

    kind: str = "linear"
    bandwidth: float = None
    matrix: np.ndarray = field(default=None, repr=False, compare=False)
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in ("linear", "rbf", "precomputed"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "precomputed" and self.matrix is None:
            raise ConfigError("precomputed kernel needs a matrix")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True, eq=False)
class Gram:
    K: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    kernel: KernelSpec
    scale: float = 1.0

    @property
    def n(self):
        return self.K.shape[0]


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Residuals ``r_t^(i)`` with shape (N, T, n)."""

    residuals: np.ndarray
    config: TrainConfig
    dataset_ref: str = ""
    basis: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.residuals.shape


def dataset_ref(X, y):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def weight_decay_operator(dataset, lambda_wd):
    """Eigenvalues of ``K + lambda_wd I``."""
    if not lambda_wd >= 0:
        raise ConfigError(f"lambda_wd must be >= 0, got {lambda_wd}")
    return np.asarray(dataset.eigvals, dtype=np.float64) + lambda_wd


def contraction_inputs(eigvals, alpha):
    """``alpha * lambda`` after checking ``alpha <= 1 / lambda_1``.

    Exact equality (to relative 1e-12) is accepted with a StepSizeWarning.
    """
    lam = np.asarray(eigvals, dtype=np.float64)
    top = float(lam.max()) if lam.size else 0.0
    x = alpha * lam
    if alpha * top > 1.0 + STEP_EQ_RTOL:
        raise ConfigError(
            f"alpha={alpha} exceeds 1/lambda_1={1.0 / top:.6g}: step size must satisfy alpha <= 1/lambda_1")
    if alpha * top >= 1.0 - STEP_EQ_RTOL:
        warnings.warn("alpha equals 1/lambda_1; the leading mode is annihilated in one step",
                      StepSizeWarning, stacklevel=3)
    return np.clip(x, 0.0, 1.0)


def effective_eigvals(dataset, config):
    return weight_decay_operator(dataset, config.lambda_wd)


def _require_spec(dataset):
    if dataset.spec is None:
        raise ConfigError("dataset has no DatasetSpec; pass initial_weights explicitly")
    return dataset.spec


def initial_rotated_residuals(dataset, config, initial_weights=None, start=0, stop=None):
    """``V^T (X w_0 - y)`` for trajectories ``start..stop`` (default all N)."""
    stop = config.N if stop is None else stop
    if initial_weights is None:
        W0 = initial_weights_batch(_require_spec(dataset), start, stop)
    else:
        W0 = np.asarray(initial_weights, dtype=np.float64)
        W0 = np.broadcast_to(W0, (config.N, dataset.d))[start:stop]
    r0 = W0 @ dataset.X.T - dataset.y
    return r0 @ dataset.eigvecs


def _check_method(config, allowed, opname):
    if not isinstance(config.method, allowed):
        names = "/".join(a.__name__ for a in allowed)
        raise ConfigError(f"{opname} expects a {names} config, got {config.method_name}")


def gd_ensemble(dataset, config, initial_weights=None):
    """Full-batch gradient descent (or weight decay) trajectories.

    ``initial_weights`` overrides the seeded draws: either one weight vector
    shared by all trajectories or an (N, d) array.
    """
    _check_method(config, (GD, WeightDecay), "gd_ensemble")
    x = contraction_inputs(effective_eigvals(dataset, config), config.alpha)
    rho0 = initial_rotated_residuals(dataset, config, initial_weights)
    rho = _kernels.evolve_gd(rho0, 1.0 - x, config.T)
    return TrajectoryEnsemble(rho @ dataset.eigvecs.T, config,
                              dataset_ref(dataset.X, dataset.y), dataset.eigvecs)


def input_noise_covariance(dataset, model="kernel"):
    X = dataset.X
    n = X.shape[0]
    if model == "kernel":
        return X.T @ X / n**2
    xbar = X.mean(axis=0)
    return X.T @ X / n - np.outer(xbar, xbar)


def psd_factor(D, rtol=PSD_CLAMP_RTOL):
    """``F`` with ``F F^T = D`` from a clamped symmetric eigendecomposition."""
    mu, E = np.linalg.eigh(0.5 * (D + D.T))
    top = mu.max() if mu.size else 0.0
    if mu.size and mu.min() < -rtol * max(top, 0.0):
        raise NumericalError(
            f"noise covariance is indefinite: eigenvalue {mu.min():.3e} < -{rtol:g} * lambda_1")
    return E * np.sqrt(np.clip(mu, 0.0, None))


class _SgdNoise:
    """Per-trajectory noise generator in rotated residual coordinates."""

    def __init__(self, dataset, config):
        m = config.method
        self.seed = dataset.seed
        self.steps = config.T - 1
        self.d = dataset.d
        self.enabled = m.noise
        if self.enabled:
            F = psd_factor(input_noise_covariance(dataset, m.noise_model))
            # z ~ N(0, I_d)  ->  V^T (alpha / sqrt(B)) X F z
            self.M = (config.alpha / np.sqrt(m.batch_size)) * (dataset.eigvecs.T @ dataset.X @ F)

    def block(self, start, stop):
        n = self.M.shape[0] if self.enabled else None
        if not self.enabled or self.steps == 0:
            return None
        out = np.empty((stop - start, self.steps, n))
        for k, i in enumerate(range(start, stop)):
            z = stream(self.seed, STREAM_SGD_NOISE, i).standard_normal((self.steps, self.d))
            out[k] = z @ self.M.T
        return out


def sgd_ensemble(dataset, config, initial_weights=None):
    """Langevin-approximated SGD: ``r_{t+1} = (I - alpha K) r_t + (alpha/sqrt(B)) X xi_t``."""
    _check_method(config, (SGD,), "sgd_ensemble")
    x = contraction_inputs(dataset.eigvals, config.alpha)
    rho0 = initial_rotated_residuals(dataset, config, initial_weights)
    noise = _SgdNoise(dataset, config).block(0, config.N)
    if noise is None:
        rho = _kernels.evolve_gd(rho0, 1.0 - x, config.T)
    else:
        rho = _kernels.evolve_sgd(rho0, 1.0 - x, noise)
    return TrajectoryEnsemble(rho @ dataset.eigvecs.T, config,
                              dataset_ref(dataset.X, dataset.y), dataset.eigvecs)


def iter_rotated_chunks(dataset, config, chunk_size=512, first=0):
    """Yield rotated residual blocks (N_chunk, T, n) without materializing the ensemble.

    Covers GD, weight decay and SGD; blocks are deterministic functions of
    the trajectory indices they contain. ``first`` offsets the indices, so
    ``first=k*N`` yields the k-th disjoint shard of size N.
    """
    if isinstance(config.method, SGD):
        x = contraction_inputs(dataset.eigvals, config.alpha)
        noise = _SgdNoise(dataset, config)
    else:
        x = contraction_inputs(effective_eigvals(dataset, config), config.alpha)
        noise = None
    q = 1.0 - x
    for start in range(first, first + config.N, chunk_size):
        stop = min(start + chunk_size, first + config.N)
        rho0 = initial_rotated_residuals(dataset, config, None, start, stop)
        eta = noise.block(start, stop) if noise is not None else None
        if eta is None:
            yield _kernels.evolve_gd(rho0, q, config.T)
        else:
            yield _kernels.evolve_sgd(rho0, q, eta)


def _pairwise_sq_dists(Z):
    sq = np.sum(Z * Z, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T
    np.fill_diagonal(D, 0.0)
    return np.clip(D, 0.0, None)


def build_gram(inputs, kernel=KernelSpec()):
    """Gram matrix ``K_ij = k(x_i, x_j) / n`` with its descending eigendecomposition."""
    if kernel.kind == "precomputed":
        k = np.asarray(kernel.matrix, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ConfigError(f"precomputed kernel must be square, got shape {k.shape}")
        n = k.shape[0]
    else:
        Z = np.asarray(inputs, dtype=np.float64)
        if Z.ndim != 2 or Z.size == 0:
            raise ConfigError("inputs must be a non-empty 2-D matrix")
        n, d = Z.shape
        if kernel.kind == "linear":
            k = Z @ Z.T
        else:
            bw = kernel.bandwidth if kernel.bandwidth is not None else float(d)
            k = np.exp(-_pairwise_sq_dists(Z) / bw)
    asym = np.max(np.abs(k - k.T)) if k.size else 0.0
    if asym > 1e-8 * max(np.max(np.abs(k)), 1e-300):
        raise ConfigError(f"kernel matrix is not symmetric (max asymmetry {asym:.3e})")
    K = 0.5 * (k + k.T) / n
    lam, V = sorted_eigh(K, PSD_CLAMP_RTOL)
    scale = 1.0
    if kernel.normalize:
        if lam[0] <= 0:
            raise NumericalError("cannot normalize an all-zero Gram matrix")
        scale = 1.0 / lam[0]
        K = K * scale
        lam = lam * scale
    return Gram(K=K, eigvals=lam, eigvecs=V, kernel=kernel, scale=scale)


def kernel_initial_rotated(gram, y, sigma_w_sq, seed, start, stop):
    """Rotated ``r_0 ~ N(-y, sigma_w^2 K)`` for trajectories ``start..stop``."""
    ytil = gram.eigvecs.T @ y
    sd = np.sqrt(sigma_w_sq * gram.eigvals)
    out = np.empty((stop - start, gram.n))
    for k, i in enumerate(range(start, stop)):
        if sigma_w_sq == 0:
            out[k] = -ytil
        else:
            out[k] = -ytil + sd * stream(seed, STREAM_KERNEL_INIT, i).standard_normal(gram.n)
    return out


def kernel_gd_ensemble(gram, targets, config, sigma_w_sq, seed=0):
    """Gradient descent in the RKHS, expressed through residual dynamics on the Gram matrix."""
    _check_method(config, (GD,), "kernel_gd_ensemble")
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != (gram.n,):
        raise ConfigError(f"targets must have shape ({gram.n},), got {y.shape}")
    x = contraction_inputs(gram.eigvals, config.alpha)
    rho0 = kernel_initial_rotated(gram, y, sigma_w_sq, seed, 0, config.N)
    rho = _kernels.evolve_gd(rho0, 1.0 - x, config.T)
    return TrajectoryEnsemble(rho @ gram.eigvecs.T, config, dataset_ref(gram.K, y), gram.eigvecs)
