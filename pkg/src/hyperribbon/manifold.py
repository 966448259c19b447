"""Trajectory PCA: empirical estimates and the exact closed-form decomposition.

The analytic matrices are assembled entrywise in the eigenbasis of K, where
``K_d = I - alpha K`` is diagonal with entries ``q_i = 1 - alpha lambda_i``:

* ``T P1^sw`` is diagonal, ``sigma_w^2 lambda_i sum_t q_i^{2t}``;
* ``T P1^y`` has entries ``ytil_i ytil_j sum_t (q_i q_j)^t`` (a finite
  reachability Gramian);
* ``P2 = (K_T y)(K_T y)^T`` with ``K_T`` diagonal, ``sum_t q_i^t / T``.

``P(T) = (T P1^sw + T P1^y) / T - P2``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import (
    GD,
    SGD,
    contraction_inputs,
    effective_eigvals,
    iter_rotated_chunks,
)
from .errors import ConfigError, NumericalError
from .specgen import sorted_eigh

CLAMP_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class PcaDecomposition:
    """Eigen-structure of a trajectory PCA matrix.

    ``lambda_sigma_w`` and ``lambda_y`` are eigenvalues of the T-scaled
    matrices ``T P1^sw`` and ``T P1^y``; ``lambda_P`` and ``lambda_P1`` are
    for the time-averaged ``P(T)`` and ``P1(T)``.
    """

    lambda_P: np.ndarray
    explained_variance: np.ndarray
    lambda_P1: np.ndarray = None
    lambda_sigma_w: np.ndarray = None
    lambda_y: np.ndarray = None
    lambda_P2: float = None
    basis: np.ndarray = field(default=None, repr=False)
    matrix: np.ndarray = field(default=None, repr=False)
    p1_matrix: np.ndarray = field(default=None, repr=False)
    T: int = None
    degenerate: bool = False
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return len(self.lambda_P)


class HyperRibbonDim(int):
    """Integer dimension carrying a ``degenerate`` flag for all-zero spectra."""

    def __new__(cls, value, degenerate=False):
        obj = super().__new__(cls, value)
        obj.degenerate = degenerate
        return obj


def explained_variance(eigenvalues):
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = lam.sum()
    if total <= 0:
        return np.zeros_like(lam)
    ev = np.cumsum(lam) / total
    ev[-1] = 1.0
    return np.minimum(ev, 1.0)


def hyper_ribbon_dim(eigenvalues, threshold=0.95):
    """Smallest k whose leading eigenvalues carry ``threshold`` of the total variance."""
    if not 0 < threshold <= 1:
        raise ConfigError(f"threshold must lie in (0, 1], got {threshold}")
    lam = np.sort(np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None))[::-1]
    total = lam.sum()
    if lam.size == 0 or total <= 0:
        return HyperRibbonDim(0, degenerate=True)
    cum = np.cumsum(lam)
    # relative slack absorbs summation roundoff at exact ties (e.g. 19/20 = 0.95)
    k = int(np.searchsorted(cum, threshold * total * (1.0 - 1e-12), side="left")) + 1
    return HyperRibbonDim(min(k, int(np.count_nonzero(lam))))


def _eigs(P):
    return sorted_eigh(P, CLAMP_RTOL)


# --------------------------------------------------------------------------
# empirical PCA
# --------------------------------------------------------------------------

def empirical_pca(ensemble, keep_matrix=True):
    """``P(N, T) = (1/NT) sum (r - rbar)(r - rbar)^T`` by two-pass centering."""
    R = np.asarray(ensemble.residuals, dtype=np.float64)
    N, T, n = R.shape
    pts = R.reshape(N * T, n)
    if pts.shape[0] < 2:
        P = np.zeros((n, n))
        return PcaDecomposition(np.zeros(n), np.zeros(n), matrix=P, T=T, degenerate=True,
                                basis=np.eye(n))
    centred = pts - pts.mean(axis=0)
    P = centred.T @ centred / pts.shape[0]
    lam, vecs = _eigs(P)
    return PcaDecomposition(lam, explained_variance(lam), basis=vecs,
                            matrix=P if keep_matrix else None, T=T,
                            degenerate=bool(lam[0] == 0), extras={"samples": N * T})


def _merge_moments(state, block):
    """Chan's pairwise update of (count, mean, centred scatter)."""
    count, mean, scatter = state
    b_count = block.shape[0]
    b_mean = block.mean(axis=0)
    c = block - b_mean
    b_scatter = c.T @ c
    if count == 0:
        return b_count, b_mean, b_scatter
    total = count + b_count
    delta = b_mean - mean
    mean = mean + delta * (b_count / total)
    scatter = scatter + b_scatter + np.outer(delta, delta) * (count * b_count / total)
    return total, mean, scatter


def empirical_pca_streamed(dataset, config, chunk_size=256, first=0):
    """Empirical ``P(N, T)`` of GD / weight-decay / SGD trajectories, generated in blocks.

    Trajectories are evolved and accumulated in the rotated basis blockwise so
    the (N, T, n) ensemble is never held in memory; the result equals
    ``empirical_pca`` of the materialized ensemble up to roundoff.
    """
    n = dataset.n
    state = (0, np.zeros(n), np.zeros((n, n)))
    for block in iter_rotated_chunks(dataset, config, chunk_size, first):
        state = _merge_moments(state, block.reshape(-1, n))
    count, _, scatter = state
    if count < 2:
        return PcaDecomposition(np.zeros(n), np.zeros(n), matrix=np.zeros((n, n)),
                                T=config.T, degenerate=True, basis=np.eye(n))
    V = dataset.eigvecs
    P = V @ (scatter / count) @ V.T
    lam, vecs = _eigs(P)
    return PcaDecomposition(lam, explained_variance(lam), basis=vecs, matrix=P,
                            T=config.T, degenerate=bool(lam[0] == 0),
                            extras={"samples": count})


# --------------------------------------------------------------------------
# analytic decomposition
# --------------------------------------------------------------------------

def sigma_w_eigenvalues(eigvals, alpha, T, sigma_w_sq):
    """Closed form ``(sigma_w^2/alpha) (1 - q^{2T}) / (2 - alpha lambda)``, unsorted."""
    x = contraction_inputs(eigvals, alpha)
    with np.errstate(divide="ignore"):
        logq = np.log1p(-x)
    return (sigma_w_sq / alpha) * (-np.expm1(2.0 * T * logq)) / (2.0 - x)


def kt_diagonal(eigvals, alpha, T):
    """Diagonal of ``K_T = (1/T) sum_t K_d^t`` in the eigenbasis, ``(1 - q^T)/(alpha T lambda)``."""
    x = contraction_inputs(eigvals, alpha)
    return _kernels.geometric_sums(x, T) / T


@dataclass(frozen=True, eq=False)
class _Rotated:
    """Analytic pieces expressed in the eigenbasis of the dynamics."""

    x: np.ndarray
    W: np.ndarray
    diag_sw: np.ndarray
    TP1y: np.ndarray
    kT: np.ndarray
    v: np.ndarray


def _rotated_pieces(lam_dyn, init_var, ytil, alpha, T, closed_form_sw=False, sigma_w_sq=None):
    x = contraction_inputs(lam_dyn, alpha)
    W = _kernels.geometric_weights(x, T)
    if closed_form_sw:
        diag_sw = sigma_w_eigenvalues(lam_dyn, alpha, T, sigma_w_sq)
    else:
        diag_sw = init_var * np.diag(W)
    TP1y = np.outer(ytil, ytil) * W
    kT = _kernels.geometric_sums(x, T) / T
    return _Rotated(x, W, diag_sw, TP1y, kT, kT * ytil)


def _assemble(pieces, V, T, extra_diag=None, keep_matrix=True):
    P1_rot = pieces.TP1y / T
    P1_rot[np.diag_indices_from(P1_rot)] += pieces.diag_sw / T
    if extra_diag is not None:
        P1_rot[np.diag_indices_from(P1_rot)] += extra_diag
    P_rot = P1_rot - np.outer(pieces.v, pieces.v)
    lam_P, vecs = _eigs(P_rot)
    lam_P1, _ = _eigs(P1_rot)
    lam_y, _ = _eigs(pieces.TP1y)
    lam_sw = np.sort(np.clip(pieces.diag_sw, 0.0, None))[::-1]
    return PcaDecomposition(
        lambda_P=lam_P,
        explained_variance=explained_variance(lam_P),
        lambda_P1=lam_P1,
        lambda_sigma_w=lam_sw,
        lambda_y=lam_y,
        lambda_P2=float(pieces.v @ pieces.v),
        basis=V @ vecs,
        matrix=V @ P_rot @ V.T if keep_matrix else None,
        p1_matrix=V @ P1_rot @ V.T if keep_matrix else None,
        T=T,
        degenerate=bool(lam_P[0] == 0),
    )


def analytic_pca(dataset, config, keep_matrix=True):
    """Exact ``P(T)`` for gradient descent (or weight decay) as ``N -> infinity``."""
    if isinstance(config.method, SGD):
        raise ConfigError("analytic_pca expects GD or WeightDecay; use sgd_analytic_pca for SGD")
    lam_K = np.asarray(dataset.eigvals, dtype=np.float64)
    lam_dyn = effective_eigvals(dataset, config)
    ytil = dataset.eigvecs.T @ dataset.y
    sw = dataset.sigma_w_sq
    plain = isinstance(config.method, GD)
    pieces = _rotated_pieces(lam_dyn, sw * lam_K, ytil, config.alpha, config.T,
                             closed_form_sw=plain, sigma_w_sq=sw)
    return _assemble(pieces, dataset.eigvecs, config.T, keep_matrix=keep_matrix)


def analytic_pca_gram(gram, y, config, sigma_w_sq, keep_matrix=True):
    """Exact ``P(T)`` for kernel gradient descent on one Gram matrix."""
    ytil = gram.eigvecs.T @ np.asarray(y, dtype=np.float64)
    pieces = _rotated_pieces(gram.eigvals, sigma_w_sq * gram.eigvals, ytil, config.alpha,
                             config.T, closed_form_sw=True, sigma_w_sq=sigma_w_sq)
    return _assemble(pieces, gram.eigvecs, config.T, keep_matrix=keep_matrix)


def sgd_noise_gramian(eigvals, alpha, batch_size):
    """Diagonal of ``P_xi = (alpha/B)(2I - alpha K)^{-1} K``."""
    x = contraction_inputs(eigvals, alpha)
    return (alpha / batch_size) * np.asarray(eigvals, dtype=np.float64) / (2.0 - x)


def sgd_analytic_pca(dataset, config, keep_matrix=True):
    """Exact ``P(T)`` under the Langevin SGD model.

    ``P_sgd = P1 + P_xi - (1/T) sum_t K_d^t P_xi K_d^t - P2``; every added
    term is diagonal in the eigenbasis of K.
    """
    if not isinstance(config.method, SGD):
        raise ConfigError(f"sgd_analytic_pca expects an SGD config, got {config.method_name}")
    lam = np.asarray(dataset.eigvals, dtype=np.float64)
    sw = dataset.sigma_w_sq
    ytil = dataset.eigvecs.T @ dataset.y
    pieces = _rotated_pieces(lam, sw * lam, ytil, config.alpha, config.T,
                             closed_form_sw=True, sigma_w_sq=sw)
    if config.method.noise:
        p_xi = sgd_noise_gramian(lam, config.alpha, config.method.batch_size)
    else:
        p_xi = np.zeros_like(lam)
    # (1/T) sum_t q^{2t} P_xi, with sum_t q^{2t} = W_ii
    correction = p_xi * np.diag(pieces.W) / config.T
    out = _assemble(pieces, dataset.eigvecs, config.T, extra_diag=p_xi - correction,
                    keep_matrix=keep_matrix)
    out.extras.update(p_xi=p_xi, p_xi_correction=correction)
    return out


# --------------------------------------------------------------------------
# Lyapunov machinery
# --------------------------------------------------------------------------

def _check_contractive(q):
    q = np.asarray(q, dtype=np.float64)
    if np.any(np.abs(q) >= 1.0):
        raise NumericalError("non-contractive: every |q_i| must be < 1")
    return q


def solve_dlyap(Kd_diag, Q):
    """Solve ``K_d P K_d - P + Q = 0`` for diagonal ``K_d`` (the basis of ``Q``).

    ``P_ij = Q_ij / (1 - q_i q_j)``.
    """
    q = _check_contractive(Kd_diag)
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (q.size, q.size):
        raise ConfigError(f"Q must be {q.size}x{q.size}, got {Q.shape}")
    return Q / (1.0 - np.outer(q, q))


def continuous_transform(Kd_diag, Q):
    """Cayley-transformed pair solving ``Kt P + P Kt^T + B B^T = 0``.

    Returns the diagonal of ``Kt = (K_d + I)^{-1}(K_d - I)`` and
    ``B B^T = 2 (K_d + I)^{-1} Q (K_d + I)^{-1}``.
    """
    q = _check_contractive(Kd_diag)
    Q = np.asarray(Q, dtype=np.float64)
    inv = 1.0 / (q + 1.0)
    return (q - 1.0) * inv, 2.0 * Q * np.outer(inv, inv)


def target_gramian(eigvals, y_rot, alpha, T):
    """``T P1^y`` in the eigenbasis as the difference of two infinite Gramians.

    Solves ``K_d P K_d - P + Q = 0`` with ``Q = ytil ytil^T - A ytil ytil^T A``
    and ``A = K_d**T`` (the T-th power).
    """
    lam = np.asarray(eigvals, dtype=np.float64)
    q = 1.0 - contraction_inputs(lam, alpha)
    qT = q ** T
    Q = np.outer(y_rot, y_rot) * (1.0 - np.outer(qT, qT))
    return solve_dlyap(q, Q)


# --------------------------------------------------------------------------
# kernel ensembles
# --------------------------------------------------------------------------

NORMALIZED_ATOL = 1e-8


def multi_kernel_pca(grams, y, config, sigma_w_sq, keep_matrix=True):
    """``P(M, T) = (1/M) sum_m P1^(m)(T) - K_{T,M} y y^T K_{T,M}``."""
    grams = list(grams)
    if not grams:
        raise ConfigError("at least one Gram matrix is required")
    if not isinstance(config.method, GD):
        raise ConfigError("multi_kernel_pca expects a GD config")
    n = grams[0].n
    y = np.asarray(y, dtype=np.float64)
    if any(g.n != n for g in grams) or y.shape != (n,):
        raise ConfigError("all Gram matrices and y must share the sample count")
    for g in grams:
        if abs(g.eigvals[0] - 1.0) > NORMALIZED_ATOL and not g.kernel.normalize:
            warnings.warn("Gram matrix is not normalized to lambda_1 = 1; bounds assume a shared top eigenvalue",
                          UserWarning, stacklevel=2)
    M, T = len(grams), config.T
    TP1_sw = np.zeros((n, n))
    TP1_y = np.zeros((n, n))
    K_TM = np.zeros((n, n))
    for g in grams:
        V = g.eigvecs
        ytil = V.T @ y
        pieces = _rotated_pieces(g.eigvals, sigma_w_sq * g.eigvals, ytil, config.alpha, T,
                                 closed_form_sw=True, sigma_w_sq=sigma_w_sq)
        TP1_sw += (V * pieces.diag_sw) @ V.T
        TP1_y += V @ pieces.TP1y @ V.T
        K_TM += (V * pieces.kT) @ V.T
    TP1_sw /= M
    TP1_y /= M
    K_TM /= M
    P1 = (TP1_sw + TP1_y) / T
    v = K_TM @ y
    P = P1 - np.outer(v, v)
    lam_P, vecs = _eigs(P)
    return PcaDecomposition(
        lambda_P=lam_P,
        explained_variance=explained_variance(lam_P),
        lambda_P1=_eigs(P1)[0],
        lambda_sigma_w=_eigs(TP1_sw)[0],
        lambda_y=_eigs(TP1_y)[0],
        lambda_P2=float(v @ v),
        basis=vecs,
        matrix=P if keep_matrix else None,
        p1_matrix=P1 if keep_matrix else None,
        T=T,
        degenerate=bool(lam_P[0] == 0),
        extras={"M": M, "K_TM": K_TM},
    )
