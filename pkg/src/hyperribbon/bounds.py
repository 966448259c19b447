"""Eigenvalue bounds for trajectory PCA spectra and their numerical verification.

Every bound here is compared against spectra from :mod:`hyperribbon.manifold`.
Ratios are of the form ``lambda_i / lambda_1`` and therefore insensitive to
the 1/T normalization of the underlying matrices.
"""

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .dynamics import SGD, GD, TrainConfig, WeightDecay, contraction_inputs, effective_eigvals
from .errors import ConfigError
from .manifold import analytic_pca, multi_kernel_pca, sgd_analytic_pca
from .specgen import DatasetSpec, fit_slope, synthesize_dataset

SCHEMA_VERSION = 1
REL_TOL = 1e-9


# --------------------------------------------------------------------------
# scalar bound formulas
# --------------------------------------------------------------------------

def sigma_w_bound(alpha, T, sigma_w_sq, lambda_K):
    """Upper bound ``(sigma_w^2/alpha) min{1, 2 T alpha lambda} / (2 - alpha lambda)``.

    Vectorized over ``lambda_K``.
    """
    lam = np.asarray(lambda_K, dtype=np.float64)
    if np.any(alpha * lam > 1.0 + 1e-12):
        raise ConfigError("sigma_w_bound needs alpha * lambda <= 1")
    if T < 1:
        raise ConfigError("sigma_w_bound needs T >= 1")
    x = np.clip(alpha * lam, 0.0, 1.0)
    return (sigma_w_sq / alpha) * np.minimum(1.0, 2.0 * T * x) / (2.0 - x)


def rho_of_spectrum(lambda_1, lambda_n):
    """Decay certificate ``exp(pi^2 / (2 ln(8 lambda_1/lambda_n - 4)))``."""
    if not (lambda_1 > lambda_n > 0):
        raise ConfigError("bound undefined: need lambda_1 > lambda_n > 0")
    arg = 8.0 * lambda_1 / lambda_n - 4.0
    return math.exp(math.pi ** 2 / (2.0 * math.log(arg)))


def lemma1_ratio_bound(i, rho):
    """Bounds on ``lambda^y_{1+2i} / lambda^y_1``: (tight, loose).

    tight = ``4 rho^{-2i} / (1 + rho^{-4i})^2``, loose = ``4 rho^{-2i}``.
    """
    if np.any(np.asarray(i) < 0):
        raise ConfigError("decay index must be >= 0")
    r = np.power(float(rho), -2.0 * np.asarray(i, dtype=np.float64))
    return 4.0 * r / (1.0 + r * r) ** 2, 4.0 * r


def lambda_tilde(eigvals, alpha, T):
    """``sum_{t<T} (1 - alpha lambda_i)^{2t}``."""
    x = contraction_inputs(eigvals, alpha)
    # 1 - q^2 = x (2 - x)
    return _kernels.geometric_sums(x * (2.0 - x), T)


def k_star(alpha, T, c, n):
    """Head/tail split ``min{ln(2 T alpha) / (2c), n/2}``; None outside the lemma regime."""
    if 2.0 * T * alpha <= 1.0:
        return None
    if c <= 0:
        return n / 2.0
    return min(math.log(2.0 * T * alpha) / (2.0 * c), n / 2.0)


def spectrum_slope(eigvals):
    """Per-index log-decay ``ln(lambda_1/lambda_n)/(n - 1)``; equals c for synthetic data."""
    lam = np.asarray(eigvals, dtype=np.float64)
    if lam.size < 2 or lam[-1] <= 0:
        return float("inf")
    return math.log(lam[0] / lam[-1]) / (lam.size - 1)


@dataclass(frozen=True)
class _Problem:
    """Scalars every linear-model bound needs."""

    n: int
    alpha: float
    T: int
    sigma_w_sq: float
    y_norm_sq: float
    eigvals: np.ndarray
    rho: float
    c: float
    k_star: float

    @property
    def init_term(self):
        return self.sigma_w_sq / (self.alpha * self.y_norm_sq)


def _problem(dataset, config, eigvals=None):
    lam = effective_eigvals(dataset, config) if eigvals is None else np.asarray(eigvals)
    c = spectrum_slope(lam)
    return _Problem(
        n=dataset.n, alpha=config.alpha, T=config.T, sigma_w_sq=dataset.sigma_w_sq,
        y_norm_sq=float(dataset.y @ dataset.y), eigvals=lam,
        rho=rho_of_spectrum(lam[0], lam[-1]), c=c,
        k_star=k_star(config.alpha, config.T, c, dataset.n),
    )


def _lam_at(lam, index):
    """``lambda_index`` (1-based), clamped into range."""
    idx = int(min(max(index, 1), lam.size))
    return lam[idx - 1]


def _split_bound(i, split, p):
    """Weyl split at ``split``: ``4 rho^{-(split-1)} + init * min{1, 2 alpha T lambda_{ceil(i-split+1)}}``."""
    lam = _lam_at(p.eigvals, math.ceil(i - split + 1))
    return 4.0 * p.rho ** (-(split - 1.0)) + p.init_term * min(1.0, 2.0 * p.alpha * p.T * lam)


def _p1_ratio_value(i, p):
    if not 1 <= i <= p.n:
        raise ConfigError(f"index {i} out of range 1..{p.n}")
    if p.k_star is None:
        return 1.0, "outside lemma regime"
    head = min(1.0, 4.0 * p.rho ** (-(i - 1.0)) + p.init_term)
    if i <= 2.0 * p.k_star:
        value = head
    else:
        value = _split_bound(i, p.k_star, p)
    lam1, lamn = p.eigvals[0], p.eigvals[-1]
    if i > p.n / 2.0:
        if p.T >= lam1 / (2.0 * p.alpha * lamn):
            value = min(value, head, _split_bound(i, p.n / 2.0, p))
        elif p.T >= lam1 / (2.0 * lamn):
            value = min(value, head, _split_bound(i, p.n / 2.0, p), _split_bound(i, p.n / 4.0, p))
    return value, ""


def lemma3_bound(i, dataset, config):
    """Bound on ``lambda_i^{P1} / lambda_1^{P1}``; returns (value, flag)."""
    return _p1_ratio_value(i, _problem(dataset, config))


def lemma2_interval(dataset, config):
    """``(|y|^2, lambda_tilde_n |y|^2)`` bracketing ``lambda_1^y``, plus the concentration centre."""
    lam = effective_eigvals(dataset, config)
    y2 = float(dataset.y @ dataset.y)
    lt = lambda_tilde(lam, config.alpha, config.T)
    sigma_star_sq = dataset.spec.sigma_star_sq if dataset.spec is not None else float("nan")
    centre = sigma_star_sq * float(np.sum(dataset.eigvals))
    return y2, float(lt.max()) * y2, centre


def sgd_head_bound(i, dataset, config):
    """``min{1, 4 rho^{-(i-1)} + (sigma_w^2/alpha + alpha/B)/|y|^2}`` for ``i <= 2 k*``."""
    if not isinstance(config.method, SGD):
        raise ConfigError("sgd_head_bound expects an SGD config")
    p = _problem(dataset, config)
    if p.k_star is None or i > 2.0 * p.k_star:
        raise ConfigError("head bound only: index exceeds 2 k*")
    extra = p.sigma_w_sq / p.alpha + p.alpha / config.method.batch_size
    return min(1.0, 4.0 * p.rho ** (-(i - 1.0)) + extra / p.y_norm_sq)


def sgd_head_bound_accumulated(i, dataset, config):
    """SGD head bound with the noise Gramian counted over all T steps.

    The time-summed noise term ``T P_xi - sum_t K_d^t P_xi K_d^t`` has top
    eigenvalue up to ``T alpha lambda_1 / (B (2 - alpha lambda_1))``, which is
    T times the per-step term used by :func:`sgd_head_bound`.
    """
    if not isinstance(config.method, SGD):
        raise ConfigError("sgd_head_bound_accumulated expects an SGD config")
    p = _problem(dataset, config)
    if p.k_star is None or i > 2.0 * p.k_star:
        raise ConfigError("head bound only: index exceeds 2 k*")
    x1 = min(p.alpha * p.eigvals[0], 1.0)
    noise = p.T * (p.alpha / config.method.batch_size) * p.eigvals[0] / (2.0 - x1)
    extra = p.sigma_w_sq / p.alpha + noise
    return min(1.0, 4.0 * p.rho ** (-(i - 1.0)) + extra / p.y_norm_sq)


def weight_decay_head_bound(i, dataset, config, lambda_wd=None):
    """``min{1, 4 rho_lambda^{-(i-1)} + (sigma_w^2/alpha + lambda_wd)/|y|^2}`` on the shifted spectrum."""
    if lambda_wd is None:
        lambda_wd = config.lambda_wd
    shifted = np.asarray(dataset.eigvals, dtype=np.float64) + lambda_wd
    p = _problem(dataset, config, shifted)
    if p.k_star is None or i > 2.0 * p.k_star:
        raise ConfigError("head bound only: index exceeds 2 k*")
    extra = p.sigma_w_sq / p.alpha + lambda_wd
    return min(1.0, 4.0 * p.rho ** (-(i - 1.0)) + extra / p.y_norm_sq)


def _gram_rho(gram):
    lam = gram.eigvals
    if lam[-1] <= 0 or lam[0] <= lam[-1]:
        # rank-deficient or flat Gram: the certificate degenerates to no decay
        return 1.0
    return rho_of_spectrum(lam[0], lam[-1])


def kernel_ensemble_bound(i, grams, config, sigma_w_sq, norm_y_sq):
    """Bound on ``lambda_i^{P1} / lambda_1^{P1}`` for the average of M kernel machines."""
    grams = list(grams)
    M = len(grams)
    for g in grams:
        if abs(g.eigvals[0] - 1.0) > 1e-8:
            raise ConfigError("kernel_ensemble_bound needs Gram matrices normalized to lambda_1 = 1")
    n = grams[0].n
    if not 1 <= i <= n:
        raise ConfigError(f"index {i} out of range 1..{n}")
    alpha, T = config.alpha, config.T
    if 2.0 * T * alpha <= 1.0:
        return 1.0
    rhos = np.array([_gram_rho(g) for g in grams])
    slopes = np.array([fit_slope(g.eigvals).c_hat for g in grams])
    ks = [math.log(2.0 * T * alpha) / (2.0 * c) if c > 0 else math.inf for c in slopes]
    kst = min(ks)
    init = sigma_w_sq / (alpha * norm_y_sq)
    stretched = (i - 1) // M
    if i <= 2.0 * kst:
        return min(1.0, 4.0 / M * float(np.sum(rhos ** (-float(stretched)))) + init)
    idx = math.ceil(stretched - kst + 2)
    total = 0.0
    for g, r in zip(grams, rhos):
        lam = _lam_at(g.eigvals, idx)
        total += 4.0 * r ** (-(kst - 1.0)) + init * min(1.0, 2.0 * alpha * T * lam)
    return total / M


# --------------------------------------------------------------------------
# verification reports
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundRecord:
    family: str
    i: int
    numeric: float
    bound: float
    satisfied: bool
    slack: float


def make_record(family, i, numeric, bound, lower=False, resolution=0.0):
    """Compare ``numeric <= bound`` (or ``>=`` when ``lower``) at relative tolerance 1e-9.

    ``resolution`` is the absolute size below which the numeric value is
    indistinguishable from eigensolver round-off; differences smaller than it
    are not counted as violations.
    """
    numeric, bound = float(numeric), float(bound)
    scale = max(abs(bound), 1e-300)
    gap = numeric - bound if lower else bound - numeric
    ok = gap >= -REL_TOL * abs(bound) or (resolution > 0 and abs(gap) <= resolution)
    slack = gap / scale
    return BoundRecord(family, int(i), numeric, bound, bool(ok), float(slack))


@dataclass
class BoundReport:
    config_summary: dict
    rho: float
    k_star: float
    per_index: list
    lemma2_interval: tuple
    y_norm_sq: float
    concentration_centre: float
    flags: list = field(default_factory=list)

    @property
    def violations(self):
        return [r for r in self.per_index if not r.satisfied]

    def families(self):
        return sorted({r.family for r in self.per_index})

    def to_dict(self):
        return {
            "hrb_schema": SCHEMA_VERSION,
            "config_summary": self.config_summary,
            "rho": self.rho,
            "k_star": self.k_star,
            "lemma2_interval": list(self.lemma2_interval),
            "y_norm_sq": self.y_norm_sq,
            "concentration_centre": self.concentration_centre,
            "flags": list(self.flags),
            "n_records": len(self.per_index),
            "violations": [asdict(r) for r in self.violations],
            "per_index": [asdict(r) for r in self.per_index],
        }


def _summary(dataset, config):
    spec = dataset.spec
    out = {"n": dataset.n, "d": dataset.d}
    if spec is not None:
        out.update(c=spec.c, sigma_w_sq=spec.sigma_w_sq, sigma_star_sq=spec.sigma_star_sq,
                   seed=spec.seed)
    out.update(config.summary())
    return out


def verify_bounds(dataset, config, adjust_bound=None):
    """Evaluate every applicable bound against the analytic spectra of ``(dataset, config)``.

    ``adjust_bound(family, i, value) -> value`` lets tests tamper with bound
    values to exercise the violation path.
    """
    def rec(family, i, numeric, bound, lower=False, resolution=0.0):
        if adjust_bound is not None:
            bound = adjust_bound(family, i, bound)
        records.append(make_record(family, i, numeric, bound, lower, resolution))

    records = []
    flags = []
    is_sgd = isinstance(config.method, SGD)
    if is_sgd:
        pca = sgd_analytic_pca(dataset, config, keep_matrix=False)
        # the deterministic-dynamics bounds describe the noise-free spectrum
        base = analytic_pca(dataset, replace(config, method=GD()), keep_matrix=False)
    else:
        pca = base = analytic_pca(dataset, config, keep_matrix=False)
    p = _problem(dataset, config)
    lam_dyn = p.eigvals
    n = dataset.n
    # eigenvalue ratios below this are round-off relative to the top eigenvalue
    ratio_res = n * np.finfo(np.float64).eps

    # initialization term, paired index by index with lambda^K (both descending)
    sw_exact = np.sort(base.lambda_sigma_w)[::-1]
    sw_bound = sigma_w_bound(config.alpha, config.T, p.sigma_w_sq, lam_dyn)
    for i in range(n):
        rec("init_term", i + 1, sw_exact[i], sw_bound[i])

    # target Gramian decay
    ly = base.lambda_y
    for j in range(1, n + 1):
        tight, loose = lemma1_ratio_bound((j - 1) // 2, p.rho)
        ratio = ly[j - 1] / ly[0]
        rec("target_decay_tight", j, ratio, tight, resolution=ratio_res)
        rec("target_decay_loose", j, ratio, loose, resolution=ratio_res)

    lo, hi, centre = lemma2_interval(dataset, config)
    rec("target_top_lower", 1, ly[0], lo, lower=True)
    rec("target_top_upper", 1, ly[0], hi)

    lb1 = base.lambda_P1
    lp1 = pca.lambda_P1
    head = p.k_star is not None
    for i in range(1, n + 1):
        value, flag = _p1_ratio_value(i, p)
        if flag and flag not in flags:
            flags.append(flag)
        rec("p1_ratio", i, lb1[i - 1] / lb1[0], value, resolution=ratio_res)
        if is_sgd and head and i <= 2.0 * p.k_star:
            rec("sgd_head", i, lp1[i - 1] / lp1[0], sgd_head_bound(i, dataset, config),
                resolution=ratio_res)
            rec("sgd_head_accumulated", i, lp1[i - 1] / lp1[0],
                sgd_head_bound_accumulated(i, dataset, config), resolution=ratio_res)
        if isinstance(config.method, WeightDecay) and head and i <= 2.0 * p.k_star:
            rec("weight_decay_head", i, lp1[i - 1] / lp1[0],
                weight_decay_head_bound(i, dataset, config), resolution=ratio_res)

    # Weyl sandwich and the rank-one term
    lp = pca.lambda_P
    tol = REL_TOL * lp1[0]
    for i in range(n):
        nxt = lp1[i + 1] if i + 1 < n else 0.0
        lower = max(nxt, lp1[i] - pca.lambda_P2)
        records.append(BoundRecord("weyl_upper", i + 1, lp[i], lp1[i], bool(lp[i] <= lp1[i] + tol),
                                   float((lp1[i] - lp[i]) / max(lp1[0], 1e-300))))
        records.append(BoundRecord("weyl_lower", i + 1, lp[i], lower, bool(lp[i] >= lower - tol),
                                   float((lp[i] - lower) / max(lp1[0], 1e-300))))
    rec("rank_one_term", 1, pca.lambda_P2, p.y_norm_sq / (config.alpha * config.T * lam_dyn[-1]) ** 2)

    return BoundReport(
        config_summary=_summary(dataset, config),
        rho=p.rho,
        k_star=p.k_star,
        per_index=records,
        lemma2_interval=(lo, hi),
        y_norm_sq=p.y_norm_sq,
        concentration_centre=centre,
        flags=flags,
    )


def random_bound_configs(count, seed=0, methods=("GD", "SGD", "WeightDecay")):
    """Randomized (DatasetSpec, TrainConfig) pairs over the verification ranges.

    n in [10, 80], c in [0.05, 1] (with c > 1/n), T in [2, 1e4] log-uniform,
    alpha in (0, 1/lambda_1] and sigma_w^2/sigma_*^2 in [1e-2, 1e2] log-uniform.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(99,)))
    out = []
    for k in range(count):
        n = int(rng.integers(10, 81))
        while True:
            c = float(rng.uniform(0.05, 1.0))
            if c * n > 1.0:
                break
        T = int(round(10 ** rng.uniform(math.log10(2), 4)))
        alpha = 1.0 if rng.random() < 0.2 else float(10 ** rng.uniform(-2, 0))
        ratio = float(10 ** rng.uniform(-2, 2))
        spec = DatasetSpec(n=n, d=2 * n, c=c, sigma_star_sq=1.0, sigma_w_sq=ratio,
                           seed=int(rng.integers(0, 2**63)))
        name = methods[k % len(methods)]
        if name == "SGD":
            method = SGD(batch_size=int(rng.choice([1, 8, 64])))
        elif name == "WeightDecay":
            lam = float(rng.choice([1e-3, 1e-1]))
            method = WeightDecay(lam)
            alpha = alpha / (1.0 + lam)
        else:
            method = GD()
        out.append((spec, TrainConfig(alpha=alpha, T=T, N=1, method=method)))
    return out


def bounds_sweep(count=100, seed=0):
    """Run :func:`verify_bounds` over randomized configurations."""
    reports = []
    for spec, config in random_bound_configs(count, seed):
        reports.append(verify_bounds(synthesize_dataset(spec), config))
    return reports


def verify_kernel_bounds(grams, y, config, sigma_w_sq, adjust_bound=None):
    """Check :func:`kernel_ensemble_bound` against :func:`multi_kernel_pca` for every index."""
    grams = list(grams)
    y = np.asarray(y, dtype=np.float64)
    y2 = float(y @ y)
    pca = multi_kernel_pca(grams, y, config, sigma_w_sq, keep_matrix=False)
    n = grams[0].n
    res = n * np.finfo(np.float64).eps
    lp1 = pca.lambda_P1
    records = []
    for i in range(1, n + 1):
        bound = kernel_ensemble_bound(i, grams, config, sigma_w_sq, y2)
        if adjust_bound is not None:
            bound = adjust_bound("kernel_ensemble", i, bound)
        records.append(make_record("kernel_ensemble", i, lp1[i - 1] / lp1[0], bound, resolution=res))
    slopes = [fit_slope(g.eigvals).c_hat for g in grams]
    kst = None
    if 2.0 * config.T * config.alpha > 1.0:
        kst = min(math.log(2.0 * config.T * config.alpha) / (2.0 * c) if c > 0 else math.inf
                  for c in slopes)
    summary = {"n": n, "M": len(grams), "sigma_w_sq": sigma_w_sq, "slopes": slopes}
    summary.update(config.summary())
    return BoundReport(
        config_summary=summary,
        rho=min(_gram_rho(g) for g in grams),
        k_star=kst,
        per_index=records,
        lemma2_interval=(y2, float("nan")),
        y_norm_sq=y2,
        concentration_centre=float("nan"),
        flags=[] if kst is not None else ["outside lemma regime"],
    )
