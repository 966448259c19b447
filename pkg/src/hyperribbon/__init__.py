"""Hyper-ribbon training manifolds of linear models and kernel machines."""

from ._backend import HAS_NUMBA, backend_name
from .bounds import BoundRecord, BoundReport, bounds_sweep, verify_bounds, verify_kernel_bounds
from .dynamics import (
    GD,
    SGD,
    Gram,
    KernelSpec,
    TrainConfig,
    TrajectoryEnsemble,
    WeightDecay,
    build_gram,
    gd_ensemble,
    kernel_gd_ensemble,
    sgd_ensemble,
    weight_decay_operator,
)
from .errors import ConfigError, HyperRibbonError, InsufficientSpectrum, NumericalError
from .manifold import (
    PcaDecomposition,
    analytic_pca,
    analytic_pca_gram,
    continuous_transform,
    empirical_pca,
    empirical_pca_streamed,
    hyper_ribbon_dim,
    multi_kernel_pca,
    sgd_analytic_pca,
    solve_dlyap,
)
from .phase import PhaseGrid, PhaseGridSpec, extract_isosurface, sweep
from .specgen import (
    Dataset,
    DatasetSpec,
    SlopeEstimate,
    estimate_slope,
    fit_slope,
    sample_initial_weights,
    synthesize_dataset,
)

__version__ = "0.1.0"
