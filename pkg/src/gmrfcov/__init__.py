"""Selected covariance computation for Gaussian Markov random fields.

The covariance matrix of a GMRF is the inverse of its sparse precision
matrix Q.  This package computes selected entries of that inverse exactly
(sparse Cholesky plus the backward covariance recursion) and approximately
(Monte Carlo, Rao-Blackwellized Monte Carlo over blocks, and an iterative
method over subdomain interfaces), with analytic uncertainty measures for
the sampling estimators.
"""

from .errors import (
    ConvergenceError,
    CoverageError,
    GmrfcovError,
    MemoryBudgetError,
    NotPositiveDefiniteError,
    NumericError,
    PatternError,
    PreconditionError,
)
from .sparse import (
    IndexSet,
    SparseRectMatrix,
    SparseSymMatrix,
    build_rect,
    build_sym,
    spmm,
    spmv,
)
from .models import (
    LatticeModel,
    ar1_precision,
    kvariate_lattice_precision,
    lattice_edges,
    lattice_neighbors,
    random_coupling,
    random_lambda,
    rw1_posterior_precision,
)
from .ordering import Permutation, SymbolicFactor, amd_order, camd_order, symbolic_cholesky
from .cholesky import CholFactor, chol_solve, factorize, solve_lower, solve_upper
from .takahashi import (
    SelectedCov,
    partial_takahashi,
    selected_inverse,
    takahashi_selected_inverse,
    takahashi_with_known_frame,
)
from .sampler import (
    PcgConfig,
    SampleMatrix,
    identity_probes,
    load_samples,
    pcg_solve,
    rademacher_probes,
    sample_gmrf_chol,
    sample_gmrf_pcg,
    save_samples,
    verify_square_root_split,
)
from .estimators import (
    BlockPartition,
    BlockRbmcPlan,
    EstimateWithCI,
    ar1_analytic_rmse,
    ar1_window_partition,
    ar1_window_rbmc_diagonal,
    block_rbmc,
    chi2_quantile,
    hutchinson_diagonal,
    mc_analytic_rmse,
    mc_estimate,
    quadratic_form_variance,
    rbmc_uncertainty,
    regular_tiling_partition,
    simple_rbmc_diagonal,
    singleton_partition,
    trace_product,
    whole_domain_partition,
)
from .constraints import ConstraintSpec, constrain_samples, constraint_correct
from .interface import (
    InterfaceDecomposition,
    InterfaceState,
    build_interface_decomposition,
    interface_phase1_start,
    interface_phase2_iterate,
    interface_phase3_finalize,
    partition_from_decomposition,
    run_interface_method,
    validate_separation,
)

__version__ = "0.1.0"
