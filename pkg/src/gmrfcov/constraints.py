"""Correcting covariance estimates for linear constraints A x = e.

Conditioning a GMRF on k linear constraints subtracts a rank-k term from the
covariance: Sigma* = Sigma - W (A W)^{-1} W^T with W = Q^{-1} A^T.  W costs k
iterative solves; after that each corrected entry costs a k x k quadratic
form, computed exactly, so the corrected estimator keeps the variance of the
uncorrected one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, PreconditionError
from .sampler import PcgConfig, SampleMatrix, pcg_solve
from .sparse import SparseRectMatrix, SparseSymMatrix
from .takahashi import SelectedCov


@dataclass(eq=False)
class ConstraintSpec:
    """k independent linear constraints A x = e on the field."""

    A: SparseRectMatrix
    e: np.ndarray

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=np.float64)
        if self.e.shape != (self.A.nrows,):
            raise PreconditionError("constraint right-hand side length mismatch")
        dense = self.A.to_dense()
        if np.linalg.matrix_rank(dense) < self.A.nrows:
            raise PreconditionError("constraint rows are linearly dependent")

    @property
    def k(self) -> int:
        return self.A.nrows


def _solve_w(Q: SparseSymMatrix, spec: ConstraintSpec, cfg: PcgConfig) -> np.ndarray:
    """W = Q^{-1} A^T, one iterative solve per constraint row."""
    k = spec.k
    W = np.empty((Q.n, k))
    At = spec.A.to_dense().T
    for c in range(k):
        W[:, c], _, _ = pcg_solve(Q, At[:, c], cfg)
    return W


def _correction_core(Q: SparseSymMatrix, spec: ConstraintSpec, cfg: PcgConfig):
    W = _solve_w(Q, spec, cfg)
    AW = np.empty((spec.k, spec.k))
    for c in range(spec.k):
        AW[:, c] = spec.A.matvec(W[:, c])
    cond = np.linalg.cond(AW)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericError(f"A Q^-1 A^T is numerically rank deficient (cond {cond:.2e})")
    B = np.linalg.inv(AW)
    return W, B


def constraint_correct(
    est: SelectedCov,
    Q: SparseSymMatrix,
    spec: ConstraintSpec,
    X: SampleMatrix | None = None,
    cfg: PcgConfig | None = None,
) -> SelectedCov:
    """Apply the rank-k constraint correction to a selected-covariance
    estimate.

    Any diagonal entry pushed negative by the correction is replaced by the
    plain MC estimate over the constrained samples (derived from X) and
    flagged 'negative-replaced'; X is only required when that happens.
    """
    cfg = cfg or PcgConfig()
    W, B = _correction_core(Q, spec, cfg)
    S = est.index_set
    corr = np.einsum("ik,kl,il->i", W[S.rows], B, W[S.cols])
    vals = est.values - corr
    flags = list(est.flags) if est.flags is not None else [""] * len(S)
    ci_lo = None if est.ci_lo is None else est.ci_lo - corr
    ci_hi = None if est.ci_hi is None else est.ci_hi - corr

    neg = np.nonzero((S.rows == S.cols) & (vals < 0))[0]
    Xc = None
    if len(neg):
        if X is None:
            raise PreconditionError(
                "negative corrected variances need samples for the MC fallback"
            )
        Xc = constrain_samples(X, Q, spec, cfg, _precomputed=(W, B))
        for t in neg:
            i = int(S.rows[t])
            vals[t] = float(np.mean(Xc.columns[i] ** 2))
            flags[t] = "negative-replaced"
            if ci_lo is not None:
                ci_lo[t] = np.nan
                ci_hi[t] = np.nan
    return SelectedCov(
        index_set=S,
        values=vals,
        method=est.method + "+constrained",
        n_s=est.n_s,
        confidence=est.confidence,
        exact_part=None,
        est_variance=est.est_variance,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        block_id=est.block_id,
        flags=flags,
    )


def constrain_samples(
    X: SampleMatrix,
    Q: SparseSymMatrix,
    spec: ConstraintSpec,
    cfg: PcgConfig | None = None,
    _precomputed=None,
) -> SampleMatrix:
    """Project samples onto the constraint null space:
    X* = X - W (A W)^{-1} A X, so A x* = 0 columnwise (mean-zero field)."""
    cfg = cfg or PcgConfig()
    if _precomputed is not None:
        W, B = _precomputed
    else:
        W, B = _correction_core(Q, spec, cfg)
    AX = np.empty((spec.k, X.n_s))
    for j in range(X.n_s):
        AX[:, j] = spec.A.matvec(X.columns[:, j])
    Xc = X.columns - W @ (B @ AX)
    return SampleMatrix(
        n=X.n,
        n_s=X.n_s,
        columns=Xc,
        provenance=X.provenance + "-constrained",
        seed=X.seed,
    )
