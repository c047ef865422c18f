"""Iterative solves and exact GMRF sampling.

Sampling follows the sparse-square-root construction: when Q = G^T G + H^T H
an exact draw from N(0, Q^{-1}) is Q^{-1}(G^T z1 + H^T z2) with z1, z2
standard normal, solved here by preconditioned conjugate gradients.  A
Cholesky-based sampler provides the same draws through the factor for
desk-scale work.

Randomness comes from a counter-based generator (Philox) keyed by
(seed, column), with normal variates through the inverse CDF, so sample
columns are reproducible bit-for-bit regardless of scheduling or platform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import _kernels
from .cholesky import CholFactor
from .errors import ConvergenceError, PreconditionError
from .sparse import SparseRectMatrix, SparseSymMatrix, spmv

_MAGIC = b"GMRFSMP1"


@dataclass
class PcgConfig:
    """Conjugate-gradient controls: relative-residual tolerance, iteration
    cap (default 10*sqrt(n) + 100) and preconditioner choice."""

    delta: float = 1e-9
    max_iter: int | None = None
    preconditioner: str = "jacobi"  # 'none' | 'jacobi' | 'ichol0'

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise PreconditionError(f"delta must be in (0, 1), got {self.delta}")
        if self.max_iter is not None and self.max_iter < 1:
            raise PreconditionError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "jacobi", "ichol0"):
            raise PreconditionError(f"unknown preconditioner {self.preconditioner!r}")

    def iter_cap(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else int(10 * np.sqrt(n)) + 100


@dataclass(eq=False)
class SampleMatrix:
    """Column block of sample (or probe) vectors with its RNG provenance."""

    n: int
    n_s: int
    columns: np.ndarray  # (n, n_s)
    provenance: str  # 'gmrf-pcg' | 'gmrf-chol' | 'rademacher' | 'identity'
    seed: int

    def __post_init__(self):
        if self.columns.shape != (self.n, self.n_s):
            raise PreconditionError("sample matrix shape mismatch")
        if self.n_s < 1:
            raise PreconditionError("need at least one sample column")
        if not np.all(np.isfinite(self.columns)):
            raise PreconditionError("non-finite sample values")


def _column_rng(seed: int, column: int) -> np.random.Generator:
    key = np.array([seed, column], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _standard_normal(gen: np.random.Generator, size: int) -> np.ndarray:
    # inverse-CDF transform of open-interval uniforms: reproducible across
    # platforms, no rejection loop
    u = gen.integers(1, 2**53, size=size).astype(np.float64) / 2**53
    return ndtri(u)


class _Preconditioner:
    def __init__(self, Q: SparseSymMatrix, kind: str):
        self.kind = kind
        if kind == "jacobi":
            d = Q.diagonal()
            if np.any(d <= 0):
                raise PreconditionError("Jacobi preconditioner needs a positive diagonal")
            self.dinv = 1.0 / d
        elif kind == "ichol0":
            Lx = np.zeros(Q.nnz)
            bad = _kernels.ichol0(Q.n, Q.col_ptr, Q.row_idx, Q.values, Lx)
            if bad >= 0:
                raise ConvergenceError(0, np.inf, 0.0)
            self.Q = Q
            self.Lx = Lx

    def apply(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return r.copy()
        if self.kind == "jacobi":
            return self.dinv * r
        z = r.reshape(-1, 1).copy()
        _kernels.solve_lower_multi(self.Q.n, self.Q.col_ptr, self.Q.row_idx, self.Lx, z)
        _kernels.solve_upper_multi(self.Q.n, self.Q.col_ptr, self.Q.row_idx, self.Lx, z)
        return z[:, 0]


def pcg_solve(
    Q: SparseSymMatrix,
    b: np.ndarray,
    cfg: PcgConfig | None = None,
    callback=None,
) -> tuple[np.ndarray, int, float]:
    """Solve Q z = b to relative residual cfg.delta.

    Returns (z, iterations, final relative residual).  A zero right-hand
    side returns the zero vector in 0 iterations.  The recurrence residual
    drives the loop; the true residual is confirmed before returning.
    """
    cfg = cfg or PcgConfig()
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (Q.n,):
        raise PreconditionError("right-hand side length mismatch")
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros(Q.n), 0, 0.0
    M = _Preconditioner(Q, cfg.preconditioner)
    x = np.zeros(Q.n)
    r = b.copy()
    z = M.apply(r)
    p = z.copy()
    rz = float(r @ z)
    cap = cfg.iter_cap(Q.n)
    res = np.linalg.norm(r) / nb
    for it in range(1, cap + 1):
        Ap = spmv(Q, p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise ConvergenceError(it, res, cfg.delta)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if callback is not None:
            callback(x.copy())
        res = float(np.linalg.norm(r) / nb)
        if res <= cfg.delta:
            true_r = b - spmv(Q, x)
            true_res = float(np.linalg.norm(true_r) / nb)
            if true_res <= cfg.delta:
                return x, it, true_res
            r = true_r  # recurrence drifted; restart from the true residual
            z = M.apply(r)
            p = z.copy()
            rz = float(r @ z)
            continue
        z = M.apply(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    raise ConvergenceError(cap, res, cfg.delta)


def verify_square_root_split(
    Q: SparseSymMatrix, G: SparseRectMatrix, H: SparseRectMatrix, tol: float = 1e-12
) -> None:
    """Check Q = G^T G + H^T H elementwise (dense at desk scale)."""
    import scipy.sparse as sp

    Gs = sp.csc_matrix((G.values, G.row_idx, G.col_ptr), shape=(G.nrows, G.ncols))
    Hs = sp.csc_matrix((H.values, H.row_idx, H.col_ptr), shape=(H.nrows, H.ncols))
    R = (Gs.T @ Gs + Hs.T @ Hs).toarray()
    d = np.abs(R - Q.to_dense())
    scale = max(1.0, float(np.abs(Q.values).max()))
    if d.max() > tol * scale:
        raise PreconditionError(
            f"Q != G^T G + H^T H: max deviation {d.max():.3e} exceeds {tol:.0e}"
        )


def sample_gmrf_pcg(
    G: SparseRectMatrix,
    H: SparseRectMatrix,
    Q: SparseSymMatrix,
    n_s: int,
    seed: int,
    cfg: PcgConfig | None = None,
    verify: bool = True,
) -> SampleMatrix:
    """n_s independent draws from N(0, Q^{-1}) via the square-root split.

    Each column j uses its own (seed, j) substream: x = Q^{-1}(G^T z1 + H^T z2).
    """
    cfg = cfg or PcgConfig()
    if G.ncols != Q.n or H.ncols != Q.n:
        raise PreconditionError("G/H column count must equal Q dimension")
    if verify:
        verify_square_root_split(Q, G, H)
    X = np.empty((Q.n, n_s))
    for j in range(n_s):
        gen = _column_rng(seed, j)
        z1 = _standard_normal(gen, G.nrows)
        z2 = _standard_normal(gen, H.nrows)
        rhs = G.rmatvec(z1) + H.rmatvec(z2)
        X[:, j], _, _ = pcg_solve(Q, rhs, cfg)
    return SampleMatrix(n=Q.n, n_s=n_s, columns=X, provenance="gmrf-pcg", seed=seed)


def sample_gmrf_chol(L: CholFactor, n_s: int, seed: int) -> SampleMatrix:
    """Exact draws through the factor: solve L^T y = z, undo the permutation."""
    n = L.n
    Z = np.empty((n, n_s))
    for j in range(n_s):
        Z[:, j] = _standard_normal(_column_rng(seed, j), n)
    s = L.symbolic
    _kernels.solve_upper_multi(n, s.l_colptr, s.l_rowidx, L.values, Z)
    X = np.empty_like(Z)
    X[s.perm.perm] = Z
    return SampleMatrix(n=n, n_s=n_s, columns=X, provenance="gmrf-chol", seed=seed)


def rademacher_probes(n: int, n_s: int, seed: int) -> SampleMatrix:
    """Probe columns with independent +-1 entries."""
    X = np.empty((n, n_s))
    for j in range(n_s):
        gen = _column_rng(seed, j)
        X[:, j] = gen.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    return SampleMatrix(n=n, n_s=n_s, columns=X, provenance="rademacher", seed=seed)


def identity_probes(n: int) -> SampleMatrix:
    """The n standard basis vectors: the exactness case for probe estimators."""
    return SampleMatrix(n=n, n_s=n, columns=np.eye(n), provenance="identity", seed=0)


def save_samples(path, X: SampleMatrix) -> None:
    """Binary dump: magic, n, n_s, seed, provenance, column-major float64."""
    prov = X.provenance.encode()[:16].ljust(16, b"\0")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqQ", X.n, X.n_s, X.seed))
        fh.write(prov)
        fh.write(np.asfortranarray(X.columns).tobytes(order="F"))


def load_samples(path) -> SampleMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise PreconditionError("not a sample matrix file")
        n, n_s, seed = struct.unpack("<qqQ", fh.read(24))
        prov = fh.read(16).rstrip(b"\0").decode()
        data = np.frombuffer(fh.read(8 * n * n_s), dtype=np.float64)
    cols = data.reshape((n, n_s), order="F").copy()
    return SampleMatrix(n=n, n_s=n_s, columns=cols, provenance=prov, seed=seed)
