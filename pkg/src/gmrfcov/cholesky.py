"""Numeric sparse Cholesky factorization and triangular solves.

The factor lives on the precomputed symbolic fill pattern (up-looking,
column at a time, no supernodes).  L L^T = P Q P^T where P is the symbolic
analysis permutation; the solve helpers below handle the permutation when a
full Q z = b solve is wanted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import NotPositiveDefiniteError, PreconditionError
from .ordering import SymbolicFactor
from .sparse import SparseSymMatrix


@dataclass(eq=False)
class CholFactor:
    """Numeric lower-triangular factor on the symbolic fill pattern."""

    symbolic: SymbolicFactor
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.symbolic.n

    @cached_property
    def diag(self) -> np.ndarray:
        return self.values[self.symbolic.l_colptr[:-1]]

    def to_dense(self) -> np.ndarray:
        s = self.symbolic
        L = np.zeros((s.n, s.n))
        for j in range(s.n):
            for p in range(s.l_colptr[j], s.l_colptr[j + 1]):
                L[s.l_rowidx[p], j] = self.values[p]
        return L

    def trailing_dense(self, w: int) -> np.ndarray:
        """Dense copy of the trailing w x w block of L."""
        s = self.symbolic
        off = s.n - w
        out = np.zeros((w, w))
        for j in range(off, s.n):
            for p in range(s.l_colptr[j], s.l_colptr[j + 1]):
                out[s.l_rowidx[p] - off, j - off] = self.values[p]
        return out

    def memory_proxy_bytes(self) -> int:
        """Bytes of live factor storage: pattern indices plus values."""
        s = self.symbolic
        return int(s.l_rowidx.nbytes + s.l_colptr.nbytes + self.values.nbytes)


def _permuted_upper(Q: SparseSymMatrix, symbolic: SymbolicFactor):
    """Strict upper CSC of P Q P^T plus its diagonal, validated against the
    symbolic pattern."""
    n = Q.n
    inv = symbolic.perm.inv
    rows = inv[Q.row_idx]
    cols = inv[np.repeat(np.arange(n, dtype=np.int64), np.diff(Q.col_ptr))]
    vals = Q.values
    diag = np.zeros(n)
    off = rows != cols
    diag[rows[~off]] = vals[~off]
    hi = np.maximum(rows[off], cols[off])
    lo = np.minimum(rows[off], cols[off])
    ov = vals[off]
    order = np.lexsort((lo, hi))
    hi, lo, ov = hi[order], lo[order], ov[order]
    up_colptr = np.zeros(n + 1, np.int64)
    np.add.at(up_colptr, hi + 1, 1)
    np.cumsum(up_colptr, out=up_colptr)
    pos = np.empty(len(hi), np.int64)
    _kernels.pattern_positions(symbolic.l_colptr, symbolic.l_rowidx, hi, lo, pos)
    if np.any(pos < 0):
        raise PreconditionError("symbolic analysis does not cover the matrix pattern")
    return up_colptr, lo, ov, diag


def factorize(Q: SparseSymMatrix, symbolic: SymbolicFactor) -> CholFactor:
    """Numeric factorization of an SPD matrix on a given symbolic pattern."""
    if symbolic.n != Q.n:
        raise PreconditionError("symbolic analysis size does not match matrix")
    up_colptr, up_rows, up_vals, diag = _permuted_upper(Q, symbolic)
    rowptr, rowcols, _ = symbolic.row_structure
    Lx = np.zeros(symbolic.fill_count)
    bad = _kernels.chol_up(
        Q.n,
        symbolic.l_colptr,
        symbolic.l_rowidx,
        rowptr,
        rowcols,
        up_colptr,
        up_rows,
        up_vals,
        diag,
        Lx,
    )
    if bad >= 0:
        raise NotPositiveDefiniteError(int(bad))
    return CholFactor(symbolic=symbolic, values=Lx)


def solve_lower(L: CholFactor, b: np.ndarray) -> np.ndarray:
    """L y = b by forward substitution (permuted coordinates)."""
    y = _as_column_copy(L.n, b)
    s = L.symbolic
    _kernels.solve_lower_multi(L.n, s.l_colptr, s.l_rowidx, L.values, y)
    return y.reshape(np.shape(b))


def solve_upper(L: CholFactor, b: np.ndarray) -> np.ndarray:
    """L^T y = b by backward substitution (permuted coordinates)."""
    y = _as_column_copy(L.n, b)
    s = L.symbolic
    _kernels.solve_upper_multi(L.n, s.l_colptr, s.l_rowidx, L.values, y)
    return y.reshape(np.shape(b))


def chol_solve(L: CholFactor, b: np.ndarray) -> np.ndarray:
    """Q z = b using the factor, permutation handled internally."""
    b = np.asarray(b, dtype=np.float64)
    one_d = b.ndim == 1
    B = b.reshape(L.n, -1)
    perm = L.symbolic.perm.perm
    Y = np.ascontiguousarray(B[perm])
    s = L.symbolic
    _kernels.solve_lower_multi(L.n, s.l_colptr, s.l_rowidx, L.values, Y)
    _kernels.solve_upper_multi(L.n, s.l_colptr, s.l_rowidx, L.values, Y)
    Z = np.empty_like(Y)
    Z[perm] = Y
    return Z[:, 0] if one_d else Z


def _as_column_copy(n: int, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != n:
        raise PreconditionError(f"right-hand side length {b.shape[0]} != {n}")
    return np.ascontiguousarray(b.reshape(n, -1)).copy()
