"""Compressed sparse column storage and basic kernels.

Symmetric matrices keep only the lower triangle (row >= col); symmetry is
implied everywhere.  All types are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import PreconditionError


@dataclass(eq=False)
class SparseSymMatrix:
    """Symmetric matrix, lower triangle in CSC form.

    Invariants: row indices strictly increasing within each column, all
    stored entries satisfy row >= col, and col_ptr[n] == nnz.
    """

    n: int
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(len(self.row_idx))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        for j in range(self.n):
            p = self.col_ptr[j]
            if p < self.col_ptr[j + 1] and self.row_idx[p] == j:
                d[j] = self.values[p]
        return d

    @cached_property
    def _transpose(self):
        return _kernels.transpose_pattern(self.n, self.col_ptr, self.row_idx)

    @cached_property
    def adjacency(self):
        """Full symmetric pattern (indptr, indices) without the diagonal."""
        deg = np.zeros(self.n, np.int64)
        for j in range(self.n):
            for p in range(self.col_ptr[j], self.col_ptr[j + 1]):
                i = self.row_idx[p]
                if i != j:
                    deg[i] += 1
                    deg[j] += 1
        indptr = np.zeros(self.n + 1, np.int64)
        np.cumsum(deg, out=indptr[1:])
        indices = np.empty(indptr[-1], np.int64)
        cursor = indptr[:-1].copy()
        for j in range(self.n):
            for p in range(self.col_ptr[j], self.col_ptr[j + 1]):
                i = self.row_idx[p]
                if i != j:
                    indices[cursor[j]] = i
                    cursor[j] += 1
                    indices[cursor[i]] = j
                    cursor[i] += 1
        return indptr, indices

    def pattern_key(self) -> bytes:
        """Hashable fingerprint of the sparsity pattern (not the values)."""
        return self.col_ptr.tobytes() + self.row_idx.tobytes()

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for j in range(self.n):
            for p in range(self.col_ptr[j], self.col_ptr[j + 1]):
                i = self.row_idx[p]
                A[i, j] = self.values[p]
                A[j, i] = self.values[p]
        return A

    def triplets(self) -> Iterable[tuple[int, int, float]]:
        for j in range(self.n):
            for p in range(self.col_ptr[j], self.col_ptr[j + 1]):
                yield int(self.row_idx[p]), j, float(self.values[p])

    @cached_property
    def _entry_cols(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.col_ptr))

    def submatrix(self, sel: np.ndarray) -> "SparseSymMatrix":
        """Principal submatrix over `sel`, renumbered 0..len(sel)-1."""
        sel = np.asarray(sel, dtype=np.int64)
        loc = np.full(self.n, -1, np.int64)
        loc[sel] = np.arange(len(sel), dtype=np.int64)
        li = loc[self.row_idx]
        lj = loc[self._entry_cols]
        keep = (li >= 0) & (lj >= 0)
        li, lj = li[keep], lj[keep]
        vv = self.values[keep]
        hi = np.maximum(li, lj)
        lo = np.minimum(li, lj)
        col_ptr, rows, vals = _compress(len(sel), hi, lo, vv.copy())
        return SparseSymMatrix(n=len(sel), col_ptr=col_ptr, row_idx=rows, values=vals)

    def gather_dense(self, sel: np.ndarray) -> np.ndarray:
        """Dense principal submatrix over `sel` (both triangles filled)."""
        sel = np.asarray(sel, dtype=np.int64)
        out = np.zeros((len(sel), len(sel)))
        _kernels.gather_sym_dense(self.n, self.col_ptr, self.row_idx, self.values, sel, out)
        return out

    def gather_cross_dense(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense A[rows, cols] for disjoint row/col index sets."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.zeros((len(rows), len(cols)))
        _kernels.gather_cross_dense(
            self.n, self.col_ptr, self.row_idx, self.values, rows, cols, out
        )
        return out


@dataclass(eq=False)
class SparseRectMatrix:
    """General rectangular matrix in CSC form."""

    nrows: int
    ncols: int
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(len(self.row_idx))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if len(x) != self.ncols:
            raise PreconditionError(f"matvec length mismatch: {len(x)} != {self.ncols}")
        y = np.zeros(self.nrows)
        _kernels.rect_matvec(
            self.nrows, self.ncols, self.col_ptr, self.row_idx, self.values, x, y
        )
        return y

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """A.T @ x."""
        if len(x) != self.nrows:
            raise PreconditionError(f"rmatvec length mismatch: {len(x)} != {self.nrows}")
        y = np.zeros(self.ncols)
        _kernels.rect_matvec_t(
            self.nrows, self.ncols, self.col_ptr, self.row_idx, self.values, x, y
        )
        return y

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.nrows, self.ncols))
        for j in range(self.ncols):
            for p in range(self.col_ptr[j], self.col_ptr[j + 1]):
                A[self.row_idx[p], j] = self.values[p]
        return A


def _compress(n_cols: int, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray):
    """Sort triplets column-major, sum duplicates, return CSC arrays."""
    order = np.lexsort((rows, cols))
    rows = rows[order]
    cols = cols[order]
    vals = vals[order]
    if len(rows):
        keep = np.ones(len(rows), bool)
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        # accumulate duplicate runs left-to-right so the summation order is fixed
        for t in np.nonzero(dup)[0]:
            vals[t + 1] += vals[t]
            keep[t] = False
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    col_ptr = np.zeros(n_cols + 1, np.int64)
    np.add.at(col_ptr, cols + 1, 1)
    np.cumsum(col_ptr, out=col_ptr)
    return col_ptr, rows.astype(np.int64), vals.astype(np.float64)


def build_sym(
    n: int,
    triplets: Iterable[tuple[int, int, float]],
    check_diagonal: bool = True,
) -> SparseSymMatrix:
    """Assemble a symmetric matrix from (i, j, value) triplets.

    Entries are mirrored to the lower triangle; duplicates are summed.  With
    check_diagonal=True a missing diagonal entry raises, since every matrix
    we assert positive definite must store its full diagonal.
    """
    trip = list(triplets)
    if trip:
        ii = np.array([t[0] for t in trip])
        jj = np.array([t[1] for t in trip])
        vv = np.array([t[2] for t in trip], dtype=np.float64)
    else:
        ii = np.empty(0, np.int64)
        jj = np.empty(0, np.int64)
        vv = np.empty(0, np.float64)
    if len(ii) and (ii.min() < 0 or ii.max() >= n or jj.min() < 0 or jj.max() >= n):
        raise PreconditionError("triplet index out of range")
    if len(vv) and not np.all(np.isfinite(vv)):
        raise PreconditionError("non-finite value in triplets")
    lo = np.minimum(ii, jj)
    hi = np.maximum(ii, jj)
    col_ptr, rows, vals = _compress(n, hi, lo, vv)
    A = SparseSymMatrix(n=n, col_ptr=col_ptr, row_idx=rows, values=vals)
    if check_diagonal:
        for j in range(n):
            p = col_ptr[j]
            if p >= col_ptr[j + 1] or rows[p] != j:
                raise PreconditionError(f"diagonal entry ({j}, {j}) missing")
    return A


def build_rect(
    nrows: int,
    ncols: int,
    triplets: Iterable[tuple[int, int, float]],
) -> SparseRectMatrix:
    trip = list(triplets)
    if trip:
        ii = np.array([t[0] for t in trip])
        jj = np.array([t[1] for t in trip])
        vv = np.array([t[2] for t in trip], dtype=np.float64)
    else:
        ii = np.empty(0, np.int64)
        jj = np.empty(0, np.int64)
        vv = np.empty(0, np.float64)
    if len(ii) and (ii.min() < 0 or ii.max() >= nrows or jj.min() < 0 or jj.max() >= ncols):
        raise PreconditionError("triplet index out of range")
    col_ptr, rows, vals = _compress(ncols, ii, jj, vv)
    return SparseRectMatrix(nrows=nrows, ncols=ncols, col_ptr=col_ptr, row_idx=rows, values=vals)


def spmv(A: SparseSymMatrix, v: np.ndarray) -> np.ndarray:
    """A @ v with implicit symmetry."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (A.n,):
        raise PreconditionError(f"spmv dimension mismatch: {v.shape} vs n={A.n}")
    y = np.zeros(A.n)
    _kernels.spmv_sym(A.n, A.col_ptr, A.row_idx, A.values, v, y)
    return y


def spmm(A: SparseSymMatrix, X: np.ndarray) -> np.ndarray:
    """A @ X for an (n, k) column block."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[0] != A.n:
        raise PreconditionError(f"spmm dimension mismatch: {X.shape} vs n={A.n}")
    Y = np.zeros_like(X)
    _kernels.spmv_sym_multi(A.n, A.col_ptr, A.row_idx, A.values, X, Y)
    return Y


@dataclass(eq=False)
class IndexSet:
    """Deduplicated set of matrix index pairs, canonicalized to i >= j.

    The kind tag records how the set was produced: 'diagonal',
    'pattern-of-matrix', 'outer-product-support' or 'explicit'.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    kind: str = "explicit"

    @classmethod
    def _canonical(cls, n, ii, jj, kind):
        ii = np.asarray(ii, dtype=np.int64)
        jj = np.asarray(jj, dtype=np.int64)
        if len(ii) and (ii.min() < 0 or ii.max() >= n or jj.min() < 0 or jj.max() >= n):
            raise PreconditionError("index pair out of range")
        hi = np.maximum(ii, jj)
        lo = np.minimum(ii, jj)
        if len(hi):
            keys = hi * n + lo
            keys = np.unique(keys)
            hi = keys // n
            lo = keys % n
        return cls(n=n, rows=hi, cols=lo, kind=kind)

    @classmethod
    def diagonal(cls, n: int) -> "IndexSet":
        idx = np.arange(n, dtype=np.int64)
        return cls(n=n, rows=idx, cols=idx.copy(), kind="diagonal")

    @classmethod
    def from_pattern(cls, A: SparseSymMatrix) -> "IndexSet":
        ii, jj = [], []
        for j in range(A.n):
            for p in range(A.col_ptr[j], A.col_ptr[j + 1]):
                ii.append(int(A.row_idx[p]))
                jj.append(j)
        return cls._canonical(A.n, ii, jj, "pattern-of-matrix")

    @classmethod
    def from_support(cls, n: int, support: Sequence[int]) -> "IndexSet":
        """All pairs (i, j) with both indices in the support of a vector."""
        s = np.asarray(sorted(set(int(x) for x in support)), dtype=np.int64)
        ii = np.repeat(s, len(s))
        jj = np.tile(s, len(s))
        out = cls._canonical(n, ii, jj, "outer-product-support")
        return out

    @classmethod
    def explicit(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "IndexSet":
        pairs = list(pairs)
        ii = [p[0] for p in pairs]
        jj = [p[1] for p in pairs]
        return cls._canonical(n, ii, jj, "explicit")

    def __len__(self) -> int:
        return int(len(self.rows))

    def union(self, other: "IndexSet") -> "IndexSet":
        if other.n != self.n:
            raise PreconditionError("index sets over different dimensions")
        return IndexSet._canonical(
            self.n,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
            "explicit",
        )

    def pairs(self) -> Iterable[tuple[int, int]]:
        return zip(self.rows.tolist(), self.cols.tolist())
