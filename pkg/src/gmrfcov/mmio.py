"""Matrix Market coordinate-format exchange for the sparse types."""

from __future__ import annotations

import io

import numpy as np
import scipy.io
import scipy.sparse

from .errors import PreconditionError
from .sparse import SparseRectMatrix, SparseSymMatrix


def write_sym(A: SparseSymMatrix) -> str:
    """Symmetric coordinate Matrix Market text (lower triangle stored)."""
    coo = scipy.sparse.coo_matrix(
        (A.values, (A.row_idx, np.repeat(np.arange(A.n), np.diff(A.col_ptr)))),
        shape=(A.n, A.n),
    )
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, coo, symmetry="symmetric", precision=17)
    return buf.getvalue().decode()


def write_rect(A: SparseRectMatrix) -> str:
    coo = scipy.sparse.coo_matrix(
        (A.values, (A.row_idx, np.repeat(np.arange(A.ncols), np.diff(A.col_ptr)))),
        shape=(A.nrows, A.ncols),
    )
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, coo, symmetry="general", precision=17)
    return buf.getvalue().decode()


def read_sym(text: str) -> SparseSymMatrix:
    """Parse symmetric (or structurally symmetric general) coordinate text."""
    M = scipy.io.mmread(io.BytesIO(text.encode()))
    M = scipy.sparse.coo_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise PreconditionError("matrix is not square")
    mask = M.row >= M.col
    lower = scipy.sparse.coo_matrix(
        (M.data[mask], (M.row[mask], M.col[mask])), shape=M.shape
    ).tocsc()
    lower.sort_indices()
    return SparseSymMatrix(
        n=M.shape[0],
        col_ptr=lower.indptr.astype(np.int64),
        row_idx=lower.indices.astype(np.int64),
        values=lower.data.astype(np.float64),
    )


def read_rect(text: str) -> SparseRectMatrix:
    M = scipy.io.mmread(io.BytesIO(text.encode()))
    M = scipy.sparse.coo_matrix(M).tocsc()
    M.sort_indices()
    return SparseRectMatrix(
        nrows=M.shape[0],
        ncols=M.shape[1],
        col_ptr=M.indptr.astype(np.int64),
        row_idx=M.indices.astype(np.int64),
        values=M.data.astype(np.float64),
    )
