"""Numba kernels for the sparse linear algebra hot paths.

All kernels operate on raw CSC/CSR index arrays (int64) and value arrays
(float64).  Symmetric matrices store the lower triangle only; the kernels
apply the implied symmetry themselves.  Loops are sequential so results are
bit-reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def spmv_sym(n, colptr, rowidx, vals, x, y):
    """y += A @ x for symmetric A stored as its lower triangle."""
    for j in range(n):
        xj = x[j]
        for p in range(colptr[j], colptr[j + 1]):
            i = rowidx[p]
            v = vals[p]
            y[i] += v * xj
            if i != j:
                y[j] += v * x[i]


@njit(cache=True)
def spmv_sym_multi(n, colptr, rowidx, vals, X, Y):
    """Y += A @ X column block, symmetric lower-triangle A. X, Y are (n, k)."""
    k = X.shape[1]
    for j in range(n):
        for p in range(colptr[j], colptr[j + 1]):
            i = rowidx[p]
            v = vals[p]
            for c in range(k):
                Y[i, c] += v * X[j, c]
            if i != j:
                for c in range(k):
                    Y[j, c] += v * X[i, c]


@njit(cache=True)
def rect_matvec(nrows, ncols, colptr, rowidx, vals, x, y):
    """y += A @ x for a rectangular CSC matrix."""
    for j in range(ncols):
        xj = x[j]
        if xj != 0.0:
            for p in range(colptr[j], colptr[j + 1]):
                y[rowidx[p]] += vals[p] * xj


@njit(cache=True)
def rect_matvec_t(nrows, ncols, colptr, rowidx, vals, x, y):
    """y += A.T @ x for a rectangular CSC matrix."""
    for j in range(ncols):
        acc = 0.0
        for p in range(colptr[j], colptr[j + 1]):
            acc += vals[p] * x[rowidx[p]]
        y[j] += acc


@njit(cache=True)
def transpose_pattern(n, colptr, rowidx):
    """CSC -> CSR of a square pattern, with a map back into CSC positions.

    Returns (rowptr, colidx, pos) where entry q of row i corresponds to CSC
    position pos[q].  Column indices come out ascending within each row.
    """
    nnz = len(rowidx)
    rowptr = np.zeros(n + 1, np.int64)
    for p in range(nnz):
        rowptr[rowidx[p] + 1] += 1
    for i in range(n):
        rowptr[i + 1] += rowptr[i]
    colidx = np.empty(nnz, np.int64)
    pos = np.empty(nnz, np.int64)
    cursor = rowptr[:-1].copy()
    for j in range(n):
        for p in range(colptr[j], colptr[j + 1]):
            i = rowidx[p]
            q = cursor[i]
            colidx[q] = j
            pos[q] = p
            cursor[i] += 1
    return rowptr, colidx, pos


@njit(cache=True)
def etree(n, up_colptr, up_rowidx):
    """Elimination tree from the strict upper triangle (CSC) of the pattern."""
    parent = np.full(n, -1, np.int64)
    ancestor = np.full(n, -1, np.int64)
    for k in range(n):
        for p in range(up_colptr[k], up_colptr[k + 1]):
            i = up_rowidx[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


@njit(cache=True)
def symbolic_fill(n, up_colptr, up_rowidx, parent):
    """Fill pattern of the Cholesky factor, lower CSC with the diagonal first
    in every column and rows ascending.

    Row k of L has nonzero columns equal to the etree reach of row k's
    entries; appending k to those columns as k ascends yields sorted columns.
    """
    mark = np.full(n, -1, np.int64)
    colcount = np.ones(n, np.int64)
    for k in range(n):
        mark[k] = k
        for p in range(up_colptr[k], up_colptr[k + 1]):
            i = up_rowidx[p]
            while mark[i] != k:
                mark[i] = k
                colcount[i] += 1
                i = parent[i]
                if i == -1 or i >= k:
                    break
    Lp = np.zeros(n + 1, np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + colcount[j]
    Li = np.empty(Lp[n], np.int64)
    cursor = Lp[:-1].copy()
    mark[:] = -1
    for k in range(n):
        mark[k] = k
        Li[cursor[k]] = k
        cursor[k] += 1
        for p in range(up_colptr[k], up_colptr[k + 1]):
            i = up_rowidx[p]
            while mark[i] != k:
                mark[i] = k
                Li[cursor[i]] = k
                cursor[i] += 1
                i = parent[i]
                if i == -1 or i >= k:
                    break
    return Lp, Li


@njit(cache=True)
def chol_up(n, Lp, Li, rowptr, rowcols, up_colptr, up_rowidx, up_vals, diag, Lx):
    """Up-looking Cholesky on a fixed fill pattern.

    (Lp, Li): fill pattern, diagonal first per column, rows ascending.
    (rowptr, rowcols): its CSR transpose, strict lower part per row ascending.
    (up_colptr, up_rowidx, up_vals): strict upper triangle of the permuted
    matrix; diag holds its diagonal.  Writes factor values into Lx.
    Returns -1 on success, else the 0-based column of the failed pivot.
    """
    x = np.zeros(n)
    for k in range(n):
        d = diag[k]
        for p in range(up_colptr[k], up_colptr[k + 1]):
            x[up_rowidx[p]] = up_vals[p]
        for q in range(rowptr[k], rowptr[k + 1]):
            j = rowcols[q]
            if j >= k:
                continue
            lkj = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            for p in range(Lp[j] + 1, Lp[j + 1]):
                r = Li[p]
                if r < k:
                    x[r] -= Lx[p] * lkj
                else:
                    if r == k:
                        Lx[p] = lkj
                    break
            d -= lkj * lkj
        if d <= 0.0:
            return k
        Lx[Lp[k]] = np.sqrt(d)
    return -1


@njit(cache=True)
def solve_lower_multi(n, Lp, Li, Lx, B):
    """B := L^{-1} B in place, B of shape (n, m)."""
    m = B.shape[1]
    for j in range(n):
        dinv = 1.0 / Lx[Lp[j]]
        for c in range(m):
            B[j, c] *= dinv
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                B[i, c] -= v * B[j, c]


@njit(cache=True)
def solve_upper_multi(n, Lp, Li, Lx, B):
    """B := L^{-T} B in place, B of shape (n, m)."""
    m = B.shape[1]
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                B[j, c] -= v * B[i, c]
        dinv = 1.0 / Lx[Lp[j]]
        for c in range(m):
            B[j, c] *= dinv


@njit(cache=True)
def takahashi(n, Lp, Li, Lx, rowptr, rowcols, rowpos, Sigma, stop_col, frame):
    """Backward covariance recursion over the fill pattern.

    Processes columns i = n-1-frame ... stop_col (inclusive, descending) and
    writes Sigma entries aligned with (Lp, Li).  The trailing `frame` columns
    are treated as known: their Sigma entries must be pre-seeded and are never
    touched.  With frame=0 and stop_col=0 this yields the full selected
    inverse on the pattern.
    """
    d = np.zeros(n)
    start = n - 1 - frame
    for i in range(start, stop_col - 1, -1):
        inv_lii = 1.0 / Lx[Lp[i]]
        for pj in range(Lp[i + 1] - 1, Lp[i] - 1, -1):
            j = Li[pj]
            # scatter column j and row j of Sigma: d[r] = Sigma[r, j]
            for p in range(Lp[j], Lp[j + 1]):
                d[Li[p]] = Sigma[p]
            for q in range(rowptr[j], rowptr[j + 1]):
                d[rowcols[q]] = Sigma[rowpos[q]]
            s = 0.0
            for p in range(Lp[i] + 1, Lp[i + 1]):
                s += Lx[p] * d[Li[p]]
            val = -inv_lii * s
            if i == j:
                val += inv_lii * inv_lii
            Sigma[pj] = val


@njit(cache=True)
def ichol0(n, colptr, rowidx, vals, Lx):
    """Zero-fill incomplete Cholesky on the lower-triangle CSC pattern of A.

    Returns -1 on success, else the column of the failed pivot.
    """
    for p in range(len(vals)):
        Lx[p] = vals[p]
    for j in range(n):
        d = Lx[colptr[j]]
        if d <= 0.0:
            return j
        d = np.sqrt(d)
        Lx[colptr[j]] = d
        for p in range(colptr[j] + 1, colptr[j + 1]):
            Lx[p] /= d
        for p in range(colptr[j] + 1, colptr[j + 1]):
            i = rowidx[p]
            lij = Lx[p]
            # A[i:, i] -= lij * L[i:, j], restricted to the existing pattern
            for q in range(p, colptr[j + 1]):
                r = rowidx[q]
                # locate (r, i) in column i by binary search
                lo = colptr[i]
                hi = colptr[i + 1]
                while lo < hi:
                    mid = (lo + hi) // 2
                    if rowidx[mid] < r:
                        lo = mid + 1
                    else:
                        hi = mid
                if lo < colptr[i + 1] and rowidx[lo] == r:
                    Lx[lo] -= lij * Lx[q]
    return -1


@njit(cache=True)
def pattern_position(colptr, rowidx, i, j):
    """Position of entry (i, j), i >= j, in a CSC pattern, or -1."""
    lo = colptr[j]
    hi = colptr[j + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        if rowidx[mid] < i:
            lo = mid + 1
        else:
            hi = mid
    if lo < colptr[j + 1] and rowidx[lo] == i:
        return lo
    return -1


@njit(cache=True)
def pattern_positions(colptr, rowidx, ii, jj, out):
    """Vectorized pattern_position; out[t] = position of (ii[t], jj[t]) or -1."""
    for t in range(len(ii)):
        out[t] = pattern_position(colptr, rowidx, ii[t], jj[t])


@njit(cache=True)
def gather_sym_dense(n, colptr, rowidx, vals, sel, out):
    """out := A[sel, sel] dense, for symmetric lower-triangle CSC A.

    sel maps local index -> global index; out must be (len(sel), len(sel))
    and zeroed by the caller.
    """
    m = len(sel)
    loc = np.full(n, -1, np.int64)
    for t in range(m):
        loc[sel[t]] = t
    for t in range(m):
        j = sel[t]
        for p in range(colptr[j], colptr[j + 1]):
            li = loc[rowidx[p]]
            if li >= 0:
                out[li, t] = vals[p]
                out[t, li] = vals[p]


@njit(cache=True)
def gather_cross_dense(n, colptr, rowidx, vals, rows, cols, out):
    """out := A[rows, cols] dense, symmetric lower-triangle CSC A.

    rows and cols must be disjoint; out is (len(rows), len(cols)), zeroed by
    the caller.  Both orientations of each stored entry are considered.
    """
    rloc = np.full(n, -1, np.int64)
    for t in range(len(rows)):
        rloc[rows[t]] = t
    cloc = np.full(n, -1, np.int64)
    for t in range(len(cols)):
        cloc[cols[t]] = t
    for j in range(n):
        cj = cloc[j]
        rj = rloc[j]
        if cj >= 0:
            for p in range(colptr[j], colptr[j + 1]):
                r = rloc[rowidx[p]]
                if r >= 0:
                    out[r, cj] = vals[p]
        if rj >= 0:
            for p in range(colptr[j], colptr[j + 1]):
                c = cloc[rowidx[p]]
                if c >= 0:
                    out[rj, c] = vals[p]
