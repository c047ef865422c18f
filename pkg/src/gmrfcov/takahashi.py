"""Selected inversion via the backward covariance recursion.

Given the Cholesky factor of (permuted) Q, the recursion produces exact
entries of Q^{-1} on the factor fill pattern, iterating columns from the
last to the first.  Variants: stop early once a trailing block is done, or
treat a trailing block as known and only recurse over the leading columns.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .cholesky import CholFactor, factorize
from .errors import PatternError, PreconditionError
from .ordering import amd_order, symbolic_cholesky
from .sparse import IndexSet, SparseSymMatrix

_CSV_COLUMNS = [
    "i", "j", "estimate", "exact_part", "est_variance",
    "ci_lo", "ci_hi", "method", "n_s", "block_id", "flags",
]


@dataclass(eq=False)
class SelectedCov:
    """Covariance values on an index pair set, optionally with per-entry
    uncertainty (estimator variance and confidence bounds)."""

    index_set: IndexSet
    values: np.ndarray
    method: str = "takahashi"
    n_s: int | None = None
    confidence: float | None = None
    exact_part: np.ndarray | None = None
    est_variance: np.ndarray | None = None
    ci_lo: np.ndarray | None = None
    ci_hi: np.ndarray | None = None
    block_id: np.ndarray | None = None
    flags: list[str] | None = None
    _lookup: dict = field(default=None, repr=False)

    def get(self, i: int, j: int) -> float:
        """Value at (i, j); symmetric completion applied."""
        if self._lookup is None:
            lut = {}
            for t, (a, b) in enumerate(self.index_set.pairs()):
                lut[(a, b)] = t
            object.__setattr__(self, "_lookup", lut)
        key = (max(i, j), min(i, j))
        if key not in self._lookup:
            raise PreconditionError(f"pair {key} not in the selected set")
        return float(self.values[self._lookup[key]])

    def position(self, i: int, j: int) -> int:
        self.get(i, j)
        return self._lookup[(max(i, j), min(i, j))]

    def diagonal(self) -> np.ndarray:
        """Diagonal values ordered by index; requires all of them present."""
        n = self.index_set.n
        out = np.empty(n)
        mask = np.zeros(n, bool)
        on_diag = self.index_set.rows == self.index_set.cols
        out[self.index_set.rows[on_diag]] = self.values[on_diag]
        mask[self.index_set.rows[on_diag]] = True
        if not mask.all():
            raise PreconditionError("selected set does not cover the full diagonal")
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_CSV_COLUMNS)

        def fmt(x):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(x)

        m = len(self.values)
        for t in range(m):
            row = [
                int(self.index_set.rows[t]),
                int(self.index_set.cols[t]),
                repr(float(self.values[t])),
                fmt(float(self.exact_part[t]) if self.exact_part is not None else None),
                fmt(float(self.est_variance[t]) if self.est_variance is not None else None),
                fmt(float(self.ci_lo[t]) if self.ci_lo is not None else None),
                fmt(float(self.ci_hi[t]) if self.ci_hi is not None else None),
                self.method,
                "" if self.n_s is None else int(self.n_s),
                "" if self.block_id is None else int(self.block_id[t]),
                "" if self.flags is None else self.flags[t],
            ]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n: int | None = None) -> "SelectedCov":
        rdr = csv.DictReader(io.StringIO(text))
        ii, jj, vals = [], [], []
        exact, var, lo, hi, bid, flags = [], [], [], [], [], []
        method, n_s = "unknown", None
        for row in rdr:
            ii.append(int(row["i"]))
            jj.append(int(row["j"]))
            vals.append(float(row["estimate"]))
            exact.append(float(row["exact_part"]) if row["exact_part"] else np.nan)
            var.append(float(row["est_variance"]) if row["est_variance"] else np.nan)
            lo.append(float(row["ci_lo"]) if row["ci_lo"] else np.nan)
            hi.append(float(row["ci_hi"]) if row["ci_hi"] else np.nan)
            bid.append(int(row["block_id"]) if row["block_id"] else -1)
            flags.append(row["flags"])
            method = row["method"]
            n_s = int(row["n_s"]) if row["n_s"] else None
        if n is None:
            n = max(ii) + 1 if ii else 0
        S = IndexSet(
            n=n,
            rows=np.asarray(ii, dtype=np.int64),
            cols=np.asarray(jj, dtype=np.int64),
            kind="explicit",
        )
        bid_arr = np.asarray(bid)
        out = cls(
            index_set=S,
            values=np.asarray(vals),
            method=method,
            n_s=n_s,
            exact_part=np.asarray(exact),
            est_variance=np.asarray(var),
            ci_lo=np.asarray(lo),
            ci_hi=np.asarray(hi),
            block_id=None if (len(bid_arr) == 0 or np.all(bid_arr == -1)) else bid_arr,
            flags=None if all(f == "" for f in flags) else flags,
        )
        return out


def _permuted_pairs(L: CholFactor, S: IndexSet):
    inv = L.symbolic.perm.inv
    pi = inv[S.rows]
    pj = inv[S.cols]
    hi = np.maximum(pi, pj)
    lo = np.minimum(pi, pj)
    return hi, lo


def _extract(L: CholFactor, S: IndexSet, Sigma: np.ndarray) -> np.ndarray:
    hi, lo = _permuted_pairs(L, S)
    pos = np.empty(len(hi), np.int64)
    _kernels.pattern_positions(L.symbolic.l_colptr, L.symbolic.l_rowidx, hi, lo, pos)
    bad = np.nonzero(pos < 0)[0]
    if len(bad):
        t = bad[0]
        raise PatternError(int(S.rows[t]), int(S.cols[t]))
    return Sigma[pos]


def takahashi_selected_inverse(L: CholFactor, S: IndexSet) -> SelectedCov:
    """Exact Q^{-1} entries on S, which must lie inside the fill pattern.

    For pairs outside the pattern, redo the symbolic analysis with the pairs
    in the augmentation set (see selected_inverse) instead of calling this.
    """
    s = L.symbolic
    rowptr, rowcols, rowpos = s.row_structure
    Sigma = np.zeros(s.fill_count)
    _kernels.takahashi(
        L.n, s.l_colptr, s.l_rowidx, L.values, rowptr, rowcols, rowpos, Sigma, 0, 0
    )
    vals = _extract(L, S, Sigma)
    return SelectedCov(index_set=S, values=vals, method="takahashi")


def partial_takahashi(L: CholFactor, trailing: int, S: IndexSet) -> SelectedCov:
    """Recursion stopped after the last `trailing` permuted columns.

    S must lie entirely within those trailing positions; values equal the
    full recursion's on that range.
    """
    if not 0 <= trailing <= L.n:
        raise PreconditionError(f"trailing block size {trailing} out of range")
    s = L.symbolic
    hi, lo = _permuted_pairs(L, S)
    cutoff = L.n - trailing
    if len(lo) and lo.min() < cutoff:
        t = int(np.argmin(lo))
        raise PreconditionError(
            f"pair ({int(S.rows[t])}, {int(S.cols[t])}) lies outside the "
            f"trailing {trailing} positions"
        )
    rowptr, rowcols, rowpos = s.row_structure
    Sigma = np.zeros(s.fill_count)
    _kernels.takahashi(
        L.n, s.l_colptr, s.l_rowidx, L.values, rowptr, rowcols, rowpos, Sigma, cutoff, 0
    )
    vals = _extract(L, S, Sigma)
    return SelectedCov(index_set=S, values=vals, method="takahashi-partial")


def takahashi_with_known_frame(
    L: CholFactor, frame: int, Sigma_frame: np.ndarray, S: IndexSet
) -> SelectedCov:
    """Recursion with the trailing `frame` block of the covariance known.

    Sigma_frame is the dense (frame x frame) covariance of the trailing
    permuted positions.  If it is exact and the trailing nodes separate the
    leading ones from the rest of the full graph, the output matches the
    exact global covariance on S.
    """
    s = L.symbolic
    if Sigma_frame.shape != (frame, frame):
        raise PreconditionError("frame covariance has the wrong shape")
    if frame > L.n:
        raise PreconditionError("frame larger than the matrix")
    rowptr, rowcols, rowpos = s.row_structure
    Sigma = np.zeros(s.fill_count)
    off = L.n - frame
    for j in range(off, L.n):
        for p in range(s.l_colptr[j], s.l_colptr[j + 1]):
            Sigma[p] = Sigma_frame[s.l_rowidx[p] - off, j - off]
    _kernels.takahashi(
        L.n, s.l_colptr, s.l_rowidx, L.values, rowptr, rowcols, rowpos, Sigma, 0, frame
    )
    vals = _extract(L, S, Sigma)
    return SelectedCov(index_set=S, values=vals, method="takahashi-frame")


def selected_inverse(
    Q: SparseSymMatrix,
    S: IndexSet,
    perm=None,
) -> SelectedCov:
    """Order, analyze, factorize and run the recursion in one call.

    If S is not contained in the natural fill pattern, the symbolic analysis
    is repeated with S as a pattern augmentation, so any pair set is served
    exactly (at extra fill cost).
    """
    if perm is None:
        perm = amd_order(Q)
    symbolic = symbolic_cholesky(Q, perm)
    if not symbolic.contains_pairs(S):
        symbolic = symbolic_cholesky(Q, perm, augment=S)
    L = factorize(Q, symbolic)
    return takahashi_selected_inverse(L, S)
