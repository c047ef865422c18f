"""Fill-reducing orderings and symbolic Cholesky analysis.

The ordering is a quotient-graph minimum-degree with element absorption and
approximate external degrees.  The constrained variant runs the same
elimination with constrained nodes forced into the final positions, which is
what the block methods need; ordering quality only affects speed.  Ties are
always broken toward the lowest original index, so results are fully
deterministic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import PreconditionError
from .sparse import IndexSet, SparseSymMatrix


@dataclass(eq=False)
class Permutation:
    """perm maps new index -> old index; inv is its inverse."""

    perm: np.ndarray
    inv: np.ndarray

    @classmethod
    def from_order(cls, perm) -> "Permutation":
        perm = np.asarray(perm, dtype=np.int64)
        n = len(perm)
        inv = np.empty(n, np.int64)
        seen = np.zeros(n, bool)
        for k, v in enumerate(perm):
            if not 0 <= v < n or seen[v]:
                raise PreconditionError("not a permutation")
            seen[v] = True
            inv[v] = k
        return cls(perm=perm, inv=inv)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        idx = np.arange(n, dtype=np.int64)
        return cls(perm=idx, inv=idx.copy())

    @property
    def n(self) -> int:
        return int(len(self.perm))


def _min_degree(n, indptr, indices, constrained) -> np.ndarray:
    """Core elimination loop shared by amd_order and camd_order.

    constrained is a bool array; constrained nodes are only eligible once
    every unconstrained node has been eliminated (phase is the primary heap
    key, so a single heap handles both phases).
    """
    A = [set(indices[indptr[v]:indptr[v + 1]].tolist()) for v in range(n)]
    E: list[set] = [set() for _ in range(n)]
    L: dict[int, set] = {}
    deg = np.array([len(a) for a in A], dtype=np.int64)
    phase = constrained.astype(np.int8)
    alive = np.ones(n, bool)
    heap = [(int(phase[v]), int(deg[v]), v) for v in range(n)]
    heapq.heapify(heap)
    perm = np.empty(n, np.int64)

    for step in range(n):
        while True:
            f, d, v = heapq.heappop(heap)
            if alive[v] and d == deg[v]:
                break
        alive[v] = False
        perm[step] = v

        Ev = E[v]
        Lp = set(A[v])
        for e in Ev:
            Lp |= L[e]
            del L[e]
        Lp.discard(v)
        Lp = {u for u in Lp if alive[u]}

        # pass 1: prune edges, absorb parent elements, count element overlap
        w: dict[int, int] = {}
        for u in Lp:
            A[u].discard(v)
            A[u] -= Lp
            if Ev:
                E[u] -= Ev
            for e in E[u]:
                w[e] = w.get(e, len(L[e])) - 1

        # pass 2: aggressive absorption and approximate external degrees
        L[v] = Lp
        cap = n - step - 1
        lenLp = len(Lp)
        for u in Lp:
            ext = 0
            dead = []
            for e in E[u]:
                we = w[e]
                if we == 0:
                    dead.append(e)  # element entirely inside the new one
                else:
                    ext += we
            for e in dead:
                for z in L[e]:
                    E[z].discard(e)
                del L[e]
            E[u].add(v)
            d = min(len(A[u]) + (lenLp - 1) + ext, cap)
            if d != deg[u]:
                deg[u] = d
                heapq.heappush(heap, (int(phase[u]), int(d), u))
    return perm


def amd_order(pattern: SparseSymMatrix) -> Permutation:
    """Approximate-minimum-degree ordering of a symmetric pattern."""
    indptr, indices = pattern.adjacency
    perm = _min_degree(pattern.n, indptr, indices, np.zeros(pattern.n, bool))
    return Permutation.from_order(perm)


def camd_order(pattern: SparseSymMatrix, constraint) -> Permutation:
    """Minimum-degree ordering with the given node subset forced last.

    With an empty constraint this is identical to amd_order, including
    tie-breaking.
    """
    constrained = np.zeros(pattern.n, bool)
    idx = np.asarray(list(constraint), dtype=np.int64)
    if len(idx):
        if idx.min() < 0 or idx.max() >= pattern.n:
            raise PreconditionError("constraint node out of range")
        constrained[idx] = True
    indptr, indices = pattern.adjacency
    perm = _min_degree(pattern.n, indptr, indices, constrained)
    return Permutation.from_order(perm)


@dataclass(eq=False)
class SymbolicFactor:
    """Permutation, elimination tree and fill pattern of the factor.

    (l_colptr, l_rowidx) store the pattern in permuted coordinates, lower
    CSC, diagonal entry first in every column, rows ascending.
    """

    perm: Permutation
    parent: np.ndarray
    l_colptr: np.ndarray
    l_rowidx: np.ndarray

    @property
    def n(self) -> int:
        return self.perm.n

    @property
    def fill_count(self) -> int:
        return int(len(self.l_rowidx))

    @cached_property
    def row_structure(self):
        """CSR transpose of the pattern plus a map into CSC positions."""
        return _kernels.transpose_pattern(self.n, self.l_colptr, self.l_rowidx)

    def pattern_position(self, i: int, j: int) -> int:
        """Position of permuted-coordinate entry (i, j), i >= j, or -1."""
        lo = self.l_colptr[j]
        hi = self.l_colptr[j + 1]
        p = lo + np.searchsorted(self.l_rowidx[lo:hi], i)
        if p < hi and self.l_rowidx[p] == i:
            return int(p)
        return -1

    def contains_pairs(self, S: IndexSet) -> bool:
        inv = self.perm.inv
        pi = inv[S.rows]
        pj = inv[S.cols]
        hi = np.maximum(pi, pj)
        lo = np.minimum(pi, pj)
        pos = np.empty(len(hi), np.int64)
        _kernels.pattern_positions(self.l_colptr, self.l_rowidx, hi, lo, pos)
        return bool(np.all(pos >= 0))


def symbolic_cholesky(
    pattern: SparseSymMatrix,
    perm: Permutation,
    augment: IndexSet | None = None,
) -> SymbolicFactor:
    """Exact fill pattern and elimination tree of the factor of P A P^T.

    No numeric cancellation is assumed: the pattern is purely structural.
    Extra pairs in `augment` are treated as structural nonzeros of A, which
    is how requests outside the natural fill pattern are accommodated.
    """
    if perm.n != pattern.n:
        raise PreconditionError("permutation size does not match pattern")
    n = pattern.n
    inv = perm.inv
    pi = inv[pattern.row_idx]
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.col_ptr))
    pj = inv[cols]
    if augment is not None and len(augment):
        ai = inv[augment.rows]
        aj = inv[augment.cols]
        pi = np.concatenate([pi, ai])
        pj = np.concatenate([pj, aj])
    hi = np.maximum(pi, pj)
    lo = np.minimum(pi, pj)
    off = hi != lo
    hi, lo = hi[off], lo[off]
    # strict upper CSC: column hi holds row lo
    keys = np.unique(hi * n + lo)
    up_cols = keys // n
    up_rows = keys % n
    up_colptr = np.zeros(n + 1, np.int64)
    np.add.at(up_colptr, up_cols + 1, 1)
    np.cumsum(up_colptr, out=up_colptr)
    parent = _kernels.etree(n, up_colptr, up_rows)
    Lp, Li = _kernels.symbolic_fill(n, up_colptr, up_rows, parent)
    return SymbolicFactor(perm=perm, parent=parent, l_colptr=Lp, l_rowidx=Li)
