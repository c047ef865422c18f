"""Sampling-based covariance estimators with analytic uncertainty.

The plain Monte Carlo estimator averages sample outer products.  The
Rao-Blackwellized variants split each variance into a part computed exactly
from a local precision block plus a sampled remainder, which strictly
reduces the error: conditioning on everything outside an enclosure, the
conditional covariance inside is exact and only the conditional mean is
estimated from samples.  Estimator values follow scaled Wishart laws, so
variances and confidence intervals come from closed forms with the estimate
plugged in for the unknown truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc

from . import _kernels
from .cholesky import factorize
from .errors import CoverageError, PreconditionError
from .ordering import camd_order, symbolic_cholesky
from .sampler import PcgConfig, SampleMatrix, pcg_solve
from .sparse import IndexSet, SparseSymMatrix, spmm
from .takahashi import SelectedCov, partial_takahashi


# ---------------------------------------------------------------------------
# chi-squared machinery and closed-form error laws


def chi2_quantile(p: float, dof: int) -> float:
    """Quantile of the chi-squared distribution by numeric inversion of the
    regularized lower incomplete gamma (to 1e-10)."""
    if not 0 < p < 1:
        raise PreconditionError(f"quantile probability must be in (0, 1), got {p}")
    k = dof / 2.0

    def f(x):
        return gammainc(k, x / 2.0) - p

    hi = dof + 20.0 * np.sqrt(2.0 * dof) + 20.0
    while f(hi) < 0:
        hi *= 2.0
    return float(brentq(f, 0.0, hi, xtol=1e-12, rtol=1e-12))


@dataclass
class EstimateWithCI:
    """A variance estimate split into its exact part and sampled remainder,
    with the estimator variance and a plug-in confidence interval."""

    value: float
    exact_part: float
    est_variance: float
    ci: tuple[float, float]
    n_s: int
    confidence: float = 0.95


def rbmc_uncertainty(
    value: float, exact_part: float, n_s: int, confidence: float = 0.95
) -> EstimateWithCI:
    """Plug-in uncertainty for a Rao-Blackwellized variance estimate.

    The sampled remainder is (1/n_s) times a chi-squared(n_s) variable scaled
    by the unknown (sigma^2 - exact_part); plugging in the estimate gives
    est_variance = (2/n_s)(value - exact_part)^2 and a quantile interval.
    """
    if n_s < 1:
        raise PreconditionError("n_s must be >= 1")
    if value < exact_part:
        raise PreconditionError("estimate below its exact part")
    spread = value - exact_part
    q_lo, q_hi = _chi2_pair(n_s, confidence)
    return EstimateWithCI(
        value=value,
        exact_part=exact_part,
        est_variance=(2.0 / n_s) * spread * spread,
        ci=(exact_part + spread * q_lo / n_s, exact_part + spread * q_hi / n_s),
        n_s=n_s,
        confidence=confidence,
    )


_chi2_cache: dict[tuple[int, float], tuple[float, float]] = {}


def _chi2_pair(n_s: int, confidence: float) -> tuple[float, float]:
    key = (n_s, confidence)
    if key not in _chi2_cache:
        _chi2_cache[key] = (
            chi2_quantile((1.0 - confidence) / 2.0, n_s),
            chi2_quantile((1.0 + confidence) / 2.0, n_s),
        )
    return _chi2_cache[key]


def mc_analytic_rmse(n_s: int) -> float:
    """Relative RMSE of the plain MC variance estimator."""
    return float(np.sqrt(2.0 / n_s))


def ar1_analytic_rmse(phi: float, M: int, n_s: int) -> float:
    """Relative RMSE of the centered-window RBMC variance estimator on the
    stationary AR(1) chain (interior nodes, window of M nodes)."""
    if not abs(phi) < 1:
        raise PreconditionError("|phi| must be < 1")
    if M < 1 or M % 2 == 0:
        raise PreconditionError("M must be odd and >= 1")
    a = phi ** (M + 1)
    return float(2.0 * a / (1.0 + a) * np.sqrt(2.0 / n_s))


# ---------------------------------------------------------------------------
# block partitions


@dataclass(eq=False)
class BlockPartition:
    """Disjoint blocks covering all nodes, each with an enclosure that
    contains it.  Estimates for a block's pairs are computed inside its
    enclosure only."""

    n: int
    blocks: list[np.ndarray]
    enclosures: list[np.ndarray]

    def __post_init__(self):
        seen = np.zeros(self.n, bool)
        for Y, I in zip(self.blocks, self.enclosures):
            if np.any(seen[Y]):
                raise PreconditionError("blocks overlap")
            seen[Y] = True
            if not np.all(np.isin(Y, I)):
                raise PreconditionError("block not contained in its enclosure")
        if not seen.all():
            raise PreconditionError("blocks do not cover all nodes")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def owner(self) -> np.ndarray:
        own = np.empty(self.n, np.int64)
        for k, Y in enumerate(self.blocks):
            own[Y] = k
        return own


def singleton_partition(n: int) -> BlockPartition:
    """One block and enclosure per node: reduces block RBMC to the simple
    per-node estimator."""
    idx = [np.array([i], dtype=np.int64) for i in range(n)]
    return BlockPartition(n=n, blocks=idx, enclosures=[a.copy() for a in idx])


def whole_domain_partition(n: int) -> BlockPartition:
    """A single block enclosing everything: block RBMC becomes exact."""
    allidx = np.arange(n, dtype=np.int64)
    return BlockPartition(n=n, blocks=[allidx], enclosures=[allidx.copy()])


def _axis_splits(extent: int, parts: int) -> list[tuple[int, int]]:
    if parts < 1 or parts > extent:
        raise PreconditionError(f"cannot split extent {extent} into {parts} parts")
    base, rem = divmod(extent, parts)
    spans = []
    lo = 0
    for k in range(parts):
        size = base + (1 if k < rem else 0)
        spans.append((lo, lo + size - 1))
        lo += size
    return spans


def _box_nodes(dims: Sequence[int], los, his, K: int = 1) -> np.ndarray:
    """Linear indices of a lattice box, all K variables per node, ascending."""
    axes = [np.arange(lo, hi + 1, dtype=np.int64) for lo, hi in zip(los, his)]
    grid = np.meshgrid(*axes, indexing="ij")
    idx = np.zeros_like(grid[0])
    stride = 1
    for a in range(len(dims) - 1, -1, -1):
        idx = idx + grid[a] * stride
        stride *= dims[a]
    nodes = np.sort(idx.ravel())
    if K == 1:
        return nodes
    return (nodes[:, None] * K + np.arange(K, dtype=np.int64)[None, :]).ravel()


def regular_tiling_partition(
    dims: Sequence[int], blocks_per_dim: int | Sequence[int], margin: int = 4, K: int = 1
) -> BlockPartition:
    """Axis-aligned tiling of the lattice into blocks, enclosures grown by
    `margin` lattice steps and clipped at the boundary."""
    dims = tuple(int(d) for d in dims)
    if isinstance(blocks_per_dim, int):
        bpd = (blocks_per_dim,) * len(dims)
    else:
        bpd = tuple(int(b) for b in blocks_per_dim)
    spans = [_axis_splits(d, b) for d, b in zip(dims, bpd)]
    n = int(np.prod(dims)) * K
    blocks, encls = [], []
    from itertools import product

    for cell in product(*(range(b) for b in bpd)):
        los = [spans[a][cell[a]][0] for a in range(len(dims))]
        his = [spans[a][cell[a]][1] for a in range(len(dims))]
        blocks.append(_box_nodes(dims, los, his, K))
        elos = [max(0, lo - margin) for lo in los]
        ehis = [min(dims[a] - 1, his[a] + margin) for a in range(len(dims))]
        encls.append(_box_nodes(dims, elos, ehis, K))
    return BlockPartition(n=n, blocks=blocks, enclosures=encls)


def ar1_window_partition(N: int, M: int) -> BlockPartition:
    """Per-node singleton blocks with centered windows of M nodes (clipped
    at the chain ends)."""
    if M < 1 or M % 2 == 0:
        raise PreconditionError("window size must be odd")
    m = (M - 1) // 2
    blocks = [np.array([i], dtype=np.int64) for i in range(N)]
    encls = [np.arange(max(0, i - m), min(N - 1, i + m) + 1, dtype=np.int64) for i in range(N)]
    return BlockPartition(n=N, blocks=blocks, enclosures=encls)


# ---------------------------------------------------------------------------
# plain Monte Carlo and the probe-based diagonal


def mc_estimate(X: SampleMatrix, S: IndexSet, confidence: float = 0.95) -> SelectedCov:
    """Average of sample outer products on S, with Wishart plug-in
    uncertainty (diagonal entries get chi-squared intervals)."""
    C = X.columns
    vals = np.einsum("ij,ij->i", C[S.rows], C[S.cols]) / X.n_s
    diag_of = {}
    for t in range(len(S)):
        if S.rows[t] == S.cols[t]:
            diag_of[int(S.rows[t])] = vals[t]
    var = np.empty(len(S))
    ci_lo = np.full(len(S), np.nan)
    ci_hi = np.full(len(S), np.nan)
    q_lo, q_hi = _chi2_pair(X.n_s, confidence)
    for t in range(len(S)):
        i, j = int(S.rows[t]), int(S.cols[t])
        vii = diag_of.get(i, np.nan)
        vjj = diag_of.get(j, np.nan)
        var[t] = (vals[t] ** 2 + vii * vjj) / X.n_s
        if i == j:
            ci_lo[t] = vals[t] * q_lo / X.n_s
            ci_hi[t] = vals[t] * q_hi / X.n_s
    return SelectedCov(
        index_set=S,
        values=vals,
        method="mc",
        n_s=X.n_s,
        confidence=confidence,
        exact_part=np.zeros(len(S)),
        est_variance=var,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
    )


def hutchinson_diagonal(
    Q: SparseSymMatrix, V_s: SampleMatrix, cfg: PcgConfig | None = None
) -> np.ndarray:
    """Probe-based diagonal estimate: elementwise ratio of accumulated
    v (.) Q^{-1}v to accumulated v (.) v.

    Unbiased; exact when the probes are the identity basis.  Entries can
    come out negative for random probes; they are returned as-is so callers
    can flag them.
    """
    cfg = cfg or PcgConfig()
    num = np.zeros(Q.n)
    den = np.zeros(Q.n)
    for j in range(V_s.n_s):
        v = V_s.columns[:, j]
        if not np.any(v):
            raise PreconditionError(f"probe column {j} is zero")
        z, _, _ = pcg_solve(Q, v, cfg)
        num += v * z
        den += v * v
    if np.any(den == 0):
        raise PreconditionError("a coordinate has zero accumulated probe mass")
    return num / den


# ---------------------------------------------------------------------------
# Rao-Blackwellized estimators


def _simple_rbmc_arrays(Q: SparseSymMatrix, X: SampleMatrix):
    """Vectorized per-node estimator: exact 1/Q_ii plus the mean squared
    scaled off-diagonal sample couplings."""
    d = Q.diagonal()
    if np.any(d <= 0):
        raise PreconditionError("diagonal must be positive")
    T = spmm(Q, X.columns) - d[:, None] * X.columns  # rows: Q_{i,-i} x_{-i}
    K = T / d[:, None]
    exact = 1.0 / d
    est = exact + np.mean(K * K, axis=1)
    return est, exact


def simple_rbmc_diagonal(
    Q: SparseSymMatrix, X: SampleMatrix, confidence: float = 0.95
) -> list[EstimateWithCI]:
    """Per-node Rao-Blackwellized variance estimates with uncertainty."""
    est, exact = _simple_rbmc_arrays(Q, X)
    return [
        rbmc_uncertainty(float(v), float(e), X.n_s, confidence)
        for v, e in zip(est, exact)
    ]


class BlockRbmcPlan:
    """Per-block preparation for block RBMC: constrained ordering, local
    factorization and the exact covariance part.  None of it depends on the
    samples, so a plan is reusable across sample sets."""

    def __init__(self, Q: SparseSymMatrix, partition: BlockPartition, S: IndexSet):
        if partition.n != Q.n:
            raise PreconditionError("partition size does not match the matrix")
        self.Q = Q
        self.partition = partition
        self.S = S
        self._assign_pairs()
        self._shape_cache: dict = {}
        self.peak_factor_bytes = 0
        self._prep = [self._prepare_block(k) for k in range(partition.n_blocks)]

    def _assign_pairs(self):
        owner = self.partition.owner
        S = self.S
        oi = owner[S.rows]
        oj = owner[S.cols]
        split = np.nonzero(oi != oj)[0]
        if len(split):
            t = split[0]
            raise CoverageError(
                f"pair ({int(S.rows[t])}, {int(S.cols[t])}) spans blocks "
                f"{int(oi[t])} and {int(oj[t])}; use overlapping blocks to "
                "cover cross-block pairs"
            )
        self.pair_block = oi

    def _prepare_block(self, k: int):
        part = self.partition
        Y = part.blocks[k]
        I = part.enclosures[k]
        sel = np.nonzero(self.pair_block == k)[0]
        if len(I) == 1:
            return ("singleton", int(I[0]), sel)
        loc = {int(g): t for t, g in enumerate(I)}
        Q_II = self.Q.submatrix(I)
        y_local = np.array(sorted(loc[int(g)] for g in Y), dtype=np.int64)
        pairs_local = [
            (loc[int(self.S.rows[t])], loc[int(self.S.cols[t])]) for t in sel
        ]
        key = (Q_II.pattern_key(), y_local.tobytes())
        if key in self._shape_cache:
            perm, symbolic_plain = self._shape_cache[key]
        else:
            perm = camd_order(Q_II, y_local)
            symbolic_plain = symbolic_cholesky(Q_II, perm)
            self._shape_cache[key] = (perm, symbolic_plain)
        symbolic = symbolic_plain
        if pairs_local:
            S_local = IndexSet.explicit(len(I), pairs_local)
            if not symbolic.contains_pairs(S_local):
                symbolic = symbolic_cholesky(Q_II, perm, augment=S_local)
        L = factorize(Q_II, symbolic)
        # factor values plus the recursion's covariance values
        self.peak_factor_bytes = max(self.peak_factor_bytes, 2 * 8 * symbolic.fill_count)
        # exact covariance part on the trailing block: recursion stops as
        # soon as the block-node columns are done
        need = IndexSet.explicit(len(I), pairs_local + [(t, t) for t in y_local.tolist()])
        exact_cov = partial_takahashi(L, len(Y), need)
        return ("block", Y, I, Q_II, L, sel, pairs_local, y_local, exact_cov)

    def run(self, X: SampleMatrix, confidence: float = 0.95) -> SelectedCov:
        if X.n != self.Q.n:
            raise PreconditionError("sample dimension mismatch")
        S = self.S
        m = len(S)
        vals = np.empty(m)
        exact = np.empty(m)
        var = np.empty(m)
        ci_lo = np.full(m, np.nan)
        ci_hi = np.full(m, np.nan)
        block_id = np.empty(m, np.int64)
        QX = None
        q_lo, q_hi = _chi2_pair(X.n_s, confidence)
        diag_q = self.Q.diagonal()
        for k, prep in enumerate(self._prep):
            if prep[0] == "singleton":
                _, i, sel = prep
                if len(sel) == 0:
                    continue
                if QX is None:
                    QX = spmm(self.Q, X.columns)
                q = diag_q[i]
                kap = (QX[i] - q * X.columns[i]) / q
                e = 1.0 / q
                v = e + np.mean(kap * kap)
                for t in sel:
                    vals[t] = v
                    exact[t] = e
                    spread = v - e
                    var[t] = 2.0 / X.n_s * spread * spread
                    ci_lo[t] = e + spread * q_lo / X.n_s
                    ci_hi[t] = e + spread * q_hi / X.n_s
                    block_id[t] = k
                continue
            _, Y, I, Q_II, L, sel, pairs_local, y_local, exact_cov = prep
            if QX is None:
                QX = spmm(self.Q, X.columns)
            XI = np.ascontiguousarray(X.columns[I])
            B = QX[I] - spmm(Q_II, XI)  # Q_{I,I^c} x_{I^c} per sample
            perm = L.symbolic.perm
            Bp = np.ascontiguousarray(B[perm.perm])
            s = L.symbolic
            _kernels.solve_lower_multi(L.n, s.l_colptr, s.l_rowidx, L.values, Bp)
            _kernels.solve_upper_multi(L.n, s.l_colptr, s.l_rowidx, L.values, Bp)
            # Bp rows are kappa in permuted-local order; block nodes trail
            inv = perm.inv
            kap_diag = {}

            def kappa_row(local):
                return Bp[inv[local]]

            for t, (a, b) in zip(sel, pairs_local):
                e = exact_cov.get(a, b)
                ka = kappa_row(a)
                kb = ka if a == b else kappa_row(b)
                v = e + float(np.mean(ka * kb))
                vals[t] = v
                exact[t] = e
                block_id[t] = k
                if a == b:
                    spread = v - e
                    var[t] = 2.0 / X.n_s * spread * spread
                    ci_lo[t] = e + spread * q_lo / X.n_s
                    ci_hi[t] = e + spread * q_hi / X.n_s
                else:
                    for c in (a, b):
                        if c not in kap_diag:
                            kc = kappa_row(c)
                            kap_diag[c] = exact_cov.get(c, c) + float(np.mean(kc * kc))
                    saa = kap_diag[a] - exact_cov.get(a, a)
                    sbb = kap_diag[b] - exact_cov.get(b, b)
                    sab = v - e
                    var[t] = (sab * sab + saa * sbb) / X.n_s
        return SelectedCov(
            index_set=S,
            values=vals,
            method="block-rbmc",
            n_s=X.n_s,
            confidence=confidence,
            exact_part=exact,
            est_variance=var,
            ci_lo=ci_lo,
            ci_hi=ci_hi,
            block_id=block_id,
        )


def block_rbmc(
    Q: SparseSymMatrix,
    X: SampleMatrix,
    partition: BlockPartition,
    S: IndexSet,
    confidence: float = 0.95,
) -> SelectedCov:
    """Block Rao-Blackwellized estimate of the covariance entries in S.

    Per block: constrained ordering with the block nodes last, local
    factorization, exact covariance part from the stopped recursion, then a
    pair of triangular solves per sample for the conditional-mean term.
    Every pair in S must fall inside a single block.
    """
    return BlockRbmcPlan(Q, partition, S).run(X, confidence)


# ---------------------------------------------------------------------------
# centered-window estimator on the AR(1) chain

_ar1_window_cache: dict = {}


def _ar1_window_coeffs(N: int, phi: float, M: int):
    """Per-node exact part and boundary-coupling weights for the centered
    window of M nodes on an N-chain with the exact stationary boundary."""
    m = (M - 1) // 2
    exact = np.empty(N)
    wl = np.zeros(N)  # weight of x_{left outside}
    wr = np.zeros(N)
    groups: dict = {}
    for i in range(N):
        lo = max(0, i - m)
        hi = min(N - 1, i + m)
        key = (lo == 0, hi == N - 1, hi - lo, i - lo)
        groups.setdefault(key, []).append(i)
    for (clip_l, clip_r, width, center), nodes in groups.items():
        w = width + 1
        T = np.zeros((w, w))
        for t in range(w):
            # window node t is a chain end iff the clip reaches the boundary
            at_left_end = clip_l and t == 0
            at_right_end = clip_r and t == w - 1
            T[t, t] = 1.0 if (at_left_end or at_right_end) else 1.0 + phi * phi
            if t + 1 < w:
                T[t, t + 1] = T[t + 1, t] = -phi
        Tinv = np.linalg.inv(T)
        for i in nodes:
            exact[i] = Tinv[center, center]
            if not clip_l:
                wl[i] = -phi * Tinv[center, 0]
            if not clip_r:
                wr[i] = -phi * Tinv[center, w - 1]
    return exact, wl, wr


def ar1_window_rbmc_diagonal(
    phi: float, X: SampleMatrix, M: int
) -> tuple[np.ndarray, np.ndarray]:
    """Centered-window RBMC marginal variances on the AR(1) chain.

    Equivalent to block_rbmc with per-node singleton blocks and M-node
    window enclosures, vectorized over nodes: the window precision inverse
    is shared by all interior nodes.  Returns (estimates, exact parts).
    """
    if M < 1 or M % 2 == 0:
        raise PreconditionError("window size must be odd")
    N = X.n
    m = (M - 1) // 2
    key = (N, float(phi), M)
    if key not in _ar1_window_cache:
        _ar1_window_cache[key] = _ar1_window_coeffs(N, phi, M)
    exact, wl, wr = _ar1_window_cache[key]
    C = X.columns
    left = np.zeros_like(C)
    right = np.zeros_like(C)
    left[m + 1:] = C[: N - m - 1]  # x_{i-m-1}
    right[: N - m - 1] = C[m + 1:]  # x_{i+m+1}
    kap = wl[:, None] * left + wr[:, None] * right
    est = exact + np.mean(kap * kap, axis=1)
    return est, exact.copy()


# ---------------------------------------------------------------------------
# weighted sums over selected covariances


def quadratic_form_variance(cov: SelectedCov, a: np.ndarray) -> float:
    """Var(a^T x) = sum_ij a_i a_j Sigma_ij; cov must hold every pair in the
    support of the outer product a a^T."""
    a = np.asarray(a, dtype=np.float64)
    support = np.nonzero(a)[0]
    total = 0.0
    for t, i in enumerate(support):
        total += a[i] * a[i] * cov.get(int(i), int(i))
        for j in support[t + 1:]:
            total += 2.0 * a[i] * a[j] * cov.get(int(i), int(j))
    return float(total)


def trace_product(cov: SelectedCov, R: SparseSymMatrix) -> float:
    """tr(R Sigma) = sum_ij R_ij Sigma_ij over the pattern of R."""
    total = 0.0
    for i, j, v in R.triplets():
        if i == j:
            total += v * cov.get(i, j)
        else:
            total += 2.0 * v * cov.get(i, j)
    return float(total)
