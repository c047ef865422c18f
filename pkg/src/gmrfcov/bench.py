"""Benchmark drivers: model generation, exact oracle, estimator runs,
replication comparison and the AR(1) error-law verification.

All functions work on in-memory values (matrix texts, CSV texts, dicts); the
service layer and CLI decide where bytes live.  Wall times exclude model
generation and I/O; sample generation is timed separately since it usually
dominates.
"""

from __future__ import annotations

import io
import csv as _csv
import time
from dataclasses import dataclass

import numpy as np

from . import mmio
from .cholesky import factorize
from .errors import MemoryBudgetError, PreconditionError
from .estimators import (
    BlockRbmcPlan,
    ar1_window_rbmc_diagonal,
    hutchinson_diagonal,
    mc_analytic_rmse,
    mc_estimate,
    regular_tiling_partition,
    ar1_analytic_rmse,
    _simple_rbmc_arrays,
    _chi2_pair,
)
from .interface import (
    build_interface_decomposition,
    run_interface_method,
)
from .models import (
    LatticeModel,
    ar1_precision,
    kvariate_lattice_precision,
    random_coupling,
    random_lambda,
    rw1_posterior_precision,
)
from .ordering import amd_order, symbolic_cholesky
from .sampler import (
    PcgConfig,
    identity_probes,
    rademacher_probes,
    sample_gmrf_chol,
    sample_gmrf_pcg,
)
from .sparse import IndexSet, SparseSymMatrix
from .takahashi import SelectedCov, takahashi_selected_inverse

DEFAULT_MEMORY_BUDGET = 2 * 1024**3


@dataclass
class GenResult:
    model: LatticeModel
    q_mm: str
    g_mm: str | None
    h_mm: str | None


def generate_model(
    kind: str,
    n: int | None = None,
    phi: float | None = None,
    dims=None,
    k: int = 1,
    lambda_seed: int = 0,
    coupling_seed: int = 0,
) -> GenResult:
    """Build one of the lattice models and render it as Matrix Market text."""
    if kind == "ar1":
        if n is None or phi is None:
            raise PreconditionError("ar1 needs n and phi")
        Q = ar1_precision(n, phi)
        model = LatticeModel(kind="ar1", dims=(n,), phi=phi)
        return GenResult(model=model, q_mm=mmio.write_sym(Q), g_mm=None, h_mm=None)
    if kind == "rw1":
        if dims is None:
            raise PreconditionError("rw1 needs dims")
        dims = tuple(int(d) for d in dims)
        lam = random_lambda(int(np.prod(dims)), lambda_seed)
        Q, G, H = rw1_posterior_precision(dims, lam)
        model = LatticeModel(kind="rw1-posterior", dims=dims, lam=lam)
        return GenResult(
            model=model,
            q_mm=mmio.write_sym(Q),
            g_mm=mmio.write_rect(G),
            h_mm=mmio.write_rect(H),
        )
    if kind == "kvar":
        if dims is None or k < 1:
            raise PreconditionError("kvar needs dims and k >= 1")
        dims = tuple(int(d) for d in dims)
        lam = random_lambda(int(np.prod(dims)), lambda_seed)
        C = random_coupling(k, coupling_seed)
        Q = kvariate_lattice_precision(dims, k, C, lam)
        model = LatticeModel(kind="kvariate", dims=dims, K=k, lam=lam)
        return GenResult(model=model, q_mm=mmio.write_sym(Q), g_mm=None, h_mm=None)
    raise PreconditionError(f"unknown model kind {kind!r}")


def _index_set(Q: SparseSymMatrix, spec, pairs=None) -> IndexSet:
    if spec == "diag":
        return IndexSet.diagonal(Q.n)
    if spec == "pattern":
        return IndexSet.from_pattern(Q).union(IndexSet.diagonal(Q.n))
    if spec == "pairs":
        return IndexSet.explicit(Q.n, pairs or [])
    raise PreconditionError(f"unknown index-set spec {spec!r}")


def oracle_covariance(
    Q: SparseSymMatrix,
    s_spec: str = "diag",
    pairs=None,
    memory_budget_bytes: int = DEFAULT_MEMORY_BUDGET,
) -> tuple[SelectedCov, dict]:
    """Exact selected inverse with a storage guard.

    The estimated factor footprint (factor values plus the recursion's
    covariance values plus its dense work vector, from the symbolic fill
    count) must fit the budget, otherwise the run is refused with the
    estimate in the error.
    """
    S = _index_set(Q, s_spec, pairs)
    t0 = time.perf_counter()
    perm = amd_order(Q)
    symbolic = symbolic_cholesky(Q, perm)
    if not symbolic.contains_pairs(S):
        symbolic = symbolic_cholesky(Q, perm, augment=S)
    proxy = oracle_memory_proxy(symbolic.fill_count, Q.n)
    if proxy > memory_budget_bytes:
        raise MemoryBudgetError(proxy, memory_budget_bytes)
    L = factorize(Q, symbolic)
    cov = takahashi_selected_inverse(L, S)
    wall = time.perf_counter() - t0
    stats = {
        "fill_count": symbolic.fill_count,
        "peak_mem_proxy_bytes": proxy,
        "wall_time_s": wall,
        "method": "takahashi",
        "n": Q.n,
    }
    return cov, stats


def oracle_memory_proxy(fill_count: int, n: int) -> int:
    """Factor values + recursion values + dense work vector, in bytes."""
    return int(8 * fill_count * 2 + 8 * n)


ESTIMATORS = ("mc", "hutchinson", "simple-rbmc", "block-rbmc", "interface")


def estimate_covariance(
    Q: SparseSymMatrix,
    estimator: str,
    n_s: int,
    seed: int,
    G=None,
    H=None,
    dims=None,
    K: int = 1,
    s_spec: str = "diag",
    pairs=None,
    sampler: str = "auto",
    delta: float = 1e-9,
    max_iter: int | None = None,
    preconditioner: str = "jacobi",
    blocks_per_dim: int = 4,
    margin: int = 4,
    n_iter: int = 1,
    probe: str = "rademacher",
    confidence: float = 0.95,
) -> tuple[SelectedCov, dict]:
    """Run one estimator; returns the estimate and a timing/metadata sidecar."""
    if estimator not in ESTIMATORS:
        raise PreconditionError(f"unknown estimator {estimator!r}")
    cfg = PcgConfig(delta=delta, max_iter=max_iter, preconditioner=preconditioner)
    S = _index_set(Q, s_spec, pairs)
    sidecar = {
        "method": estimator,
        "n_s": n_s,
        "seed": seed,
        "params": {
            "delta": delta,
            "preconditioner": preconditioner,
            "blocks_per_dim": blocks_per_dim,
            "margin": margin,
            "n_iter": n_iter,
            "sampler": sampler,
            "probe": probe,
            "s_spec": s_spec,
        },
    }

    t0 = time.perf_counter()
    L = None
    if estimator == "hutchinson":
        if probe == "identity":
            X = identity_probes(Q.n)
        elif probe == "rademacher":
            X = rademacher_probes(Q.n, n_s, seed)
        else:
            raise PreconditionError(f"unknown probe kind {probe!r}")
    else:
        use_pcg = sampler == "pcg" or (sampler == "auto" and G is not None and H is not None)
        if use_pcg:
            if G is None or H is None:
                raise PreconditionError("pcg sampling needs G and H")
            X = sample_gmrf_pcg(G, H, Q, n_s, seed, cfg)
        else:
            perm = amd_order(Q)
            L = factorize(Q, symbolic_cholesky(Q, perm))
            X = sample_gmrf_chol(L, n_s, seed)
    t_sample = time.perf_counter() - t0

    t0 = time.perf_counter()
    mem = 8 * Q.n * X.n_s
    if estimator == "mc":
        cov = mc_estimate(X, S, confidence)
    elif estimator == "hutchinson":
        diag = hutchinson_diagonal(Q, X, cfg)
        if s_spec != "diag":
            raise PreconditionError("the probe estimator only serves the diagonal")
        flags = ["negative" if v < 0 else "" for v in diag]
        cov = SelectedCov(
            index_set=S, values=diag, method="hutchinson", n_s=X.n_s, flags=flags
        )
    elif estimator == "simple-rbmc":
        if s_spec != "diag":
            raise PreconditionError("the simple estimator only serves the diagonal")
        est, exact = _simple_rbmc_arrays(Q, X)
        spread = est - exact
        q_lo, q_hi = _chi2_pair(X.n_s, confidence)
        cov = SelectedCov(
            index_set=S,
            values=est,
            method="simple-rbmc",
            n_s=X.n_s,
            confidence=confidence,
            exact_part=exact,
            est_variance=2.0 / X.n_s * spread**2,
            ci_lo=exact + spread * q_lo / X.n_s,
            ci_hi=exact + spread * q_hi / X.n_s,
        )
        mem += 8 * Q.n * X.n_s  # the product block Q X
    elif estimator == "block-rbmc":
        if dims is None:
            raise PreconditionError("block-rbmc needs lattice dims")
        part = regular_tiling_partition(dims, blocks_per_dim, margin=margin, K=K)
        plan = BlockRbmcPlan(Q, part, S)
        cov = plan.run(X, confidence)
        mem += 8 * Q.n * X.n_s + plan.peak_factor_bytes
        sidecar["params"]["n_blocks"] = part.n_blocks
    else:  # interface
        if dims is None:
            raise PreconditionError("the interface method needs lattice dims")
        dec = build_interface_decomposition(dims, blocks_per_dim, K=K, margin=margin)
        cov, meta = run_interface_method(Q, X, dec, n_iter, S)
        mem += meta["peak_mem_proxy_bytes"]
        sidecar["phase_times_s"] = {
            k: meta[k] for k in ("phase1_s", "phase2_s", "phase3_s")
        }
        sidecar["params"]["n_blocks"] = dec.n_blocks
    t_est = time.perf_counter() - t0

    sidecar["sample_time_s"] = t_sample
    sidecar["estimate_time_s"] = t_est
    sidecar["peak_mem_proxy_bytes"] = int(mem)
    return cov, sidecar


@dataclass
class ResultRow:
    """Per-replication comparison metrics for one estimator configuration."""

    label: str
    n_s: int
    n_blocks: int | None
    seed: int
    wall_time_s: float
    peak_mem_proxy_bytes: int
    max_rel_error: float
    rel_rmse: float
    ci_noncoverage: float | None


def _label(sidecar: dict) -> str:
    method = sidecar["method"]
    p = sidecar.get("params", {})
    bits = [method, f"n_s={sidecar['n_s']}"]
    if method in ("block-rbmc", "interface"):
        bits.append(f"bpd={p.get('blocks_per_dim')}")
    if method == "interface":
        bits.append(f"n_iter={p.get('n_iter')}")
    return " ".join(bits)


def compare_runs(
    oracle: SelectedCov, runs: list[tuple[SelectedCov, dict]]
) -> tuple[list[ResultRow], str, str]:
    """Per-run errors against the oracle plus a per-configuration summary.

    Every run must cover the oracle's index set.  Returns (rows, CSV text,
    human-readable table).
    """
    rows = []
    okeys = {(int(i), int(j)): t for t, (i, j) in enumerate(oracle.index_set.pairs())}
    for cov, sidecar in runs:
        pos = []
        for i, j in cov.index_set.pairs():
            key = (int(i), int(j))
            if key not in okeys:
                raise PreconditionError(f"pair {key} missing from the oracle set")
            pos.append(okeys[key])
        truth = oracle.values[np.asarray(pos)]
        if len(truth) != len(okeys):
            raise PreconditionError("estimate does not cover the oracle index set")
        r = (cov.values - truth) / truth
        noncov = None
        if cov.ci_lo is not None:
            on_diag = cov.index_set.rows == cov.index_set.cols
            have = on_diag & ~np.isnan(cov.ci_lo)
            if have.any():
                out = (truth[have] < cov.ci_lo[have]) | (truth[have] > cov.ci_hi[have])
                noncov = float(np.mean(out))
        rows.append(
            ResultRow(
                label=_label(sidecar),
                n_s=sidecar["n_s"],
                n_blocks=sidecar.get("params", {}).get("n_blocks"),
                seed=sidecar["seed"],
                wall_time_s=float(
                    sidecar.get("sample_time_s", 0.0) + sidecar.get("estimate_time_s", 0.0)
                ),
                peak_mem_proxy_bytes=int(sidecar.get("peak_mem_proxy_bytes", 0)),
                max_rel_error=float(np.abs(r).max()),
                rel_rmse=float(np.sqrt(np.mean(r * r))),
                ci_noncoverage=noncov,
            )
        )
    rows.sort(key=lambda r: (r.label, r.seed))

    buf = io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(
        [
            "label", "n_s", "n_blocks", "seed", "wall_time_s",
            "peak_mem_proxy_bytes", "max_rel_error", "rel_rmse", "ci_noncoverage",
        ]
    )
    for r in rows:
        w.writerow(
            [
                r.label, r.n_s, "" if r.n_blocks is None else r.n_blocks, r.seed,
                repr(r.wall_time_s), r.peak_mem_proxy_bytes,
                repr(r.max_rel_error), repr(r.rel_rmse),
                "" if r.ci_noncoverage is None else repr(r.ci_noncoverage),
            ]
        )

    groups: dict[str, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault(r.label, []).append(r)
    lines = [
        f"{'estimator':<34} {'R':>3} {'time[s]':>14} {'max rel err':>22} "
        f"{'rel RMSE':>22} {'CI miss':>16}"
    ]

    def ms(vals):
        vals = [v for v in vals if v is not None]
        if not vals:
            return ""
        m = float(np.mean(vals))
        s = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return f"{m:.4g} ± {s:.2g}"

    for label in sorted(groups):
        g = groups[label]
        lines.append(
            f"{label:<34} {len(g):>3} {ms([r.wall_time_s for r in g]):>14} "
            f"{ms([r.max_rel_error for r in g]):>22} {ms([r.rel_rmse for r in g]):>22} "
            f"{ms([r.ci_noncoverage for r in g]):>16}"
        )
    return rows, buf.getvalue(), "\n".join(lines)


@dataclass
class EstimatorConfig:
    """One estimator entry of an experiment: id plus keyword parameters
    passed through to estimate_covariance."""

    estimator: str
    n_s: int
    params: dict | None = None


@dataclass
class ExperimentSpec:
    """A full replicated experiment: model descriptor, estimator list,
    replication count and base seed.

    Replication r of every estimator uses seed base_seed + r, so estimators
    are compared on identical sample draws per replication.
    """

    model: dict
    estimators: list[EstimatorConfig]
    replications: int = 1
    base_seed: int = 0
    s_spec: str = "diag"
    memory_budget_bytes: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        if self.replications < 1:
            raise PreconditionError("need at least one replication")
        for cfg in self.estimators:
            if cfg.estimator not in ESTIMATORS:
                raise PreconditionError(f"unknown estimator {cfg.estimator!r}")


def run_experiment(spec: ExperimentSpec):
    """Generate the model, compute the exact oracle, run every estimator
    over all replications and aggregate; returns (rows, CSV text, table)."""
    gen = generate_model(**spec.model)
    Q = mmio.read_sym(gen.q_mm)
    G = mmio.read_rect(gen.g_mm) if gen.g_mm else None
    H = mmio.read_rect(gen.h_mm) if gen.h_mm else None
    oracle, _ = oracle_covariance(
        Q, s_spec=spec.s_spec, memory_budget_bytes=spec.memory_budget_bytes
    )
    dims = gen.model.dims
    runs = []
    for cfg in spec.estimators:
        for rep in range(spec.replications):
            runs.append(
                estimate_covariance(
                    Q,
                    cfg.estimator,
                    cfg.n_s,
                    seed=spec.base_seed + rep,
                    G=G,
                    H=H,
                    dims=dims,
                    K=gen.model.K,
                    s_spec=spec.s_spec,
                    **(cfg.params or {}),
                )
            )
    return compare_runs(oracle, runs)


def ar1_verify(
    phis=(0.1, 0.3, 0.5, 0.7, 0.9),
    Ms=(1, 3, 11),
    n_s: int = 50,
    reps: int = 200,
    N: int = 2000,
    seed: int = 0,
    tolerance: float = 0.15,
    mc_tolerance: float = 0.10,
) -> tuple[list[dict], str, bool]:
    """Empirical vs closed-form relative RMSE of the windowed estimator and
    plain MC over a grid of AR parameters and window sizes.

    Interior nodes only (windows and their outside neighbors unclipped).
    Returns (rows, CSV text, all-passed).
    """
    phis = [float(p) for p in phis]
    Ms = [int(M) for M in Ms]
    for M in Ms:
        if M < 1 or M % 2 == 0:
            raise PreconditionError("window sizes must be odd")
    if any(not 0 < p < 1 for p in phis):
        raise PreconditionError("phi grid must lie in (0, 1)")
    m_max = (max(Ms) - 1) // 2
    interior = np.arange(m_max + 1, N - 1 - m_max)
    rows = []
    passed = True
    for phi in phis:
        Q = ar1_precision(N, phi)
        perm = amd_order(Q)
        L = factorize(Q, symbolic_cholesky(Q, perm))
        truth = 1.0 / (1.0 - phi * phi)
        sq_mc = 0.0
        sq_rb = {M: 0.0 for M in Ms}
        count = 0
        for rep in range(reps):
            X = sample_gmrf_chol(L, n_s, seed=seed + 1000003 * rep)
            count += len(interior)
            r_mc = np.mean(X.columns[interior] ** 2, axis=1) / truth - 1.0
            sq_mc += float(np.sum(r_mc * r_mc))
            for M in Ms:
                est, _ = ar1_window_rbmc_diagonal(phi, X, M)
                r = est[interior] / truth - 1.0
                sq_rb[M] += float(np.sum(r * r))
        emp_mc = float(np.sqrt(sq_mc / count))
        ana_mc = mc_analytic_rmse(n_s)
        ok = abs(emp_mc / ana_mc - 1.0) <= mc_tolerance
        passed &= ok
        rows.append(
            {
                "phi": phi, "M": 0, "estimator": "mc",
                "analytic_rmse": ana_mc, "empirical_rmse": emp_mc,
                "tolerance": mc_tolerance, "passed": ok,
            }
        )
        for M in Ms:
            emp = float(np.sqrt(sq_rb[M] / count))
            ana = ar1_analytic_rmse(phi, M, n_s)
            ok = abs(emp / ana - 1.0) <= tolerance
            passed &= ok
            rows.append(
                {
                    "phi": phi, "M": M, "estimator": "window-rbmc",
                    "analytic_rmse": ana, "empirical_rmse": emp,
                    "tolerance": tolerance, "passed": ok,
                }
            )
    buf = io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(["phi", "M", "estimator", "analytic_rmse", "empirical_rmse", "tolerance", "passed"])
    for r in rows:
        w.writerow(
            [
                repr(r["phi"]), r["M"], r["estimator"], repr(r["analytic_rmse"]),
                repr(r["empirical_rmse"]), repr(r["tolerance"]), r["passed"],
            ]
        )
    return rows, buf.getvalue(), passed
