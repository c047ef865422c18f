"""Generators for lattice-structured precision matrices.

Three model families: the stationary AR(1) chain, the first-order
random-walk posterior on a 1/2/3-d lattice (observation noise precisions
plus squared difference operator), and a K-variate lattice where every node
carries K coupled variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .sparse import SparseRectMatrix, SparseSymMatrix, build_rect, build_sym


@dataclass
class LatticeModel:
    """Descriptor of a generated model, as written to CLI manifests."""

    kind: str  # 'ar1' | 'rw1-posterior' | 'kvariate'
    dims: tuple[int, ...]
    K: int = 1
    phi: float | None = None
    lam: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(np.prod(self.dims)) * self.K

    def manifest(self) -> dict:
        out = {"kind": self.kind, "dims": list(self.dims), "K": self.K, "n": self.n}
        if self.phi is not None:
            out["phi"] = self.phi
        if self.lam is not None:
            out["lambda_mean"] = float(np.mean(self.lam))
        return out


def _strides(dims: Sequence[int]) -> list[int]:
    # row-major: last dimension has stride 1
    s = [1] * len(dims)
    for a in range(len(dims) - 2, -1, -1):
        s[a] = s[a + 1] * dims[a + 1]
    return s


def lattice_neighbors(dims: Sequence[int], node: int) -> list[int]:
    """Nearest lattice neighbors of a node (linear row-major index),
    clipped at the boundary."""
    dims = tuple(int(d) for d in dims)
    n = int(np.prod(dims))
    if not 0 <= node < n:
        raise PreconditionError(f"node {node} out of range for dims {dims}")
    strides = _strides(dims)
    coords = []
    rem = node
    for a in range(len(dims)):
        coords.append(rem // strides[a])
        rem %= strides[a]
    out = []
    for a in range(len(dims)):
        if coords[a] > 0:
            out.append(node - strides[a])
        if coords[a] < dims[a] - 1:
            out.append(node + strides[a])
    return sorted(out)


def lattice_edges(dims: Sequence[int]) -> list[tuple[int, int]]:
    """All adjacent node pairs (u < v) of the lattice, in a fixed order:
    axis by axis, nodes in row-major order."""
    dims = tuple(int(d) for d in dims)
    strides = _strides(dims)
    n = int(np.prod(dims))
    edges = []
    for a in range(len(dims)):
        step = strides[a]
        for u in range(n):
            # u has a +1 neighbor along axis a unless it sits on that face
            if (u // step) % dims[a] < dims[a] - 1:
                edges.append((u, u + step))
    return edges


def ar1_precision(N: int, phi: float) -> SparseSymMatrix:
    """Precision of a stationary AR(1) chain with unit innovation variance.

    Tridiagonal with -phi off the diagonal; interior diagonal 1 + phi^2 and
    exact stationary boundary entries 1, so every marginal variance is
    exactly (1 - phi^2)^{-1}.
    """
    if N < 2:
        raise PreconditionError("AR(1) chain needs N >= 2")
    if not abs(phi) < 1.0:
        raise PreconditionError(f"|phi| must be < 1, got {phi}")
    trip = []
    for i in range(N):
        d = 1.0 if i == 0 or i == N - 1 else 1.0 + phi * phi
        trip.append((i, i, d))
    for i in range(N - 1):
        trip.append((i + 1, i, -phi))
    return build_sym(N, trip)


def rw1_posterior_precision(
    dims: Sequence[int], lam: np.ndarray
) -> tuple[SparseSymMatrix, SparseRectMatrix, SparseRectMatrix]:
    """Posterior precision of independent Gaussian observations with a
    first-order random-walk prior on the lattice.

    Returns (Q, G, H) with Q assembled as G.T G + H.T H exactly: G holds one
    +1/-1 row per adjacent node pair and H = diag(sqrt(lam)), so the same
    rounding applies on both sides of the identity.
    """
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= 3 or any(d < 2 for d in dims):
        raise PreconditionError(f"dims must be 1-3 axes, each >= 2: {dims}")
    n = int(np.prod(dims))
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (n,):
        raise PreconditionError(f"lambda must have length {n}")
    if np.any(lam <= 0):
        raise PreconditionError("lambda entries must be positive")
    edges = lattice_edges(dims)
    s = np.sqrt(lam)
    trip = []
    for (u, v) in edges:
        trip.append((u, u, 1.0))
        trip.append((v, v, 1.0))
        trip.append((v, u, -1.0))
    for i in range(n):
        trip.append((i, i, s[i] * s[i]))
    Q = build_sym(n, trip)
    g_trip = []
    for r, (u, v) in enumerate(edges):
        g_trip.append((r, u, 1.0))
        g_trip.append((r, v, -1.0))
    G = build_rect(len(edges), n, g_trip)
    H = build_rect(n, n, [(i, i, s[i]) for i in range(n)])
    return Q, G, H


def kvariate_lattice_precision(
    dims: Sequence[int],
    K: int,
    coupling: np.ndarray,
    lam: np.ndarray,
) -> SparseSymMatrix:
    """Precision for K coupled variables per lattice node.

    Structure: kron(S, I_K) + kron(I_N, coupling) where S is the
    random-walk-posterior spatial precision.  Variables within a node and in
    adjacent nodes may be conditionally dependent; everything else is a
    structural zero.  Node v, variable k maps to index v*K + k.
    """
    dims = tuple(int(d) for d in dims)
    K = int(K)
    if K < 1:
        raise PreconditionError("K must be >= 1")
    coupling = np.asarray(coupling, dtype=np.float64)
    if coupling.shape != (K, K):
        raise PreconditionError(f"coupling must be {K}x{K}")
    if not np.allclose(coupling, coupling.T, rtol=0, atol=0):
        raise PreconditionError("coupling must be symmetric")
    try:
        np.linalg.cholesky(coupling)
    except np.linalg.LinAlgError:
        raise PreconditionError("coupling must be positive definite") from None
    S, _, _ = rw1_posterior_precision(dims, lam)
    n = S.n
    trip = []
    for (i, j, v) in S.triplets():
        for k in range(K):
            trip.append((i * K + k, j * K + k, v))
    for v_node in range(n):
        base = v_node * K
        for a in range(K):
            for b in range(a + 1):
                trip.append((base + a, base + b, coupling[a, b]))
    return build_sym(n * K, trip)


def random_lambda(n: int, seed: int, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Per-node noise precisions drawn uniformly on (low, high), reproducible
    via a counter-based generator."""
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    return low + (high - low) * gen.random(n)


def random_coupling(K: int, seed: int) -> np.ndarray:
    """A deterministic symmetric positive-definite K x K coupling block."""
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    B = gen.random((K, K)) - 0.5
    return B @ B.T + np.eye(K)
