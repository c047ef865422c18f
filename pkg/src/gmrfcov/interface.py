"""The iterative interface method: domain decomposition over lattice
cut planes, sampled starting values, fixed-point sweeps on frame
covariances, frame-conditioned recursion for the final values.

Geometry.  The lattice is tiled into cells (one block per cell).  Interface
nodes live on the cut planes between cells; the cut plane between cells k
and k+1 sits on the last coordinate of cell k, so each cell owns at most
one cut per axis.  A block's frame consists of the nearest cut planes it
does not own: the left neighbor's cut and the right neighbor's cut (or the
domain boundary, which needs no frame).  Everything strictly inside the
frame is shielded from the rest of the graph by frame nodes alone, since a
nearest-neighbor stencil cannot jump a full plane.  Each interface node is
owned (placed in the set Z) by the block that keeps it farthest from a
frame, lowest block index on ties, which realizes the rule that starting
values come from the block where a node sits deepest.

With fewer than three cells along every axis the first block has an empty
frame; it then degenerates gracefully to exact whole-domain computations.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from .cholesky import factorize
from .errors import CoverageError, PreconditionError
from .estimators import BlockPartition
from .ordering import camd_order, symbolic_cholesky
from .sampler import SampleMatrix
from .sparse import IndexSet, SparseSymMatrix
from .takahashi import SelectedCov, takahashi_with_known_frame


@dataclass(eq=False)
class InterfaceBlock:
    """Node sets of one decomposition block (all in global indices).

    W: interface nodes strictly inside the frame.  V: frame nodes.
    Z: interface nodes this block owns (subset of W).  IW: every node
    strictly inside the frame.  U = IW plus V.
    """

    cell: tuple[int, ...]
    cell_nodes: np.ndarray
    W: np.ndarray
    V: np.ndarray
    Z: np.ndarray
    IW: np.ndarray
    U: np.ndarray


@dataclass(eq=False)
class InterfaceDecomposition:
    dims: tuple[int, ...]
    K: int
    blocks_per_dim: tuple[int, ...]
    margin: int
    blocks: list[InterfaceBlock]
    interface_nodes: np.ndarray
    z_owner: np.ndarray  # block id per interface node position

    @property
    def n(self) -> int:
        return int(np.prod(self.dims)) * self.K

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def __post_init__(self):
        self._separation_ok: set[bytes] = set()

    def to_json(self) -> str:
        out = {
            "dims": list(self.dims),
            "K": self.K,
            "blocks_per_dim": list(self.blocks_per_dim),
            "margin": self.margin,
            "interface_nodes": self.interface_nodes.tolist(),
            "blocks": [
                {
                    "cell": list(b.cell),
                    "W": b.W.tolist(),
                    "V": b.V.tolist(),
                    "Z": b.Z.tolist(),
                    "IW": b.IW.tolist(),
                    "U": b.U.tolist(),
                }
                for b in self.blocks
            ],
        }
        return json.dumps(out, indent=1)


def _axis_cells(extent: int, parts: int) -> list[tuple[int, int]]:
    base, rem = divmod(extent, parts)
    spans = []
    lo = 0
    for k in range(parts):
        size = base + (1 if k < rem else 0)
        spans.append((lo, lo + size - 1))
        lo += size
    return spans


def _expand_k(nodes: np.ndarray, K: int) -> np.ndarray:
    if K == 1:
        return nodes
    return (nodes[:, None] * K + np.arange(K, dtype=np.int64)[None, :]).ravel()


def build_interface_decomposition(
    dims, blocks_per_dim, K: int = 1, margin: int = 2
) -> InterfaceDecomposition:
    """Decompose a lattice into one interface block per tiling cell.

    All K variables of a voxel travel together into every set.  Fails if any
    cell is narrower than 4 lattice steps (frames would starve the inner
    sets) or if the margin rule would leave an interface node without an
    owner.
    """
    dims = tuple(int(d) for d in dims)
    if isinstance(blocks_per_dim, int):
        bpd = (blocks_per_dim,) * len(dims)
    else:
        bpd = tuple(int(b) for b in blocks_per_dim)
    if len(bpd) != len(dims):
        raise PreconditionError("blocks_per_dim must match lattice rank")
    ncells = int(np.prod(bpd))
    spans = []
    cuts = []
    for d, b in zip(dims, bpd):
        if b < 1 or (b > 1 and d // b < 4):
            raise PreconditionError(
                f"subblocks along an extent-{d} axis with {b} parts are "
                "narrower than 4 lattice steps"
            )
        sp = _axis_cells(d, b)
        spans.append(sp)
        cuts.append([sp[k][1] for k in range(b - 1)])

    nvox = int(np.prod(dims))
    strides = [1] * len(dims)
    for a in range(len(dims) - 2, -1, -1):
        strides[a] = strides[a + 1] * dims[a + 1]

    coords = np.empty((nvox, len(dims)), np.int64)
    rem = np.arange(nvox, dtype=np.int64)
    for a in range(len(dims)):
        coords[:, a] = rem // strides[a]
        rem = rem % strides[a]

    on_cut = np.zeros(nvox, bool)
    for a in range(len(dims)):
        for c in cuts[a]:
            on_cut |= coords[:, a] == c
    interface_vox = np.nonzero(on_cut)[0]

    raw = []
    big = np.iinfo(np.int64).max
    best_dist = np.full(nvox, -1, np.int64)
    best_block = np.full(nvox, -1, np.int64)
    for bid, cell in enumerate(product(*(range(b) for b in bpd))):
        u_lo, u_hi, frame_coords = [], [], []
        for a in range(len(dims)):
            i = cell[a]
            # nearest cuts this cell does not own: the left neighbor's cut
            # and the right neighbor's cut (the cell's own cut is c[i])
            fl = cuts[a][i - 1] if i - 1 >= 0 else None
            fh = cuts[a][i + 1] if i + 1 <= bpd[a] - 2 else None
            u_lo.append(fl if fl is not None else 0)
            u_hi.append(fh if fh is not None else dims[a] - 1)
            frame_coords.append([c for c in (fl, fh) if c is not None])
        in_u = np.ones(nvox, bool)
        for a in range(len(dims)):
            in_u &= (coords[:, a] >= u_lo[a]) & (coords[:, a] <= u_hi[a])
        on_frame = np.zeros(nvox, bool)
        for a in range(len(dims)):
            for c in frame_coords[a]:
                on_frame |= coords[:, a] == c
        on_frame &= in_u
        in_iw = in_u & ~on_frame

        in_cell = np.ones(nvox, bool)
        for a in range(len(dims)):
            lo, hi = spans[a][cell[a]]
            in_cell &= (coords[:, a] >= lo) & (coords[:, a] <= hi)

        w_mask = in_iw & on_cut
        dist = np.full(nvox, big, np.int64)
        for a in range(len(dims)):
            for c in frame_coords[a]:
                dist = np.minimum(dist, np.abs(coords[:, a] - c))
        better = w_mask & (dist > best_dist)
        best_dist[better] = dist[better]
        best_block[better] = bid
        raw.append((cell, in_cell, w_mask, on_frame & in_u, in_iw, in_u))

    if np.any(best_dist[interface_vox] <= margin):
        raise PreconditionError(
            "margin rule leaves an interface node without an owner; "
            "use a smaller margin or wider subblocks"
        )
    if np.any(best_block[interface_vox] < 0):
        raise PreconditionError("an interface node has no owning block")

    blocks = []
    for bid, (cell, in_cell, w_mask, v_mask, in_iw, in_u) in enumerate(raw):
        z_mask = w_mask & (best_block == bid)
        blocks.append(
            InterfaceBlock(
                cell=cell,
                cell_nodes=_expand_k(np.nonzero(in_cell)[0], K),
                W=_expand_k(np.nonzero(w_mask)[0], K),
                V=_expand_k(np.nonzero(v_mask)[0], K),
                Z=_expand_k(np.nonzero(z_mask)[0], K),
                IW=_expand_k(np.nonzero(in_iw)[0], K),
                U=_expand_k(np.nonzero(in_u)[0], K),
            )
        )
    return InterfaceDecomposition(
        dims=dims,
        K=K,
        blocks_per_dim=bpd,
        margin=margin,
        blocks=blocks,
        interface_nodes=_expand_k(interface_vox, K),
        z_owner=best_block[interface_vox],
    )


def validate_separation(Q: SparseSymMatrix, dec: InterfaceDecomposition) -> None:
    """Every edge of Q leaving a block's inner region must land on its frame."""
    indptr, indices = Q.adjacency
    for bid, b in enumerate(dec.blocks):
        in_u = np.zeros(Q.n, bool)
        in_u[b.U] = True
        in_iw = np.zeros(Q.n, bool)
        in_iw[b.IW] = True
        for node in b.IW:
            nb = indices[indptr[node]:indptr[node + 1]]
            if np.any(~in_u[nb]):
                raise PreconditionError(
                    f"block {bid}: node {node} inside the frame has an edge "
                    "leaving the enclosure"
                )


def partition_from_decomposition(dec: InterfaceDecomposition) -> BlockPartition:
    """Matching block-RBMC partition: block = cell, enclosure = the nodes
    inside the block's frame."""
    return BlockPartition(
        n=dec.n,
        blocks=[b.cell_nodes for b in dec.blocks],
        enclosures=[b.IW for b in dec.blocks],
    )


class InterfaceState:
    """Symmetric sparse store of current covariance estimates over all pairs
    of interface nodes that share some block's inner set.  Pairs outside the
    store read as zero."""

    def __init__(self, n: int, pair_keys: np.ndarray):
        self.n = n
        self.keys = pair_keys  # sorted int64 keys i*n+j with i >= j
        self.values = np.zeros(len(pair_keys))
        self.iteration = 0
        self.peak_local_bytes = 0  # largest per-block footprint seen so far
        self._ops: list | None = None  # phase-1 operators, reused by phase 2

    def storage_bytes(self) -> int:
        return int(self.keys.nbytes + self.values.nbytes)

    @classmethod
    def for_decomposition(cls, dec: InterfaceDecomposition) -> "InterfaceState":
        n = dec.n
        keys = set()
        for b in dec.blocks:
            for nodes in (b.W, b.V):
                hi = np.maximum.outer(nodes, nodes).ravel()
                lo = np.minimum.outer(nodes, nodes).ravel()
                keys.update((hi * n + lo).tolist())
        return cls(n, np.array(sorted(keys), dtype=np.int64))

    def positions(self, nodes: np.ndarray) -> np.ndarray:
        """Index matrix into the store for nodes x nodes; -1 where absent."""
        hi = np.maximum.outer(nodes, nodes)
        lo = np.minimum.outer(nodes, nodes)
        k = hi.astype(np.int64) * self.n + lo
        if len(self.keys) == 0:
            return np.full(k.shape, -1, np.int64)
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, len(self.keys) - 1)
        return np.where(self.keys[pos] == k, pos, -1)

    def gather(self, nodes: np.ndarray) -> np.ndarray:
        """Dense current covariance over `nodes`; absent pairs are zero."""
        pos = self.positions(nodes)
        out = np.where(pos >= 0, self.values[np.maximum(pos, 0)], 0.0)
        return out

    def scatter(self, nodes: np.ndarray, M: np.ndarray, pos: np.ndarray | None = None):
        if pos is None:
            pos = self.positions(nodes)
        mask = pos >= 0
        self.values[pos[mask]] = M[mask]

    def symmetry_deviation(self) -> float:
        return 0.0  # stored canonically; kept for interface parity


@dataclass(eq=False)
class _BlockOps:
    """Per-block dense operators cached by phase 1 for reuse in phase 2."""

    w_nodes: np.ndarray  # W in trailing (permuted) order
    Linv_W: np.ndarray
    M_W: np.ndarray | None  # None when the frame is empty
    state_pos: np.ndarray  # store positions for w_nodes x w_nodes


def _phase1_block(Q: SparseSymMatrix, b: InterfaceBlock, X: SampleMatrix | None):
    """Factor the inner region with W last; return the trailing operators,
    (if samples given) the sampled starting covariance of W, and the block's
    storage footprint in bytes."""
    IW = b.IW
    loc = np.full(Q.n, -1, np.int64)
    loc[IW] = np.arange(len(IW), dtype=np.int64)
    Q_II = Q.submatrix(IW)
    w_local = np.sort(loc[b.W])
    perm = camd_order(Q_II, w_local)
    symbolic = symbolic_cholesky(Q_II, perm)
    L = factorize(Q_II, symbolic)
    w = len(b.W)
    nloc = len(IW)
    nbytes = 8 * symbolic.fill_count
    L_W = L.trailing_dense(w) if w else np.zeros((0, 0))
    Linv_W = (
        solve_triangular(L_W, np.eye(w), lower=True, check_finite=False)
        if w
        else L_W
    )
    nbytes += Linv_W.nbytes
    w_nodes = IW[perm.perm[nloc - w:]] if w else np.empty(0, np.int64)

    M_W = None
    if len(b.V) and w:
        B = Q.gather_cross_dense(IW, b.V)  # Q_{IW, V}
        Bp = np.ascontiguousarray(B[perm.perm])
        s = L.symbolic
        _kernels.solve_lower_multi(L.n, s.l_colptr, s.l_rowidx, L.values, Bp)
        M_W = Bp[nloc - w:]
        nbytes += M_W.nbytes

    start = None
    if X is not None and w:
        if M_W is not None:
            T = M_W @ X.columns[b.V]
            A = np.eye(w) + (T @ T.T) / X.n_s
        else:
            A = np.eye(w)
        start = Linv_W.T @ A @ Linv_W
    return w_nodes, Linv_W, M_W, start, nbytes


def interface_phase1_start(
    Q: SparseSymMatrix, X: SampleMatrix, dec: InterfaceDecomposition
) -> InterfaceState:
    """Sampled starting values for all interface covariances.

    Each block writes only the pairs anchored at the nodes it owns, so every
    node's starting variance comes from the block where it sits deepest
    inside the frame.
    """
    if X.n != dec.n:
        raise PreconditionError("sample dimension does not match decomposition")
    key = Q.pattern_key()
    if key not in dec._separation_ok:
        validate_separation(Q, dec)
        dec._separation_ok.add(key)
    state = InterfaceState.for_decomposition(dec)
    ops = []
    for b in dec.blocks:
        w_nodes, Linv_W, M_W, start, nbytes = _phase1_block(Q, b, X)
        state.peak_local_bytes = max(state.peak_local_bytes, nbytes)
        pos = state.positions(w_nodes) if len(w_nodes) else np.empty((0, 0), np.int64)
        ops.append(_BlockOps(w_nodes=w_nodes, Linv_W=Linv_W, M_W=M_W, state_pos=pos))
        if start is None:
            continue
        in_z = np.isin(w_nodes, b.Z)
        anchored = in_z[:, None] | in_z[None, :]
        state.scatter(w_nodes, start, pos=np.where(anchored, pos, -1))
    state._ops = ops
    return state


def _wavefront_colors(dec: InterfaceDecomposition) -> list[list[int]]:
    """Greedy grouping of blocks whose sweep updates cannot interact: two
    blocks conflict when one's update reads or writes state pairs the other
    writes."""
    touched = []
    writes = []
    for b in dec.blocks:
        writes.append(set(b.W.tolist()))
        touched.append(set(b.W.tolist()) | set(b.V.tolist()))
    colors: list[list[int]] = []
    color_touch: list[set] = []
    color_write: list[set] = []
    for k in range(dec.n_blocks):
        placed = False
        for c in range(len(colors)):
            if not (color_write[c] & touched[k]) and not (color_touch[c] & writes[k]):
                colors[c].append(k)
                color_touch[c] |= touched[k]
                color_write[c] |= writes[k]
                placed = True
                break
        if not placed:
            colors.append([k])
            color_touch.append(set(touched[k]))
            color_write.append(set(writes[k]))
    return colors


def interface_phase2_iterate(
    Q: SparseSymMatrix,
    dec: InterfaceDecomposition,
    state: InterfaceState,
    n_iter: int,
    wavefront: bool = False,
) -> InterfaceState:
    """Sweep the blocks n_iter times, each update replacing the inner-set
    covariances given the current frame covariances.

    Default order is the fixed block order, with updates seeing earlier
    updates of the same sweep; results are bit-deterministic.  With
    wavefront=True, blocks that share no state pairs are grouped and each
    group runs concurrently; the sweep schedule differs from serial order
    but is equally deterministic, since grouped updates cannot interact.
    """
    ops = state._ops
    if ops is None:
        ops = []
        for b in dec.blocks:
            w_nodes, Linv_W, M_W, _, nbytes = _phase1_block(Q, b, None)
            state.peak_local_bytes = max(state.peak_local_bytes, nbytes)
            ops.append(
                _BlockOps(
                    w_nodes=w_nodes,
                    Linv_W=Linv_W,
                    M_W=M_W,
                    state_pos=state.positions(w_nodes),
                )
            )
        state._ops = ops

    def update(k: int):
        op = ops[k]
        w = len(op.w_nodes)
        if w == 0:
            return
        if op.M_W is not None:
            S_VV = state.gather(dec.blocks[k].V)
            A = np.eye(w) + op.M_W @ S_VV @ op.M_W.T
        else:
            A = np.eye(w)
        S_WW = op.Linv_W.T @ A @ op.Linv_W
        state.scatter(op.w_nodes, S_WW, pos=op.state_pos)

    if wavefront:
        from concurrent.futures import ThreadPoolExecutor

        colors = _wavefront_colors(dec)
        with ThreadPoolExecutor() as pool:
            for _ in range(n_iter):
                for color in colors:
                    list(pool.map(update, color))
                state.iteration += 1
        return state

    for _ in range(n_iter):
        for k in range(dec.n_blocks):
            update(k)
        state.iteration += 1
    return state


def _assign_pairs(dec: InterfaceDecomposition, S: IndexSet) -> list[np.ndarray]:
    """One owning block per requested pair: the common cell when both nodes
    share one, else the lowest block whose inner region holds both."""
    cell_of = np.full(dec.n, -1, np.int64)
    for bid, b in enumerate(dec.blocks):
        cell_of[b.cell_nodes] = bid
    in_iw = np.zeros((dec.n_blocks, dec.n), bool)
    for bid, b in enumerate(dec.blocks):
        in_iw[bid, b.IW] = True
    assign = [[] for _ in range(dec.n_blocks)]
    for t in range(len(S)):
        i, j = int(S.rows[t]), int(S.cols[t])
        ci, cj = cell_of[i], cell_of[j]
        if ci == cj:
            assign[ci].append(t)
            continue
        for bid in range(dec.n_blocks):
            if in_iw[bid, i] and in_iw[bid, j]:
                assign[bid].append(t)
                break
        else:
            raise CoverageError(
                f"pair ({i}, {j}) is inside no single interface region; "
                "choose a coarser decomposition"
            )
    return [np.array(a, dtype=np.int64) for a in assign]


def interface_phase3_finalize(
    Q: SparseSymMatrix,
    dec: InterfaceDecomposition,
    state: InterfaceState,
    S: IndexSet,
) -> SelectedCov:
    """Final selected covariances: per block, factor the on-and-inside-frame
    region with the frame last and run the covariance recursion treating the
    frame block as known."""
    assign = _assign_pairs(dec, S)
    values = np.empty(len(S))
    block_id = np.empty(len(S), np.int64)
    for bid, (b, sel) in enumerate(zip(dec.blocks, assign)):
        if len(sel) == 0:
            continue
        U = b.U
        loc = np.full(Q.n, -1, np.int64)
        loc[U] = np.arange(len(U), dtype=np.int64)
        Q_UU = Q.submatrix(U)
        v_local = np.sort(loc[b.V])
        perm = camd_order(Q_UU, v_local)
        symbolic = symbolic_cholesky(Q_UU, perm)
        pairs_local = [(int(loc[S.rows[t]]), int(loc[S.cols[t]])) for t in sel]
        S_local = IndexSet.explicit(len(U), pairs_local)
        if not symbolic.contains_pairs(S_local):
            symbolic = symbolic_cholesky(Q_UU, perm, augment=S_local)
        L = factorize(Q_UU, symbolic)
        state.peak_local_bytes = max(state.peak_local_bytes, 2 * 8 * symbolic.fill_count)
        f = len(b.V)
        frame_nodes = U[perm.perm[len(U) - f:]] if f else np.empty(0, np.int64)
        Sigma_VV = state.gather(frame_nodes) if f else np.zeros((0, 0))
        cov = takahashi_with_known_frame(L, f, Sigma_VV, S_local)
        for t, (a, c) in zip(sel, pairs_local):
            values[t] = cov.get(a, c)
            block_id[t] = bid
    return SelectedCov(
        index_set=S, values=values, method="interface", block_id=block_id
    )


def run_interface_method(
    Q: SparseSymMatrix,
    X: SampleMatrix,
    dec: InterfaceDecomposition,
    n_iter: int,
    S: IndexSet,
) -> tuple[SelectedCov, dict]:
    """All three phases; returns the estimate and per-phase wall times plus
    the storage proxy: the state store plus the largest per-block footprint
    (local factor and recursion values, dense trailing operators)."""
    t0 = time.perf_counter()
    state = interface_phase1_start(Q, X, dec)
    t1 = time.perf_counter()
    interface_phase2_iterate(Q, dec, state, n_iter)
    t2 = time.perf_counter()
    cov = interface_phase3_finalize(Q, dec, state, S)
    t3 = time.perf_counter()
    cov.n_s = X.n_s
    meta = {
        "n_iter": n_iter,
        "phase1_s": t1 - t0,
        "phase2_s": t2 - t1,
        "phase3_s": t3 - t2,
        "peak_mem_proxy_bytes": state.storage_bytes() + state.peak_local_bytes,
    }
    return cov, meta
