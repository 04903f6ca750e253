# fofiv/graph.py
"""
Symmetric binary networks: Erdos-Renyi sampling, edge-list I/O, degree
statistics, the diagonal-removed square G2 = G^2 - diag(G^2), the
w_n = max{d_n, sqrt(Delta_n)} scaling and spectral quantities.

Edges are stored once, canonically (i < j), as a sorted (m, 2) integer
array; the CSR adjacency is derived lazily and cached.
"""
import math
import re
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from fofiv.config import DENSE_CAP
from fofiv.errors import CapacityError, EdgeListParseError, ParameterError, SelfLoopWarning

# --- 1. Core types ---


@dataclass(frozen=True, eq=False)
class Network:
    n: int
    edges: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n < 0:
            raise ParameterError(f"node count must be nonnegative, got {self.n}")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if (edges[:, 0] >= edges[:, 1]).any():
                raise ParameterError("edges must be canonical pairs (i, j) with i < j")
            if edges.min() < 0 or edges.max() >= self.n:
                raise ParameterError(f"edge endpoint outside [0, {self.n})")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[Tuple[int, int]]) -> "Network":
        """Canonicalize arbitrary pairs: orientation, duplicates and self-loops are dropped."""
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        arr = arr[arr[:, 0] != arr[:, 1]]
        arr = np.sort(arr, axis=1)
        if arr.size:
            arr = np.unique(arr, axis=0)
        return cls(n, arr)

    @classmethod
    def empty(cls, n: int) -> "Network":
        return cls(n, np.empty((0, 2), dtype=np.int64))

    @classmethod
    def complete(cls, n: int) -> "Network":
        i, j = np.triu_indices(n, k=1)
        return cls(n, np.column_stack([i, j]))

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.edges.ravel(), minlength=self.n).astype(np.int64)
        deg.setflags(write=False)
        return deg

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * self.num_edges)
        a = sp.coo_matrix((data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(self.n, self.n))
        return a.tocsr()

    def edge_set(self) -> set:
        return {(int(i), int(j)) for i, j in self.edges}

    @property
    def mean_degree(self) -> float:
        return 2.0 * self.num_edges / self.n if self.n else 0.0

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0


@dataclass(frozen=True, eq=False)
class SparseSymMatrix:
    """Symmetric sparse matrix with both orientations stored and no explicit zeros."""

    n: int
    matrix: sp.csr_matrix = field(repr=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix).astype(float)
        m.eliminate_zeros()
        if m.nnz and abs(m - m.T).max() > 1e-12:
            raise ParameterError("matrix is not symmetric")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_entries(cls, n: int, entries: Dict[Tuple[int, int], float]) -> "SparseSymMatrix":
        rows, cols, vals = [], [], []
        for (i, j), v in entries.items():
            rows.append(i)
            cols.append(j)
            vals.append(v)
            if i != j:
                rows.append(j)
                cols.append(i)
                vals.append(v)
        return cls(n, sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))

    def entries(self) -> Dict[Tuple[int, int], float]:
        """Canonical (i <= j) view of the stored entries."""
        upper = sp.triu(self.matrix).tocoo()
        return {(int(i), int(j)): float(v) for i, j, v in zip(upper.row, upper.col, upper.data)}

    def scaled(self, factor: float) -> "SparseSymMatrix":
        return SparseSymMatrix(self.n, self.matrix * factor)

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)


@dataclass(frozen=True, eq=False)
class NetworkOperator:
    """A network together with its scale weight: the operator G = A / w."""

    base: Network
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0 or not math.isfinite(self.scale):
            raise ParameterError(f"scale must be positive and finite, got {self.scale}")

    @classmethod
    def unscaled(cls, g: Network) -> "NetworkOperator":
        return cls(g, 1.0)

    @classmethod
    def scaled(cls, g: Network) -> "NetworkOperator":
        return cls(g, scale_weight(g))

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def is_scaled(self) -> bool:
        return self.scale != 1.0

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return (self.base.adjacency / self.scale).tocsr()

    @cached_property
    def square_offdiag(self) -> SparseSymMatrix:
        """G2 of the operator: entries of the base G2 divided by w^2."""
        return square_offdiag(self.base).scaled(1.0 / self.scale ** 2)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class DegreeSummary:
    min: float
    median: float
    mean: float
    mode: float
    max: float

    def as_row(self) -> Dict[str, float]:
        return {"min": self.min, "median": self.median, "mean": self.mean, "mode": self.mode, "max": self.max}


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal, aligned with eigenvalues

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


# --- 2. Generation and I/O ---


def _unrank_pairs(k: np.ndarray, n: int) -> np.ndarray:
    """Map row-major upper-triangle indices to canonical (i, j) pairs."""
    k = np.asarray(k, dtype=np.int64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(np.maximum(b * b - 8.0 * k, 0.0))) / 2).astype(np.int64)

    def row_start(r):
        return r * (2 * n - r - 1) // 2

    # float rounding can land one row off in either direction
    i = np.where(row_start(i) > k, i - 1, i)
    i = np.where(k >= row_start(i + 1), i + 1, i)
    j = k - row_start(i) + i + 1
    return np.column_stack([i, j])


def sample_er(n: int, p: float, rng: np.random.Generator) -> Network:
    """
    Draw G(n, p): every one of the n(n-1)/2 pairs is linked independently with probability p.

    The number of links is Binomial(N, p) and, given the count, the linked pairs
    are a uniform subset; this is the same law as N independent coin flips.
    """
    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"link probability must lie in [0, 1], got {p}")
    total = n * (n - 1) // 2
    m = int(rng.binomial(total, p)) if total else 0
    if m == 0:
        return Network.empty(n)
    chosen = np.sort(rng.choice(total, size=m, replace=False))
    return Network(n, _unrank_pairs(chosen, n))


_SPLIT = re.compile(r"[,\s]+")


def load_edge_list(path: Union[str, Path], indexing: str = "zero", n: Optional[int] = None) -> Network:
    """
    Read whitespace/comma separated integer pairs, one edge per line.

    Args:
        path: edge-list file; lines starting with '#' are comments
        indexing: "zero" or "one" based node ids
        n: node count override (defaults to 1 + largest id)
    """
    if indexing not in ("zero", "one"):
        raise ParameterError(f"indexing must be 'zero' or 'one', got {indexing!r}")
    offset = 1 if indexing == "one" else 0
    path = str(path)
    pairs: List[Tuple[int, int]] = []
    self_loops = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = [t for t in _SPLIT.split(line) if t]
            if len(tokens) != 2:
                raise EdgeListParseError(path, line_no, f"expected two node ids, got {len(tokens)} fields")
            try:
                i, j = (int(t) - offset for t in tokens)
            except ValueError:
                raise EdgeListParseError(path, line_no, f"non-integer node id in {line!r}") from None
            if i < 0 or j < 0:
                raise EdgeListParseError(path, line_no, f"negative node id in {line!r}")
            if i == j:
                self_loops += 1
                continue
            pairs.append((i, j))

    top = 1 + max((max(p) for p in pairs), default=-1)
    if n is None:
        n = top
    elif n < top:
        raise ParameterError(f"n = {n} is smaller than the largest node id + 1 = {top}")
    if self_loops:
        warnings.warn(SelfLoopWarning(f"{path}: dropped {self_loops} self-loop(s)"), stacklevel=2)
    return Network.from_pairs(n, pairs)


def emit_edge_list(g: Network, path: Union[str, Path]) -> None:
    """Write canonical 0-based "i j" lines sorted lexicographically."""
    with open(path, "w", encoding="utf-8") as f:
        for i, j in g.edges:
            f.write(f"{i} {j}\n")


# --- 3. Degree statistics ---


def summarize_values(values: np.ndarray) -> DegreeSummary:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ParameterError("degree summary of a network with n = 0 nodes")
    uniq, counts = np.unique(values, return_counts=True)
    # np.unique sorts, so argmax picks the smallest value among ties
    mode = float(uniq[np.argmax(counts)])
    return DegreeSummary(
        min=float(values.min()),
        median=float(np.median(values)),
        mean=float(values.mean()),
        mode=mode,
        max=float(values.max()),
    )


def degree_stats(g: Network) -> DegreeSummary:
    return summarize_values(g.degrees)


def support_degree_stats(m: SparseSymMatrix) -> Tuple[DegreeSummary, DegreeSummary]:
    """(0/1 support degrees, weighted row sums) of an off-diagonal matrix such as G2."""
    support = np.diff(m.matrix.indptr)
    weighted = np.asarray(m.matrix.sum(axis=1)).ravel()
    return summarize_values(support), summarize_values(weighted)


# --- 4. Powers, scaling, norms ---


def square_offdiag(g: Network) -> SparseSymMatrix:
    """G2 = G^2 - diag(G^2): entry (i, j) counts the common neighbours of i and j."""
    a = g.adjacency
    sq = (a @ a).tocsr()
    return SparseSymMatrix(g.n, sq - sp.diags(sq.diagonal()))


def scale_weight(g: Network) -> float:
    if g.num_edges == 0:
        return 1.0
    return max(g.mean_degree, math.sqrt(g.max_degree))


def frobenius_sq(m: Union[SparseSymMatrix, NetworkOperator]) -> float:
    """Sum of squared off-diagonal entries, both orientations counted."""
    if isinstance(m, NetworkOperator):
        return 2.0 * m.base.num_edges / m.scale ** 2
    mat = m.matrix.tocoo()
    off = mat.row != mat.col
    return float(np.sum(mat.data[off] ** 2))


# --- 5. Spectral quantities ---


def full_spectrum(op: NetworkOperator, dense_cap: int = DENSE_CAP) -> Spectrum:
    if op.n > dense_cap:
        raise CapacityError(f"n = {op.n} exceeds the dense eigensolver cap of {dense_cap}")
    if op.n == 0:
        return Spectrum(np.zeros(0), np.zeros((0, 0)))
    vals, vecs = scipy.linalg.eigh(op.dense())
    return Spectrum(vals[::-1].copy(), vecs[:, ::-1].copy())


def largest_eigenvalue(
    op: NetworkOperator,
    tol: float = 1e-10,
    max_iter: int = 20_000,
    dense_cap: int = DENSE_CAP,
) -> float:
    """
    Largest eigenvalue of the (scaled) adjacency by shifted power iteration.

    The shift of half the maximum degree keeps bipartite components (spectrum
    symmetric about 0) from oscillating. Falls back to a full eigensolve when
    the Rayleigh quotient stalls.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if op.n == 0 or op.base.num_edges == 0:
        return 0.0
    m = op.matrix
    shift = 0.5 * op.base.max_degree / op.scale
    x = np.ones(op.n) / math.sqrt(op.n)
    lam = float(x @ (m @ x))
    for _ in range(max_iter):
        y = m @ x + shift * x
        x = y / np.linalg.norm(y)
        lam_new = float(x @ (m @ x))
        if abs(lam_new - lam) < tol:
            return lam_new
        lam = lam_new
    if op.n <= dense_cap:
        return float(full_spectrum(op, dense_cap).eigenvalues[0])
    return float(scipy.sparse.linalg.eigsh(m, k=1, which="LA", return_eigenvectors=False)[0])


# --- 6. Path-distance neighbourhoods ---


def neighbors_at_distance(g: Network, i: int, s_max: int) -> List[List[int]]:
    """BFS shells: entry s lists the nodes at shortest-path distance exactly s from i."""
    if s_max < 0:
        raise ParameterError("s_max must be nonnegative")
    if not 0 <= i < g.n:
        raise ParameterError(f"node {i} outside [0, {g.n})")
    a = g.adjacency
    dist = {i: 0}
    shells: List[List[int]] = [[i]] + [[] for _ in range(s_max)]
    queue = deque([i])
    while queue:
        u = queue.popleft()
        if dist[u] == s_max:
            continue
        for v in a.indices[a.indptr[u]:a.indptr[u + 1]]:
            v = int(v)
            if v not in dist:
                dist[v] = dist[u] + 1
                shells[dist[v]].append(v)
                queue.append(v)
    return [sorted(s) for s in shells]


def distance_shell_matrices(g: Network, s_max: int) -> List[sp.csr_matrix]:
    """0/1 matrices D_s with (i, j) set iff the shortest-path distance is exactly s."""
    if s_max < 0:
        raise ParameterError("s_max must be nonnegative")
    a = g.adjacency
    reached = sp.identity(g.n, format="csr")
    frontier = reached
    shells = [reached.copy()]
    for _ in range(s_max):
        step = (frontier @ a).tocsr()
        step.data[:] = 1.0
        step = (step - step.multiply(reached)).tocsr()
        step.eliminate_zeros()
        shells.append(step)
        reached = (reached + step).tocsr()
        frontier = step
    return shells
