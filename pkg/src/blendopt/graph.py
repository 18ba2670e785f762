"""Undirected communication graphs: generation, Laplacians and spectra."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

MAX_RESAMPLES = 1000


class GraphError(ValueError):
    pass


def ones_complement_basis(n: int) -> np.ndarray:
    """Orthonormal basis R (n x n-1) of the complement of the all-ones vector.

    Built from the Householder reflector that maps e_1 onto 1/sqrt(n), so the
    result is deterministic.  The remaining columns of the reflector are
    orthonormal and orthogonal to 1.
    """
    if n == 1:
        return np.zeros((1, 0))
    u = np.full(n, 1.0 / np.sqrt(n))
    v = u.copy()
    v[0] -= 1.0
    H = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


@dataclass(frozen=True)
class Graph:
    """Unweighted undirected graph on nodes 0..n_nodes-1.

    Edges are stored as sorted pairs (i, j) with i < j.  Construction fails if
    the graph is not connected.
    """

    n_nodes: int
    edges: frozenset
    laplacian: np.ndarray = field(init=False, repr=False, compare=False)
    r_basis: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise GraphError(f"n_nodes must be positive, got {self.n_nodes}")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"self loop at node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise GraphError(f"edge ({i}, {j}) out of range for {self.n_nodes} nodes")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

        # integer arithmetic first so rows sum to exactly zero
        lap = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int64)
        for i, j in norm:
            lap[i, j] = lap[j, i] = -1
            lap[i, i] += 1
            lap[j, j] += 1
        object.__setattr__(self, "laplacian", lap.astype(float))
        if not self.is_connected():
            raise GraphError(f"graph with {self.n_nodes} nodes and {len(norm)} edges is not connected")
        object.__setattr__(self, "r_basis", ones_complement_basis(self.n_nodes))

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n_nodes == other.n_nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.n_nodes, self.edges))

    def is_connected(self) -> bool:
        if self.n_nodes == 1:
            return True
        adj = csr_matrix((self.laplacian < 0).astype(np.int8))
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == 1

    def neighbors(self, i: int) -> list[int]:
        return sorted({b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i})

    def degrees(self) -> np.ndarray:
        return np.diag(self.laplacian).copy()

    def remove_node(self, k: int) -> "Graph":
        """Drop node k and relabel the nodes above it down by one."""
        if not 0 <= k < self.n_nodes:
            raise GraphError(f"node {k} not in graph")
        relabel = lambda a: a if a < k else a - 1
        edges = {(relabel(i), relabel(j)) for i, j in self.edges if k not in (i, j)}
        return Graph(self.n_nodes - 1, frozenset(edges))

    def insert_node(self, neighbors, position: int | None = None) -> "Graph":
        """Insert a node at ``position`` (default: last) connected to ``neighbors``.

        ``neighbors`` are labels in the current graph.
        """
        pos = self.n_nodes if position is None else position
        if not 0 <= pos <= self.n_nodes:
            raise GraphError(f"insert position {pos} out of range")
        relabel = lambda a: a if a < pos else a + 1
        edges = {(relabel(i), relabel(j)) for i, j in self.edges}
        edges |= {(relabel(int(j)), pos) for j in neighbors}
        return Graph(self.n_nodes + 1, frozenset(edges))

    # -- edge-list text format: "N" then "i j" pairs, 1-indexed
    def to_edgelist(self) -> str:
        lines = [str(self.n_nodes)]
        lines += [f"{i + 1} {j + 1}" for i, j in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> "Graph":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or len(rows[0]) != 1:
            raise GraphError("edge list must start with a line holding the node count")
        n = int(rows[0][0])
        edges = set()
        for r in rows[1:]:
            if len(r) != 2:
                raise GraphError(f"bad edge line: {' '.join(r)!r}")
            edges.add((int(r[0]) - 1, int(r[1]) - 1))
        return cls(n, frozenset(edges))

    def save(self, path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def load(cls, path) -> "Graph":
        return cls.from_edgelist(Path(path).read_text())


def complete_graph(n: int) -> Graph:
    return Graph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def path_graph(n: int) -> Graph:
    return Graph(n, frozenset((i, i + 1) for i in range(n - 1)))


def _sample_edges(n: int, p: float, rng: np.random.Generator) -> frozenset:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return frozenset(zip(iu[keep].tolist(), ju[keep].tolist()))


def erdos_renyi(n_nodes: int, edge_prob: float, seed: int) -> Graph:
    """Connected G(n, p) sample.

    Disconnected draws are rejected and redrawn from the same seeded stream,
    up to MAX_RESAMPLES attempts, so the result is a deterministic function of
    (n_nodes, edge_prob, seed) and distinct seeds give independent graphs.
    """
    if n_nodes < 2:
        raise GraphError(f"erdos_renyi needs n_nodes >= 2, got {n_nodes}")
    if not 0.0 < edge_prob <= 1.0:
        raise GraphError(f"edge_prob must lie in (0, 1], got {edge_prob}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RESAMPLES):
        edges = _sample_edges(n_nodes, edge_prob, rng)
        try:
            return Graph(n_nodes, edges)
        except GraphError:
            continue
    raise GraphError(
        f"no connected Erdos-Renyi sample with n_nodes={n_nodes}, edge_prob={edge_prob} "
        f"after {MAX_RESAMPLES} attempts"
    )


def laplacian_spectrum(g: Graph) -> np.ndarray:
    """Laplacian eigenvalues in ascending order."""
    return np.linalg.eigvalsh(g.laplacian)


def reduced_laplacian(g: Graph) -> np.ndarray:
    """R^T L R, the Laplacian restricted to the disagreement subspace."""
    R = g.r_basis
    lam = R.T @ g.laplacian @ R
    return 0.5 * (lam + lam.T)


def algebraic_connectivity(g: Graph) -> float:
    if g.n_nodes == 1:
        return 0.0
    return float(laplacian_spectrum(g)[1])
