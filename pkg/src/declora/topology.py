"""Communication graphs, mixing matrices and their spectra."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .linalg import matmul, symmetric_eigenvalues, symmetric_spectral_norm

STOCHASTIC_TOL = 1e-12
ER_MAX_ATTEMPTS = 100


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``; edges stored as ``(i, j)`` with ``i < j``."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 2:
            raise TopologyError(f"graph needs at least 2 nodes, got {self.n}")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) outside [0, {self.n})")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    @classmethod
    def from_edges(cls, n: int, edges) -> Graph:
        return cls(n, frozenset(tuple(e) for e in edges))

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def is_connected(self) -> bool:
        nbrs = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        seen = {0}
        todo = deque([0])
        while todo:
            for j in nbrs[todo.popleft()]:
                if j not in seen:
                    seen.add(j)
                    todo.append(j)
        return len(seen) == self.n

    def sorted_edges(self) -> list[list[int]]:
        return [list(e) for e in sorted(self.edges)]

    def to_json(self) -> dict:
        return {"n": self.n, "edges": self.sorted_edges()}

    @classmethod
    def from_json(cls, obj: dict) -> Graph:
        return cls.from_edges(int(obj["n"]), obj["edges"])


@dataclass(frozen=True)
class MixingMatrix:
    """Validated symmetric doubly stochastic gossip matrix.

    Construction checks symmetry, stochasticity, nonnegativity, support on the
    graph's edges (when a graph is given) and the strict spectral gap
    ``beta < 1``.  ``beta`` is the largest eigenvalue magnitude after the
    leading eigenvalue 1, and ``rho = (1 + beta**2) / 2``.
    """

    q: np.ndarray
    beta: float
    eigenvalues: np.ndarray
    tag: str = "explicit"
    graph: Graph | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def rho(self) -> float:
        return (1.0 + self.beta**2) / 2.0

    @classmethod
    def from_array(cls, q, graph: Graph | None = None, tag: str = "explicit") -> MixingMatrix:
        q = np.array(q, dtype=np.float64)
        problems = mixing_violations(q, graph)
        if problems:
            raise TopologyError("invalid mixing matrix: " + "; ".join(problems))
        eig = symmetric_eigenvalues(q)
        if abs(eig[0] - 1.0) > 1e-10:
            raise TopologyError(f"largest eigenvalue is {eig[0]!r}, expected 1")
        beta = float(max(abs(eig[1]), abs(eig[-1])))
        if not beta < 1.0:
            raise TopologyError(f"no spectral gap (beta = {beta!r}); is the graph connected?")
        q.setflags(write=False)
        eig.setflags(write=False)
        return cls(q=q, beta=beta, eigenvalues=eig, tag=tag, graph=graph)

    def support(self, i: int) -> list[int]:
        """Indices ``j`` with ``q[i, j] > 0`` (including ``i`` itself)."""
        return [int(j) for j in np.flatnonzero(self.q[i] > 0)]

    def degrees(self) -> np.ndarray:
        """Number of neighbours (excluding self) each node exchanges with."""
        off = self.q > 0
        np.fill_diagonal(off, False)
        return off.sum(axis=1)

    def to_json(self) -> dict:
        out = {"n": self.n, "tag": self.tag, "weights": self.q.tolist()}
        if self.graph is not None:
            out["edges"] = self.graph.sorted_edges()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> MixingMatrix:
        graph = Graph.from_edges(int(obj["n"]), obj["edges"]) if "edges" in obj else None
        if "weights" in obj:
            return cls.from_array(obj["weights"], graph=graph, tag=obj.get("tag", "explicit"))
        if graph is None:
            raise TopologyError("topology JSON needs 'weights' or 'edges'")
        return mixing_metropolis(graph)


def mixing_violations(q: np.ndarray, graph: Graph | None = None, tol: float = STOCHASTIC_TOL) -> list[str]:
    """List every mixing-matrix invariant that ``q`` breaks (empty when valid)."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 2:
        return [f"must be square with n >= 2, got shape {q.shape}"]
    if not np.all(np.isfinite(q)):
        return ["non-finite entries"]
    out = []
    asym = float(np.max(np.abs(q - q.T)))
    if asym > tol:
        out.append(f"not symmetric (max |q_ij - q_ji| = {asym:.3e})")
    row_err = float(np.max(np.abs(q.sum(axis=1) - 1.0)))
    if row_err > tol:
        out.append(f"row sums deviate from 1 by {row_err:.3e}")
    col_err = float(np.max(np.abs(q.sum(axis=0) - 1.0)))
    if col_err > tol:
        out.append(f"column sums deviate from 1 by {col_err:.3e}")
    if np.any(q < 0):
        out.append(f"negative entry {float(q.min())!r}")
    if graph is not None:
        if graph.n != q.shape[0]:
            out.append(f"graph has {graph.n} nodes but matrix is {q.shape[0]}x{q.shape[0]}")
        else:
            allowed = graph.adjacency() + np.eye(graph.n)
            bad = np.argwhere((q > 0) & (allowed == 0))
            if len(bad):
                i, j = bad[0]
                out.append(f"weight on non-edge ({i}, {j})")
    return out


def build_ring(n: int) -> Graph:
    if n < 3:
        raise TopologyError(f"ring needs n >= 3, got {n}")
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def build_complete(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def build_erdos_renyi(n: int, p_c: float, rng: np.random.Generator) -> Graph:
    """Random graph with independent edge probability ``p_c``, redrawn until connected."""
    if n < 2:
        raise TopologyError(f"Erdos-Renyi graph needs n >= 2, got {n}")
    if not 0 < p_c <= 1:
        raise TopologyError(f"edge probability must be in (0, 1], got {p_c}")
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(ER_MAX_ATTEMPTS):
        keep = rng.random(len(iu)) < p_c
        g = Graph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()))
        if g.is_connected():
            return g
    raise TopologyError(
        f"no connected Erdos-Renyi graph (n={n}, p_c={p_c}) in {ER_MAX_ATTEMPTS} draws; use a larger p_c"
    )


def build_exponential_graph(n: int) -> Graph:
    """Static exponential graph: node i links to i + 2**k (mod n), 2**k <= n - 1."""
    if n < 2:
        raise TopologyError(f"exponential graph needs n >= 2, got {n}")
    offsets = [2**k for k in range(int(np.floor(np.log2(n - 1))) + 1)] if n > 2 else [1]
    return Graph.from_edges(n, [(i, (i + d) % n) for i in range(n) for d in offsets])


def mixing_from_ring(g: Graph) -> MixingMatrix:
    """``Q = (I + A) / 3`` on a ring."""
    if g.n < 3 or np.any(g.degrees() != 2) or not g.is_connected():
        raise TopologyError("mixing_from_ring needs a single cycle through all nodes")
    q = (np.eye(g.n) + g.adjacency()) / 3.0
    return MixingMatrix.from_array(q, graph=g, tag=f"ring(n={g.n})")


def laplacian(g: Graph) -> np.ndarray:
    adj = g.adjacency()
    return np.diag(adj.sum(axis=1)) - adj


def mixing_from_laplacian(g: Graph, tag: str | None = None) -> MixingMatrix:
    """``Q = I - 2 / (3 lambda_max(L)) L`` with ``L`` the graph Laplacian."""
    if not g.is_connected():
        raise TopologyError("graph is disconnected; its mixing matrix would have beta = 1")
    lap = laplacian(g)
    lam_max = float(symmetric_eigenvalues(lap)[0])
    q = np.eye(g.n) - (2.0 / (3.0 * lam_max)) * lap
    return MixingMatrix.from_array(q, graph=g, tag=tag or f"laplacian(n={g.n})")


def mixing_metropolis(g: Graph, tag: str | None = None) -> MixingMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(d_i, d_j))`` on edges."""
    deg = g.degrees()
    q = np.zeros((g.n, g.n))
    for i, j in g.edges:
        q[i, j] = q[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    q[np.diag_indices(g.n)] = 1.0 - q.sum(axis=1)
    return MixingMatrix.from_array(q, graph=g, tag=tag or f"metropolis(n={g.n})")


def mixing_exponential(n: int) -> MixingMatrix:
    return mixing_metropolis(build_exponential_graph(n), tag=f"exponential(n={n})")


def mixing_complete(n: int) -> MixingMatrix:
    """Exact averaging: every entry ``1/n``; ``beta`` is exactly 0."""
    if n < 2:
        raise TopologyError(f"complete mixing needs n >= 2, got {n}")
    mm = MixingMatrix.from_array(np.full((n, n), 1.0 / n), graph=build_complete(n), tag=f"complete(n={n})")
    if mm.beta > 1e-12:
        raise TopologyError(f"complete mixing has beta {mm.beta!r}")
    # the complement of the all-ones direction is annihilated exactly
    return MixingMatrix(q=mm.q, beta=0.0, eigenvalues=mm.eigenvalues, tag=mm.tag, graph=mm.graph)


def spectral_contraction(q: MixingMatrix, N: int) -> float:
    """Spectral norm of ``Q**N - 11^T / n``; equals ``beta**N``."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    power = q.q
    for _ in range(N - 1):
        power = matmul(power, q.q)
    diff = power - np.full(q.q.shape, 1.0 / q.n)
    return symmetric_spectral_norm(0.5 * (diff + diff.T))


def load_topology(path) -> MixingMatrix:
    with open(path) as fh:
        return MixingMatrix.from_json(json.load(fh))


def save_topology(mm: MixingMatrix, path) -> None:
    with open(path, "w") as fh:
        json.dump(mm.to_json(), fh, indent=1)
        fh.write("\n")
