"""Mixed product-graph construction for spatio-temporal signals.

The node set is stations x instants, flattened time-major: node (s, t) sits at
flat index t*N + s, so the observed prefix of the signal occupies a contiguous
block of the stacked vector. Spatial edges are undirected and live within one
instant; temporal edges are directed, connect a station to itself at later
instants inside a fixed window, and therefore form a DAG.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class DegenerateDegreeError(ValueError):
    """A non-source node ended up with zero incoming weight mass."""


class EdgeListError(ValueError):
    """A road-network edge list failed validation; message names the line."""


def flat_index(station: int, instant: int, n_stations: int) -> int:
    return instant * n_stations + station


def station_instant(flat: int, n_stations: int) -> tuple[int, int]:
    return flat % n_stations, flat // n_stations


@dataclass(frozen=True)
class SpaceTimeIndex:
    """One node of the product graph with its flat position."""

    station: int
    instant: int
    n_stations: int

    @property
    def flat(self) -> int:
        return flat_index(self.station, self.instant, self.n_stations)

    @classmethod
    def from_flat(cls, flat: int, n_stations: int) -> "SpaceTimeIndex":
        s, t = station_instant(flat, n_stations)
        return cls(s, t, n_stations)


@dataclass(frozen=True)
class PhysicalGraph:
    """Road network: stations plus undirected edges with nonnegative costs."""

    n_stations: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if self.n_stations <= 0:
            raise ValueError("station count must be positive")
        seen = set()
        for i, j, cost in self.edges:
            if i == j:
                raise ValueError(f"self-edge at station {i}")
            if not (0 <= i < self.n_stations and 0 <= j < self.n_stations):
                raise ValueError(f"edge ({i},{j}) outside station range")
            if cost < 0:
                raise ValueError(f"negative cost on edge ({i},{j})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge ({i},{j})")
            seen.add(key)

    def incident_costs(self, station: int) -> list[tuple[float, int]]:
        """(cost, neighbor) pairs for one station, unsorted."""
        out = []
        for i, j, cost in self.edges:
            if i == station:
                out.append((cost, j))
            elif j == station:
                out.append((cost, i))
        return out


def load_road_network(path) -> PhysicalGraph:
    """Read an edge list CSV with header ``from,to,cost`` (0-based station ids)."""
    edges = []
    max_station = -1
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EdgeListError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["from", "to", "cost"]:
            raise EdgeListError(f"{path}:1: expected header 'from,to,cost'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise EdgeListError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                i, j = int(row[0]), int(row[1])
                cost = float(row[2])
            except ValueError as exc:
                raise EdgeListError(f"{path}:{lineno}: {exc}") from None
            edges.append((i, j, cost))
            max_station = max(max_station, i, j)
    try:
        return PhysicalGraph(max_station + 1, tuple(edges))
    except ValueError as exc:
        raise EdgeListError(f"{path}: {exc}") from None


@dataclass(frozen=True, eq=False)
class SpatialSkeleton:
    """Per-instant undirected edge set over stations (shared by all instants)."""

    n_stations: int
    neighbors: tuple[tuple[int, ...], ...]
    edges: np.ndarray  # (E, 2) with i < j, lexicographically sorted

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def build_spatial_skeleton(pg: PhysicalGraph, k: int) -> SpatialSkeleton:
    """Keep each station's k lowest-cost physical neighbors, then symmetrize by union.

    Ties on cost are broken toward the lower station id so builds are
    deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if pg.n_stations < 1:
        raise ValueError("empty physical graph")
    chosen: set[tuple[int, int]] = set()
    for s in range(pg.n_stations):
        ranked = sorted(pg.incident_costs(s))
        for cost, nbr in ranked[:k]:
            chosen.add((min(s, nbr), max(s, nbr)))
    nbrs: list[set[int]] = [set() for _ in range(pg.n_stations)]
    for i, j in chosen:
        nbrs[i].add(j)
        nbrs[j].add(i)
    edges = np.array(sorted(chosen), dtype=np.int64).reshape(-1, 2)
    return SpatialSkeleton(
        n_stations=pg.n_stations,
        neighbors=tuple(tuple(sorted(n)) for n in nbrs),
        edges=edges,
    )


@dataclass(frozen=True, eq=False)
class DirectedSkeleton:
    """Generic DAG over flat node ids; edges run src -> dst with a lag label."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    lag: np.ndarray
    sources: np.ndarray  # flat ids with zero in-degree

    @property
    def n_edges(self) -> int:
        return len(self.src)


def directed_skeleton_from_edges(n_nodes: int, edges) -> DirectedSkeleton:
    """Build a DirectedSkeleton from (src, dst) or (src, dst, lag) tuples."""
    if len({(e[0], e[1]) for e in edges}) != len(edges):
        raise ValueError("duplicate directed edge")
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    lag = np.array([e[2] if len(e) > 2 else 1 for e in edges], dtype=np.int64)
    indeg = np.zeros(n_nodes, dtype=np.int64)
    np.add.at(indeg, dst, 1)
    sources = np.flatnonzero(indeg == 0)
    return DirectedSkeleton(n_nodes, src, dst, lag, sources)


@dataclass(frozen=True, eq=False)
class TemporalSkeleton(DirectedSkeleton):
    """Windowed same-station DAG: (s, t) -> (s, t+d) for d = 1..window."""

    n_stations: int = 0
    n_instants: int = 0
    window: int = 0


def build_temporal_skeleton(n_stations: int, n_instants: int, window: int) -> TemporalSkeleton:
    if n_instants < 2:
        raise ValueError("need at least 2 instants")
    if not 1 <= window < n_instants:
        raise ValueError(f"window must satisfy 1 <= W < {n_instants}")
    src, dst, lag = [], [], []
    # child-major order keeps in-neighborhoods contiguous
    for t in range(1, n_instants):
        for d in range(1, min(t, window) + 1):
            for s in range(n_stations):
                src.append(flat_index(s, t - d, n_stations))
                dst.append(flat_index(s, t, n_stations))
                lag.append(d)
    sources = np.arange(n_stations, dtype=np.int64)  # instant-0 nodes
    return TemporalSkeleton(
        n_nodes=n_stations * n_instants,
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        lag=np.array(lag, dtype=np.int64),
        sources=sources,
        n_stations=n_stations,
        n_instants=n_instants,
        window=window,
    )


def assemble_undirected_laplacian(skel: SpatialSkeleton, weights: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal D - W over instants.

    ``weights`` has shape (n_instants, n_edges) aligned with ``skel.edges``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != skel.n_edges:
        raise ValueError(
            f"weights shape {weights.shape} does not match {skel.n_edges} skeleton edges"
        )
    if np.any(weights < 0):
        raise ValueError("negative edge weight")
    n_instants = weights.shape[0]
    n = skel.n_stations
    dim = n * n_instants
    if skel.n_edges == 0:
        return sp.csr_matrix((dim, dim))
    ei = skel.edges[:, 0]
    ej = skel.edges[:, 1]
    rows, cols, vals = [], [], []
    for t in range(n_instants):
        off = t * n
        w = weights[t]
        rows.extend([off + ei, off + ej])
        cols.extend([off + ej, off + ei])
        vals.extend([-w, -w])
        deg = np.zeros(n)
        np.add.at(deg, ei, w)
        np.add.at(deg, ej, w)
        rows.append(off + np.arange(n))
        cols.append(off + np.arange(n))
        vals.append(deg)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_random_walk_digraph(
    skel: DirectedSkeleton, weights: np.ndarray
) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Row-stochastic random-walk adjacency and its Laplacian I - W_r.

    Every source node gets a self-loop of weight 1 before in-degree
    normalization, so source rows of W_r are exactly their self-loop.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != skel.src.shape:
        raise ValueError("weights must align with skeleton edges")
    if np.any(weights <= 0):
        raise ValueError("directed edge weights must be positive")
    n = skel.n_nodes
    rows = np.concatenate([skel.dst, skel.sources])
    cols = np.concatenate([skel.src, skel.sources])
    vals = np.concatenate([weights, np.ones(len(skel.sources))])
    indeg = np.zeros(n)
    np.add.at(indeg, rows, vals)
    dead = np.flatnonzero(indeg == 0)
    if len(dead):
        raise DegenerateDegreeError(
            f"non-source node(s) {dead[:5].tolist()} have zero incoming weight"
        )
    w_rd = sp.coo_matrix((vals / indeg[rows], (rows, cols)), shape=(n, n)).tocsr()
    w_rd.sum_duplicates()
    l_rd = (sp.identity(n, format="csr") - w_rd).tocsr()
    return w_rd, l_rd


def symmetrized_dglr_matrix(l_rd: sp.spmatrix) -> sp.csr_matrix:
    """L_r^T L_r: symmetric, PSD, annihilates the constant vector."""
    if l_rd.shape[0] != l_rd.shape[1]:
        raise ValueError("expected a square matrix")
    mat = (l_rd.T @ l_rd).tocsr()
    # exact symmetry by construction of the product; enforce sorted indices
    mat.sort_indices()
    return mat


def normalized_laplacian(w: sp.spmatrix) -> sp.csr_matrix:
    """I - D^{-1/2} W D^{-1/2}; rows of isolated nodes are zero."""
    w = w.tocsr()
    deg = np.asarray(w.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    lap = sp.identity(w.shape[0], format="csr") - d @ w @ d
    lap = lap.tolil()
    for i in np.flatnonzero(~nz):
        lap[i, i] = 0.0
    return lap.tocsr()


OPERATOR_NAMES = ("l_u", "l_rd", "l_rd_t", "call_rd")


@dataclass(eq=False)
class MixedGraph:
    """Assembled operators of one mixed product graph.

    Immutable after construction; all operators are CSR with float64 values.
    ``l_n`` is the normalized Laplacian of the symmetrized temporal graph,
    used only by the undirected-temporal solver variant.
    """

    n_stations: int
    n_instants: int
    n_observed: int  # observed instants (the prefix 0..T)
    l_u: sp.csr_matrix
    w_rd: sp.csr_matrix
    l_rd: sp.csr_matrix
    call_rd: sp.csr_matrix = field(default=None)
    l_n: sp.csr_matrix = None
    h_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        dim = self.n_stations * self.n_instants
        for name in ("l_u", "w_rd", "l_rd"):
            mat = getattr(self, name)
            if mat.shape != (dim, dim):
                raise ValueError(f"{name} has shape {mat.shape}, expected {(dim, dim)}")
        if self.call_rd is None:
            self.call_rd = symmetrized_dglr_matrix(self.l_rd)
        if self.h_mask is None:
            mask = np.zeros(dim, dtype=bool)
            mask[: self.n_stations * self.n_observed] = True
            self.h_mask = mask
        self._l_rd_t = self.l_rd.T.tocsr()

    @property
    def n_nodes(self) -> int:
        return self.n_stations * self.n_instants

    def apply(self, op: str, x: np.ndarray) -> np.ndarray:
        """Operator-vector product; call_rd is applied as two chained products."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_nodes,):
            raise ValueError(f"signal length {x.shape} != {self.n_nodes}")
        if op == "l_u":
            return self.l_u @ x
        if op == "l_rd":
            return self.l_rd @ x
        if op == "l_rd_t":
            return self._l_rd_t @ x
        if op == "call_rd":
            return self._l_rd_t @ (self.l_rd @ x)
        raise ValueError(f"unknown operator {op!r}; expected one of {OPERATOR_NAMES}")

    def project_observed(self, x: np.ndarray) -> np.ndarray:
        """H x: select observed entries."""
        return x[self.h_mask]

    def lift_observed(self, y: np.ndarray) -> np.ndarray:
        """H^T y: scatter observations into the full-length vector."""
        out = np.zeros(self.n_nodes)
        out[self.h_mask] = y
        return out
