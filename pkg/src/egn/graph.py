"""Cutoff-radius graphs over atomic systems: edges, triplets, geometry.

Edges are directed and enumerated for every ordered pair within the cutoff,
sorted by (source, receiver). A triplet is an ordered pair of adjacent
directed edges (k -> j), (j -> i) with k != i, sorted by (out_edge, in_edge).
All downstream determinism relies on these orderings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system import AtomicSystem

# Below this sine magnitude a triplet is treated as collinear and the angle
# gradient falls back to the zero subgradient.
_COLLINEAR_EPS = 1e-14


@dataclass(frozen=True)
class GraphTopology:
    """Directed edges and triplets over ``num_nodes`` atoms."""

    num_nodes: int
    edge_src: np.ndarray  # (N_e,) int64, source node per edge
    edge_recv: np.ndarray  # (N_e,) int64, receiver node per edge
    trip_in: np.ndarray  # (N_t,) int64, in-edge (k -> j) index per triplet
    trip_out: np.ndarray  # (N_t,) int64, out-edge (j -> i) index per triplet

    @property
    def num_edges(self) -> int:
        return int(self.edge_src.shape[0])

    @property
    def num_triplets(self) -> int:
        return int(self.trip_in.shape[0])

    def reverse_edges(self) -> np.ndarray:
        """Index map r with edges[r[k]] == (recv_k, src_k).

        Raises ValueError when some edge has no reverse partner; cutoff
        graphs always have one by symmetry of the distance criterion.
        """
        key = {}
        for idx in range(self.num_edges):
            key[(int(self.edge_src[idx]), int(self.edge_recv[idx]))] = idx
        rev = np.empty(self.num_edges, dtype=np.int64)
        for idx in range(self.num_edges):
            pair = (int(self.edge_recv[idx]), int(self.edge_src[idx]))
            if pair not in key:
                raise ValueError(f"edge {idx} has no reverse edge {pair}")
            rev[idx] = key[pair]
        return rev

    def validate(self) -> None:
        if self.num_edges and (
            np.any(self.edge_src == self.edge_recv)
            or np.any(self.edge_src < 0)
            or np.any(self.edge_recv >= self.num_nodes)
        ):
            raise ValueError("malformed edge list")
        if self.num_triplets:
            if np.any(self.trip_in >= self.num_edges) or np.any(self.trip_out >= self.num_edges):
                raise ValueError("triplet references edge out of range")
            if np.any(self.edge_recv[self.trip_in] != self.edge_src[self.trip_out]):
                raise ValueError("triplet edges do not share a middle atom")
            if np.any(self.edge_src[self.trip_in] == self.edge_recv[self.trip_out]):
                raise ValueError("triplet with k == i")


@dataclass(frozen=True)
class Geometry:
    """Per-edge distances and unit vectors, per-triplet angles."""

    distances: np.ndarray  # (N_e,) float64, all in (0, cutoff]
    unit_vectors: np.ndarray  # (N_e, 3) float64, source -> receiver
    angles: np.ndarray  # (N_t,) float64 in [0, pi]


def build_graph(system: AtomicSystem, cutoff: float) -> tuple[GraphTopology, Geometry]:
    """Build the directed cutoff graph and its geometry for a system."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    pos = system.positions
    n = system.n

    diff = pos[None, :, :] - pos[:, None, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    mask = (dist > 0.0) & (dist <= cutoff)
    np.fill_diagonal(mask, False)
    src, recv = np.nonzero(mask)  # row-major: sorted by (source, receiver)
    src = src.astype(np.int64)
    recv = recv.astype(np.int64)

    trip_in, trip_out = enumerate_triplets(n, src, recv)
    topology = GraphTopology(n, src, recv, trip_in, trip_out)

    distances = edge_distances(pos, src, recv)
    units = edge_unit_vectors(pos, src, recv)
    angles = triplet_angles(pos, topology)
    return topology, Geometry(distances, units, angles)


def enumerate_triplets(
    num_nodes: "int | GraphTopology",
    edge_src: np.ndarray | None = None,
    edge_recv: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """List all ordered edge pairs ((k->j), (j->i)) with k != i.

    Accepts either (num_nodes, edge_src, edge_recv) or a GraphTopology
    (its edges only). Output is sorted by (out_edge index, in_edge index).
    """
    if isinstance(num_nodes, GraphTopology):
        topo = num_nodes
        num_nodes, edge_src, edge_recv = topo.num_nodes, topo.edge_src, topo.edge_recv
    n_e = edge_src.shape[0]
    if n_e == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty

    # In-edges grouped by receiver; stable sort keeps edge order within groups.
    order = np.argsort(edge_recv, kind="stable").astype(np.int64)
    bounds = np.searchsorted(edge_recv[order], np.arange(num_nodes + 1))

    ins, outs = [], []
    for out_edge in range(n_e):
        j = edge_src[out_edge]
        cand = order[bounds[j] : bounds[j + 1]]
        cand = cand[edge_src[cand] != edge_recv[out_edge]]
        if cand.size:
            ins.append(cand)
            outs.append(np.full(cand.size, out_edge, dtype=np.int64))
    if not ins:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(ins), np.concatenate(outs)


def edge_distances(positions: np.ndarray, src: np.ndarray, recv: np.ndarray) -> np.ndarray:
    diff = positions[recv] - positions[src]
    return np.sqrt((diff * diff).sum(axis=1))


def edge_unit_vectors(positions: np.ndarray, src: np.ndarray, recv: np.ndarray) -> np.ndarray:
    diff = positions[recv] - positions[src]
    d = np.sqrt((diff * diff).sum(axis=1))
    return diff / d[:, None]


def _triplet_vectors(positions: np.ndarray, topology: GraphTopology):
    k = topology.edge_src[topology.trip_in]
    j = topology.edge_recv[topology.trip_in]
    i = topology.edge_recv[topology.trip_out]
    v1 = positions[k] - positions[j]
    v2 = positions[i] - positions[j]
    return k, j, i, v1, v2


def triplet_angles(positions: np.ndarray, topology: GraphTopology) -> np.ndarray:
    """Bond angle at the shared atom j, in [0, pi], via atan2 for stability."""
    if topology.num_triplets == 0:
        return np.empty(0, dtype=np.float64)
    _, _, _, v1, v2 = _triplet_vectors(positions, topology)
    cross = np.cross(v1, v2)
    s = np.sqrt((cross * cross).sum(axis=1))
    c = (v1 * v2).sum(axis=1)
    return np.arctan2(s, c)


def angle_gradients(positions: np.ndarray, topology: GraphTopology):
    """Closed-form d(angle)/d(position) for each triplet.

    Returns (g_k, g_j, g_i), each (N_t, 3): the gradient with respect to the
    outer atom k, the middle atom j, and the outer atom i. Exactly collinear
    triplets get the zero subgradient instead of NaN.
    """
    n_t = topology.num_triplets
    if n_t == 0:
        z = np.zeros((0, 3), dtype=np.float64)
        return z, z, z
    _, _, _, v1, v2 = _triplet_vectors(positions, topology)
    cross = np.cross(v1, v2)
    s = np.sqrt((cross * cross).sum(axis=1))
    ok = s > _COLLINEAR_EPS
    safe_s = np.where(ok, s, 1.0)
    nhat = cross / safe_s[:, None]
    n1 = np.sqrt((v1 * v1).sum(axis=1))
    n2 = np.sqrt((v2 * v2).sum(axis=1))
    g_k = np.cross(v1 / n1[:, None], nhat) / n1[:, None]
    g_i = np.cross(nhat, v2 / n2[:, None]) / n2[:, None]
    g_k[~ok] = 0.0
    g_i[~ok] = 0.0
    g_j = -(g_k + g_i)
    return g_k, g_j, g_i


def distance_gradients(positions: np.ndarray, src: np.ndarray, recv: np.ndarray):
    """Closed-form d(distance)/d(position): (+unit at receiver, -unit at source)."""
    unit = edge_unit_vectors(positions, src, recv)
    return -unit, unit
