"""Sharding of triplets, edges, and nodes across workers, plus the analytic
communication-volume model.

Shards are contiguous ranges of the deterministic sorted orderings, balanced
to within one element. Every worker keeps the complete edge and node
topology; only triplet features stay shard-local.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GEMNET, ModelConfig
from .graph import GraphTopology


@dataclass(frozen=True)
class GraphPartition:
    workers: int
    triplet_shards: list[np.ndarray]
    edge_shards: list[np.ndarray]
    node_shards: list[np.ndarray]
    topology: GraphTopology


def split_range(n: int, workers: int) -> list[np.ndarray]:
    """Contiguous index ranges with sizes differing by at most one."""
    base, extra = divmod(n, workers)
    shards = []
    start = 0
    for p in range(workers):
        size = base + (1 if p < extra else 0)
        shards.append(np.arange(start, start + size, dtype=np.int64))
        start += size
    return shards


def partition_graph(topology: GraphTopology, workers: int) -> GraphPartition:
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return GraphPartition(
        workers=workers,
        triplet_shards=split_range(topology.num_triplets, workers),
        edge_shards=split_range(topology.num_edges, workers),
        node_shards=split_range(topology.num_nodes, workers),
        topology=topology,
    )


@dataclass(frozen=True)
class CommModel:
    """Counts and feature dimensions that determine collective traffic."""

    n_v: int
    n_e: int
    n_t: int
    d_v: int
    d_e: int
    d_t: int
    d_u: int
    variant: str

    @classmethod
    def from_graph(cls, topology: GraphTopology, config: ModelConfig) -> "CommModel":
        return cls(
            n_v=topology.num_nodes,
            n_e=topology.num_edges,
            n_t=topology.num_triplets,
            d_v=config.d_v,
            d_e=config.d_e,
            d_t=config.d_t,
            d_u=config.d_u,
            variant=config.variant,
        )


@dataclass(frozen=True)
class CommVolume:
    per_block: int
    total: int


def comm_volume(model: CommModel, blocks: int) -> CommVolume:
    """Elements all-reduced per forward block and in a full forward pass.

    One edge buffer, one node buffer, and one global row per block; the
    gemnet-style variant adds a second edge buffer for symmetric message
    coupling. Never a function of the triplet count or triplet dimension.
    """
    per_block = model.n_e * model.d_e + model.n_v * model.d_v + model.d_u
    if model.variant == GEMNET:
        per_block += model.n_e * model.d_e
    return CommVolume(per_block=per_block, total=blocks * per_block)
