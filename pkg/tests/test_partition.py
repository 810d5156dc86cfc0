import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egn.config import ModelConfig
from egn.graph import build_graph
from egn.partition import CommModel, comm_volume, partition_graph, split_range
from egn.system import random_cloud

from conftest import equilateral_triangle


def test_split_sizes_balanced():
    sizes = [s.size for s in split_range(7, 3)]
    assert sizes == [3, 2, 2]


def test_single_worker_identity():
    shards = split_range(9, 1)
    assert len(shards) == 1
    np.testing.assert_array_equal(shards[0], np.arange(9))


def test_more_workers_than_items_leaves_empty_shards():
    shards = split_range(2, 5)
    assert [s.size for s in shards] == [1, 1, 0, 0, 0]


def test_triangle_partition_contiguous():
    topo, _ = build_graph(equilateral_triangle(), cutoff=1.5)
    part = partition_graph(topo, 2)
    np.testing.assert_array_equal(part.triplet_shards[0], [0, 1, 2])
    np.testing.assert_array_equal(part.triplet_shards[1], [3, 4, 5])


def test_partition_rejects_zero_workers():
    topo, _ = build_graph(equilateral_triangle(), cutoff=1.5)
    with pytest.raises(ValueError):
        partition_graph(topo, 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 200), workers=st.integers(1, 16))
def test_split_properties(n, workers):
    shards = split_range(n, workers)
    assert len(shards) == workers
    sizes = [s.size for s in shards]
    assert max(sizes) - min(sizes) <= 1
    merged = np.concatenate(shards) if shards else np.empty(0)
    np.testing.assert_array_equal(merged, np.arange(n))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), workers=st.integers(1, 16))
def test_partition_properties_on_random_graphs(seed, workers):
    system = random_cloud(12, 0.9, np.random.default_rng(seed))
    topo, _ = build_graph(system, cutoff=1.5)
    part = partition_graph(topo, workers)
    for shards, total in (
        (part.triplet_shards, topo.num_triplets),
        (part.edge_shards, topo.num_edges),
        (part.node_shards, topo.num_nodes),
    ):
        merged = np.concatenate(shards)
        np.testing.assert_array_equal(np.sort(merged), np.arange(total))
        sizes = [s.size for s in shards]
        assert max(sizes) - min(sizes) <= 1


def test_comm_volume_dimenet_example():
    model = CommModel(n_v=10, n_e=40, n_t=999, d_v=4, d_e=8, d_t=16, d_u=1,
                      variant="dimenet-style")
    vol = comm_volume(model, blocks=1)
    assert vol.per_block == 361
    assert vol.total == 361


def test_comm_volume_gemnet_example():
    model = CommModel(n_v=10, n_e=40, n_t=999, d_v=4, d_e=8, d_t=16, d_u=1,
                      variant="gemnet-style")
    assert comm_volume(model, blocks=1).per_block == 681


def test_comm_volume_independent_of_triplets():
    base = CommModel(n_v=10, n_e=40, n_t=100, d_v=4, d_e=8, d_t=16, d_u=1,
                     variant="dimenet-style")
    doubled_dt = CommModel(n_v=10, n_e=40, n_t=100, d_v=4, d_e=8, d_t=32, d_u=1,
                           variant="dimenet-style")
    for n_t in (0, 1, 100, 10_000):
        swept = CommModel(n_v=10, n_e=40, n_t=n_t, d_v=4, d_e=8, d_t=16, d_u=1,
                          variant="dimenet-style")
        assert comm_volume(swept, 3).total == comm_volume(base, 3).total
    assert comm_volume(doubled_dt, 3).total == comm_volume(base, 3).total


def test_comm_volume_scales_with_blocks():
    model = CommModel(n_v=5, n_e=12, n_t=50, d_v=3, d_e=4, d_t=2, d_u=2,
                      variant="gemnet-style")
    assert comm_volume(model, 4).total == 4 * comm_volume(model, 1).per_block


def test_comm_model_from_graph():
    topo, _ = build_graph(equilateral_triangle(), cutoff=1.5)
    cfg = ModelConfig(variant="gemnet-style")
    model = CommModel.from_graph(topo, cfg)
    assert (model.n_v, model.n_e, model.n_t) == (3, 6, 6)
    assert (model.d_v, model.d_e, model.d_u) == (cfg.d_v, cfg.d_e, cfg.d_u)
