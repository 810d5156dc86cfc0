"""Sequential engine for stacked interaction blocks over an atomic graph.

One block runs triplet update (TU) -> triplet aggregation (TA) -> edge
update (EU) -> edge aggregation (EA) -> node update (NU), then for the
gemnet-style variant a second edge update (EU2) and symmetric coupling of
the two directed messages on each undirected edge, and finally the global
update (GU). The dimenet-style variant is energy-centric (forces come from
the position gradient); the gemnet-style variant adds a direct force head.

The stage recorders here are shared with the multi-worker runtime: a worker
records the same primitives over its index shard, so a single-worker run
reproduces this engine bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisFeatures
from .config import GEMNET, ModelConfig
from .elements import MAX_Z
from .graph import Geometry, GraphTopology, build_graph
from .params import ModelParams, param_specs
from .system import AtomicSystem
from .tape import Tape, silu


@dataclass(frozen=True)
class FeatureState:
    """Dense feature buffers after a forward pass."""

    global_features: np.ndarray  # (1, d_u)
    node_features: np.ndarray  # (N_v, d_v)
    edge_features: np.ndarray  # (N_e, d_e)
    triplet_features: np.ndarray | None  # (N_t, d_t); None when sharded away
    topology: GraphTopology
    geometry: Geometry
    basis: BasisFeatures


@dataclass
class GradientBundle:
    """Parameter and position gradients from one backward pass."""

    d_params: dict[str, np.ndarray]
    d_positions: np.ndarray  # (n, 3)

    def finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.d_positions))
            and all(np.all(np.isfinite(g)) for g in self.d_params.values())
        )


class ParamLeaves:
    """Create tape leaves for parameter arrays on first use."""

    def __init__(self, tape: Tape, params: ModelParams):
        self._tape = tape
        self._arrays = params.arrays
        self.ids: dict[str, int] = {}

    def __getitem__(self, name: str) -> int:
        if name not in self.ids:
            self.ids[name] = self._tape.leaf(self._arrays[name])
        return self.ids[name]


def embedding_indices(atomic_numbers: np.ndarray) -> np.ndarray:
    z = np.asarray(atomic_numbers, dtype=np.int64)
    if np.any(z > MAX_Z):
        raise ValueError(f"atomic number {int(z.max())} exceeds the embedding table ({MAX_Z})")
    return z - 1


def receiver_plan(topology: GraphTopology, node_lo: int, node_hi: int):
    """Edges grouped by receiver for nodes in [node_lo, node_hi).

    Returns (edge_sel, seg): edge indices ordered by (receiver, edge index)
    and the receiver's local index for each. Aggregating with this plan adds
    contributions in ascending edge order within every node, the same order
    a direct scatter over all edges would use.
    """
    order = np.argsort(topology.edge_recv, kind="stable").astype(np.int64)
    bounds = np.searchsorted(topology.edge_recv[order], np.arange(topology.num_nodes + 1))
    edge_sel = order[bounds[node_lo] : bounds[node_hi]]
    seg = topology.edge_recv[edge_sel] - node_lo
    return edge_sel, seg


# ---------------------------------------------------------------------------
# Stage recorders (tape) and their plain-array mirrors. The mirrors apply the
# identical sequence of array operations, so both paths agree bitwise.
# ---------------------------------------------------------------------------


def record_mlp2(tape: Tape, x: int, pl: ParamLeaves, prefix: str) -> int:
    h = tape.linear(x, pl[prefix + ".w1"], pl[prefix + ".b1"])
    return tape.linear(tape.silu(h), pl[prefix + ".w2"], pl[prefix + ".b2"])


def np_mlp2(x: np.ndarray, arrays: dict, prefix: str) -> np.ndarray:
    h = x @ arrays[prefix + ".w1"].T + arrays[prefix + ".b1"]
    return silu(h) @ arrays[prefix + ".w2"].T + arrays[prefix + ".b2"]


def record_edge_init(tape: Tape, pl: ParamLeaves, rbf_id: int, rows: np.ndarray) -> int:
    rbf_rows = tape.gather(rbf_id, rows)
    return tape.linear(rbf_rows, pl["edge_init.w"], pl["edge_init.b"])


def np_edge_init(rbf: np.ndarray, arrays: dict) -> np.ndarray:
    return rbf @ arrays["edge_init.w"].T + arrays["edge_init.b"]


def record_tu(
    tape: Tape,
    pl: ParamLeaves,
    block: int,
    config: ModelConfig,
    m_id: int,
    rbf_id: int,
    sbf_id: int,
    trip_rows: np.ndarray,
    topology: GraphTopology,
) -> tuple[int, int]:
    """Triplet update + aggregation over ``trip_rows``.

    Returns (triplet feature rows, aggregated edge buffer of full size).
    """
    p = f"block{block}.tu"
    t_in = topology.trip_in[trip_rows]
    t_out = topology.trip_out[trip_rows]
    m_in = tape.gather(m_id, t_in)
    down = tape.linear(m_in, pl[p + ".down"])
    g_rbf = tape.linear(tape.gather(rbf_id, t_out), pl[p + ".rbf_gate"])
    g_sbf = tape.linear(tape.gather(sbf_id, trip_rows), pl[p + ".sbf_gate"])
    if config.variant == GEMNET:
        a = tape.linear(down, pl[p + ".bilinear_a"])
        b = tape.linear(g_sbf, pl[p + ".bilinear_b"])
        mixed = tape.linear(tape.mul(a, b), pl[p + ".bilinear_proj"])
        t_feat = tape.mul(mixed, g_rbf)
    else:
        t_feat = tape.mul(tape.mul(down, g_sbf), g_rbf)
    up = tape.linear(t_feat, pl[p + ".up"])
    ta = tape.segment_sum(up, t_out, topology.num_edges)
    return t_feat, ta


def record_eu(
    tape: Tape, pl: ParamLeaves, block: int, m_id: int, ta_id: int, rows: np.ndarray
) -> int:
    m_rows = tape.gather(m_id, rows)
    ta_rows = tape.gather(ta_id, rows)
    x = tape.concat(m_rows, ta_rows)
    return tape.add(m_rows, record_mlp2(tape, x, pl, f"block{block}.eu"))


def np_eu(m: np.ndarray, ta: np.ndarray, arrays: dict, block: int) -> np.ndarray:
    x = np.concatenate([m, ta], axis=1)
    return m + np_mlp2(x, arrays, f"block{block}.eu")


def record_ea_nu(
    tape: Tape,
    pl: ParamLeaves,
    block: int,
    m_id: int,
    edge_sel: np.ndarray,
    seg: np.ndarray,
    num_rows: int,
) -> int:
    gathered = tape.gather(m_id, edge_sel)
    h = tape.segment_sum(gathered, seg, num_rows)
    return record_mlp2(tape, h, pl, f"block{block}.nu")


def record_eu2(
    tape: Tape,
    pl: ParamLeaves,
    block: int,
    m_id: int,
    v_id: int,
    rows: np.ndarray,
    topology: GraphTopology,
) -> int:
    m_rows = tape.gather(m_id, rows)
    v_rows = tape.gather(v_id, topology.edge_recv[rows])
    x = tape.concat(m_rows, v_rows)
    return tape.add(m_rows, record_mlp2(tape, x, pl, f"block{block}.eu2"))


def record_sym(
    tape: Tape, pl: ParamLeaves, block: int, m2_id: int, rows: np.ndarray, rev: np.ndarray
) -> int:
    own = tape.gather(m2_id, rows)
    mirrored = tape.gather(m2_id, rev[rows])
    return tape.add(own, tape.linear(mirrored, pl[f"block{block}.sym.w"]))


def np_sym(m2: np.ndarray, rev: np.ndarray, arrays: dict, block: int) -> np.ndarray:
    return m2 + m2[rev] @ arrays[f"block{block}.sym.w"].T


def record_gu_head(
    tape: Tape, pl: ParamLeaves, block: int, v_id: int, rows: np.ndarray
) -> int:
    s = tape.sum_rows(tape.gather(v_id, rows))
    return tape.linear(s, pl[f"block{block}.gu.w1"])


def record_gu_tail(tape: Tape, pl: ParamLeaves, block: int, z_id: int, u_id: int) -> int:
    p = f"block{block}.gu"
    pre = tape.add_bias(z_id, pl[p + ".b1"])
    return tape.add(u_id, tape.linear(tape.silu(pre), pl[p + ".w2"], pl[p + ".b2"]))


def np_gu_tail(z: np.ndarray, u: np.ndarray, arrays: dict, block: int) -> np.ndarray:
    p = f"block{block}.gu"
    pre = z + arrays[p + ".b1"][None, :]
    return u + (silu(pre) @ arrays[p + ".w2"].T + arrays[p + ".b2"])


def record_energy(tape: Tape, pl: ParamLeaves, u_id: int) -> int:
    return tape.linear(u_id, pl["energy_head.w"], pl["energy_head.b"])


def np_energy(u: np.ndarray, arrays: dict) -> np.ndarray:
    return u @ arrays["energy_head.w"].T + arrays["energy_head.b"]


def record_force_head(
    tape: Tape,
    pl: ParamLeaves,
    m_id: int,
    units_id: int,
    edge_sel: np.ndarray,
    seg: np.ndarray,
    num_rows: int,
) -> int:
    m_rows = tape.gather(m_id, edge_sel)
    scale = tape.linear(m_rows, pl["force_head.w"])
    scaled = tape.scale_rows(scale, tape.gather(units_id, edge_sel))
    return tape.segment_sum(scaled, seg, num_rows)


def np_force_head(
    m: np.ndarray,
    units: np.ndarray,
    arrays: dict,
    edge_sel: np.ndarray,
    seg: np.ndarray,
    num_rows: int,
) -> np.ndarray:
    scale = m[edge_sel] @ arrays["force_head.w"].T
    scaled = scale * units[edge_sel]
    out = np.zeros((num_rows, 3), dtype=np.float64)
    np.add.at(out, seg, scaled)
    return out


def initial_state(
    atomic_numbers: np.ndarray,
    topology: GraphTopology,
    geometry: Geometry,
    basis: BasisFeatures,
    params: ModelParams,
) -> FeatureState:
    """Feature buffers before the first block: embeddings, edge init, zeros."""
    c = params.config
    idx = embedding_indices(atomic_numbers)
    node = params.arrays["atom_embedding"][idx]
    edge = np_edge_init(basis.edge_rbf, params.arrays)
    triplet = np.zeros((topology.num_triplets, c.d_t), dtype=np.float64)
    glob = np.zeros((1, c.d_u), dtype=np.float64)
    return FeatureState(glob, node, edge, triplet, topology, geometry, basis)


def block_forward(state: FeatureState, params: ModelParams, block: int) -> FeatureState:
    """Apply one interaction block to a feature state and return the update.

    Records a fresh tape over the given buffers; useful for inspecting a
    single block. The full engine chains the same recorders on one tape.
    """
    c = params.config
    topology = state.topology
    tape = Tape()
    pl = ParamLeaves(tape, params)
    m_id = tape.leaf(state.edge_features)
    u_id = tape.leaf(state.global_features)
    rbf_id = tape.leaf(state.basis.edge_rbf)
    sbf_id = tape.leaf(state.basis.triplet_sbf)
    all_edges = np.arange(topology.num_edges, dtype=np.int64)
    all_trips = np.arange(topology.num_triplets, dtype=np.int64)
    all_nodes = np.arange(topology.num_nodes, dtype=np.int64)
    edge_sel, seg = receiver_plan(topology, 0, topology.num_nodes)

    t_id, ta_id = record_tu(tape, pl, block, c, m_id, rbf_id, sbf_id, all_trips, topology)
    m_id = record_eu(tape, pl, block, m_id, ta_id, all_edges)
    v_id = record_ea_nu(tape, pl, block, m_id, edge_sel, seg, topology.num_nodes)
    if c.variant == GEMNET:
        rev = topology.reverse_edges()
        m_id = record_eu2(tape, pl, block, m_id, v_id, all_edges, topology)
        m_id = record_sym(tape, pl, block, m_id, all_edges, rev)
    g_id = record_gu_head(tape, pl, block, v_id, all_nodes)
    u_id = record_gu_tail(tape, pl, block, g_id, u_id)
    return FeatureState(
        global_features=tape.value(u_id),
        node_features=tape.value(v_id),
        edge_features=tape.value(m_id),
        triplet_features=tape.value(t_id),
        topology=topology,
        geometry=state.geometry,
        basis=state.basis,
    )


class ModelTape:
    """One recorded sequential forward pass over a system.

    Exposes the energy, the direct forces for the force-centric variant,
    the final feature buffers, and a backward() that yields parameter and
    position gradients.
    """

    def __init__(
        self,
        system: AtomicSystem,
        params: ModelParams,
        prebuilt: tuple[GraphTopology, Geometry] | None = None,
    ):
        config = params.config
        self.system = system
        self.params = params
        self.config = config
        if prebuilt is None:
            topology, geometry = build_graph(system, config.cutoff)
        else:
            topology, geometry = prebuilt
        self.topology = topology
        self.geometry = geometry

        tape = Tape()
        self.tape = tape
        src, recv = topology.edge_src, topology.edge_recv
        self.pos_id = tape.leaf(system.positions)
        dist_id = tape.edge_distances(self.pos_id, src, recv)
        self.units_id = (
            tape.edge_units(self.pos_id, src, recv) if config.variant == GEMNET else None
        )
        ang_id = tape.triplet_angles(self.pos_id, topology)
        rbf_id = tape.gaussian_rbf(dist_id, config.k_rbf, config.cutoff)
        d_in_id = tape.gather(dist_id, topology.trip_in)
        sbf_id = tape.angular_sbf(d_in_id, ang_id, config.k_rbf, config.l_sbf, config.cutoff)
        self.basis = BasisFeatures(tape.value(rbf_id), tape.value(sbf_id))

        pl = ParamLeaves(tape, params)
        self.param_leaves = pl

        emb_idx = embedding_indices(system.atomic_numbers)
        self.v0_id = tape.gather(pl["atom_embedding"], emb_idx)
        all_edges = np.arange(topology.num_edges, dtype=np.int64)
        all_trips = np.arange(topology.num_triplets, dtype=np.int64)
        all_nodes = np.arange(topology.num_nodes, dtype=np.int64)
        edge_sel, seg = receiver_plan(topology, 0, topology.num_nodes)
        rev = topology.reverse_edges() if config.variant == GEMNET else None

        m_id = record_edge_init(tape, pl, rbf_id, all_edges)
        u_id = tape.leaf(np.zeros((1, config.d_u)))
        t_id = None
        v_id = self.v0_id
        for b in range(config.blocks):
            t_id, ta_id = record_tu(tape, pl, b, config, m_id, rbf_id, sbf_id, all_trips, topology)
            m_id = record_eu(tape, pl, b, m_id, ta_id, all_edges)
            v_id = record_ea_nu(tape, pl, b, m_id, edge_sel, seg, topology.num_nodes)
            if config.variant == GEMNET:
                m_id = record_eu2(tape, pl, b, m_id, v_id, all_edges, topology)
                m_id = record_sym(tape, pl, b, m_id, all_edges, rev)
            g_id = record_gu_head(tape, pl, b, v_id, all_nodes)
            u_id = record_gu_tail(tape, pl, b, g_id, u_id)

        self.m_id, self.v_id, self.u_id, self.t_id = m_id, v_id, u_id, t_id
        self.energy_id = record_energy(tape, pl, u_id)
        self.forces_id = None
        if config.variant == GEMNET:
            self.forces_id = record_force_head(
                tape, pl, m_id, self.units_id, edge_sel, seg, topology.num_nodes
            )

    @property
    def energy(self) -> float:
        return float(self.tape.value(self.energy_id)[0, 0])

    @property
    def forces(self) -> np.ndarray | None:
        if self.forces_id is None:
            return None
        return self.tape.value(self.forces_id)

    @property
    def state(self) -> FeatureState:
        return FeatureState(
            global_features=self.tape.value(self.u_id),
            node_features=self.tape.value(self.v_id),
            edge_features=self.tape.value(self.m_id),
            triplet_features=self.tape.value(self.t_id) if self.t_id is not None else None,
            topology=self.topology,
            geometry=self.geometry,
            basis=self.basis,
        )

    def backward(
        self,
        d_energy: float = 1.0,
        d_forces: np.ndarray | None = None,
        check_replay: bool = False,
    ) -> GradientBundle:
        seeds: dict[int, np.ndarray] = {}
        if d_energy != 0.0:
            seeds[self.energy_id] = np.array([[d_energy]], dtype=np.float64)
        if d_forces is not None:
            if self.forces_id is None:
                raise ValueError("force seed given but this variant has no force head")
            seeds[self.forces_id] = np.asarray(d_forces, dtype=np.float64)
        if not seeds:
            seeds[self.energy_id] = np.zeros((1, 1), dtype=np.float64)
        grads = self.tape.backward(seeds, check_replay=check_replay)
        d_params = {}
        for spec in param_specs(self.config):
            leaf = self.param_leaves.ids.get(spec.name)
            g = grads[leaf] if leaf is not None else None
            d_params[spec.name] = g if g is not None else np.zeros(spec.shape, dtype=np.float64)
        d_pos = grads[self.pos_id]
        if d_pos is None:
            d_pos = np.zeros_like(self.system.positions)
        return GradientBundle(d_params, d_pos)


def sequential_forward(system: AtomicSystem, params: ModelParams) -> ModelTape:
    """Convenience wrapper; builds the graph and records the forward pass."""
    return ModelTape(system, params)
