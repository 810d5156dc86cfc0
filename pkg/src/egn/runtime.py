"""Simulated multi-worker execution of the block pipeline.

P workers run as threads that communicate only through a Collective
endpoint offering a deterministic all-reduce (reduction in ascending rank
order, identical result delivered everywhere) and a barrier. Worker-local
state is owned exclusively by its worker between collectives.

Forward schedule per block (dimenet-style):
  * triplet update over the worker's shard, local aggregation by out-edge
    into a zero edge buffer, all-reduce (N_e * d_e elements),
  * edge update recomputed identically on every worker from the replicated
    inputs (no communication),
  * edge aggregation + node update for the worker's node shard into a zero
    node buffer, all-reduce (N_v * d_v elements),
  * global head: the node sum of the shard projected to d_u, all-reduce
    (d_u elements), tail finished redundantly.
The gemnet-style variant inserts the second edge update over the edge shard
followed by one additional edge all-reduce, after which the symmetric
coupling is formed redundantly from the replicated buffer.

Backward mirrors the schedule: the adjoint of an all-reduced buffer is
itself summed across workers at each replicated-buffer boundary, each
worker differentiates only the rows it owns, and parameter and position
gradients are all-reduced once at the end. Triplet features never enter a
collective in either direction.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import compute_basis, rbf_features_ddist, sbf_features_partials
from .config import GEMNET
from .engine import (
    FeatureState,
    GradientBundle,
    ParamLeaves,
    np_edge_init,
    np_energy,
    np_eu,
    np_force_head,
    np_gu_tail,
    np_sym,
    receiver_plan,
    record_ea_nu,
    record_edge_init,
    record_energy,
    record_eu,
    record_eu2,
    record_force_head,
    record_gu_head,
    record_gu_tail,
    record_sym,
    record_tu,
)
from .graph import angle_gradients, build_graph
from .params import ModelParams, param_specs
from .partition import GraphPartition, partition_graph
from .system import AtomicSystem
from .tape import Tape

ALLOWED_LEVELS = frozenset({"edge", "node", "global", "position", "param"})


class CollectiveError(RuntimeError):
    pass


class CollectiveShapeError(CollectiveError):
    pass


class CollectiveTimeoutError(CollectiveError):
    pass


class WorkerGroupError(RuntimeError):
    def __init__(self, stage: str, rank: int, cause: BaseException):
        super().__init__(f"worker {rank} failed during stage {stage!r}: {cause!r}")
        self.stage = stage
        self.rank = rank


@dataclass(frozen=True)
class CommRecord:
    phase: str  # "forward" | "backward"
    block: int  # -1 for model-level collectives
    stage: str
    level: str
    elements: int


@dataclass
class CommLog:
    records: list[CommRecord] = field(default_factory=list)

    def elements(self, phase: str | None = None, block: int | None = None) -> int:
        total = 0
        for rec in self.records:
            if phase is not None and rec.phase != phase:
                continue
            if block is not None and rec.block != block:
                continue
            total += rec.elements
        return total

    def forward_blocks(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for rec in self.records:
            if rec.phase == "forward" and rec.block >= 0:
                out[rec.block] = out.get(rec.block, 0) + rec.elements
        return out

    def levels(self) -> set[str]:
        return {rec.level for rec in self.records}

    def to_csv_rows(self) -> list[str]:
        rows = ["phase,block,stage,level,elements,bytes"]
        for rec in self.records:
            rows.append(
                f"{rec.phase},{rec.block},{rec.stage},{rec.level},{rec.elements},{rec.elements * 8}"
            )
        return rows


class Collective:
    """Group endpoint: deterministic all-reduce-sum and barrier for P workers."""

    def __init__(self, workers: int, log: CommLog, timeout: float = 30.0, fault: str | None = None):
        self.workers = workers
        self.log = log
        self.timeout = timeout
        self.fault = fault
        self._slots: list[np.ndarray | None] = [None] * workers
        self._result: np.ndarray | None = None
        self._error: str | None = None
        self._enter = threading.Barrier(workers)
        self._exit = threading.Barrier(workers)

    def abort(self) -> None:
        self._enter.abort()
        self._exit.abort()

    def barrier(self, rank: int) -> None:
        self._wait(self._enter)
        self._wait(self._exit)

    def _wait(self, barrier: threading.Barrier) -> None:
        try:
            barrier.wait(timeout=self.timeout)
        except threading.BrokenBarrierError:
            if barrier.broken:
                raise CollectiveTimeoutError(
                    f"collective did not complete within {self.timeout}s "
                    "(missing participant or aborted group)"
                ) from None
            raise

    def allreduce_sum(
        self,
        rank: int,
        buffer: np.ndarray,
        *,
        phase: str,
        block: int,
        stage: str,
        level: str,
    ) -> np.ndarray:
        """Rank-ordered sum of all workers' buffers, identical on every worker."""
        if level not in ALLOWED_LEVELS:
            raise ValueError(f"buffers of level {level!r} must never enter a collective")
        self._slots[rank] = np.asarray(buffer, dtype=np.float64)
        self._wait(self._enter)
        if rank == 0:
            shapes = {slot.shape for slot in self._slots}
            if len(shapes) != 1:
                self._error = f"shape mismatch across workers: {sorted(shapes)}"
                self._result = None
            else:
                last = self.workers - 1 if self.fault == "drop-last" and self.workers > 1 else None
                total = self._slots[0].copy()
                for r in range(1, self.workers):
                    if r == last:
                        continue
                    total += self._slots[r]
                self._result = total
                self._error = None
                self.log.records.append(
                    CommRecord(phase=phase, block=block, stage=stage, level=level,
                               elements=int(total.size))
                )
        self._wait(self._exit)
        if self._error is not None:
            raise CollectiveShapeError(self._error)
        return self._result.copy()


@dataclass
class ParallelRunResult:
    energy: float
    forces: np.ndarray | None
    state: FeatureState
    triplet_shards: list[np.ndarray]
    comm_log: CommLog
    replica_digests: list[list[str]]
    stage_seconds: dict[str, float]

    def timing_csv_rows(self) -> list[str]:
        rows = ["stage,seconds"]
        for stage, seconds in self.stage_seconds.items():
            rows.append(f"{stage},{seconds!r}")
        return rows


class _Seg:
    """One tape segment: owned rows of a stage, with named input leaves."""

    def __init__(self, params: ModelParams):
        self.tape = Tape()
        self.pl = ParamLeaves(self.tape, params)
        self.leaves: dict[str, int] = {}
        self.out: int | None = None

    def leaf(self, key: str, value: np.ndarray) -> int:
        nid = self.tape.leaf(value)
        self.leaves[key] = nid
        return nid

    def backward(self, seed: np.ndarray) -> list[np.ndarray | None]:
        return self.tape.backward({self.out: seed})

    def leaf_grad(self, grads, key: str, shape) -> np.ndarray:
        g = grads[self.leaves[key]]
        return g if g is not None else np.zeros(shape, dtype=np.float64)


class _WorkerContext:
    def __init__(self, rank: int, timed: bool):
        self.rank = rank
        self.stage = "setup"
        self.segs: dict = {}
        self.digests: list[str] = []
        self.stage_seconds: dict[str, float] = {}
        self._timed = timed
        self._tic = time.perf_counter()

    def set_stage(self, name: str) -> None:
        now = time.perf_counter()
        if self._timed and self.stage != "setup":
            self.stage_seconds[self.stage] = (
                self.stage_seconds.get(self.stage, 0.0) + now - self._tic
            )
        self.stage = name
        self._tic = now

    def finish_timing(self) -> None:
        self.set_stage("done")


class WorkerGroup:
    """P simulated workers bound to one system, partition, and parameter set.

    Workers share read-only views of the topology, geometry, basis, and
    parameters (each conceptually holds a full replica); the only
    cross-worker channel is the Collective. A group serves one driver at a
    time; run forward()/forward_backward() as often as needed.
    """

    def __init__(
        self,
        system: AtomicSystem,
        params: ModelParams,
        timeout: float = 30.0,
        fault: str | None = None,
        track_replicas: bool = False,
    ):
        config = params.config
        self.system = system
        self.params = params
        self.config = config
        self.workers = config.workers
        self.timeout = timeout
        self.fault = fault
        self.track_replicas = track_replicas

        self.topology, self.geometry = build_graph(system, config.cutoff)
        self.basis = compute_basis(
            self.geometry, self.topology, config.k_rbf, config.l_sbf, config.cutoff
        )
        self.partition: GraphPartition = partition_graph(self.topology, self.workers)
        self.rev = self.topology.reverse_edges() if config.variant == GEMNET else None
        self.full_plan = receiver_plan(self.topology, 0, self.topology.num_nodes)
        self._node_ranges = []
        self._rank_plans = []
        for shard in self.partition.node_shards:
            lo, hi = (int(shard[0]), int(shard[-1]) + 1) if shard.size else (0, 0)
            self._node_ranges.append((lo, hi))
            self._rank_plans.append(receiver_plan(self.topology, lo, hi))

    # -- public API ----------------------------------------------------

    def forward(self) -> ParallelRunResult:
        result, _ = self._run(mode="forward", d_energy=0.0, d_forces=None)
        return result

    def forward_backward(
        self, d_energy: float = 1.0, d_forces: np.ndarray | None = None
    ) -> tuple[ParallelRunResult, GradientBundle]:
        if d_forces is not None and self.config.variant != GEMNET:
            raise ValueError("force seeds require the force-centric variant")
        return self._run(mode="forward_backward", d_energy=d_energy, d_forces=d_forces)

    # -- orchestration ---------------------------------------------------

    def _run(self, mode: str, d_energy: float, d_forces: np.ndarray | None):
        log = CommLog()
        collective = Collective(self.workers, log, timeout=self.timeout, fault=self.fault)
        contexts = [_WorkerContext(rank, timed=rank == 0) for rank in range(self.workers)]
        outputs: list = [None] * self.workers
        errors: list = [None] * self.workers

        def body(rank: int) -> None:
            ctx = contexts[rank]
            try:
                fwd = self._worker_forward(ctx, collective)
                bundle = None
                if mode == "forward_backward":
                    bundle = self._worker_backward(ctx, collective, fwd, d_energy, d_forces)
                outputs[rank] = (fwd, bundle)
            except BaseException as exc:  # noqa: BLE001 - reported to the caller
                errors[rank] = exc
                collective.abort()

        if self.workers == 1:
            body(0)
        else:
            threads = [
                threading.Thread(target=body, args=(rank,), name=f"egn-worker-{rank}")
                for rank in range(self.workers)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

        primary = None
        for rank, exc in enumerate(errors):
            if exc is None:
                continue
            if primary is None or (
                isinstance(primary[1], CollectiveTimeoutError)
                and not isinstance(exc, CollectiveTimeoutError)
            ):
                primary = (rank, exc)
        if primary is not None:
            rank, exc = primary
            raise WorkerGroupError(contexts[rank].stage, rank, exc) from exc

        contexts[0].finish_timing()
        fwd0, bundle0 = outputs[0]
        energies = {out[0]["energy"] for out in outputs}
        if len(energies) != 1:
            raise WorkerGroupError("finalize", 0, AssertionError("worker outputs diverged"))

        state = FeatureState(
            global_features=fwd0["u"],
            node_features=fwd0["v"],
            edge_features=fwd0["m"],
            triplet_features=None,
            topology=self.topology,
            geometry=self.geometry,
            basis=self.basis,
        )
        result = ParallelRunResult(
            energy=float(fwd0["energy"]),
            forces=fwd0["forces"],
            state=state,
            triplet_shards=[out[0]["t_own"] for out in outputs],
            comm_log=log,
            replica_digests=[ctx.digests for ctx in contexts],
            stage_seconds=contexts[0].stage_seconds,
        )
        return result, bundle0

    # -- worker forward ----------------------------------------------------

    def _worker_forward(self, ctx: _WorkerContext, col: Collective) -> dict:
        cfg = self.config
        arrays = self.params.arrays
        topo, geom, basis = self.topology, self.geometry, self.basis
        rank = ctx.rank
        trip_rows = self.partition.triplet_shards[rank]
        edge_rows = self.partition.edge_shards[rank]
        node_rows = self.partition.node_shards[rank]
        lo, hi = self._node_ranges[rank]
        ea_sel, ea_seg = self._rank_plans[rank]
        gemnet = cfg.variant == GEMNET

        def ar(buf, level, block, stage):
            out = col.allreduce_sum(
                rank, buf, phase="forward", block=block, stage=stage, level=level
            )
            if self.track_replicas:
                ctx.digests.append(hashlib.sha256(out.tobytes()).hexdigest())
            return out

        ctx.set_stage("init")
        seg = _Seg(self.params)
        rbf_leaf = seg.leaf("rbf", basis.edge_rbf)
        seg.out = record_edge_init(seg.tape, seg.pl, rbf_leaf, edge_rows)
        ctx.segs["init"] = seg

        m = np_edge_init(basis.edge_rbf, arrays)
        u = np.zeros((1, cfg.d_u), dtype=np.float64)
        v = np.zeros((topo.num_nodes, cfg.d_v), dtype=np.float64)
        t_own = np.zeros((trip_rows.size, cfg.d_t), dtype=np.float64)

        for b in range(cfg.blocks):
            ctx.set_stage(f"block{b}.tu")
            seg = _Seg(self.params)
            m_leaf = seg.leaf("m", m)
            rbf_leaf = seg.leaf("rbf", basis.edge_rbf)
            sbf_leaf = seg.leaf("sbf", basis.triplet_sbf)
            t_id, ta_id = record_tu(seg.tape, seg.pl, b, cfg, m_leaf, rbf_leaf, sbf_leaf, trip_rows, topo)
            seg.out = ta_id
            ctx.segs[("tu", b)] = seg
            t_own = seg.tape.value(t_id)
            ta = ar(seg.tape.value(ta_id), "edge", b, "ta")

            ctx.set_stage(f"block{b}.eu")
            seg = _Seg(self.params)
            m_leaf = seg.leaf("m", m)
            ta_leaf = seg.leaf("ta", ta)
            seg.out = record_eu(seg.tape, seg.pl, b, m_leaf, ta_leaf, edge_rows)
            ctx.segs[("eu", b)] = seg
            m_new = np_eu(m, ta, arrays, b)

            ctx.set_stage(f"block{b}.nu")
            seg = _Seg(self.params)
            m_leaf = seg.leaf("m", m_new)
            seg.out = record_ea_nu(seg.tape, seg.pl, b, m_leaf, ea_sel, ea_seg, hi - lo)
            ctx.segs[("eanu", b)] = seg
            v_local = np.zeros((topo.num_nodes, cfg.d_v), dtype=np.float64)
            v_local[lo:hi] = seg.tape.value(seg.out)
            v = ar(v_local, "node", b, "nu")

            if gemnet:
                ctx.set_stage(f"block{b}.eu2")
                seg = _Seg(self.params)
                m_leaf = seg.leaf("m", m_new)
                v_leaf = seg.leaf("v", v)
                seg.out = record_eu2(seg.tape, seg.pl, b, m_leaf, v_leaf, edge_rows, topo)
                ctx.segs[("eu2", b)] = seg
                m2_local = np.zeros((topo.num_edges, cfg.d_e), dtype=np.float64)
                m2_local[edge_rows] = seg.tape.value(seg.out)
                m2 = ar(m2_local, "edge", b, "eu2")

                ctx.set_stage(f"block{b}.sym")
                seg = _Seg(self.params)
                m2_leaf = seg.leaf("m2", m2)
                seg.out = record_sym(seg.tape, seg.pl, b, m2_leaf, edge_rows, self.rev)
                ctx.segs[("sym", b)] = seg
                m = np_sym(m2, self.rev, arrays, b)
            else:
                m = m_new

            ctx.set_stage(f"block{b}.gu")
            seg = _Seg(self.params)
            v_leaf = seg.leaf("v", v)
            seg.out = record_gu_head(seg.tape, seg.pl, b, v_leaf, node_rows)
            ctx.segs[("guh", b)] = seg
            z = ar(seg.tape.value(seg.out), "global", b, "gu")

            if rank == 0:
                seg = _Seg(self.params)
                z_leaf = seg.leaf("z", z)
                u_leaf = seg.leaf("u", u)
                seg.out = record_gu_tail(seg.tape, seg.pl, b, z_leaf, u_leaf)
                ctx.segs[("gut", b)] = seg
            u = np_gu_tail(z, u, arrays, b)

        ctx.set_stage("readout")
        energy = float(np_energy(u, arrays)[0, 0])
        if rank == 0:
            seg = _Seg(self.params)
            u_leaf = seg.leaf("u", u)
            seg.out = record_energy(seg.tape, seg.pl, u_leaf)
            ctx.segs["energy"] = seg
        forces = None
        if gemnet:
            forces = np_force_head(
                m, geom.unit_vectors, arrays, self.full_plan[0], self.full_plan[1], topo.num_nodes
            )
            seg = _Seg(self.params)
            m_leaf = seg.leaf("m", m)
            units_leaf = seg.leaf("units", geom.unit_vectors)
            seg.out = record_force_head(seg.tape, seg.pl, m_leaf, units_leaf, ea_sel, ea_seg, hi - lo)
            ctx.segs["force"] = seg

        return {
            "energy": energy,
            "forces": forces,
            "m": m,
            "v": v,
            "u": u,
            "t_own": t_own,
        }

    # -- worker backward -----------------------------------------------

    def _worker_backward(
        self,
        ctx: _WorkerContext,
        col: Collective,
        fwd: dict,
        d_energy: float,
        d_forces: np.ndarray | None,
    ) -> GradientBundle:
        cfg = self.config
        topo, geom, basis = self.topology, self.geometry, self.basis
        rank = ctx.rank
        edge_rows = self.partition.edge_shards[rank]
        lo, hi = self._node_ranges[rank]
        gemnet = cfg.variant == GEMNET
        specs = param_specs(cfg)
        param_bar = {s.name: np.zeros(s.shape, dtype=np.float64) for s in specs}
        rbf_bar = np.zeros_like(basis.edge_rbf)
        sbf_bar = np.zeros_like(basis.triplet_sbf)
        units_bar = np.zeros_like(geom.unit_vectors)

        def ar(buf, level, block, stage):
            out = col.allreduce_sum(
                rank, buf, phase="backward", block=block, stage=stage, level=level
            )
            if self.track_replicas:
                ctx.digests.append(hashlib.sha256(out.tobytes()).hexdigest())
            return out

        def pull_params(seg: _Seg, grads) -> None:
            for name, nid in seg.pl.ids.items():
                g = grads[nid]
                if g is not None:
                    param_bar[name] += g

        ctx.set_stage("backward.readout")
        if rank == 0 and d_energy != 0.0:
            seg = ctx.segs["energy"]
            grads = seg.backward(np.array([[d_energy]], dtype=np.float64))
            pull_params(seg, grads)
            u_bar_part = seg.leaf_grad(grads, "u", (1, cfg.d_u))
        else:
            u_bar_part = np.zeros((1, cfg.d_u), dtype=np.float64)
        u_bar = ar(u_bar_part, "global", -1, "energy")

        m_bar = np.zeros((topo.num_edges, cfg.d_e), dtype=np.float64)
        if gemnet and d_forces is not None:
            seg = ctx.segs["force"]
            grads = seg.backward(np.asarray(d_forces, dtype=np.float64)[lo:hi])
            pull_params(seg, grads)
            units_bar += seg.leaf_grad(grads, "units", units_bar.shape)
            m_bar = ar(seg.leaf_grad(grads, "m", m_bar.shape), "edge", -1, "force")

        for b in range(cfg.blocks - 1, -1, -1):
            ctx.set_stage(f"backward.block{b}.gu")
            if rank == 0:
                seg = ctx.segs[("gut", b)]
                grads = seg.backward(u_bar)
                pull_params(seg, grads)
                z_bar_part = seg.leaf_grad(grads, "z", (1, cfg.d_u))
            else:
                z_bar_part = np.zeros((1, cfg.d_u), dtype=np.float64)
            z_bar = ar(z_bar_part, "global", b, "gu")

            seg = ctx.segs[("guh", b)]
            grads = seg.backward(z_bar)
            pull_params(seg, grads)
            v_bar_part = seg.leaf_grad(grads, "v", (topo.num_nodes, cfg.d_v))

            m_new_bar_part = None
            if gemnet:
                ctx.set_stage(f"backward.block{b}.sym")
                seg = ctx.segs[("sym", b)]
                grads = seg.backward(m_bar[edge_rows])
                pull_params(seg, grads)
                m2_bar = ar(seg.leaf_grad(grads, "m2", m_bar.shape), "edge", b, "sym")

                ctx.set_stage(f"backward.block{b}.eu2")
                seg = ctx.segs[("eu2", b)]
                grads = seg.backward(m2_bar[edge_rows])
                pull_params(seg, grads)
                m_new_bar_part = seg.leaf_grad(grads, "m", m_bar.shape)
                v_bar_part = v_bar_part + seg.leaf_grad(grads, "v", v_bar_part.shape)

            ctx.set_stage(f"backward.block{b}.nu")
            v_bar = ar(v_bar_part, "node", b, "nu")
            seg = ctx.segs[("eanu", b)]
            grads = seg.backward(v_bar[lo:hi])
            pull_params(seg, grads)
            ea_contrib = seg.leaf_grad(grads, "m", m_bar.shape)
            if gemnet:
                m_new_bar = ar(m_new_bar_part + ea_contrib, "edge", b, "m_new")
            else:
                m_new_bar = m_bar + ar(ea_contrib, "edge", b, "m_new")

            ctx.set_stage(f"backward.block{b}.eu")
            seg = ctx.segs[("eu", b)]
            grads = seg.backward(m_new_bar[edge_rows])
            pull_params(seg, grads)
            m_in_part = seg.leaf_grad(grads, "m", m_bar.shape)
            ta_bar = ar(seg.leaf_grad(grads, "ta", m_bar.shape), "edge", b, "ta")

            ctx.set_stage(f"backward.block{b}.tu")
            seg = ctx.segs[("tu", b)]
            grads = seg.backward(ta_bar)
            pull_params(seg, grads)
            m_in_part = m_in_part + seg.leaf_grad(grads, "m", m_bar.shape)
            rbf_bar += seg.leaf_grad(grads, "rbf", rbf_bar.shape)
            sbf_bar += seg.leaf_grad(grads, "sbf", sbf_bar.shape)
            m_bar = ar(m_in_part, "edge", b, "m_in")

        ctx.set_stage("backward.init")
        seg = ctx.segs["init"]
        grads = seg.backward(m_bar[edge_rows])
        pull_params(seg, grads)
        rbf_bar += seg.leaf_grad(grads, "rbf", rbf_bar.shape)

        ctx.set_stage("backward.geometry")
        d_in_part, d_ang_part = sbf_features_partials(
            geom.distances[topo.trip_in], geom.angles, cfg.k_rbf, cfg.l_sbf, cfg.cutoff
        )
        d_in_bar = (sbf_bar * d_in_part).sum(axis=1)
        ang_bar = (sbf_bar * d_ang_part).sum(axis=1)
        dist_bar = np.zeros_like(geom.distances)
        np.add.at(dist_bar, topo.trip_in, d_in_bar)
        dist_bar += (rbf_bar * rbf_features_ddist(geom.distances, cfg.k_rbf, cfg.cutoff)).sum(axis=1)

        # Each geometry op accumulates into its own buffer and the buffers
        # are added in reverse recording order, matching the tape's
        # association so a single worker reproduces the sequential engine.
        pos_bar = np.zeros_like(self.system.positions)
        if topo.num_triplets:
            g_k, g_j, g_i = angle_gradients(self.system.positions, topo)
            k = topo.edge_src[topo.trip_in]
            j = topo.edge_recv[topo.trip_in]
            i = topo.edge_recv[topo.trip_out]
            buf = np.zeros_like(pos_bar)
            np.add.at(buf, k, ang_bar[:, None] * g_k)
            np.add.at(buf, i, ang_bar[:, None] * g_i)
            np.add.at(buf, j, ang_bar[:, None] * g_j)
            pos_bar = pos_bar + buf
        if gemnet and topo.num_edges:
            diff = self.system.positions[topo.edge_recv] - self.system.positions[topo.edge_src]
            d = geom.distances
            unit = diff / d[:, None]
            proj = (units_bar * unit).sum(axis=1, keepdims=True)
            contrib = (units_bar - proj * unit) / d[:, None]
            buf = np.zeros_like(pos_bar)
            np.add.at(buf, topo.edge_recv, contrib)
            np.add.at(buf, topo.edge_src, -contrib)
            pos_bar = pos_bar + buf
        if topo.num_edges:
            contrib = dist_bar[:, None] * geom.unit_vectors
            buf = np.zeros_like(pos_bar)
            np.add.at(buf, topo.edge_recv, contrib)
            np.add.at(buf, topo.edge_src, -contrib)
            pos_bar = pos_bar + buf

        ctx.set_stage("backward.reduce")
        pos_grad = ar(pos_bar, "position", -1, "positions")
        flat = np.concatenate([param_bar[s.name].ravel() for s in specs])
        flat = ar(flat, "param", -1, "params")
        d_params: dict[str, np.ndarray] = {}
        offset = 0
        for s in specs:
            size = int(np.prod(s.shape, dtype=np.int64))
            d_params[s.name] = flat[offset : offset + size].reshape(s.shape)
            offset += size
        return GradientBundle(d_params, pos_grad)
