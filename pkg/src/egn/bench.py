"""Verification suite, weak-scaling benchmark, and synthetic system tools."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DIMENET, GEMNET, ModelConfig
from .engine import ModelTape
from .graph import build_graph
from .params import ModelParams, init_params
from .partition import CommModel, comm_volume
from .runtime import WorkerGroup
from .system import AtomicSystem, format_xyz, random_cloud
from .tasks import predict

CSV_HEADER = "P,label,params,median_ms,throughput_graphs_per_s,allreduced_elements,efficiency"


def gen_xyz(n: int, density: float, seed: int, out_path) -> AtomicSystem:
    """Write a reproducible random atom cloud as XYZ; returns the system."""
    rng = np.random.default_rng(seed)
    system = random_cloud(n, density, rng)
    comment = f"random cloud n={n} density={density} seed={seed}"
    Path(out_path).write_text(format_xyz(system, comment))
    return system


def sample_system(rng: np.random.Generator, n: int, density: float = 0.9) -> AtomicSystem:
    return random_cloud(n, density, rng)


def sample_smooth_system(
    rng: np.random.Generator,
    n: int,
    cutoff: float,
    density: float = 0.9,
    cutoff_margin: float = 1e-3,
    angle_margin: float = 0.05,
    max_tries: int = 200,
) -> AtomicSystem:
    """Random system whose geometry sits away from cutoff crossings and
    collinear angles, so small finite-difference steps stay smooth."""
    for _ in range(max_tries):
        system = random_cloud(n, density, rng)
        _, geometry = build_graph(system, cutoff)
        pos = system.positions
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        iu = np.triu_indices(n, k=1)
        if np.any(np.abs(dist[iu] - cutoff) < cutoff_margin):
            continue
        ang = geometry.angles
        if ang.size and (np.any(ang < angle_margin) or np.any(ang > np.pi - angle_margin)):
            continue
        return system
    raise RuntimeError("could not sample a smooth system within the retry budget")


# ---------------------------------------------------------------------------
# Verification suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _rel_close(a, b, rtol=1e-9, atol=1e-12) -> bool:
    return bool(np.allclose(a, b, rtol=rtol, atol=atol))


def _max_rel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(b), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _equivalence_check(config, seeds, p_list, fault) -> CheckResult:
    for seed in seeds:
        rng = np.random.default_rng(seed)
        system = sample_system(rng, n=int(rng.integers(8, 24)))
        params = init_params(config.replace(seed=seed))
        model = ModelTape(system, params)
        seq_e = model.energy
        if config.variant == GEMNET:
            seq_f = model.forces
            seq_grad = model.backward(d_energy=1.0)
        else:
            seq_grad = model.backward(d_energy=1.0)
            seq_f = -seq_grad.d_positions
        for p in p_list:
            run = ModelParams(params.config.replace(workers=p), params.arrays)
            group = WorkerGroup(system, run, fault=fault)
            result, bundle = group.forward_backward(d_energy=1.0)
            par_f = result.forces if config.variant == GEMNET else -bundle.d_positions
            if not _rel_close(result.energy, seq_e):
                return CheckResult(
                    "parallel-vs-sequential", False,
                    f"seed={seed} P={p} energy differs by rel {_max_rel(result.energy, seq_e):.3e}",
                )
            if not _rel_close(par_f, seq_f):
                return CheckResult(
                    "parallel-vs-sequential", False,
                    f"seed={seed} P={p} forces differ by rel {_max_rel(par_f, seq_f):.3e}",
                )
            for name, g in seq_grad.d_params.items():
                if not _rel_close(bundle.d_params[name], g):
                    return CheckResult(
                        "parallel-vs-sequential", False,
                        f"seed={seed} P={p} gradient {name} differs",
                    )
    return CheckResult("parallel-vs-sequential", True)


def _fd_forces_check(config, seeds) -> CheckResult:
    fd_cfg = config.replace(variant=DIMENET, workers=1)
    h = 1e-5
    for seed in seeds:
        rng = np.random.default_rng(seed)
        system = sample_smooth_system(rng, n=6, cutoff=fd_cfg.cutoff)
        params = init_params(fd_cfg.replace(seed=seed))
        _, forces = predict(system, params, workers=1)
        for atom in range(system.n):
            for axis in range(3):
                shift = np.zeros_like(system.positions)
                shift[atom, axis] = h
                e_plus, _ = predict(system.with_positions(system.positions + shift), params, 1)
                e_minus, _ = predict(system.with_positions(system.positions - shift), params, 1)
                fd = -(e_plus - e_minus) / (2 * h)
                rel = abs(fd - forces[atom, axis]) / max(abs(fd), abs(forces[atom, axis]), 1e-8)
                if rel > 1e-5:
                    return CheckResult(
                        "finite-difference-forces", False,
                        f"seed={seed} atom={atom} axis={axis} rel={rel:.3e}",
                    )
    return CheckResult("finite-difference-forces", True)


def _rigid_motion_check(config, seeds) -> CheckResult:
    for seed in seeds:
        rng = np.random.default_rng(seed)
        system = sample_system(rng, n=12)
        params = init_params(config.replace(seed=seed, workers=1))
        e0, f0 = predict(system, params, workers=1)
        rot = _random_rotation(rng)
        shift = rng.uniform(-3, 3, size=3)
        moved = AtomicSystem(system.positions @ rot.T + shift, system.atomic_numbers)
        e1, f1 = predict(moved, params, workers=1)
        if abs(e1 - e0) > 1e-9 * max(1.0, abs(e0)):
            return CheckResult("rigid-motion-invariance", False, f"seed={seed} dE={e1 - e0:.3e}")
        if not np.allclose(f1, f0 @ rot.T, rtol=1e-9, atol=1e-9):
            return CheckResult("rigid-motion-invariance", False, f"seed={seed} forces not equivariant")
    return CheckResult("rigid-motion-invariance", True)


def _permutation_check(config, seeds) -> CheckResult:
    for seed in seeds:
        rng = np.random.default_rng(seed)
        system = sample_system(rng, n=10)
        numbers = np.full(system.n, 6, dtype=np.int64)  # one species so any permutation applies
        system = AtomicSystem(system.positions, numbers)
        params = init_params(config.replace(seed=seed, workers=1))
        e0, f0 = predict(system, params, workers=1)
        perm = rng.permutation(system.n)
        permuted = AtomicSystem(system.positions[perm], numbers[perm])
        e1, f1 = predict(permuted, params, workers=1)
        if abs(e1 - e0) > 1e-9 * max(1.0, abs(e0)):
            return CheckResult("permutation-invariance", False, f"seed={seed} dE={e1 - e0:.3e}")
        if not np.allclose(f1, f0[perm], rtol=1e-9, atol=1e-9):
            return CheckResult("permutation-invariance", False, f"seed={seed} forces not permuted")
    return CheckResult("permutation-invariance", True)


def _comm_accounting_check(config, seeds, p_list) -> CheckResult:
    for seed in seeds[:1]:
        rng = np.random.default_rng(seed)
        system = sample_system(rng, n=14)
        for p in p_list:
            params = init_params(config.replace(seed=seed, workers=p))
            group = WorkerGroup(system, params)
            result, _ = group.forward_backward(d_energy=1.0)
            model = CommModel.from_graph(group.topology, params.config)
            expected = comm_volume(model, config.blocks)
            per_block = result.comm_log.forward_blocks()
            if sorted(per_block) != list(range(config.blocks)):
                return CheckResult("comm-accounting", False, f"P={p} missing block records")
            for block, elems in per_block.items():
                if elems != expected.per_block:
                    return CheckResult(
                        "comm-accounting", False,
                        f"P={p} block={block} measured {elems} != predicted {expected.per_block}",
                    )
    return CheckResult("comm-accounting", True)


def _triplet_isolation_check(config, seeds, p_list) -> CheckResult:
    rng = np.random.default_rng(seeds[0] if seeds else 0)
    system = sample_system(rng, n=14)
    for p in p_list:
        params = init_params(config.replace(workers=p))
        group = WorkerGroup(system, params)
        result, _ = group.forward_backward(d_energy=1.0)
        levels = {rec.level for rec in result.comm_log.records if rec.phase == "forward"}
        if not levels <= {"edge", "node", "global"}:
            return CheckResult("no-triplet-communication", False, f"P={p} levels={sorted(levels)}")
    return CheckResult("no-triplet-communication", True)


def verify_suite(
    config: ModelConfig,
    seeds: list[int],
    p_list: list[int],
    fault: str | None = None,
) -> list[CheckResult]:
    """Run the invariant suite; one result per named check."""
    return [
        _equivalence_check(config, seeds, p_list, fault),
        _fd_forces_check(config, seeds[:2]),
        _rigid_motion_check(config, seeds[:2]),
        _permutation_check(config, seeds[:2]),
        _comm_accounting_check(config, seeds, p_list),
        _triplet_isolation_check(config, seeds, p_list),
    ]


# ---------------------------------------------------------------------------
# Weak scaling
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    p: int
    label: str
    params: int
    median_ms: float
    throughput_graphs_per_s: float
    allreduced_elements: int
    efficiency: float

    def to_csv(self) -> str:
        return (
            f"{self.p},{self.label},{self.params},{self.median_ms!r},"
            f"{self.throughput_graphs_per_s!r},{self.allreduced_elements},{self.efficiency!r}"
        )


@dataclass
class BenchReport:
    rows: list[BenchRow]

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [row.to_csv() for row in self.rows]) + "\n"


def parse_csv(text: str) -> BenchReport:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    rows = []
    for line in lines[1:]:
        p, label, n_params, median_ms, thr, elems, eff = line.split(",")
        rows.append(
            BenchRow(int(p), label, int(n_params), float(median_ms), float(thr), int(elems), float(eff))
        )
    return BenchReport(rows)


def weak_scaling(
    base_config: ModelConfig,
    p_list: list[int],
    n_atoms: int = 40,
    density: float = 0.9,
    seed: int = 0,
    warmup: int = 2,
    repeats: int = 10,
) -> BenchReport:
    """Scale the triplet dimension with the worker count and time
    forward+backward passes. Graph construction happens once per row and is
    excluded from timing. Efficiency is median time at P=1 over median time
    at P; no target value is asserted.
    """
    if sorted(p_list) != list(p_list) or not p_list or p_list[0] != 1:
        raise ValueError("p_list must be sorted ascending and start at 1")
    rng = np.random.default_rng(seed)
    system = random_cloud(n_atoms, density, rng)
    rows: list[BenchRow] = []
    base_ms = None
    for p in p_list:
        config = base_config.replace(
            workers=p, d_t=base_config.d_t * p, d_bil=base_config.d_bil * p, seed=seed
        )
        params = init_params(config)
        group = WorkerGroup(system, params)
        for _ in range(warmup):
            group.forward_backward(d_energy=1.0)
        times = []
        measured = None
        for _ in range(repeats):
            tic = time.perf_counter()
            result, _ = group.forward_backward(d_energy=1.0)
            times.append((time.perf_counter() - tic) * 1000.0)
            measured = result.comm_log.elements(phase="forward")
        model = CommModel.from_graph(group.topology, config)
        predicted = comm_volume(model, config.blocks).total
        if measured != predicted:
            raise AssertionError(f"measured all-reduce elements {measured} != predicted {predicted}")
        median_ms = float(np.median(times))
        if base_ms is None:
            base_ms = median_ms
        rows.append(
            BenchRow(
                p=p,
                label=f"B{config.blocks}-dt{config.d_t}",
                params=params.num_params(),
                median_ms=median_ms,
                throughput_graphs_per_s=1000.0 / median_ms,
                allreduced_elements=measured,
                efficiency=base_ms / median_ms,
            )
        )
    return BenchReport(rows)
