"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import time

import numpy as np
import pytest

from egn.bench import parse_csv, sample_smooth_system, weak_scaling
from egn.config import ModelConfig
from egn.engine import ModelTape
from egn.graph import build_graph
from egn.params import ModelParams, init_params
from egn.partition import CommModel, comm_volume
from egn.runtime import WorkerGroup
from egn.system import AtomicSystem, random_cloud
from egn.tasks import loss_and_grads, predict, relax, train_simple

from conftest import dimer, fd_allowance

P_VALUES = (1, 2, 3, 4, 8)
VARIANTS = ("dimenet-style", "gemnet-style")


def report(criterion: str, detail: str = ""):
    line = f"PASS {criterion}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)


def close(a, b, rtol=1e-9, atol=1e-12):
    return np.allclose(a, b, rtol=rtol, atol=atol)


def test_criterion_1_parallel_sequential_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    n_systems = 20
    for index in range(n_systems):
        n = int(rng.integers(6, 61))
        system = random_cloud(n, 0.9, rng)
        for variant in VARIANTS:
            cfg = ModelConfig(variant=variant, blocks=2, cutoff=1.5, seed=index)
            params = init_params(cfg)
            model = ModelTape(system, params)
            seq_bundle = model.backward(d_energy=1.0)
            seq_energy = model.energy
            seq_forces = model.forces if variant == "gemnet-style" else -seq_bundle.d_positions
            for p in P_VALUES:
                run = ModelParams(cfg.replace(workers=p), params.arrays)
                result, bundle = WorkerGroup(system, run).forward_backward(d_energy=1.0)
                par_forces = result.forces if variant == "gemnet-style" else -bundle.d_positions
                assert close(result.energy, seq_energy), (index, variant, p, "energy")
                assert close(par_forces, seq_forces), (index, variant, p, "forces")
                for name, g in seq_bundle.d_params.items():
                    assert close(bundle.d_params[name], g), (index, variant, p, name)
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"equivalence suite took {elapsed:.1f}s"
    report("criterion-1 parallel/sequential equivalence",
           f"{n_systems} systems x {len(VARIANTS)} variants x P{list(P_VALUES)} in {elapsed:.1f}s")


def test_criterion_2_triplets_never_communicated():
    rng = np.random.default_rng(7)
    system = random_cloud(24, 0.9, rng)
    for variant in VARIANTS:
        for d_t, d_bil in ((4, 4), (8, 8)):  # doubling the triplet dimension
            cfg = ModelConfig(variant=variant, blocks=2, workers=3, d_t=d_t, d_bil=d_bil)
            group = WorkerGroup(system, init_params(cfg))
            result, _ = group.forward_backward(d_energy=1.0)
            levels = {r.level for r in result.comm_log.records}
            assert "triplet" not in levels
            forward_levels = {r.level for r in result.comm_log.records if r.phase == "forward"}
            assert forward_levels == {"edge", "node", "global"}
            model = CommModel.from_graph(group.topology, cfg)
            expected = (
                model.n_e * model.d_e + model.n_v * model.d_v + model.d_u
                if variant == "dimenet-style"
                else 2 * model.n_e * model.d_e + model.n_v * model.d_v + model.d_u
            )
            per_block = result.comm_log.forward_blocks()
            assert sorted(per_block) == [0, 1]
            for elements in per_block.values():
                assert elements == expected, (variant, d_t, elements, expected)
            assert expected == comm_volume(model, 1).per_block
    # formula invariance under sweeping triplet count and dimension
    base = CommModel(n_v=9, n_e=30, n_t=50, d_v=3, d_e=5, d_t=2, d_u=2, variant="gemnet-style")
    for n_t in (0, 10, 500):
        for d_t in (1, 2, 64):
            swept = CommModel(n_v=9, n_e=30, n_t=n_t, d_v=3, d_e=5, d_t=d_t, d_u=2,
                              variant="gemnet-style")
            assert comm_volume(swept, 5).total == comm_volume(base, 5).total
    report("criterion-2 triplet features never communicated",
           "per-block elements equal the analytic model exactly; invariant in N_t, D_t")


def test_criterion_3_gradient_fidelity():
    start = time.perf_counter()
    rng = np.random.default_rng(31)
    cfg = ModelConfig(variant="dimenet-style", blocks=2, cutoff=1.5)
    h = 1e-5
    for index in range(10):
        system = sample_smooth_system(rng, 6, cfg.cutoff)
        params = init_params(cfg.replace(seed=index))
        energy, forces = predict(system, params, workers=1)
        assert np.abs(forces.sum(axis=0)).max() < 1e-8
        torque = np.cross(system.positions, forces).sum(axis=0)
        assert np.abs(torque).max() < 1e-8
        for atom in range(system.n):
            for axis in range(3):
                step = np.zeros_like(system.positions)
                step[atom, axis] = h
                e_plus = ModelTape(system.with_positions(system.positions + step), params).energy
                e_minus = ModelTape(system.with_positions(system.positions - step), params).energy
                fd = -(e_plus - e_minus) / (2 * h)
                exact = forces[atom, axis]
                rel = abs(fd - exact) / max(abs(fd), abs(exact), 1e-8)
                assert rel <= 1e-5, (index, atom, axis, rel)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"gradient fidelity suite took {elapsed:.1f}s"
    report("criterion-3 gradient fidelity", f"10 systems, h=1e-5, in {elapsed:.1f}s")


def test_criterion_4_physical_invariances():
    rng = np.random.default_rng(44)
    for variant in VARIANTS:
        cfg = ModelConfig(variant=variant, blocks=2)
        params = init_params(cfg)
        system = random_cloud(14, 0.9, rng)
        e0, f0 = predict(system, params, workers=1)
        for _ in range(20):
            q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            if np.linalg.det(q) < 0:
                q[:, 0] = -q[:, 0]
            shift = rng.uniform(-5, 5, size=3)
            moved = AtomicSystem(system.positions @ q.T + shift, system.atomic_numbers)
            e1, f1 = predict(moved, params, workers=1)
            assert abs(e1 - e0) <= 1e-9 * max(1.0, abs(e0))
            assert np.allclose(f1, f0 @ q.T, rtol=1e-9, atol=1e-9)
        # permutation of same-species atoms, graph rebuilt afterwards
        species = np.full(system.n, 6, dtype=np.int64)
        uniform = AtomicSystem(system.positions, species)
        e_base, f_base = predict(uniform, params, workers=1)
        perm = rng.permutation(system.n)
        permuted = AtomicSystem(system.positions[perm], species[perm])
        e_perm, f_perm = predict(permuted, params, workers=1)
        assert abs(e_perm - e_base) <= 1e-9 * max(1.0, abs(e_base))
        assert np.allclose(f_perm, f_base[perm], rtol=1e-9, atol=1e-9)
    report("criterion-4 physical invariances", "20 rigid motions + permutation, both variants")


def test_criterion_5_topology_oracle():
    rng = np.random.default_rng(55)
    cutoff = 1.5
    for index in range(50):
        n = int(rng.integers(2, 21))
        system = random_cloud(n, 0.9, rng)
        topo, _ = build_graph(system, cutoff)
        pos = system.positions
        edge_index = {
            (int(s), int(r)): e
            for e, (s, r) in enumerate(zip(topo.edge_src, topo.edge_recv))
        }
        expected_pairs = set()
        for k in range(n):
            for j in range(n):
                if j == k or np.linalg.norm(pos[j] - pos[k]) > cutoff:
                    continue
                for i in range(n):
                    if i == j or i == k:
                        continue
                    if np.linalg.norm(pos[i] - pos[j]) > cutoff:
                        continue
                    expected_pairs.add((edge_index[(k, j)], edge_index[(j, i)]))
        actual_pairs = set(zip(topo.trip_in.tolist(), topo.trip_out.tolist()))
        assert len(actual_pairs) == topo.num_triplets == len(expected_pairs), index
        assert actual_pairs == expected_pairs, index
    report("criterion-5 topology oracle", "50 systems vs O(n^3) enumeration, exact sets")


def test_criterion_6_relaxation_loop():
    cfg = ModelConfig(diagnostic=True, cutoff=3.0)
    params = init_params(cfg)
    result = relax(dimer(2.0), params, fmax_threshold=1e-4, max_steps=200, step_size=0.05)
    assert result.converged and result.steps <= 200
    final = result.trajectory[-1]
    distance = np.linalg.norm(final[1] - final[0])
    assert abs(distance - 1.5) <= 1e-3, distance
    energies = np.array(result.energies)
    assert np.all(np.diff(energies) <= 1e-12), "energy increased during relaxation"
    capped = relax(dimer(2.0), params, fmax_threshold=1e-15, max_steps=7, step_size=0.05)
    assert capped.steps == 7 and not capped.converged
    report("criterion-6 relaxation loop",
           f"dimer 2.0 -> {distance:.5f} in {result.steps} steps, monotone energy, cap honored")


def test_criterion_7_training_smoke():
    rng = np.random.default_rng(77)
    cfg = ModelConfig(variant="gemnet-style", blocks=2)
    teacher = init_params(cfg.replace(seed=99))
    dataset = []
    for _ in range(5):
        system = random_cloud(int(rng.integers(4, 8)), 0.9, rng)
        energy, forces = predict(system, teacher, workers=1)
        dataset.append((system, energy, forces))
    student = init_params(cfg.replace(seed=0))
    fitted, history = train_simple(dataset, student, lr=0.05, epochs=300,
                                   w_energy=1.0, w_forces=1.0)
    assert len(history) <= 500
    assert history[-1] <= history[0] / 10.0, (history[0], history[-1])

    # parameter-gradient finite-difference check on the loss
    probe = [dataset[0]]
    loss, grads = loss_and_grads(probe, student, w_energy=1.0, w_forces=1.0)
    h = 1e-6
    for name, arr in student.arrays.items():
        flat = arr.ravel()
        stride = max(1, flat.size // 4)
        for i in range(0, flat.size, stride):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grads(probe, ModelParams(cfg, student.arrays), 1.0, 1.0)
            flat[i] = orig - h
            down, _ = loss_and_grads(probe, ModelParams(cfg, student.arrays), 1.0, 1.0)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            exact = grads[name].ravel()[i]
            allowance = fd_allowance(max(abs(up), abs(down)), h)
            assert abs(fd - exact) <= 1e-5 * max(abs(exact), abs(fd), 1e-8) + allowance, name
    report("criterion-7 training smoke",
           f"loss {history[0]:.3e} -> {history[-1]:.3e} in {len(history)} steps")


def test_criterion_8_determinism():
    rng0 = np.random.default_rng(88)
    system = random_cloud(18, 0.9, rng0)
    cfg = ModelConfig(variant="gemnet-style", blocks=2, workers=3, seed=5)
    params = init_params(cfg)
    outputs = []
    for _ in range(2):
        result, bundle = WorkerGroup(system, params).forward_backward(d_energy=1.0)
        outputs.append((result, bundle))
    a, b = outputs
    assert a[0].energy == b[0].energy
    np.testing.assert_array_equal(a[0].forces, b[0].forces)
    np.testing.assert_array_equal(a[1].d_positions, b[1].d_positions)
    for name in a[1].d_params:
        np.testing.assert_array_equal(a[1].d_params[name], b[1].d_params[name])

    base = ModelConfig(variant="gemnet-style", blocks=1, d_u=2, d_v=3, d_e=4, d_t=2,
                       d_bil=2, k_rbf=3, l_sbf=2, seed=3)
    reports = [weak_scaling(base, [1, 2], n_atoms=10, warmup=0, repeats=2) for _ in range(2)]
    for row_a, row_b in zip(reports[0].rows, reports[1].rows):
        # non-timing columns must be bit-identical across runs
        assert (row_a.p, row_a.label, row_a.params, row_a.allreduced_elements) == (
            row_b.p, row_b.label, row_b.params, row_b.allreduced_elements
        )
    report("criterion-8 determinism", "bit-identical outputs and CSV identity columns")


def test_criterion_9_weak_scaling_harness():
    base = ModelConfig(variant="gemnet-style", blocks=2, d_u=2, d_v=3, d_e=4, d_t=2,
                       d_bil=2, k_rbf=3, l_sbf=2)
    p_list = [1, 2, 4, 8]
    report_obj = weak_scaling(base, p_list, n_atoms=20, warmup=1, repeats=3)
    assert len(report_obj.rows) == len(p_list)
    assert report_obj.rows[0].efficiency == 1.0
    rng = np.random.default_rng(0)
    system = random_cloud(20, 0.9, rng)
    topo, _ = build_graph(system, base.cutoff)
    for row, p in zip(report_obj.rows, p_list):
        cfg = base.replace(workers=p, d_t=base.d_t * p, d_bil=base.d_bil * p)
        predicted = comm_volume(CommModel.from_graph(topo, cfg), cfg.blocks).total
        assert row.allreduced_elements == predicted
        assert row.p == p
        assert row.params > 0 and row.median_ms > 0
    text = report_obj.to_csv()
    parsed = parse_csv(text)
    assert [r.p for r in parsed.rows] == p_list
    report("criterion-9 weak-scaling harness", "4 rows, efficiency(1)=1.0, comm column exact")
