import numpy as np
import pytest

from egn.bench import (
    CSV_HEADER,
    gen_xyz,
    parse_csv,
    verify_suite,
    weak_scaling,
)
from egn.cli import main
from egn.config import ModelConfig
from egn.graph import build_graph
from egn.partition import CommModel, comm_volume
from egn.system import parse_xyz

SMALL = ModelConfig(blocks=1, d_u=2, d_v=3, d_e=4, d_t=2, d_bil=2, k_rbf=3, l_sbf=2)


def test_gen_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    gen_xyz(12, 0.9, seed=4, out_path=a)
    gen_xyz(12, 0.9, seed=4, out_path=b)
    assert a.read_bytes() == b.read_bytes()
    system = parse_xyz(a.read_text())
    assert system.n == 12


def test_gen_single_atom(tmp_path):
    path = tmp_path / "one.xyz"
    gen_xyz(1, 0.9, seed=0, out_path=path)
    assert parse_xyz(path.read_text()).n == 1


def test_gen_default_density_connected(tmp_path):
    path = tmp_path / "cloud.xyz"
    system = gen_xyz(20, 0.9, seed=3, out_path=path)
    topo, _ = build_graph(system, cutoff=1.5)
    assert topo.num_edges > 0
    # connectivity: breadth-first reach from node 0 touches every node
    adj = [[] for _ in range(topo.num_nodes)]
    for s, r in zip(topo.edge_src, topo.edge_recv):
        adj[s].append(r)
    seen, frontier = {0}, [0]
    while frontier:
        nxt = []
        for node in frontier:
            for other in adj[node]:
                if other not in seen:
                    seen.add(other)
                    nxt.append(other)
        frontier = nxt
    assert len(seen) == topo.num_nodes


def test_verify_suite_passes_on_small_config():
    results = verify_suite(SMALL, seeds=[0], p_list=[1, 2])
    assert all(res.passed for res in results), [(r.name, r.detail) for r in results]
    names = [res.name for res in results]
    assert "parallel-vs-sequential" in names
    assert "comm-accounting" in names


def test_verify_suite_p1_only_trivially_passes():
    results = verify_suite(SMALL, seeds=[0], p_list=[1])
    equiv = next(r for r in results if r.name == "parallel-vs-sequential")
    assert equiv.passed


def test_verify_suite_detects_corrupted_reduction():
    results = verify_suite(SMALL, seeds=[0], p_list=[2], fault="drop-last")
    equiv = next(r for r in results if r.name == "parallel-vs-sequential")
    assert not equiv.passed
    assert "P=2" in equiv.detail


def test_weak_scaling_structure():
    base = SMALL.replace(variant="gemnet-style")
    report = weak_scaling(base, [1, 2], n_atoms=12, warmup=1, repeats=3)
    assert len(report.rows) == 2
    assert report.rows[0].p == 1
    assert report.rows[0].efficiency == 1.0
    for row, p in zip(report.rows, [1, 2]):
        cfg = base.replace(workers=p, d_t=base.d_t * p, d_bil=base.d_bil * p)
        rng = np.random.default_rng(0)
        from egn.system import random_cloud

        system = random_cloud(12, 0.9, rng)
        topo, _ = build_graph(system, cfg.cutoff)
        expected = comm_volume(CommModel.from_graph(topo, cfg), cfg.blocks).total
        assert row.allreduced_elements == expected


def test_weak_scaling_requires_sorted_p_list():
    with pytest.raises(ValueError):
        weak_scaling(SMALL, [2, 1])
    with pytest.raises(ValueError):
        weak_scaling(SMALL, [2, 4])


def test_csv_roundtrip_lossless():
    base = SMALL.replace(variant="gemnet-style")
    report = weak_scaling(base, [1, 2], n_atoms=10, warmup=0, repeats=2)
    text = report.to_csv()
    assert text.splitlines()[0] == CSV_HEADER
    parsed = parse_csv(text)
    for original, parsed_row in zip(report.rows, parsed.rows):
        assert original == parsed_row


def test_parse_csv_rejects_bad_header():
    with pytest.raises(ValueError):
        parse_csv("nope\n1,2,3\n")


# -- CLI ---------------------------------------------------------------


def test_cli_gen_and_run(tmp_path, capsys):
    xyz = tmp_path / "sys.xyz"
    assert main(["gen", "--n", "6", "--seed", "2", "--out", str(xyz)]) == 0
    cfg = tmp_path / "config.json"
    cfg.write_text(SMALL.to_json())
    assert main(["run", str(xyz), "--config", str(cfg), "--workers", "2"]) == 0
    out = capsys.readouterr().out
    assert "energy" in out
    assert out.count("force") == 6


def test_cli_verify_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(SMALL.to_json())
    code = main(["verify", "--config", str(cfg), "--p-list", "1,2", "--seeds", "0"])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS parallel-vs-sequential" in out

    code = main(
        ["verify", "--config", str(cfg), "--p-list", "2", "--seeds", "0", "--fault", "drop-last"]
    )
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL parallel-vs-sequential" in out


def test_cli_relax_diagnostic(tmp_path, capsys):
    xyz = tmp_path / "dimer.xyz"
    xyz.write_text("2\ndimer\nH 0 0 0\nH 0 0 2.0\n")
    cfg = tmp_path / "config.json"
    cfg.write_text(ModelConfig(cutoff=3.0).to_json())
    out_path = tmp_path / "relaxed.xyz"
    code = main([
        "relax", str(xyz), "--config", str(cfg), "--diagnostic",
        "--fmax", "1e-4", "--out", str(out_path),
    ])
    assert code == 0
    assert "converged" in capsys.readouterr().out
    relaxed = parse_xyz(out_path.read_text())
    d = np.linalg.norm(relaxed.positions[1] - relaxed.positions[0])
    assert abs(d - 1.5) < 1e-3


def test_cli_train_writes_checkpoint(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(SMALL.replace(variant="gemnet-style").to_json())
    ckpt = tmp_path / "fit.egn"
    code = main([
        "train", "--config", str(cfg), "--samples", "2", "--steps", "5",
        "--lr", "0.02", "--w-forces", "0.5", "--out", str(ckpt),
    ])
    assert code == 0
    assert ckpt.exists() and ckpt.with_suffix(".egn.json").exists()
    assert "loss" in capsys.readouterr().out


def test_cli_bench_csv(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(SMALL.replace(variant="gemnet-style").to_json())
    out = tmp_path / "bench.csv"
    code = main([
        "bench", "--config", str(cfg), "--p-list", "1,2",
        "--n-atoms", "10", "--repeats", "2", "--out", str(out),
    ])
    assert code == 0
    report = parse_csv(out.read_text())
    assert len(report.rows) == 2
