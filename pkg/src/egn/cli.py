"""Command-line interface: gen, run, verify, relax, train, bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .bench import gen_xyz, parse_csv, sample_system, verify_suite, weak_scaling
from .config import GEMNET, ModelConfig
from .params import init_params
from .system import format_xyz, parse_xyz
from .tasks import load_checkpoint, predict, relax, save_checkpoint, train_simple


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON model config path")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--workers", type=int, default=None, help="override the worker count")
    common.add_argument("--out", type=Path, default=None, help="output path")
    return common


def _resolve_config(args) -> ModelConfig:
    if args.config is not None:
        config = ModelConfig.from_json(Path(args.config).read_text())
    else:
        config = ModelConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.workers is not None:
        config = config.replace(workers=args.workers)
    return config


def _resolve_params(args, config: ModelConfig):
    if getattr(args, "params", None) is not None:
        params = load_checkpoint(args.params)
        overrides = {}
        if args.workers is not None:
            overrides["workers"] = args.workers
        if overrides:
            from .params import ModelParams

            params = ModelParams(params.config.replace(**overrides), params.arrays)
        return params
    return init_params(config)


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="egn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", parents=[common], help="generate a random XYZ system")
    p_gen.add_argument("--n", type=int, default=20)
    p_gen.add_argument("--density", type=float, default=0.9)

    p_run = sub.add_parser("run", parents=[common], help="predict energy and forces")
    p_run.add_argument("xyz", type=Path)
    p_run.add_argument("--params", type=Path, default=None, help="checkpoint to load")

    p_verify = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    p_verify.add_argument("--p-list", type=_parse_int_list, default=[1, 2, 3])
    p_verify.add_argument("--seeds", type=_parse_int_list, default=[0, 1])
    p_verify.add_argument("--fault", default=None, help=argparse.SUPPRESS)  # test hook

    p_relax = sub.add_parser("relax", parents=[common], help="relax a structure")
    p_relax.add_argument("xyz", type=Path)
    p_relax.add_argument("--fmax", type=float, required=True, help="convergence force threshold")
    p_relax.add_argument("--max-steps", type=int, default=200)
    p_relax.add_argument("--step-size", type=float, default=0.05)
    p_relax.add_argument("--params", type=Path, default=None)
    p_relax.add_argument("--diagnostic", action="store_true", help="quadratic well model")

    p_train = sub.add_parser("train", parents=[common], help="fit a toy fixture")
    p_train.add_argument("--samples", type=int, default=5)
    p_train.add_argument("--steps", type=int, default=200)
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--w-energy", type=float, default=1.0)
    p_train.add_argument("--w-forces", type=float, default=0.0)

    p_bench = sub.add_parser("bench", parents=[common], help="weak-scaling benchmark CSV")
    p_bench.add_argument("--p-list", type=_parse_int_list, default=[1, 2, 4, 8])
    p_bench.add_argument("--n-atoms", type=int, default=40)
    p_bench.add_argument("--repeats", type=int, default=10)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = _resolve_config(args)
    seed = config.seed

    if args.command == "gen":
        out = args.out or Path(f"cloud-{args.n}.xyz")
        gen_xyz(args.n, args.density, seed, out)
        print(f"wrote {out}")
        return 0

    if args.command == "run":
        system = parse_xyz(args.xyz.read_text(), identifier=str(args.xyz))
        params = _resolve_params(args, config)
        energy, forces = predict(system, params)
        print(f"energy {energy:.12f}")
        for i, row in enumerate(forces):
            print(f"force {i} {row[0]:.12f} {row[1]:.12f} {row[2]:.12f}")
        return 0

    if args.command == "verify":
        results = verify_suite(config, args.seeds, args.p_list, fault=args.fault)
        failed = False
        for res in results:
            if res.passed:
                print(f"PASS {res.name}")
            else:
                failed = True
                print(f"FAIL {res.name}: {res.detail}")
        return 1 if failed else 0

    if args.command == "relax":
        system = parse_xyz(args.xyz.read_text(), identifier=str(args.xyz))
        if args.diagnostic:
            config = config.replace(diagnostic=True, workers=1)
        params = _resolve_params(args, config)
        if args.diagnostic:
            from .params import ModelParams

            params = ModelParams(config, params.arrays)
        result = relax(
            system, params, fmax_threshold=args.fmax,
            max_steps=args.max_steps, step_size=args.step_size,
        )
        status = "converged" if result.converged else "not converged"
        print(
            f"{status} after {result.steps} steps; "
            f"final max|f| {result.max_forces[-1]:.6e}, energy {result.energies[-1]:.12f}"
        )
        if args.out is not None:
            final = system.with_positions(result.trajectory[-1])
            args.out.write_text(format_xyz(final, comment=f"relaxed in {result.steps} steps"))
            print(f"wrote {args.out}")
        return 0

    if args.command == "train":
        rng = np.random.default_rng(seed)
        teacher = init_params(config.replace(seed=seed + 1))
        dataset = []
        for _ in range(args.samples):
            system = sample_system(rng, n=int(rng.integers(4, 9)))
            energy, forces = predict(system, teacher, workers=1)
            dataset.append((system, energy, forces))
        student = init_params(config)
        fitted, history = train_simple(
            dataset, student, lr=args.lr, epochs=args.steps,
            w_energy=args.w_energy, w_forces=args.w_forces,
        )
        print(f"loss {history[0]:.6e} -> {history[-1]:.6e} over {len(history)} steps")
        if args.out is not None:
            save_checkpoint(fitted, args.out)
            print(f"wrote {args.out}")
        return 0

    if args.command == "bench":
        base = config if config.variant == GEMNET else config.replace(variant=GEMNET)
        report = weak_scaling(base, args.p_list, n_atoms=args.n_atoms, repeats=args.repeats)
        text = report.to_csv()
        parse_csv(text)  # schema self-check
        if args.out is not None:
            args.out.write_text(text)
            print(f"wrote {args.out}")
        else:
            print(text, end="")
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
