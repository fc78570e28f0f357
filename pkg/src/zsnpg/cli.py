"""CLI entry point for zsnpg."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .coefficients import concentrability
from .errors import ZsnpgError
from .game import uniform_dist
from .harness import load_experiment, run_experiment, with_output_dir
from .io import load_game, write_json, write_trace
from .online import FeatureMap, SamplingOracle, SgdConfig, run_online_npg
from .oracle import shapley_value_iteration
from .population import PopulationConfig, run_population_npg


def _distribution(text: str | None, n_states: int, name: str) -> np.ndarray:
    if text is None:
        return uniform_dist(n_states)
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise ValueError(f"--{name} must be comma-separated numbers, got {text!r}") from None


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="zsnpg",
        description="Natural policy gradient solvers and exact oracles for zero-sum Markov games.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log debug progress to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a batch experiment from a JSON spec")
    run.add_argument("spec", type=Path, help="Experiment spec JSON file")
    run.add_argument("-o", "--out", type=Path, default=None, help="Override the spec's output directory")

    solve = commands.add_parser("solve", help="Run one solver on a game file")
    solve.add_argument("game", type=Path, help="Game JSON file")
    solve.add_argument("--algo", choices=["population", "online"], default="population")
    solve.add_argument("--K", type=int, default=5, help="Outer loops")
    solve.add_argument("--T", type=int, default=100, help="Inner NPG iterations")
    solve.add_argument("--Tprime", type=int, default=100, help="Greedy-step rounds")
    solve.add_argument("--N", type=int, default=100, help="SGD steps per iteration-step fit (online)")
    solve.add_argument("--Nprime", type=int, default=100, help="SGD steps per greedy-step fit (online)")
    solve.add_argument("--W", type=float, default=10.0, help="Projection radius (online)")
    solve.add_argument("--eta", type=float, default=None, help="Iteration-step size (default per algorithm)")
    solve.add_argument("--etaprime", type=float, default=None, help="Greedy-step size (online)")
    solve.add_argument("--tau", type=float, default=0.0, help="Entropy regularization weight (population)")
    solve.add_argument("--seed", type=int, default=0, help="Master seed (online)")
    solve.add_argument("-o", "--out", type=Path, default=Path("output_data"), help="Output directory")
    solve.add_argument("--timing", action="store_true", help="Keep the wallclock column in the trace")

    oracle = commands.add_parser("oracle", help="Certified Nash value by Shapley iteration")
    oracle.add_argument("game", type=Path, help="Game JSON file")
    oracle.add_argument("--tol", type=float, default=1e-8, help="Value tolerance")
    oracle.add_argument("-o", "--out", type=Path, default=None, help="Write the certificate JSON here")

    coeff = commands.add_parser("coeff", help="Concentrability coefficients")
    coeff.add_argument("game", type=Path, help="Game JSON file")
    coeff.add_argument("--rho", default=None, help="Comma-separated evaluation distribution (default uniform)")
    coeff.add_argument("--sigma", default=None, help="Comma-separated optimization distribution (default uniform)")
    coeff.add_argument("--J", type=int, default=None, help="Truncation depth (default from gamma)")
    coeff.add_argument("--method", choices=["dp", "enumerate"], default="dp")
    coeff.add_argument("-o", "--out", type=Path, default=None, help="Write the report JSON here")
    return parser.parse_args(argv)


def _solve(args: argparse.Namespace) -> int:
    game = load_game(args.game)
    out = args.out.resolve()
    if args.algo == "online":
        cfg = SgdConfig(
            W=args.W, N=args.N, N_prime=args.Nprime, T=args.T, T_prime=args.Tprime, eta=args.eta, eta_prime=args.etaprime
        )
        oracle = SamplingOracle.from_sigma(game, seed=args.seed)
        result = run_online_npg(oracle, FeatureMap.tabular(game.n_states, game.n_actions), cfg, args.K)
        final = result.trace.iloc[-1]
        expl, samples = final["exploitability"], int(final["n_samples_used"])
        print(f"Final exploitability: {expl:.6f} ({samples} oracle calls)")
    else:
        config = PopulationConfig(K=args.K, T=args.T, T_prime=args.Tprime, eta=args.eta, tau=args.tau)
        result = run_population_npg(game, config)
        expl = result.trace.iloc[-1]["exploitability_rho"]
        print(f"Final exploitability: {expl:.6f}")
    path = write_trace(result.trace, out / "trace.csv", timing=args.timing)
    print("\nOutput written:")
    print(f"  {path}  ({len(result.trace)} rows)")
    return 0


def _oracle(args: argparse.Namespace) -> int:
    game = load_game(args.game)
    certificate = shapley_value_iteration(game, args.tol)
    print(f"V* = {np.array2string(certificate.v_star, precision=8)}")
    print(f"Bellman residual {certificate.residual:.3e} after {certificate.sweeps} sweeps")
    if args.out is not None:
        write_json(args.out, certificate.to_dict())
        print(f"\nCertificate written to {args.out}")
    return 0


def _coeff(args: argparse.Namespace) -> int:
    game = load_game(args.game)
    rho = _distribution(args.rho, game.n_states, "rho")
    sigma = _distribution(args.sigma, game.n_states, "sigma")
    report = concentrability(game, rho, sigma, args.J, method=args.method)
    data = report.to_dict()
    if args.out is not None:
        write_json(args.out, data)
        print(f"Report written to {args.out}")
    else:
        print(json.dumps(data, indent=2))
    return 0


def _run(args: argparse.Namespace) -> int:
    spec = load_experiment(args.spec)
    if args.out is not None:
        spec = with_output_dir(spec, args.out.resolve())
    code = run_experiment(spec)
    print(f"Summary written to {spec.output_dir / 'summary.json'}")
    if code:
        print("Experiment had failed replications or acceptance checks", file=sys.stderr)
    return code


COMMANDS = {"run": _run, "solve": _solve, "oracle": _oracle, "coeff": _coeff}


def main(argv: list[str] | None = None) -> None:
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        code = COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"Error: {exc.filename} does not exist", file=sys.stderr)
        sys.exit(1)
    except (ZsnpgError, ValueError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(1)
    if code:
        sys.exit(code)
