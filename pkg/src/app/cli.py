"""
Command-line front end.

    python -m src.app.cli kernel  --config configs/kernel_laplace.json
    python -m src.app.cli kde     --config configs/kde_mixture.json
    python -m src.app.cli cluster --config configs/cluster_mixture.json
    python -m src.app.cli rates run  --config configs/rates_default.json --threads 4
    python -m src.app.cli rates plan --config configs/plan.json

Every subcommand reads one JSON config; --seed, --output-dir and --threads
override it, and NOISYQ_SEED, NOISYQ_OUTPUT_DIR and NOISYQ_THREADS (also
read from a .env file) sit below both.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from src.analysis.deconv_kernel import build_deconv_kernel, kernel_table
from src.analysis.density_estimation import deconv_kde, density_frame, direct_kde
from src.analysis.experiments import run_experiment
from src.analysis.noisy_kmeans import lloyd_weighted, oracle_codebook
from src.analysis.quantization_risk import excess_risk, risk_row, true_risk
from src.analysis.rate_theory import plan_table
from src.app.config import (
    ConfigSection,
    density_from_config,
    experiment_from_config,
    kernel_from_config,
    load_config,
    n_grid_from_config,
    noise_from_config,
    rate_params_from_config,
    region_from_config,
    solver_from_config,
)
from src.app.io import dumps, error_payload, write_csv, write_json
from src.data.samples import generate_sample, read_sample_csv, write_sample_csv
from src.errors import ConfigError, ExperimentRejectedError, NoisyQuantError, SolverError

log = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "results"
DEFAULT_T_RANGE = (-20.0, 20.0)
DEFAULT_POINTS = 401


@dataclass(frozen=True)
class RunOptions:
    config_path: Path
    output_dir: Path
    threads: int
    seed: int | None


def _env_int(name: str) -> int | None:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"Environment variable {name} must be an integer, got '{raw}'.") from None


def resolve_options(args: argparse.Namespace) -> RunOptions:
    threads = args.threads if args.threads is not None else (_env_int("NOISYQ_THREADS") or 1)
    if threads < 1:
        raise ConfigError(f"Thread count must be >= 1, got {threads}.")
    seed = args.seed if args.seed is not None else _env_int("NOISYQ_SEED")
    output_dir = Path(args.output_dir or os.getenv("NOISYQ_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR)
    return RunOptions(Path(args.config), output_dir, threads, seed)


def _wrote(path: Path, rows: int) -> None:
    print(f"Wrote {path} ({rows} rows).")


# sample and density shared by kde / cluster --------------------------------------

@dataclass
class _Observed:
    z: np.ndarray
    x: np.ndarray | None = None
    density: object | None = None
    seed: int | None = None


def _load_observations(tree: ConfigSection, noise, dim: int, opts: RunOptions) -> _Observed:
    sec = tree.section("sample")
    if "path" in sec:
        sec.reject_unknown({"path"}, where="sample")
        path = Path(sec.require("path"))
        if not path.is_absolute():
            path = opts.config_path.parent / path
        if not path.is_file():
            raise sec.error("path", f"Sample file {path} does not exist.")
        return _Observed(z=read_sample_csv(path, dim))
    sec.reject_unknown({"density", "n", "seed"}, where="sample")
    density = density_from_config(sec.section("density"))
    if density.dim != dim:
        raise sec.error("density", f"Sample density has dimension {density.dim}, the region has {dim}.")
    n = sec.number("n", integer=True)
    seed = opts.seed if opts.seed is not None else sec.number("seed", 0, integer=True)
    with sec.building("n"):
        x, z = generate_sample(density, noise, n, seed)
    return _Observed(z=z, x=x, density=density, seed=seed)


def _estimate_density(tree: ConfigSection, opts: RunOptions):
    region = region_from_config(tree.section("region"))
    dim = region.dim
    bandwidth = tree.vector("bandwidth", dim)
    noise = noise_from_config(tree.section("noise"), dim)
    spec = kernel_from_config(tree.section("kernel", None), dim)
    deconvolve = tree.get("deconvolve", True)
    if not isinstance(deconvolve, bool):
        raise tree.error("deconvolve", "'deconvolve' must be true or false.")
    observed = _load_observations(tree, noise, dim, opts)
    with tree.building("bandwidth"):
        if deconvolve:
            kernel = build_deconv_kernel(spec, noise, bandwidth)
            density = deconv_kde(observed.z, kernel, region, workers=opts.threads)
        else:
            density = direct_kde(observed.z, spec, bandwidth, region, workers=opts.threads)
    if observed.x is not None:
        path = opts.output_dir / "sample.csv"
        _wrote(path, write_sample_csv(path, observed.z))
    return density, observed


# subcommands ---------------------------------------------------------------------

def cmd_kernel(tree: ConfigSection, opts: RunOptions) -> int:
    bandwidth = tree.vector("bandwidth")
    dim = bandwidth.size
    noise = noise_from_config(tree.section("noise"), dim)
    spec = kernel_from_config(tree.section("kernel", None), dim)
    t_range = tree.vector("t_range", 2, list(DEFAULT_T_RANGE))
    points = tree.number("points", DEFAULT_POINTS, integer=True)
    if not t_range[0] < t_range[1] or points < 2:
        raise tree.error("t_range", "Need t_range = [a, b] with a < b and points >= 2.")
    with tree.building("bandwidth"):
        kernel = build_deconv_kernel(spec, noise, bandwidth)
    table = kernel_table(kernel, np.linspace(t_range[0], t_range[1], points))
    path = opts.output_dir / "kernel_table.csv"
    _wrote(path, write_csv(path, table))
    return 0


def cmd_kde(tree: ConfigSection, opts: RunOptions) -> int:
    density, _ = _estimate_density(tree, opts)
    log.info("Estimated density mass %.6f", density.mass())
    path = opts.output_dir / "density.csv"
    _wrote(path, write_csv(path, density_frame(density)))
    return 0


def cmd_cluster(tree: ConfigSection, opts: RunOptions) -> int:
    density, observed = _estimate_density(tree, opts)
    solver = solver_from_config(tree.section("solver"), seed=opts.seed, workers=opts.threads)
    report = lloyd_weighted(density, solver)
    payload = {
        "n": observed.z.shape[0],
        "bandwidth": density.bandwidth,
        "deconvolve": tree.get("deconvolve", True),
        "report": report.to_dict(),
    }
    path = write_json(opts.output_dir / "cluster.json", payload)
    _wrote(path, 1)
    if observed.density is not None:
        f, region = observed.density, density.region
        oracle = oracle_codebook(f, region, solver.k, budget=max(16, solver.restarts), seed=solver.seed)
        row = risk_row(
            observed.z.shape[0],
            density.bandwidth,
            report.objective,
            true_risk(report.best, f, region),
            excess_risk(report.best, f, region, oracle),
            observed.seed,
        )
        risk_path = opts.output_dir / "risk.csv"
        _wrote(risk_path, write_csv(risk_path, pd.DataFrame([row])))
    return 0


def cmd_rates_run(tree: ConfigSection, opts: RunOptions) -> int:
    config = experiment_from_config(tree, seed=opts.seed, workers=opts.threads)
    result = run_experiment(config, strict=False)
    cells_path = opts.output_dir / "cells.csv"
    _wrote(cells_path, write_csv(cells_path, result.cells))
    rate_path = write_json(opts.output_dir / "rate.json", result.to_dict())
    _wrote(rate_path, len(result.estimates))
    if result.rejected:
        raise ExperimentRejectedError(
            f"Oracle residual {result.oracle_residual:.3g} is too large for the measured excess risks."
        )
    if result.failed_cells:
        raise SolverError(f"{result.failed_cells} Monte Carlo records failed; see the flags column of {cells_path}.")
    return 0


def cmd_rates_plan(tree: ConfigSection, opts: RunOptions) -> int:
    params = rate_params_from_config(tree.section("rate_params"))
    grid = n_grid_from_config(tree)
    with tree.building("n_grid"):
        table = plan_table(params, grid)
    payload = {
        "rate_params": {
            "kappa": params.kappa,
            "rho": params.rho,
            "beta": params.beta,
            "s": params.s,
            "L": params.L,
            "scale_constant": params.scale_constant,
        },
        "rows": table,
    }
    path = write_json(opts.output_dir / "plan.json", payload)
    _wrote(path, len(table))
    return 0


COMMANDS: dict[str, Callable[[ConfigSection, RunOptions], int]] = {
    "kernel": cmd_kernel,
    "kde": cmd_kde,
    "cluster": cmd_cluster,
    "rates-run": cmd_rates_run,
    "rates-plan": cmd_rates_plan,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file for the subcommand")
    common.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    common.add_argument("--output-dir", default=None, help=f"output directory (default: {DEFAULT_OUTPUT_DIR})")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: 1)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = argparse.ArgumentParser(
        prog="noisyq",
        description="Deconvolution k-means for noisy data and excess-risk rate experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("kernel", parents=[common], help="tabulate the deconvolution kernel")
    sub.add_parser("kde", parents=[common], help="deconvolution density estimate on a grid")
    sub.add_parser("cluster", parents=[common], help="noisy k-means codebook")
    rates = sub.add_parser("rates", help="rate experiments and bandwidth plans")
    rates_sub = rates.add_subparsers(dest="rates_command", required=True)
    rates_sub.add_parser("run", parents=[common], help="Monte Carlo excess-risk experiment")
    rates_sub.add_parser("plan", parents=[common], help="bandwidth and exponent table")
    return parser


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    command = args.command if args.command != "rates" else f"rates-{args.rates_command}"

    try:
        opts = resolve_options(args)
        tree = load_config(opts.config_path, command)
        return COMMANDS[command](tree, opts)
    except ConfigError as exc:
        print(dumps(error_payload(exc)), file=sys.stderr)
        return 2
    except (NoisyQuantError, ValueError, ArithmeticError, OSError) as exc:
        log.debug("Command failed", exc_info=True)
        print(dumps(error_payload(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
