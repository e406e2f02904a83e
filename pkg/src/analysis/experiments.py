"""
Seeded Monte Carlo harness for excess-risk rates of noisy k-means.

Every (n, replicate) cell draws its own data from SeedSequence([master_seed,
n, replicate]), fits noisy k-means under a bandwidth schedule plus the
requested baselines, and scores each codebook against a numerical oracle.
``fit_rate`` then regresses log mean excess risk on log n per method.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans
from sklearn.linear_model import LinearRegression
from threadpoolctl import threadpool_limits

from src.analysis.deconv_kernel import DeconvKernel, KernelSpec, build_deconv_kernel, sinc_kernel
from src.analysis.density_estimation import CompactRegion, DensitySpec, density_floor, make_density
from src.analysis.noisy_kmeans import SolverConfig, noisy_kmeans, oracle_codebook
from src.analysis.quantization_risk import (
    NEGATIVE_EXCESS_TOL,
    ORACLE_REFINEMENT,
    Codebook,
    excess_risk,
    true_risk,
)
from src.analysis.rate_theory import (
    KMEANS_RATE_FACTOR,
    RateParams,
    bandwidth_exact,
    bandwidth_kmeans,
    bandwidth_nonexact,
    theoretical_rate_kmeans,
)
from src.data.noise_models import NoiseModel, laplace_noise
from src.data.samples import generate_sample
from src.errors import ExperimentRejectedError, InsufficientDataError, InvalidParameterError, NoisyQuantError, check_dim

__all__ = [
    "BASELINES",
    "ExperimentConfig",
    "ExperimentResult",
    "RateEstimate",
    "default_experiment",
    "fit_rate",
    "generate_sample",
    "run_cell",
    "run_experiment",
]

log = logging.getLogger(__name__)

NOISY_KMEANS = "noisy-kmeans"
NAIVE_ON_Z = "naive-kmeans-on-z"
KMEANS_ON_X = "kmeans-on-x"
BASELINES = (NAIVE_ON_Z, KMEANS_ON_X)
SCHEDULES: dict[str, Callable[[RateParams, int], np.ndarray]] = {
    "kmeans": bandwidth_kmeans,
    "exact": bandwidth_exact,
    "nonexact": bandwidth_nonexact,
}
ORACLE_BUDGET = 16
ORACLE_RESIDUAL_SHARE = 0.10
DEFAULT_SCALE_CONSTANT = 0.4


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    density: DensitySpec
    noise: NoiseModel
    kernel: KernelSpec
    region: CompactRegion
    k: int
    rate_params: RateParams
    n_grid: tuple[int, ...]
    replicates: int
    solver: SolverConfig
    master_seed: int = 0
    baselines: tuple[str, ...] = (NAIVE_ON_Z,)
    schedule: str = "kmeans"
    refinement: int = ORACLE_REFINEMENT
    workers: int = 1

    def __post_init__(self) -> None:
        n_grid = tuple(int(n) for n in self.n_grid)
        if len(n_grid) < 3 or any(b <= a for a, b in zip(n_grid, n_grid[1:])) or n_grid[0] < 2:
            raise InvalidParameterError(
                f"n_grid must be strictly increasing with at least 3 sizes >= 2, got {list(n_grid)}."
            )
        if self.replicates < 4:
            raise InvalidParameterError(f"Need at least 4 replicates per n, got {self.replicates}.")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise InvalidParameterError(f"Unknown baselines {sorted(unknown)}. Use any of {list(BASELINES)}.")
        if self.schedule not in SCHEDULES:
            raise InvalidParameterError(f"Unknown schedule '{self.schedule}'. Use one of {sorted(SCHEDULES)}.")
        for what, dim in (
            ("noise", self.noise.dim),
            ("kernel", self.kernel.dim),
            ("region", self.region.dim),
            ("rate_params", self.rate_params.dim),
        ):
            check_dim(self.density.dim, dim, what)
        if self.refinement < 1 or self.workers < 1:
            raise InvalidParameterError("refinement and workers must be >= 1.")
        object.__setattr__(self, "n_grid", n_grid)
        object.__setattr__(self, "baselines", tuple(self.baselines))
        if self.solver.k != self.k:
            object.__setattr__(self, "solver", dataclasses.replace(self.solver, k=self.k))

    @property
    def methods(self) -> tuple[str, ...]:
        return (NOISY_KMEANS, *self.baselines)

    def bandwidth(self, n: int) -> np.ndarray:
        return SCHEDULES[self.schedule](self.rate_params, n)


@dataclass
class RateEstimate:
    method: str
    fitted_exponent: float
    standard_error: float
    intercept: float
    theoretical_exponent: float
    per_n: pd.DataFrame = field(repr=False)
    floored: bool = False
    log_factor: str = KMEANS_RATE_FACTOR

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fitted_exponent": self.fitted_exponent,
            "standard_error": self.standard_error,
            "intercept": self.intercept,
            "theoretical_exponent": self.theoretical_exponent,
            "floored": self.floored,
            "ignored_factor": self.log_factor,
            "per_n": self.per_n.to_dict(orient="records"),
        }


@dataclass
class ExperimentResult:
    cells: pd.DataFrame
    estimates: dict[str, RateEstimate]
    oracle: Codebook
    oracle_residual: float
    rejected: bool

    @property
    def failed_cells(self) -> int:
        return int((self.cells["status"] != "ok").sum())

    def to_dict(self) -> dict:
        return {
            "oracle": self.oracle.to_list(),
            "oracle_residual": self.oracle_residual,
            "rejected": self.rejected,
            "failed_cells": self.failed_cells,
            "estimates": {name: est.to_dict() for name, est in self.estimates.items()},
        }


def cell_seed(master_seed: int, n: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, n, replicate])


def _int_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


def _sklearn_codebook(points: np.ndarray, k: int, restarts: int, seed: int, bound: float) -> Codebook:
    model = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed)
    # one OpenMP thread keeps the centroid reduction order fixed
    with threadpool_limits(limits=1, user_api="openmp"):
        model.fit(points)
    return Codebook(model.cluster_centers_).clamp(bound)


def run_cell(
    config: ExperimentConfig,
    n: int,
    replicate: int,
    *,
    oracle: Codebook,
    kernels: Mapping[int, DeconvKernel] | None = None,
) -> list[dict]:
    """One replicate at sample size n: a record per method, failures recorded rather than raised."""
    if n not in config.n_grid:
        raise InvalidParameterError(f"n = {n} is not in the configured n_grid {list(config.n_grid)}.")
    root = cell_seed(config.master_seed, n, replicate)
    data_seq, solver_seq = root.spawn(2)
    solver_seed = _int_seed(solver_seq)
    x, z = generate_sample(config.density, config.noise, n, data_seq)
    lam = config.bandwidth(n)
    bound = config.solver.bound or config.region.radius
    base = {"n": n, "replicate": replicate, "seed": _int_seed(root)}
    base.update({f"lambda_{j + 1}": float(v) for j, v in enumerate(lam)})

    def score(method: str, fit: Callable[[], tuple[Codebook, float, str]]) -> dict:
        row = {**base, "method": method}
        try:
            codebook, objective, flags = fit()
            row.update(
                status="ok",
                excess_risk=excess_risk(codebook, config.density, config.region, oracle, refinement=config.refinement),
                objective=objective,
                flags=flags,
            )
        except (NoisyQuantError, ValueError, ArithmeticError) as exc:
            log.warning("Cell n=%d replicate=%d method=%s failed: %s", n, replicate, method, exc)
            row.update(status="failed", excess_risk=np.nan, objective=np.nan, flags=f"{type(exc).__name__}: {exc}")
        return row

    def fit_noisy() -> tuple[Codebook, float, str]:
        kernel = kernels.get(n) if kernels is not None else None
        if kernel is None:
            kernel = build_deconv_kernel(config.kernel, config.noise, lam)
        solver = dataclasses.replace(config.solver, seed=solver_seed, workers=1)
        report = noisy_kmeans(z, kernel, config.region, solver)
        flags = ";".join(f"{key}={value}" for key, value in report.flags.items())
        return report.best, report.objective, flags

    def fit_on(points: np.ndarray) -> Callable[[], tuple[Codebook, float, str]]:
        def fit() -> tuple[Codebook, float, str]:
            c = _sklearn_codebook(points, config.k, config.solver.restarts, solver_seed, bound)
            return c, float(np.mean(np.min(((points[:, None, :] - c.centers[None]) ** 2).sum(-1), axis=1))), ""

        return fit

    rows = [score(NOISY_KMEANS, fit_noisy)]
    if NAIVE_ON_Z in config.baselines:
        rows.append(score(NAIVE_ON_Z, fit_on(z)))
    if KMEANS_ON_X in config.baselines:
        rows.append(score(KMEANS_ON_X, fit_on(x)))
    return rows


def fit_rate(
    records: pd.DataFrame,
    method: str = NOISY_KMEANS,
    rate_params: RateParams | None = None,
    *,
    floor: float = NEGATIVE_EXCESS_TOL,
) -> RateEstimate:
    """
    Least-squares slope of log mean excess risk against log n.

    ``records`` needs ``n`` and ``excess_risk`` columns; ``method`` and
    ``status`` columns are used for filtering when present. Means at or below
    ``floor`` are floored before taking logs and the estimate is flagged.
    """
    df = records
    if "method" in df.columns:
        df = df[df["method"] == method]
    if "status" in df.columns:
        df = df[df["status"] == "ok"]
    df = df.dropna(subset=["excess_risk"])
    per_n = (
        df.groupby("n")["excess_risk"]
        .agg(
            mean="mean",
            median="median",
            q10=lambda v: v.quantile(0.1),
            q90=lambda v: v.quantile(0.9),
            replicates="count",
        )
        .reset_index()
        .sort_values("n")
    )
    if len(per_n) < 3:
        raise InsufficientDataError(
            f"Rate fit for '{method}' needs at least 3 sample sizes with a successful replicate, got {len(per_n)}."
        )
    floored = bool((per_n["mean"] <= floor).any())
    if floored:
        log.warning("Mean excess risk of '%s' at or below %.1g for some n; floored before the log fit", method, floor)
    log_n = np.log(per_n["n"].to_numpy(dtype=float)).reshape(-1, 1)
    log_r = np.log(np.maximum(per_n["mean"].to_numpy(dtype=float), floor))

    model = LinearRegression()
    model.fit(log_n, log_r)
    slope = float(model.coef_[0])
    residuals = log_r - model.predict(log_n)
    spread = float(np.sum((log_n[:, 0] - log_n.mean()) ** 2))
    se = float(np.sqrt(np.sum(residuals**2) / (len(per_n) - 2) / spread))
    return RateEstimate(
        method=method,
        fitted_exponent=-slope,
        standard_error=se,
        intercept=float(model.intercept_),
        theoretical_exponent=theoretical_rate_kmeans(rate_params) if rate_params is not None else float("nan"),
        per_n=per_n,
        floored=floored,
    )


def oracle_residual(config: ExperimentConfig, oracle: Codebook) -> float:
    """|R(c*)| change between the oracle grid and one twice as fine."""
    coarse = true_risk(oracle, config.density, config.region, refinement=config.refinement)
    fine = true_risk(oracle, config.density, config.region, refinement=2 * config.refinement)
    return abs(coarse - fine)


def run_experiment(config: ExperimentConfig, *, strict: bool = True) -> ExperimentResult:
    """Run every (n, replicate) cell, fit a rate per method and apply the oracle residual check."""
    if density_floor(config.density, config.region) <= 0:
        log.warning("Density vanishes somewhere on the region; the density floor assumption fails")
    oracle = oracle_codebook(
        config.density,
        config.region,
        config.k,
        budget=max(ORACLE_BUDGET, config.solver.restarts),
        refinement=config.refinement,
        seed=config.master_seed,
    )
    residual = oracle_residual(config, oracle)
    log.info("Oracle codebook %s, residual %.3g", oracle.to_list(), residual)

    kernels = {n: build_deconv_kernel(config.kernel, config.noise, config.bandwidth(n)) for n in config.n_grid}
    cells = [(n, r) for n in config.n_grid for r in range(config.replicates)]

    def run(cell: tuple[int, int]) -> list[dict]:
        return run_cell(config, cell[0], cell[1], oracle=oracle, kernels=kernels)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            batches = list(pool.map(run, cells))
    else:
        batches = [run(cell) for cell in cells]
    frame = pd.DataFrame([row for batch in batches for row in batch])

    estimates = {}
    for method in config.methods:
        try:
            estimates[method] = fit_rate(frame, method, config.rate_params)
        except InsufficientDataError as exc:
            log.warning("%s", exc)

    smallest = float("nan")
    if NOISY_KMEANS in estimates:
        smallest = float(estimates[NOISY_KMEANS].per_n["mean"].min())
    rejected = not residual < ORACLE_RESIDUAL_SHARE * smallest
    result = ExperimentResult(frame, estimates, oracle, residual, rejected)
    if rejected:
        message = (
            f"Oracle residual {residual:.3g} is not below {ORACLE_RESIDUAL_SHARE:.0%} of the smallest "
            f"mean excess risk ({smallest:.3g}). Refine the region grid or raise 'refinement'."
        )
        if strict:
            raise ExperimentRejectedError(message)
        log.warning("%s", message)
    log.info("Experiment done: %d cells, %d failed", len(cells), result.failed_cells)
    return result


def default_experiment(**overrides) -> ExperimentConfig:
    """
    Bimodal truncated-Gaussian mixture in d = 1 (means -1, 1, sd 0.5), k = 2,
    Laplace noise of scale 0.3 (beta = 2), the k-means schedule with s = 2 and
    n from 500 to 4000, bandwidth constant 0.4.
    """
    resolution = overrides.pop("resolution", 256)
    density = overrides.pop(
        "density",
        make_density("gaussian-mixture", {"means": [-1.0, 1.0], "sds": 0.5, "s": 2.0}, resolution=resolution),
    )
    noise = overrides.pop("noise", laplace_noise(1, 0.3))
    params = {
        "density": density,
        "noise": noise,
        "kernel": sinc_kernel(1),
        "region": density.support,
        "k": 2,
        "rate_params": RateParams(
            kappa=1.0, rho=0.0, beta=noise.beta, s=(2.0,), scale_constant=DEFAULT_SCALE_CONSTANT
        ),
        "n_grid": (500, 1000, 2000, 4000),
        "replicates": 16,
        "solver": SolverConfig(k=2),
        "master_seed": 0,
        "baselines": BASELINES,
    }
    params.update(overrides)
    return ExperimentConfig(**params)


def replicate_means(cells: pd.DataFrame, methods: Sequence[str] | None = None) -> pd.DataFrame:
    """Mean excess risk per (n, method) as a wide frame, for paired comparisons."""
    ok = cells[cells["status"] == "ok"]
    if methods is not None:
        ok = ok[ok["method"].isin(methods)]
    return ok.pivot_table(index="n", columns="method", values="excess_risk", aggfunc="mean")
