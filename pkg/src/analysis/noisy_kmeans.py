from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from src.analysis.deconv_kernel import DeconvKernel
from src.analysis.density_estimation import (
    CompactRegion,
    DeconvolvedDensity,
    DensitySpec,
    deconv_kde,
    tabulate_density,
)
from src.analysis.quantization_risk import ORACLE_REFINEMENT, Codebook, plugin_risk
from src.errors import InvalidParameterError, SolverError

log = logging.getLogger(__name__)

POLICIES = ("signed", "clamp")
INITS = ("kmeans++", "uniform")
MIN_CELL_MASS = 1e-12
MIN_POSITIVE_MASS = 1e-12
BRUTE_FORCE_MAX_LABELINGS = 1_000_000


@dataclass(frozen=True)
class SolverConfig:
    k: int
    restarts: int = 8
    max_iters: int = 200
    tol: float = 1e-9
    seed: int = 0
    negative_weight_policy: str = "signed"
    init: str = "kmeans++"
    bound: float | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidParameterError(f"k must be >= 1, got {self.k}.")
        if self.restarts < 1:
            raise InvalidParameterError(f"restarts must be >= 1, got {self.restarts}.")
        if self.max_iters < 1:
            raise InvalidParameterError(f"max_iters must be >= 1, got {self.max_iters}.")
        if not self.tol > 0:
            raise InvalidParameterError(f"tol must be positive, got {self.tol}.")
        if self.negative_weight_policy not in POLICIES:
            raise InvalidParameterError(
                f"negative_weight_policy must be one of {POLICIES}, got '{self.negative_weight_policy}'."
            )
        if self.init not in INITS:
            raise InvalidParameterError(f"init must be one of {INITS}, got '{self.init}'.")
        if self.bound is not None and not self.bound > 0:
            raise InvalidParameterError(f"bound must be positive, got {self.bound}.")
        if self.workers < 1:
            raise InvalidParameterError(f"workers must be >= 1, got {self.workers}.")


@dataclass
class SolveReport:
    best: Codebook
    objective: float
    iterations: list[int]
    restart_objectives: list[float]
    negative_mass_cells: int = 0
    empty_cells_repaired: int = 0
    policy: str = "signed"
    traces: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def flags(self) -> dict:
        return {
            "negative_mass_cells": self.negative_mass_cells,
            "empty_cells_repaired": self.empty_cells_repaired,
            "negative_weight_policy": self.policy,
        }

    def to_dict(self) -> dict:
        return {
            "centers": self.best.to_list(),
            "objective": self.objective,
            "iterations": list(self.iterations),
            "restart_objectives": list(self.restart_objectives),
            "flags": self.flags,
        }


@dataclass
class _Restart:
    centers: np.ndarray
    objective: float
    iterations: int
    trace: list[float]
    negative_mass_cells: int
    empty_cells_repaired: int


def _sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _objective(w: np.ndarray, x: np.ndarray, centers: np.ndarray) -> float:
    return float(np.dot(w, _sq_dist(x, centers).min(axis=1)))


def _init_centers(
    x: np.ndarray,
    positive: np.ndarray,
    k: int,
    method: str,
    region: CompactRegion,
    rng: np.random.Generator,
) -> np.ndarray:
    total = positive.sum()
    if method == "uniform" or total < MIN_POSITIVE_MASS:
        return rng.uniform(region.lower, region.upper, size=(k, region.dim))
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.choice(x.shape[0], p=positive / total)]
    d2 = _sq_dist(x, centers[:1])[:, 0]
    for j in range(1, k):
        score = positive * d2
        if score.sum() <= 0:
            idx = rng.integers(x.shape[0])
        else:
            idx = rng.choice(x.shape[0], p=score / score.sum())
        centers[j] = x[idx]
        d2 = np.minimum(d2, _sq_dist(x, centers[j : j + 1])[:, 0])
    return centers


def _lloyd_restart(
    x: np.ndarray,
    w_fit: np.ndarray,
    positive: np.ndarray,
    region: CompactRegion,
    config: SolverConfig,
    bound: float,
    restart: int,
) -> _Restart:
    rng = np.random.default_rng([config.seed, restart])
    k, dim = config.k, x.shape[1]
    centers = np.clip(_init_centers(x, positive, k, config.init, region, rng), -bound, bound)
    prev = _objective(w_fit, x, centers)
    trace = [prev]
    negative_cells = repaired = 0
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        d2 = _sq_dist(x, centers)
        labels = np.argmin(d2, axis=1)
        masses = np.bincount(labels, weights=w_fit, minlength=k)
        sums = np.stack(
            [np.bincount(labels, weights=w_fit * x[:, j], minlength=k) for j in range(dim)], axis=1
        )
        new = centers.copy()
        live = np.abs(masses) >= MIN_CELL_MASS
        new[live] = sums[live] / masses[live, None]
        negative_cells += int(np.sum(masses < -MIN_CELL_MASS))
        if not live.all():
            # re-seed empty cells where the most positive mass is poorly served
            served = d2[np.arange(x.shape[0]), labels]
            for j in np.flatnonzero(~live):
                idx = int(np.argmax(positive * served))
                new[j] = x[idx]
                served = np.minimum(served, _sq_dist(x, x[idx : idx + 1])[:, 0])
                repaired += 1
        centers = np.clip(new, -bound, bound)
        current = _objective(w_fit, x, centers)
        trace.append(current)
        if prev - current <= config.tol * max(abs(prev), MIN_CELL_MASS):
            break
        prev = current
    return _Restart(centers, float("nan"), iterations, trace, negative_cells, repaired)


def lloyd_weighted(density: DeconvolvedDensity, config: SolverConfig) -> SolveReport:
    """
    Weighted Lloyd iteration on a (possibly signed) density grid.

    Weights are trapezoid weights times density values. Under the ``clamp``
    policy negative weights are zeroed for assignment and recentring, while
    the reported objective is always the signed plug-in risk.
    """
    x = density.nodes()
    w = density.node_weights()
    if config.k > x.shape[0]:
        raise InvalidParameterError(
            f"k = {config.k} exceeds the number of grid nodes ({x.shape[0]})."
        )
    positive = np.clip(w, 0.0, None)
    if not positive.sum() > 0:
        raise SolverError("Density grid has no positive mass; cannot place centers.")
    w_fit = positive if config.negative_weight_policy == "clamp" else w
    bound = config.bound if config.bound is not None else density.region.radius
    if np.any(w < 0):
        log.info("Density grid carries negative mass %.3g", float(w[w < 0].sum()))

    def run(restart: int) -> _Restart:
        result = _lloyd_restart(x, w_fit, positive, density.region, config, bound, restart)
        result.objective = _objective(w, x, result.centers)
        return result

    if config.workers > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(run, range(config.restarts)))
    else:
        runs = [run(r) for r in range(config.restarts)]

    best = min(range(len(runs)), key=lambda r: runs[r].objective)
    codebook = Codebook(runs[best].centers)
    report = SolveReport(
        best=codebook,
        objective=plugin_risk(codebook, density),
        iterations=[r.iterations for r in runs],
        restart_objectives=[r.objective for r in runs],
        negative_mass_cells=sum(r.negative_mass_cells for r in runs),
        empty_cells_repaired=sum(r.empty_cells_repaired for r in runs),
        policy=config.negative_weight_policy,
        traces=[r.trace for r in runs],
    )
    if report.negative_mass_cells:
        log.warning("Lloyd met %d negative-mass cells", report.negative_mass_cells)
    if report.empty_cells_repaired:
        log.warning("Lloyd re-seeded %d empty cells", report.empty_cells_repaired)
    log.info("Lloyd k=%d: objective %.6g after %s iterations", config.k, report.objective, report.iterations)
    return report


def noisy_kmeans(
    sample_z,
    kernel: DeconvKernel,
    region: CompactRegion,
    config: SolverConfig,
) -> SolveReport:
    """Deconvolution k-means: minimise (1/n) sum_i gamma_lambda(c, Z_i) over codebooks."""
    density = deconv_kde(sample_z, kernel, region, workers=config.workers)
    return lloyd_weighted(density, config)


def oracle_codebook(
    f: DensitySpec,
    region: CompactRegion,
    k: int,
    budget: int = 16,
    *,
    refinement: int = ORACLE_REFINEMENT,
    seed: int = 0,
) -> Codebook:
    """Numerical stand-in for an optimal codebook c*: many-restart Lloyd on the true density."""
    if budget < 16:
        raise InvalidParameterError(f"Oracle budget must be >= 16 restarts, got {budget}.")
    fine = tabulate_density(f, region.refine(refinement))
    report = lloyd_weighted(fine, SolverConfig(k=k, restarts=budget, seed=seed))
    return report.best.sorted()


def brute_force_kmeans(density: DeconvolvedDensity, k: int) -> tuple[Codebook, float]:
    """Exact weighted k-means over every labeling of a tiny nonnegative grid."""
    x = density.nodes()
    w = density.node_weights()
    n = x.shape[0]
    if np.any(w < 0):
        raise InvalidParameterError("Brute force needs a nonnegative weight field.")
    if k ** max(n - 1, 0) > BRUTE_FORCE_MAX_LABELINGS:
        raise InvalidParameterError(f"{n} nodes with k = {k} is too large for exhaustive search.")
    # node 0 always takes label 0; the other labels are permutation-equivalent
    tails = np.array(list(itertools.product(range(k), repeat=n - 1)), dtype=int).reshape(-1, n - 1)
    labels = np.concatenate([np.zeros((tails.shape[0], 1), dtype=int), tails], axis=1)
    total = float(np.dot(w, np.sum(x * x, axis=1)))
    gain = np.zeros(labels.shape[0])
    centroids = np.zeros((labels.shape[0], k, x.shape[1]))
    for j in range(k):
        mask = (labels == j).astype(float)
        mass = mask @ w
        sums = mask @ (w[:, None] * x)
        safe = np.where(mass > 0, mass, 1.0)
        gain += np.where(mass > 0, np.sum(sums * sums, axis=1) / safe, 0.0)
        centroids[:, j, :] = sums / safe[:, None]
    best = int(np.argmax(gain))
    return Codebook(centroids[best]), total - float(gain[best])
