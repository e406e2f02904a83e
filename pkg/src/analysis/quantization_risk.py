"""
k-means distortion, its deconvolution counterpart, and risk oracles on synthetic densities.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from src.analysis.deconv_kernel import DeconvKernel
from src.analysis.density_estimation import (
    CompactRegion,
    DeconvolvedDensity,
    DensitySpec,
    deconv_kde,
    grid_quadrature,
    tabulate_density,
)
from src.errors import EmptySampleError, InvalidParameterError, check_dim

log = logging.getLogger(__name__)

ORACLE_REFINEMENT = 4
NEGATIVE_EXCESS_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Codebook:
    """k centers in R^d, stored as a read-only k x d matrix."""

    centers: np.ndarray

    def __post_init__(self) -> None:
        centers = np.array(self.centers, dtype=float)
        if centers.ndim == 1:
            centers = centers.reshape(-1, 1)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise InvalidParameterError("A codebook needs at least one center (k x d matrix).")
        if not np.all(np.isfinite(centers)):
            raise InvalidParameterError("Codebook centers must be finite.")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def clamp(self, bound: float | None) -> "Codebook":
        """Project onto the sup-norm ball B(0, bound)."""
        if bound is None:
            return self
        return Codebook(np.clip(self.centers, -bound, bound))

    def permuted(self, order: Sequence[int]) -> "Codebook":
        return Codebook(self.centers[list(order)])

    def sorted(self) -> "Codebook":
        """Centers in lexicographic order, for stable reporting."""
        order = np.lexsort(self.centers.T[::-1])
        return Codebook(self.centers[order])

    def to_list(self) -> list[list[float]]:
        return self.centers.tolist()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Codebook) and np.array_equal(self.centers, other.centers)

    __hash__ = None  # type: ignore[assignment]


def squared_distances(c: Codebook, x) -> np.ndarray:
    """||x_i - c_j||^2 as an (N, k) matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    check_dim(c.dim, x.shape[-1], "points")
    diff = x[:, None, :] - c.centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign(c: Codebook, x) -> np.ndarray:
    """Index of the nearest center; ties go to the lowest index."""
    return np.argmin(squared_distances(c, x), axis=1)


def kmeans_loss(c: Codebook, x) -> np.ndarray | float:
    """gamma(c, x) = min_j ||x - c_j||^2 for one point or an (N, d) matrix of points."""
    x = np.asarray(x, dtype=float)
    losses = squared_distances(c, x).min(axis=1)
    if x.ndim <= 1:
        return float(losses[0])
    return losses


def deconv_losses(c: Codebook, sample_z, kernel: DeconvKernel, region: CompactRegion) -> np.ndarray:
    """gamma_lambda(c, Z_i) for every observation, one trapezoid sum per row."""
    check_dim(kernel.dim, region.dim, "region")
    check_dim(c.dim, region.dim, "codebook")
    z = np.atleast_2d(np.asarray(sample_z, dtype=float))
    check_dim(region.dim, z.shape[1], "sample")
    weighted_loss = region.weights() * kmeans_loss(c, region.nodes()).reshape(region.shape)
    axes = region.axes()
    letters = string.ascii_lowercase[: region.dim]
    subscripts = ",".join(f"z{a}" for a in letters) + f",{letters}->z"
    factors = [kernel.axis_scaled(j, z[:, j, None] - axes[j][None, :]) for j in range(region.dim)]
    return np.einsum(subscripts, *factors, weighted_loss)


def deconv_loss(c: Codebook, z, kernel: DeconvKernel, region: CompactRegion) -> float:
    """gamma_lambda(c, z) = int_K (1/lambda) K_eta((z - x)/lambda) gamma(c, x) dx; may be negative."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    return float(deconv_losses(c, z, kernel, region)[0])


def empirical_risk(
    c: Codebook,
    sample_z,
    kernel: DeconvKernel,
    region: CompactRegion,
    *,
    density: DeconvolvedDensity | None = None,
    direct: bool = False,
) -> float:
    """
    Deconvolution empirical risk (1/n) sum_i gamma_lambda(c, Z_i).

    By default it is computed through the plug-in identity, integrating gamma
    against the (cached or freshly built) deconvolution density estimate;
    ``direct=True`` averages the per-observation losses instead.
    """
    z = np.atleast_2d(np.asarray(sample_z, dtype=float))
    if z.shape[0] == 0 or z.size == 0:
        raise EmptySampleError("Sample is empty; need at least one observation.")
    if direct:
        return float(np.mean(deconv_losses(c, z, kernel, region)))
    if density is None:
        density = deconv_kde(z, kernel, region)
    return plugin_risk(c, density)


def plugin_risk(c: Codebook, density: DeconvolvedDensity) -> float:
    """int_K gamma(c, x) f_hat(x) dx on the density's grid."""
    check_dim(density.dim, c.dim, "codebook")
    return grid_quadrature(density, lambda x: kmeans_loss(c, x))


def true_risk(
    c: Codebook,
    f: DensitySpec,
    region: CompactRegion,
    *,
    refinement: int = ORACLE_REFINEMENT,
) -> float:
    """R_K(c) = int_K gamma(c, x) f(x) dx on a grid refined from the estimator's."""
    return plugin_risk(c, tabulate_density(f, region.refine(refinement)))


def excess_risk(
    c: Codebook,
    f: DensitySpec,
    region: CompactRegion,
    oracle: Codebook,
    *,
    refinement: int = ORACLE_REFINEMENT,
) -> float:
    """R(c) - R(c*); small negative values come from quadrature and are only logged."""
    fine = tabulate_density(f, region.refine(refinement))
    value = plugin_risk(c, fine) - plugin_risk(oracle, fine)
    if value < -NEGATIVE_EXCESS_TOL:
        log.warning("Negative excess risk %.3g: oracle codebook is not optimal to quadrature accuracy", value)
    return value


def margin_profile(
    f: DensitySpec,
    region: CompactRegion,
    c_star: Codebook,
    direction,
    deltas: Sequence[float],
    *,
    refinement: int = ORACLE_REFINEMENT,
) -> pd.DataFrame:
    """
    Squared L2(f) distance between gamma(c, .) and gamma(c*, .) and excess risk
    along c = c* + delta u, each divided by ||delta u||^2.

    Bounded ratios over shrinking delta are what the margin condition with
    kappa = 1 predicts for Pollard-regular densities.
    """
    u = np.asarray(direction, dtype=float).reshape(c_star.centers.shape)
    u = u / np.linalg.norm(u)
    fine = tabulate_density(f, region.refine(refinement))
    nodes = fine.nodes()
    base = kmeans_loss(c_star, nodes)
    base_risk = grid_quadrature(fine, base)
    rows = []
    for delta in deltas:
        c = Codebook(c_star.centers + delta * u)
        loss = kmeans_loss(c, nodes)
        l2_sq = grid_quadrature(fine, (loss - base) ** 2)
        excess = grid_quadrature(fine, loss) - base_risk
        rows.append(
            {
                "delta": float(delta),
                "l2_sq": l2_sq,
                "excess": excess,
                "l2_ratio": l2_sq / delta**2,
                "excess_ratio": excess / delta**2,
            }
        )
    return pd.DataFrame(rows)


def risk_row(
    n: int,
    bandwidth: Sequence[float],
    empirical: float,
    true: float,
    excess: float,
    seed: int,
) -> dict:
    """One CSV record of a risk report."""
    row = {"n": n}
    for j, lam in enumerate(np.asarray(bandwidth, dtype=float).reshape(-1)):
        row[f"lambda_{j + 1}"] = float(lam)
    row.update({"empirical_risk": empirical, "true_risk": true, "excess_risk": excess, "seed": seed})
    return row
