from __future__ import annotations

import logging
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from src.analysis.deconv_kernel import DeconvKernel, KernelSpec
from src.data.densities import CompactRegion, DensitySpec, make_density
from src.errors import EmptySampleError, InvalidParameterError, check_dim

__all__ = [
    "CompactRegion",
    "DensitySpec",
    "DeconvolvedDensity",
    "deconv_kde",
    "density_floor",
    "density_frame",
    "direct_kde",
    "grid_quadrature",
    "make_density",
    "tabulate_density",
]

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = {1: 256, 2: 96}
KDE_CHUNK = 2048

AxisFn = Callable[[int, np.ndarray], np.ndarray]


def default_resolution(dim: int) -> int:
    return DEFAULT_RESOLUTION.get(dim, 32)


@dataclass(frozen=True, eq=False)
class DeconvolvedDensity:
    """Signed weight field on the region's grid; no positivity is imposed."""

    region: CompactRegion
    values: np.ndarray
    bandwidth: np.ndarray | None
    sample_size: int

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(self.region.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.region.dim

    def nodes(self) -> np.ndarray:
        return self.region.nodes()

    def node_weights(self) -> np.ndarray:
        """Quadrature weight times density value, flattened in node order."""
        return (self.region.weights() * self.values).reshape(-1)

    def mass(self) -> float:
        return grid_quadrature(self, lambda x: np.ones(x.shape[0]))


def _as_sample(sample_z, dim: int) -> np.ndarray:
    z = np.asarray(sample_z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1) if dim == 1 else z.reshape(1, -1)
    if z.shape[0] == 0:
        raise EmptySampleError("Sample is empty; need at least one observation.")
    check_dim(dim, z.shape[1], "sample")
    return z


def _einsum_spec(dim: int) -> str:
    letters = string.ascii_lowercase[:dim]
    return ",".join(f"z{c}" for c in letters) + "->" + letters


def _product_kde(z: np.ndarray, axis_fn: AxisFn, region: CompactRegion, workers: int) -> np.ndarray:
    axes = region.axes()
    subscripts = _einsum_spec(region.dim)

    def chunk_sum(start: int) -> np.ndarray:
        block = z[start : start + KDE_CHUNK]
        factors = [axis_fn(j, block[:, j, None] - axes[j][None, :]) for j in range(region.dim)]
        return np.einsum(subscripts, *factors)

    starts = range(0, z.shape[0], KDE_CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(chunk_sum, starts))
    else:
        partials = [chunk_sum(s) for s in starts]
    total = partials[0]
    for part in partials[1:]:
        total = total + part
    return total / z.shape[0]


def deconv_kde(
    sample_z,
    kernel: DeconvKernel,
    region: CompactRegion,
    *,
    workers: int = 1,
) -> DeconvolvedDensity:
    """f_hat(x) = (1/n) sum_i eval_scaled(kernel, Z_i - x) at every grid node x."""
    check_dim(kernel.dim, region.dim, "region")
    z = _as_sample(sample_z, region.dim)
    values = _product_kde(z, kernel.axis_scaled, region, workers)
    log.info("Deconvolution KDE: n=%d, grid=%s, bandwidth=%s", z.shape[0], region.shape, kernel.bandwidth.tolist())
    return DeconvolvedDensity(region, values, kernel.bandwidth, z.shape[0])


def direct_kde(
    sample,
    spec: KernelSpec,
    bandwidth: Sequence[float],
    region: CompactRegion,
    *,
    workers: int = 1,
) -> DeconvolvedDensity:
    """Ordinary product KDE with the base kernel, no deconvolution."""
    check_dim(spec.dim, region.dim, "region")
    lam = np.asarray(bandwidth, dtype=float).reshape(-1)
    check_dim(spec.dim, lam.size, "bandwidth")
    if np.any(lam <= 0):
        raise InvalidParameterError(f"Bandwidths must be positive, got {lam.tolist()}.")
    z = _as_sample(sample, region.dim)

    def axis_fn(j: int, u: np.ndarray) -> np.ndarray:
        return spec.kernel(j, u / lam[j]) / lam[j]

    return DeconvolvedDensity(region, _product_kde(z, axis_fn, region, workers), lam, z.shape[0])


def grid_quadrature(density: DeconvolvedDensity, integrand) -> float:
    """Tensor trapezoid rule of integrand x f_hat over the region.

    ``integrand`` is either a callable on (N, d) node matrices or an array of
    node values (grid-shaped or flat).
    """
    if callable(integrand):
        g = np.asarray(integrand(density.nodes()), dtype=float)
    else:
        g = np.asarray(integrand, dtype=float)
    g = g.reshape(-1)
    if g.size != density.region.size:
        raise InvalidParameterError(
            f"Integrand has {g.size} node values, the grid has {density.region.size}."
        )
    return float(np.dot(density.node_weights(), g))


def tabulate_density(f: DensitySpec, region: CompactRegion) -> DeconvolvedDensity:
    """True density f on the grid, as a weight field for the solvers and risk oracles."""
    check_dim(f.dim, region.dim, "region")
    return DeconvolvedDensity(region, f(region.nodes()), None, 0)


def density_floor(f: DensitySpec, region: CompactRegion) -> float:
    """min of f over the grid nodes (the constant c0 of the density assumption when positive)."""
    return float(np.min(f(region.nodes())))


def density_frame(density: DeconvolvedDensity) -> pd.DataFrame:
    nodes = density.nodes()
    frame = pd.DataFrame({f"x{j + 1}": nodes[:, j] for j in range(density.dim)})
    frame["value"] = density.values.reshape(-1)
    return frame
