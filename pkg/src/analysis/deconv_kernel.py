"""
Deconvolution kernels K_eta built from a band-limited base kernel and a noise model.

Per axis, K_eta,j(t) = (1/2pi) int_{-S_j}^{S_j} exp(-ist) F[K_j](s) / F[eta_j](s / lambda_j) ds.
The integral is evaluated once on a dense table (closed form where a formula is
registered for the kernel/noise pair, composite Gauss-Legendre otherwise) and
interpolated with a cubic spline afterwards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from src.data.noise_models import NoiseModel
from src.errors import InvalidParameterError, check_dim

log = logging.getLogger(__name__)

AxisFn = Callable[[np.ndarray], np.ndarray]

SUPERKERNEL = math.inf
TABLE_RANGE = 50.0
TABLE_POINTS = 10_000
QUADRATURE_NODES = 2048
QUADRATURE_PANEL_ORDER = 128
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """
    Product base kernel K = prod_j K_j with compactly supported Fourier transform.

    ``order`` holds the moment order per axis; band-limited kernels are treated
    as superkernels and carry ``math.inf``.
    """

    kind: str
    dim: int
    band_limit: np.ndarray
    order: tuple[float, ...]
    axis_ft: tuple[AxisFn, ...]
    axis_kernel: tuple[AxisFn, ...] = field(repr=False)
    breakpoints: tuple[tuple[float, ...], ...] = field(repr=False)
    table_range: float = TABLE_RANGE
    table_points: int = TABLE_POINTS

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise InvalidParameterError(f"Kernel dimension must be >= 1, got {self.dim}.")
        band = np.asarray(self.band_limit, dtype=float).reshape(-1)
        check_dim(self.dim, band.size, "band_limit")
        if np.any(band <= 0):
            raise InvalidParameterError(f"Band limits must be positive, got {band.tolist()}.")
        for name in ("order", "axis_ft", "axis_kernel", "breakpoints"):
            check_dim(self.dim, len(getattr(self, name)), name)
        if self.table_range <= 0 or self.table_points < 16:
            raise InvalidParameterError(
                "Kernel tables need a positive range and at least 16 points."
            )
        band.setflags(write=False)
        object.__setattr__(self, "band_limit", band)

    def ft(self, axis: int, s) -> np.ndarray:
        return self.axis_ft[axis](np.asarray(s, dtype=float))

    def kernel(self, axis: int, t) -> np.ndarray:
        return self.axis_kernel[axis](np.asarray(t, dtype=float))


def _indicator_ft(s: np.ndarray) -> np.ndarray:
    return (np.abs(s) <= 1.0).astype(float)


def _sinc_time(t: np.ndarray) -> np.ndarray:
    return np.sinc(t / np.pi) / np.pi


def sinc_kernel(dim: int, *, table_range: float = TABLE_RANGE, table_points: int = TABLE_POINTS) -> KernelSpec:
    """sinc kernel sin(t) / (pi t); F[K_j] is the indicator of [-1, 1]."""
    return KernelSpec(
        kind="sinc",
        dim=dim,
        band_limit=np.ones(dim),
        order=(SUPERKERNEL,) * dim,
        axis_ft=(_indicator_ft,) * dim,
        axis_kernel=(_sinc_time,) * dim,
        breakpoints=((-1.0, 1.0),) * dim,
        table_range=table_range,
        table_points=table_points,
    )


def _trapezoid_ft(band: float) -> AxisFn:
    half = band / 2.0

    def ft(s: np.ndarray) -> np.ndarray:
        a = np.abs(s)
        return np.clip((band - a) / (band - half), 0.0, 1.0)

    return ft


def _vallee_poussin_time(band: float) -> AxisFn:
    a, b = band / 2.0, band

    def kernel(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        small = np.abs(t) < 1e-2
        ts = np.where(small, 1.0, t)
        main = (np.cos(a * ts) - np.cos(b * ts)) / (np.pi * (b - a) * ts * ts)
        t2 = t * t
        series = (
            (b**2 - a**2) / 2.0 - (b**4 - a**4) * t2 / 24.0 + (b**6 - a**6) * t2 * t2 / 720.0
        ) / (np.pi * (b - a))
        return np.where(small, series, main)

    return kernel


def vallee_poussin_kernel(
    dim: int,
    band_limit: float = 1.0,
    *,
    table_range: float = TABLE_RANGE,
    table_points: int = TABLE_POINTS,
) -> KernelSpec:
    """Integrable alternative to sinc: trapezoidal F[K_j], flat on [-S/2, S/2], zero beyond S."""
    if band_limit <= 0:
        raise InvalidParameterError(f"Band limit must be positive, got {band_limit}.")
    b = float(band_limit)
    return KernelSpec(
        kind="vallee-poussin",
        dim=dim,
        band_limit=np.full(dim, b),
        order=(SUPERKERNEL,) * dim,
        axis_ft=(_trapezoid_ft(b),) * dim,
        axis_kernel=(_vallee_poussin_time(b),) * dim,
        breakpoints=((-b, -b / 2.0, b / 2.0, b),) * dim,
        table_range=table_range,
        table_points=table_points,
    )


# closed forms -------------------------------------------------------------------

def _q_moment(t: np.ndarray) -> np.ndarray:
    """int_0^1 s^2 cos(st) ds."""
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 0.1
    ts = np.where(small, 1.0, t)
    main = np.sin(ts) / ts + 2.0 * np.cos(ts) / ts**2 - 2.0 * np.sin(ts) / ts**3
    t2 = t * t
    series = np.zeros_like(t)
    term = np.ones_like(t)
    for k in range(6):
        series = series + term / (2 * k + 3)
        term = -term * t2 / ((2 * k + 1) * (2 * k + 2))
    return np.where(small, series, main)


def _sinc_laplace(spec: KernelSpec, noise: NoiseModel, bandwidth: np.ndarray, axis: int) -> AxisFn:
    a2 = (noise.scale[axis] / bandwidth[axis]) ** 2

    def kernel(t: np.ndarray) -> np.ndarray:
        return (_sinc_time(t) * np.pi + a2 * _q_moment(t)) / np.pi

    return kernel


def _direct_base(spec: KernelSpec, noise: NoiseModel, bandwidth: np.ndarray, axis: int) -> AxisFn:
    return spec.axis_kernel[axis]


CLOSED_FORMS: dict[tuple[str, str], Callable[..., AxisFn]] = {
    ("sinc", "none"): _direct_base,
    ("vallee-poussin", "none"): _direct_base,
    ("sinc", "laplace"): _sinc_laplace,
}


# quadrature ---------------------------------------------------------------------

def _panel_counts(lengths: np.ndarray, total: int) -> np.ndarray:
    counts = np.maximum(1, np.round(total * lengths / lengths.sum())).astype(int)
    counts[np.argmax(lengths)] += total - counts.sum()
    return counts


def composite_gauss_legendre(
    breakpoints: Sequence[float],
    nodes: int = QUADRATURE_NODES,
    panel_order: int = QUADRATURE_PANEL_ORDER,
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a composite Gauss-Legendre rule with panels split at the breakpoints."""
    edges = np.asarray(breakpoints, dtype=float)
    x, w = leggauss(panel_order)
    counts = _panel_counts(np.diff(edges), max(1, nodes // panel_order))
    s_all, w_all = [], []
    for (lo, hi), count in zip(zip(edges[:-1], edges[1:]), counts):
        panel_edges = np.linspace(lo, hi, count + 1)
        for a, b in zip(panel_edges[:-1], panel_edges[1:]):
            half = 0.5 * (b - a)
            s_all.append(0.5 * (a + b) + half * x)
            w_all.append(half * w)
    return np.concatenate(s_all), np.concatenate(w_all)


@dataclass(frozen=True, eq=False)
class _AxisInversion:
    nodes: np.ndarray
    weighted_ratio: np.ndarray

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        out = np.empty(flat.size)
        real = np.isrealobj(self.weighted_ratio)
        for start in range(0, flat.size, _CHUNK):
            block = flat[start : start + _CHUNK]
            if real:
                out[start : start + _CHUNK] = np.cos(np.outer(block, self.nodes)) @ self.weighted_ratio
            else:
                phase = np.exp(-1j * np.outer(block, self.nodes))
                out[start : start + _CHUNK] = np.real(phase @ self.weighted_ratio)
        return (out / (2.0 * np.pi)).reshape(t.shape)


@dataclass(frozen=True, eq=False)
class DeconvKernel:
    spec: KernelSpec
    noise: NoiseModel
    bandwidth: np.ndarray
    inversions: tuple[_AxisInversion, ...] = field(repr=False)
    closed_forms: tuple[AxisFn | None, ...] = field(repr=False)
    tables: tuple[CubicSpline, ...] = field(repr=False)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def has_closed_form(self) -> bool:
        return all(cf is not None for cf in self.closed_forms)

    def fourier_ratio(self, axis: int, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.spec.ft(axis, s) / self.noise.cf_axis(axis, s / self.bandwidth[axis])

    def axis_quadrature(self, axis: int, t) -> np.ndarray:
        return self.inversions[axis](np.asarray(t, dtype=float))

    def axis_closed_form(self, axis: int, t) -> np.ndarray:
        fn = self.closed_forms[axis]
        if fn is None:
            raise InvalidParameterError(
                f"No closed form registered for ({self.spec.kind}, {self.noise.kind})."
            )
        return fn(np.asarray(t, dtype=float))

    def axis_direct(self, axis: int, t) -> np.ndarray:
        if self.closed_forms[axis] is not None:
            return self.axis_closed_form(axis, t)
        return self.axis_quadrature(axis, t)

    def axis_value(self, axis: int, t) -> np.ndarray:
        """K_eta,j(t): spline table inside [-T, T], direct evaluation outside."""
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) <= self.spec.table_range
        if inside.all():
            return self.tables[axis](t)
        out = np.empty_like(t)
        out[inside] = self.tables[axis](t[inside])
        out[~inside] = self.axis_direct(axis, t[~inside])
        return out

    def axis_scaled(self, axis: int, u) -> np.ndarray:
        lam = self.bandwidth[axis]
        return self.axis_value(axis, np.asarray(u, dtype=float) / lam) / lam

    def __call__(self, t) -> np.ndarray:
        """Unscaled product kernel K_eta(t) for t of shape (..., d)."""
        t = np.asarray(t, dtype=float)
        check_dim(self.dim, t.shape[-1], "kernel argument")
        out = self.axis_value(0, t[..., 0])
        for j in range(1, self.dim):
            out = out * self.axis_value(j, t[..., j])
        return out


def build_deconv_kernel(spec: KernelSpec, noise: NoiseModel, bandwidth: Sequence[float]) -> DeconvKernel:
    """Tabulate K_eta per axis for the given bandwidth vector."""
    check_dim(spec.dim, noise.dim, "noise")
    lam = np.asarray(bandwidth, dtype=float).reshape(-1)
    check_dim(spec.dim, lam.size, "bandwidth")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise InvalidParameterError(f"Bandwidths must be positive, got {lam.tolist()}.")
    lam.setflags(write=False)

    factory = CLOSED_FORMS.get((spec.kind, noise.kind))
    inversions, closed, tables = [], [], []
    half = np.linspace(0.0, spec.table_range, spec.table_points // 2 + 1)
    grid = np.concatenate([-half[:0:-1], half])
    for j in range(spec.dim):
        s, w = composite_gauss_legendre(spec.breakpoints[j])
        ratio = spec.ft(j, s) / noise.cf_axis(j, s / lam[j])
        if np.iscomplexobj(ratio) and np.allclose(ratio.imag, 0.0):
            ratio = ratio.real
        inversion = _AxisInversion(nodes=s, weighted_ratio=w * ratio)
        closed_form = factory(spec, noise, lam, j) if factory is not None else None
        if np.isrealobj(ratio):
            anchors = (closed_form or inversion)(half)
            anchors = np.concatenate([anchors[:0:-1], anchors])
        else:
            # asymmetric noise gives an odd part, so tabulate both signs
            anchors = inversion(grid)
        table = CubicSpline(grid, anchors)
        inversions.append(inversion)
        closed.append(closed_form)
        tables.append(table)
    log.info(
        "Built %s/%s deconvolution kernel, bandwidth=%s, closed form=%s",
        spec.kind, noise.kind, lam.tolist(), factory is not None,
    )
    return DeconvKernel(
        spec=spec,
        noise=noise,
        bandwidth=lam,
        inversions=tuple(inversions),
        closed_forms=tuple(closed),
        tables=tuple(tables),
    )


def eval_scaled(kernel: DeconvKernel, u) -> np.ndarray:
    """(1 / prod lambda_j) prod_j K_eta,j(u_j / lambda_j) for u of shape (..., d)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = u.reshape(1)
    check_dim(kernel.dim, u.shape[-1], "eval_scaled argument")
    out = kernel.axis_scaled(0, u[..., 0])
    for j in range(1, kernel.dim):
        out = out * kernel.axis_scaled(j, u[..., j])
    return out


# diagnostics --------------------------------------------------------------------

def sup_norm(kernel: DeconvKernel, axis: int) -> float:
    """sup_t |K_eta,j(t)| over the table nodes."""
    table = kernel.tables[axis]
    return float(np.max(np.abs(table(table.x))))


def windowed_mass(kernel: DeconvKernel, axis: int, width: float = 10.0, points: int = 20_001) -> float:
    """int K_eta,j(t) exp(-t^2 / 2 width^2) dt over the table range."""
    t = np.linspace(-kernel.spec.table_range, kernel.spec.table_range, points)
    return float(trapezoid(kernel.axis_value(axis, t) * np.exp(-0.5 * (t / width) ** 2), t))


def smoothed_ratio(kernel: DeconvKernel, axis: int, width: float = 10.0) -> float:
    """Fourier ratio averaged under N(0, 1 / width^2); the exact value of windowed_mass."""
    inversion = kernel.inversions[axis]
    s = inversion.nodes
    density = width / math.sqrt(2.0 * math.pi) * np.exp(-0.5 * (width * s) ** 2)
    return float(np.real(np.sum(inversion.weighted_ratio * density)))


def kernel_table(kernel: DeconvKernel, t) -> pd.DataFrame:
    t = np.asarray(t, dtype=float).reshape(-1)
    table = pd.DataFrame({"t": t})
    for j in range(kernel.dim):
        table[f"k_eta_{j + 1}"] = kernel.axis_value(j, t)
    return table
