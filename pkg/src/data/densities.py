from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import ndtr

from src.errors import InvalidParameterError, check_dim

log = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], np.ndarray]
Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class CompactRegion:
    """Axis-aligned box [lower, upper] carrying a tensor grid of resolution[j] nodes per axis."""

    lower: np.ndarray
    upper: np.ndarray
    resolution: tuple[int, ...]

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        resolution = tuple(int(r) for r in np.atleast_1d(self.resolution))
        check_dim(lower.size, upper.size, "region upper bound")
        check_dim(lower.size, len(resolution), "region resolution")
        if np.any(~np.isfinite(lower)) or np.any(~np.isfinite(upper)) or np.any(lower >= upper):
            raise InvalidParameterError(
                f"Region needs lower < upper on every axis, got {lower.tolist()} and {upper.tolist()}."
            )
        if min(resolution) < 2:
            raise InvalidParameterError(f"Region needs >= 2 nodes per axis, got {resolution}.")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", resolution)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.asarray(self.resolution) - 1)

    @property
    def radius(self) -> float:
        """Smallest M with the region inside the sup-norm ball B(0, M)."""
        return float(max(np.max(np.abs(self.lower)), np.max(np.abs(self.upper))))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, r) for a, b, r in zip(self.lower, self.upper, self.resolution)]

    def nodes(self) -> np.ndarray:
        """Grid nodes as an (N, d) matrix in C order of ``shape``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def axis_weights(self) -> list[np.ndarray]:
        out = []
        for h, r in zip(self.spacing, self.resolution):
            w = np.full(r, h)
            w[[0, -1]] = h / 2.0
            out.append(w)
        return out

    def weights(self) -> np.ndarray:
        """Tensor trapezoid weights with the grid's shape."""
        w = np.ones(())
        for axis_w in self.axis_weights():
            w = np.multiply.outer(w, axis_w)
        return w

    def refine(self, factor: int) -> "CompactRegion":
        """Same box with (r - 1) * factor + 1 nodes per axis, so old nodes stay nodes."""
        return CompactRegion(
            self.lower, self.upper, tuple((r - 1) * factor + 1 for r in self.resolution)
        )

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)


@dataclass(frozen=True, eq=False)
class DensitySpec:
    kind: str
    dim: int
    evaluator: Evaluator = field(repr=False)
    sampler: Sampler = field(repr=False)
    holder_s: np.ndarray
    holder_L: float
    support: CompactRegion

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        check_dim(self.dim, x.shape[-1], "density argument")
        return self.evaluator(x)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.sampler(rng, n), dtype=float).reshape(n, self.dim)


def _vector(params: Mapping[str, Any], key: str, dim: int, default=None) -> np.ndarray:
    value = params.get(key, default)
    if value is None:
        raise InvalidParameterError(f"Density parameter '{key}' is required.")
    out = np.asarray(value, dtype=float).reshape(-1)
    if out.size == 1 and dim > 1:
        out = np.full(dim, out[0])
    check_dim(dim, out.size, f"density parameter '{key}'")
    return out


def _uniform(params: Mapping[str, Any], resolution: int) -> DensitySpec:
    lower = np.asarray(params.get("lower", [-1.0]), dtype=float).reshape(-1)
    dim = lower.size
    upper = _vector(params, "upper", dim, [1.0] * dim)
    region = CompactRegion(lower, upper, (resolution,) * dim)
    height = 1.0 / float(np.prod(upper - lower))

    def evaluator(x: np.ndarray) -> np.ndarray:
        return np.where(region.contains(x), height, 0.0)

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(lower, upper, size=(n, dim))

    return DensitySpec(
        kind="uniform",
        dim=dim,
        evaluator=evaluator,
        sampler=sampler,
        holder_s=_vector(params, "s", dim, 1.0),
        holder_L=float(params.get("L", 1.0)),
        support=region,
    )


def _gaussian_mixture(params: Mapping[str, Any], resolution: int) -> DensitySpec:
    if params.get("means") is None:
        raise InvalidParameterError("Gaussian mixture needs 'means' (k values, or a k x d array).")
    means = np.asarray(params["means"], dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    if means.ndim != 2 or means.size == 0:
        raise InvalidParameterError("Gaussian mixture needs 'means' (k values, or a k x d array).")
    n_comp, dim = means.shape
    weights = np.asarray(params.get("weights", [1.0 / n_comp] * n_comp), dtype=float).reshape(-1)
    if weights.size != n_comp or np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-9):
        raise InvalidParameterError(
            f"Mixture weights must be {n_comp} nonnegative numbers summing to 1, got {weights.tolist()}."
        )
    sds = np.asarray(params.get("sds", 1.0), dtype=float)
    if sds.ndim == 1:
        sds = sds[:, None]
    try:
        sds = np.broadcast_to(sds, (n_comp, dim)).copy()
    except ValueError:
        raise InvalidParameterError(
            f"Mixture 'sds' must be a scalar, {n_comp} values or a {n_comp} x {dim} array."
        ) from None
    if np.any(sds <= 0):
        raise InvalidParameterError("Mixture standard deviations must be positive.")
    lower = _vector(params, "lower", dim, (means - 4.0 * sds).min(axis=0))
    upper = _vector(params, "upper", dim, (means + 4.0 * sds).max(axis=0))
    region = CompactRegion(lower, upper, (resolution,) * dim)
    inside_mass = np.prod(ndtr((upper - means) / sds) - ndtr((lower - means) / sds), axis=1)
    total_mass = float(weights @ inside_mass)
    norm = np.prod(sds, axis=1) * (2.0 * np.pi) ** (dim / 2.0)

    def evaluator(x: np.ndarray) -> np.ndarray:
        z = (x[..., None, :] - means) / sds
        pdf = np.exp(-0.5 * np.sum(z * z, axis=-1)) / norm
        return np.where(region.contains(x), pdf @ weights / total_mass, 0.0)

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((0, dim))
        while out.shape[0] < n:
            batch = max(2 * (n - out.shape[0]), 64)
            comp = rng.choice(n_comp, size=batch, p=weights)
            draw = means[comp] + sds[comp] * rng.standard_normal((batch, dim))
            out = np.concatenate([out, draw[region.contains(draw)]])
        return out[:n]

    return DensitySpec(
        kind="gaussian-mixture",
        dim=dim,
        evaluator=evaluator,
        sampler=sampler,
        holder_s=_vector(params, "s", dim, 2.0),
        holder_L=float(params.get("L", 1.0)),
        support=region,
    )


def _smooth_bump(params: Mapping[str, Any], resolution: int) -> DensitySpec:
    s = np.asarray(params.get("s", [2.0]), dtype=float).reshape(-1)
    dim = s.size
    if np.any(s <= 0):
        raise InvalidParameterError(f"Bump smoothness must be positive, got {s.tolist()}.")
    center = _vector(params, "center", dim, 0.0)
    half_width = _vector(params, "half_width", dim, 1.0)
    if np.any(half_width <= 0):
        raise InvalidParameterError("Bump half widths must be positive.")
    region = CompactRegion(center - half_width, center + half_width, (resolution,) * dim)
    norm = float(np.prod(half_width * beta_fn(0.5, s + 1.0)))

    def evaluator(x: np.ndarray) -> np.ndarray:
        u = (x - center) / half_width
        return np.prod(np.clip(1.0 - u * u, 0.0, None) ** s, axis=-1) / norm

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        b = rng.beta(s + 1.0, s + 1.0, size=(n, dim))
        return center + half_width * (2.0 * b - 1.0)

    return DensitySpec(
        kind="smooth-bump",
        dim=dim,
        evaluator=evaluator,
        sampler=sampler,
        holder_s=s,
        holder_L=float(params.get("L", 1.0)),
        support=region,
    )


DENSITY_KINDS: dict[str, Callable[[Mapping[str, Any], int], DensitySpec]] = {
    "uniform": _uniform,
    "gaussian-mixture": _gaussian_mixture,
    "smooth-bump": _smooth_bump,
}


def make_density(kind: str, params: Mapping[str, Any] | None = None, *, resolution: int = 256) -> DensitySpec:
    """
    Synthetic density with evaluator, seeded sampler, Holder data and support box.

    Kinds: ``uniform`` (box), ``gaussian-mixture`` (diagonal components truncated
    to a box) and ``smooth-bump`` (product of (1 - x^2)_+^{s_j}, Holder exponent
    s_j along axis j).
    """
    try:
        factory = DENSITY_KINDS[kind]
    except KeyError:
        raise InvalidParameterError(
            f"Unknown density kind '{kind}'. Use one of {sorted(DENSITY_KINDS)}."
        ) from None
    spec = factory(dict(params or {}), resolution)
    log.debug("Made %s density on %s..%s", kind, spec.support.lower, spec.support.upper)
    return spec
