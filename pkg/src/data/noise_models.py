"""
Measurement-noise models for the errors-in-variables sample Z = X + eps.

A noise is described per axis: a characteristic function, the polynomial
decay exponent beta_j of that characteristic function, a scale, and an
optional sampler. Only product-form, mildly ill-posed noises are supported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from src.errors import EmptySampleError, InvalidParameterError, check_dim

log = logging.getLogger(__name__)

AxisCF = Callable[[np.ndarray], np.ndarray]
Sampler = Callable[[np.random.Generator, int], np.ndarray]

# grid used to reject characteristic functions that vanish somewhere
_CHECK_T = np.concatenate([[0.0], np.logspace(-3, 4, 281)])


@dataclass(frozen=True, eq=False)
class NoiseModel:
    kind: str
    dim: int
    axis_cf: tuple[AxisCF, ...]
    beta: np.ndarray
    scale: np.ndarray
    sampler: Sampler | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise InvalidParameterError(f"Noise dimension must be >= 1, got {self.dim}.")
        if len(self.axis_cf) != self.dim:
            raise InvalidParameterError(
                "Noise must be given in product form: one characteristic function per axis "
                f"({self.dim} expected, {len(self.axis_cf)} given)."
            )
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        scale = np.asarray(self.scale, dtype=float).reshape(-1)
        check_dim(self.dim, beta.size, "beta")
        check_dim(self.dim, scale.size, "scale")
        if np.any(beta < 0):
            raise InvalidParameterError(f"beta must be nonnegative, got {beta.tolist()}.")
        beta.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "scale", scale)

    def cf_axis(self, axis: int, t) -> np.ndarray:
        return self.axis_cf[axis](np.asarray(t, dtype=float))

    def cf(self, t) -> np.ndarray:
        """Joint characteristic function at points t of shape (..., d)."""
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            t = t.reshape(1)
        check_dim(self.dim, t.shape[-1], "cf argument")
        out = self.cf_axis(0, t[..., 0])
        for j in range(1, self.dim):
            out = out * self.cf_axis(j, t[..., j])
        return out

    @property
    def has_sampler(self) -> bool:
        return self.sampler is not None

    @property
    def is_zero(self) -> bool:
        return self.kind == "none"


def _laplace_cf(scale: float) -> AxisCF:
    s2 = scale * scale

    def cf(t: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + s2 * t * t)

    return cf


def _unit_cf(t: np.ndarray) -> np.ndarray:
    return np.ones_like(t, dtype=float)


def laplace_noise(dim: int, scale: Sequence[float]) -> NoiseModel:
    """Product Laplace noise, cf(t) = prod_j 1 / (1 + scale_j^2 t_j^2), beta = 2."""
    scale = np.asarray(scale, dtype=float).reshape(-1)
    check_dim(dim, scale.size, "Laplace scale")
    if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
        raise InvalidParameterError(
            f"Laplace scales must be positive, got {scale.tolist()}."
        )
    frozen = scale.copy()

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.laplace(0.0, frozen, size=(n, dim))

    return NoiseModel(
        kind="laplace",
        dim=dim,
        axis_cf=tuple(_laplace_cf(float(s)) for s in scale),
        beta=np.full(dim, 2.0),
        scale=scale,
        sampler=sampler,
    )


def zero_noise(dim: int) -> NoiseModel:
    """Direct observations: eps is the point mass at 0."""
    if dim < 1:
        raise InvalidParameterError(f"Noise dimension must be >= 1, got {dim}.")

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        return np.zeros((n, dim))

    return NoiseModel(
        kind="none",
        dim=dim,
        axis_cf=tuple(_unit_cf for _ in range(dim)),
        beta=np.zeros(dim),
        scale=np.ones(dim),
        sampler=sampler,
    )


def custom_noise(
    axis_cf: Sequence[AxisCF],
    beta: Sequence[float],
    *,
    scale: Sequence[float] | None = None,
    sampler: Sampler | None = None,
    kind: str = "custom",
) -> NoiseModel:
    """User-supplied product noise; cf(0) = 1 and no zeros on a log-spaced check grid are enforced."""
    dim = len(axis_cf)
    for j, cf in enumerate(axis_cf):
        values = np.asarray(cf(_CHECK_T))
        if not np.isclose(values[0], 1.0, rtol=0, atol=1e-12):
            raise InvalidParameterError(
                f"Characteristic function of axis {j + 1} must equal 1 at t = 0, got {values[0]}."
            )
        mirrored = np.asarray(cf(-_CHECK_T))
        if np.any(np.abs(values) == 0) or np.any(~np.isfinite(values)) or np.any(~np.isfinite(mirrored)):
            raise InvalidParameterError(
                f"Characteristic function of axis {j + 1} vanishes or is not finite; "
                "only noises with a nonvanishing characteristic function can be deconvolved."
            )
        if not np.allclose(mirrored, np.conj(values), rtol=1e-9, atol=1e-12):
            raise InvalidParameterError(
                f"Characteristic function of axis {j + 1} must satisfy cf(-t) = conj(cf(t)); "
                "check the sign convention of the supplied function."
            )
    return NoiseModel(
        kind=kind,
        dim=dim,
        axis_cf=tuple(axis_cf),
        beta=np.asarray(beta, dtype=float),
        scale=np.ones(dim) if scale is None else np.asarray(scale, dtype=float),
        sampler=sampler,
    )


def _table_cf(t_table: np.ndarray, cf_table: np.ndarray, beta: float) -> AxisCF:
    t_max = t_table[-1]
    tail = cf_table[-1]

    def cf(t: np.ndarray) -> np.ndarray:
        at = np.abs(t)
        inside = np.interp(at, t_table, cf_table)
        with np.errstate(divide="ignore"):
            outside = tail * (t_max / np.maximum(at, t_max)) ** beta
        return np.where(at <= t_max, inside, outside)

    return cf


def custom_table_noise(
    t_tables: Sequence[Sequence[float]],
    cf_tables: Sequence[Sequence[float]],
    beta: Sequence[float],
) -> NoiseModel:
    """
    Symmetric noise given by tabulated real characteristic functions on t >= 0.

    Each table must start at t = 0 with value 1. Past the last table point the
    characteristic function continues as a power tail |t|^-beta_j.
    """
    if len(t_tables) != len(cf_tables):
        raise InvalidParameterError("Need one cf table per t table.")
    beta = np.asarray(beta, dtype=float).reshape(-1)
    check_dim(len(t_tables), beta.size, "beta")
    axis_cf = []
    for j, (t_tab, cf_tab) in enumerate(zip(t_tables, cf_tables)):
        t_tab = np.asarray(t_tab, dtype=float)
        cf_tab = np.asarray(cf_tab, dtype=float)
        if t_tab.ndim != 1 or t_tab.shape != cf_tab.shape or t_tab.size < 2:
            raise InvalidParameterError(
                f"cf table of axis {j + 1} must be two equal-length 1-d arrays with >= 2 points."
            )
        if t_tab[0] != 0.0 or cf_tab[0] != 1.0:
            raise InvalidParameterError(
                f"cf table of axis {j + 1} must start with t = 0 and value 1."
            )
        if np.any(np.diff(t_tab) <= 0):
            raise InvalidParameterError(f"t table of axis {j + 1} must be strictly increasing.")
        axis_cf.append(_table_cf(t_tab, cf_tab, float(beta[j])))
    return custom_noise(axis_cf, beta, kind="custom-table")


def sample_noise(model: NoiseModel, n: int, seed: int | np.random.SeedSequence) -> np.ndarray:
    """n i.i.d. draws of eps as an (n, d) matrix; deterministic in seed."""
    if n < 1:
        raise EmptySampleError(f"Number of noise draws must be >= 1, got {n}.")
    if model.sampler is None:
        raise InvalidParameterError(
            f"Noise of kind '{model.kind}' has no sampler; supply observations directly."
        )
    rng = np.random.default_rng(seed)
    draws = np.asarray(model.sampler(rng, n), dtype=float)
    return draws.reshape(n, model.dim)


def decay_ratio(model: NoiseModel, axis: int, t) -> np.ndarray:
    """|cf_j(t)| * |t|^beta_j along one axis; bounded away from 0 and infinity under (NA)."""
    t = np.asarray(t, dtype=float)
    return np.abs(model.cf_axis(axis, t)) * np.abs(t) ** model.beta[axis]


def empirical_cf(samples, t) -> np.ndarray:
    """Empirical characteristic function of 1-d draws at the points t."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    t = np.asarray(t, dtype=float).reshape(-1)
    return np.exp(1j * np.outer(t, samples)).mean(axis=1)
