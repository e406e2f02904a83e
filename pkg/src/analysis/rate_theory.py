"""
Rate exponents, the fast-rate condition and bandwidth schedules of deconvolution ERM.

All schedules are known only up to constants; ``RateParams.scale_constant``
multiplies every bandwidth and is meant to be swept by experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from src.errors import InvalidParameterError, check_dim

KMEANS_RATE_FACTOR = "sqrt(log log n)"


@dataclass(frozen=True, eq=False)
class RateParams:
    """Margin kappa, entropy rho, ill-posedness beta and Holder smoothness s (per axis)."""

    kappa: float = 1.0
    rho: float = 0.0
    beta: np.ndarray = (0.0,)
    s: np.ndarray = (1.0,)
    L: float = 1.0
    scale_constant: float = 1.0

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float).reshape(-1)
        s = np.array(self.s, dtype=float).reshape(-1)
        check_dim(s.size, beta.size, "beta")
        if not self.kappa >= 1:
            raise InvalidParameterError(f"kappa must be >= 1, got {self.kappa}.")
        if not 0 <= self.rho < 1:
            raise InvalidParameterError(f"rho must lie in [0, 1), got {self.rho}.")
        if np.any(beta < 0) or not np.all(np.isfinite(beta)):
            raise InvalidParameterError(f"beta must be finite and >= 0, got {beta.tolist()}.")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise InvalidParameterError(f"s must be finite and positive, got {s.tolist()}.")
        if not self.L > 0:
            raise InvalidParameterError(f"L must be positive, got {self.L}.")
        if not self.scale_constant > 0:
            raise InvalidParameterError(f"scale_constant must be positive, got {self.scale_constant}.")
        beta.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "s", s)

    @property
    def dim(self) -> int:
        return self.s.size

    @property
    def penalty(self) -> float:
        """sum_j beta_j / s_j, the price of the noise."""
        return float(np.sum(self.beta / self.s))


def _sample_size(n: int) -> float:
    if n < 2:
        raise InvalidParameterError(f"Bandwidth schedules need n >= 2, got {n}.")
    return float(n)


def tau_exact(p: RateParams) -> float:
    """kappa / (2 kappa + rho - 1 + (2 kappa - 1) sum beta_j / s_j)."""
    denom = 2 * p.kappa + p.rho - 1 + (2 * p.kappa - 1) * p.penalty
    if not denom > 0:
        raise InvalidParameterError(f"Exponent denominator must be positive, got {denom}.")
    return p.kappa / denom


def tau_nonexact(p: RateParams) -> float:
    """1 / (1 + rho + sum beta_j / s_j); coincides with tau_exact at kappa = 1."""
    return 1.0 / (1.0 + p.rho + p.penalty)


def tau_isotropic(kappa: float, rho: float, beta: Sequence[float], s: float) -> float:
    """kappa s / (s (2 kappa + rho - 1) + (2 kappa - 1) sum beta_j) for common smoothness s."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    return tau_exact(RateParams(kappa=kappa, rho=rho, beta=beta, s=np.full(beta.size, s)))


def fast_rate_condition(p: RateParams) -> bool:
    """(2 kappa - 1) sum beta_j / s_j < 1 - rho."""
    return bool((2 * p.kappa - 1) * p.penalty < 1 - p.rho)


def bandwidth_exact(p: RateParams, n: int) -> np.ndarray:
    n = _sample_size(n)
    exponents = (2 * p.kappa - 1) / (2 * p.kappa * p.s) * tau_exact(p)
    return p.scale_constant * n ** (-exponents)


def bandwidth_nonexact(p: RateParams, n: int) -> np.ndarray:
    n = _sample_size(n)
    return p.scale_constant * n ** (-tau_nonexact(p) / (2 * p.s))


def bandwidth_kmeans(p: RateParams, n: int) -> np.ndarray:
    """lambda_j = scale * n^(-1 / (2 s_j (1 + sum beta_j / s_j))); finite codebooks have rho = 0."""
    if p.rho != 0:
        raise InvalidParameterError(f"The k-means schedule needs rho = 0, got {p.rho}.")
    n = _sample_size(n)
    return p.scale_constant * n ** (-1.0 / (2 * p.s * (1 + p.penalty)))


def density_deconvolution_exponents(p: RateParams) -> np.ndarray:
    """Bandwidth exponents 1 / (s_u (2 + sum (2 beta_j + 1) / s_j)) of plain density deconvolution."""
    return 1.0 / (p.s * (2.0 + np.sum((2 * p.beta + 1) / p.s)))


def bandwidth_density_deconvolution(p: RateParams, n: int) -> np.ndarray:
    n = _sample_size(n)
    return p.scale_constant * n ** (-density_deconvolution_exponents(p))


def theoretical_rate_kmeans(p: RateParams) -> float:
    """
    Polynomial exponent 1 / (1 + sum beta_j / s_j) of the noisy k-means excess risk.

    The bound also carries a sqrt(log log n) factor (see ``KMEANS_RATE_FACTOR``),
    which is left out of the exponent.
    """
    return 1.0 / (1.0 + p.penalty)


def rate_envelope(p: RateParams, n, constant: float = 1.0) -> np.ndarray:
    """constant * sqrt(log log n) * n^(-exponent), for overlaying on measured excess risks."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 3):
        raise InvalidParameterError("The log log n envelope needs n >= 3.")
    return constant * np.sqrt(np.log(np.log(n))) * n ** (-theoretical_rate_kmeans(p))


def plan_table(p: RateParams, n_grid: Sequence[int]) -> pd.DataFrame:
    """Bandwidths under each schedule and the matching exponents, one row per n."""
    rows = []
    for n in n_grid:
        row: dict = {"n": int(n)}
        schedules = {
            "exact": bandwidth_exact(p, n),
            "nonexact": bandwidth_nonexact(p, n),
            "kmeans": bandwidth_kmeans(p, n) if p.rho == 0 else np.full(p.dim, np.nan),
            "deconvolution": bandwidth_density_deconvolution(p, n),
        }
        for name, lam in schedules.items():
            for j, value in enumerate(lam):
                row[f"lambda_{name}_{j + 1}"] = float(value)
        rows.append(row)
    frame = pd.DataFrame(rows)
    frame["tau_exact"] = tau_exact(p)
    frame["tau_nonexact"] = tau_nonexact(p)
    frame["rate_kmeans"] = theoretical_rate_kmeans(p)
    frame["fast_rate"] = fast_rate_condition(p)
    return frame
