from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.data.densities import DensitySpec
from src.data.noise_models import NoiseModel, sample_noise
from src.errors import EmptySampleError, SampleFileError, check_dim

log = logging.getLogger(__name__)


def sample_columns(dim: int) -> list[str]:
    return [f"x{j + 1}" for j in range(dim)]


def generate_sample(
    density: DensitySpec,
    noise: NoiseModel,
    n: int,
    seed: int | np.random.SeedSequence,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw X from the density and Z = X + eps; both (n, d), deterministic in seed."""
    if n < 1:
        raise EmptySampleError(f"Sample size must be >= 1, got {n}.")
    check_dim(density.dim, noise.dim, "noise")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    x_seed, eps_seed = root.spawn(2)
    x = density.sample(np.random.default_rng(x_seed), n)
    z = x + sample_noise(noise, n, eps_seed)
    return x, z


def read_sample_csv(path: Path, dim: int | None = None) -> np.ndarray:
    """Load observations from a CSV with header x1,...,xd and one row per observation."""
    source = str(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise SampleFileError("Sample file not found. Check the 'sample.path' entry.", source=source) from None
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise SampleFileError(f"Could not parse sample file: {exc}", source=source) from None

    columns = [c.strip() for c in df.columns]
    expected = sample_columns(len(columns))
    if columns != expected:
        raise SampleFileError(
            f"Header must be {','.join(expected)}, got {','.join(columns)}.", source=source, line=1
        )
    if dim is not None and len(columns) != dim:
        raise SampleFileError(f"Sample has {len(columns)} columns, expected {dim}.", source=source, line=1)
    if df.empty:
        raise SampleFileError("Sample file has a header but no observations.", source=source, line=2)

    values = df.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = ~np.isfinite(values.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SampleFileError(
            f"Non-numeric or non-finite value in row {row + 1}: {','.join(map(str, df.iloc[row].tolist()))}.",
            source=source,
            line=row + 2,
        )
    out = values.to_numpy(dtype=float)
    log.info("Read %d observations in dimension %d from %s", out.shape[0], out.shape[1], source)
    return out


def write_sample_csv(path: Path, sample) -> int:
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(sample, columns=sample_columns(sample.shape[1]))
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return len(df)
