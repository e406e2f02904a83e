"""
Configuration files: JSON parsed through ``yaml.compose`` so every key keeps
its line number, and builders from config sections to domain objects.

Unknown keys and invalid values are reported as ``ConfigError`` pinned to the
offending line.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import yaml

from src.analysis.deconv_kernel import KernelSpec, sinc_kernel, vallee_poussin_kernel
from src.analysis.density_estimation import CompactRegion, DensitySpec, default_resolution, make_density
from src.analysis.experiments import BASELINES, ExperimentConfig
from src.analysis.noisy_kmeans import SolverConfig
from src.analysis.rate_theory import RateParams
from src.data.noise_models import NoiseModel, custom_table_noise, laplace_noise, zero_noise
from src.errors import ConfigError, NoisyQuantError

log = logging.getLogger(__name__)

NOISE_ALIASES = {"table": "custom-table"}

COMMAND_KEYS = {
    "kernel": {"kernel", "noise", "bandwidth", "t_range", "points"},
    "kde": {"kernel", "noise", "bandwidth", "region", "sample", "deconvolve"},
    "cluster": {"kernel", "noise", "bandwidth", "region", "sample", "deconvolve", "solver"},
    "rates-run": {
        "density", "noise", "kernel", "region", "k", "rate_params", "n_grid", "replicates",
        "solver", "master_seed", "baselines", "schedule", "refinement",
    },
    "rates-plan": {"rate_params", "n_grid"},
}
DENSITY_KEYS = {
    "uniform": {"lower", "upper", "s", "L"},
    "gaussian-mixture": {"means", "sds", "weights", "lower", "upper", "s", "L"},
    "smooth-bump": {"s", "center", "half_width", "L"},
}
MISSING = object()


@dataclass
class ConfigSection:
    """A JSON object with the line of each key; nested objects are sections too."""

    source: str
    line: int
    values: dict[str, Any] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def keys(self):
        return self.values.keys()

    def line_of(self, key: str) -> int:
        return self.lines.get(key, self.line)

    def error(self, key: str | None, message: str) -> ConfigError:
        line = self.line if key is None else self.line_of(key)
        return ConfigError(message, source=self.source, line=line)

    def reject_unknown(self, allowed, where: str = "config") -> None:
        for key in self.values:
            if key not in allowed:
                raise self.error(key, f"Unknown key '{key}' in {where}. Allowed keys: {', '.join(sorted(allowed))}.")

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def require(self, key: str) -> Any:
        if key not in self.values:
            raise self.error(None, f"Missing required key '{key}'.")
        return self.values[key]

    def section(self, key: str, default: Any = MISSING) -> "ConfigSection":
        if key not in self.values:
            if default is MISSING:
                raise self.error(None, f"Missing required section '{key}'.")
            return default
        value = self.values[key]
        if not isinstance(value, ConfigSection):
            raise self.error(key, f"'{key}' must be an object.")
        return value

    def number(self, key: str, default: Any = MISSING, *, integer: bool = False) -> Any:
        if key not in self.values:
            if default is MISSING:
                raise self.error(None, f"Missing required key '{key}'.")
            return default
        value = self.values[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(key, f"'{key}' must be a number, got {value!r}.")
        if integer:
            if float(value) != int(value):
                raise self.error(key, f"'{key}' must be an integer, got {value!r}.")
            return int(value)
        return float(value)

    def vector(self, key: str, dim: int | None = None, default: Any = MISSING) -> np.ndarray:
        value = self.values.get(key, default)
        if value is MISSING:
            raise self.error(None, f"Missing required key '{key}'.")
        try:
            out = np.asarray(value, dtype=float).reshape(-1)
        except (TypeError, ValueError):
            raise self.error(key, f"'{key}' must be a number or a list of numbers.") from None
        if dim is not None:
            if out.size == 1 and dim > 1:
                out = np.full(dim, out[0])
            if out.size != dim:
                raise self.error(key, f"'{key}' needs {dim} values, got {out.size}.")
        return out

    @contextlib.contextmanager
    def building(self, key: str | None = None) -> Iterator[None]:
        """Re-raise domain validation errors as line-addressed config errors."""
        try:
            yield
        except ConfigError:
            raise
        except (NoisyQuantError, TypeError, ValueError) as exc:
            raise self.error(key, str(exc)) from None


def _scalar(node: yaml.ScalarNode) -> Any:
    if node.style is not None:
        return node.value
    text = node.value
    if text == "null":
        return None
    if text in ("true", "false"):
        return text == "true"
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    return text


def _convert(node: yaml.Node, source: str) -> Any:
    if isinstance(node, yaml.MappingNode):
        section = ConfigSection(source=source, line=node.start_mark.line + 1)
        for key_node, value_node in node.value:
            key = str(key_node.value)
            line = key_node.start_mark.line + 1
            if key in section.values:
                raise ConfigError(f"Duplicate key '{key}'.", source=source, line=line)
            section.values[key] = _convert(value_node, source)
            section.lines[key] = line
        return section
    if isinstance(node, yaml.SequenceNode):
        return [_convert(item, source) for item in node.value]
    return _scalar(node)


def parse_config(text: str, source: str = "<config>") -> ConfigSection:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"Could not parse config: {problem}", source=source, line=line) from None
    if node is None:
        raise ConfigError("Config file is empty.", source=source)
    tree = _convert(node, source)
    if not isinstance(tree, ConfigSection):
        raise ConfigError("Config must be a JSON object at the top level.", source=source, line=1)
    return tree


def load_config(path: Path, command: str) -> ConfigSection:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Could not read config file: {exc.strerror}.", source=str(path)) from None
    tree = parse_config(text, str(path))
    tree.reject_unknown(COMMAND_KEYS[command], where=f"'{command}' config")
    log.debug("Loaded %s config from %s", command, path)
    return tree


# builders -----------------------------------------------------------------------

def noise_from_config(sec: ConfigSection, dim: int) -> NoiseModel:
    kind = sec.get("kind", "laplace")
    if isinstance(kind, str):
        kind = NOISE_ALIASES.get(kind, kind)
    allowed = {"laplace": {"kind", "scale"}, "none": {"kind"}, "custom-table": {"kind", "t", "cf", "beta"}}
    if kind not in allowed:
        raise sec.error("kind", f"Unknown noise kind '{kind}'. Use one of {sorted(allowed)}.")
    sec.reject_unknown(allowed[kind], where=f"{kind} noise")
    with sec.building():
        if kind == "laplace":
            return laplace_noise(dim, sec.vector("scale", dim))
        if kind == "none":
            return zero_noise(dim)
        t, cf = sec.require("t"), sec.require("cf")
        if dim == 1 and t and not isinstance(t[0], list):
            t, cf = [t], [cf]
        return custom_table_noise(t, cf, sec.vector("beta", dim))


def kernel_from_config(sec: ConfigSection | None, dim: int) -> KernelSpec:
    if sec is None:
        return sinc_kernel(dim)
    kind = sec.get("kind", "sinc")
    sec.reject_unknown({"kind", "band_limit", "table_range", "table_points"}, where="kernel")
    table = {
        "table_range": sec.number("table_range", 50.0),
        "table_points": sec.number("table_points", 10_000, integer=True),
    }
    with sec.building():
        if kind == "sinc":
            if "band_limit" in sec:
                raise sec.error("band_limit", "The sinc kernel has a fixed band limit of 1.")
            return sinc_kernel(dim, **table)
        if kind == "vallee-poussin":
            return vallee_poussin_kernel(dim, sec.number("band_limit", 1.0), **table)
    raise sec.error("kind", f"Unknown kernel kind '{kind}'. Use 'sinc' or 'vallee-poussin'.")


def region_from_config(sec: ConfigSection) -> CompactRegion:
    sec.reject_unknown({"lower", "upper", "resolution"}, where="region")
    lower = sec.vector("lower")
    upper = sec.vector("upper", lower.size)
    resolution = sec.vector("resolution", lower.size, default_resolution(lower.size)).astype(int)
    with sec.building():
        return CompactRegion(lower, upper, tuple(resolution))


def density_from_config(sec: ConfigSection, resolution: int | None = None) -> DensitySpec:
    kind = sec.require("kind")
    if kind not in DENSITY_KEYS:
        raise sec.error("kind", f"Unknown density kind '{kind}'. Use one of {sorted(DENSITY_KEYS)}.")
    sec.reject_unknown(DENSITY_KEYS[kind] | {"kind", "resolution"}, where=f"{kind} density")
    params = {key: value for key, value in sec.values.items() if key not in ("kind", "resolution")}
    resolution = sec.number("resolution", resolution or 256, integer=True)
    with sec.building():
        return make_density(kind, params, resolution=resolution)


def solver_from_config(sec: ConfigSection | None, *, k: int | None = None, seed: int | None = None, workers: int = 1) -> SolverConfig:
    if sec is None:
        if k is None:
            raise ConfigError("Missing required section 'solver' (it must give k).")
        return SolverConfig(k=k, seed=seed or 0, workers=workers)
    sec.reject_unknown(
        {"k", "restarts", "max_iters", "tol", "seed", "negative_weight_policy", "init", "bound"}, where="solver"
    )
    k = sec.number("k", k, integer=True) if k is None else k
    if k is None:
        raise sec.error(None, "Missing required key 'k'.")
    with sec.building():
        return SolverConfig(
            k=k,
            restarts=sec.number("restarts", 8, integer=True),
            max_iters=sec.number("max_iters", 200, integer=True),
            tol=sec.number("tol", 1e-9),
            seed=seed if seed is not None else sec.number("seed", 0, integer=True),
            negative_weight_policy=sec.get("negative_weight_policy", "signed"),
            init=sec.get("init", "kmeans++"),
            bound=sec.number("bound", None),
            workers=workers,
        )


def rate_params_from_config(sec: ConfigSection, dim: int | None = None) -> RateParams:
    sec.reject_unknown({"kappa", "rho", "beta", "s", "L", "scale_constant"}, where="rate_params")
    s = sec.vector("s", dim)
    with sec.building():
        return RateParams(
            kappa=sec.number("kappa", 1.0),
            rho=sec.number("rho", 0.0),
            beta=sec.vector("beta", s.size, 0.0),
            s=s,
            L=sec.number("L", 1.0),
            scale_constant=sec.number("scale_constant", 1.0),
        )


def n_grid_from_config(tree: ConfigSection) -> tuple[int, ...]:
    grid = tree.require("n_grid")
    if not isinstance(grid, list) or not all(isinstance(n, int) and not isinstance(n, bool) for n in grid):
        raise tree.error("n_grid", "'n_grid' must be a list of integers.")
    return tuple(grid)


def experiment_from_config(
    tree: ConfigSection,
    *,
    seed: int | None = None,
    workers: int = 1,
) -> ExperimentConfig:
    density = density_from_config(tree.section("density"))
    dim = density.dim
    noise = noise_from_config(tree.section("noise"), dim)
    region = region_from_config(tree.section("region")) if "region" in tree else density.support
    k = tree.number("k", integer=True)
    baselines = tree.get("baselines", list(BASELINES))
    if not isinstance(baselines, list):
        raise tree.error("baselines", "'baselines' must be a list of method names.")
    master_seed = seed if seed is not None else tree.number("master_seed", 0, integer=True)
    with tree.building():
        return ExperimentConfig(
            density=density,
            noise=noise,
            kernel=kernel_from_config(tree.section("kernel", None), dim),
            region=region,
            k=k,
            rate_params=rate_params_from_config(tree.section("rate_params"), dim),
            n_grid=n_grid_from_config(tree),
            replicates=tree.number("replicates", 16, integer=True),
            solver=solver_from_config(tree.section("solver", None), k=k, workers=1),
            master_seed=master_seed,
            baselines=tuple(baselines),
            schedule=tree.get("schedule", "kmeans"),
            refinement=tree.number("refinement", 4, integer=True),
            workers=workers,
        )
