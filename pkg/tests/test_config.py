from pathlib import Path

import numpy as np
import pytest

from src.app.config import (
    experiment_from_config,
    kernel_from_config,
    load_config,
    noise_from_config,
    parse_config,
    rate_params_from_config,
    region_from_config,
    solver_from_config,
)
from src.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_scalars_follow_json():
    tree = parse_config('{"tol": 1e-9, "n": 16, "x": 0.5, "flag": true, "name": "5", "none": null}')
    assert tree.get("tol") == 1e-9 and isinstance(tree.get("tol"), float)
    assert tree.get("n") == 16 and isinstance(tree.get("n"), int)
    assert tree.get("x") == 0.5
    assert tree.get("flag") is True
    assert tree.get("name") == "5"
    assert tree.get("none") is None


def test_unknown_key_is_reported_with_its_line(tmp_path):
    path = tmp_path / "kernel.json"
    path.write_text('{\n  "bandwidth": [0.5],\n  "bogus": 1\n}\n')
    with pytest.raises(ConfigError) as err:
        load_config(path, "kernel")
    assert err.value.line == 3
    assert str(err.value).startswith(f"{path}:3: Unknown key 'bogus'")


def test_nested_unknown_key_and_duplicates():
    tree = parse_config('{\n  "solver": {\n    "k": 2,\n    "restart": 4\n  }\n}')
    with pytest.raises(ConfigError) as err:
        solver_from_config(tree.section("solver"))
    assert err.value.line == 4
    with pytest.raises(ConfigError) as err:
        parse_config('{\n  "k": 2,\n  "k": 3\n}')
    assert err.value.line == 3


def test_malformed_documents():
    with pytest.raises(ConfigError) as err:
        parse_config('{\n  "k": 2,\n  "n": [1, 2\n}')
    assert err.value.line is not None
    with pytest.raises(ConfigError):
        parse_config("[1, 2, 3]")
    with pytest.raises(ConfigError):
        parse_config("")
    with pytest.raises(ConfigError):
        load_config(Path("does/not/exist.json"), "kde")


def test_noise_builders():
    tree = parse_config(
        '{"a": {"kind": "laplace", "scale": 0.3}, "b": {"kind": "none"},'
        ' "c": {"kind": "custom-table", "t": [0, 1, 2], "cf": [1, 0.5, 0.2], "beta": 2},'
        ' "d": {"kind": "gaussian"}, "e": {"kind": "laplace", "scale": -1},'
        ' "f": {"kind": "table", "t": [0, 1], "cf": [1, 0.5], "beta": 2}}'
    )
    laplace = noise_from_config(tree.section("a"), 2)
    assert laplace.scale.tolist() == [0.3, 0.3]
    assert noise_from_config(tree.section("b"), 1).is_zero
    table = noise_from_config(tree.section("c"), 1)
    assert table.kind == "custom-table"
    assert table.cf(np.array([1.0])) == pytest.approx(0.5)
    assert not table.has_sampler
    assert noise_from_config(tree.section("f"), 1).kind == "custom-table"
    with pytest.raises(ConfigError):
        noise_from_config(tree.section("d"), 1)
    with pytest.raises(ConfigError):
        noise_from_config(tree.section("e"), 1)


def test_kernel_region_and_solver_builders():
    tree = parse_config(
        '{"k": {"kind": "vallee-poussin", "band_limit": 2.0},'
        ' "bad": {"kind": "sinc", "band_limit": 2.0},'
        ' "region": {"lower": [-1, -2], "upper": [1, 2], "resolution": [8, 16]},'
        ' "solver": {"k": 3, "tol": 1e-9, "negative_weight_policy": "clamp", "seed": 4},'
        ' "wrong": {"k": 3, "negative_weight_policy": "abs"}}'
    )
    assert kernel_from_config(None, 2).dim == 2
    assert kernel_from_config(tree.section("k"), 1).band_limit.tolist() == [2.0]
    with pytest.raises(ConfigError):
        kernel_from_config(tree.section("bad"), 1)
    region = region_from_config(tree.section("region"))
    assert region.shape == (8, 16)
    solver = solver_from_config(tree.section("solver"), seed=9, workers=2)
    assert (solver.k, solver.tol, solver.seed, solver.workers) == (3, 1e-9, 9, 2)
    assert solver.negative_weight_policy == "clamp"
    with pytest.raises(ConfigError):
        solver_from_config(tree.section("wrong"))


def test_rate_params_builder():
    tree = parse_config('{"p": {"kappa": 1, "rho": 0.5, "beta": 1, "s": [2, 4]}, "q": {"s": [1], "rho": 2}}')
    params = rate_params_from_config(tree.section("p"))
    assert params.beta.tolist() == [1.0, 1.0]
    assert params.s.tolist() == [2.0, 4.0]
    with pytest.raises(ConfigError):
        rate_params_from_config(tree.section("q"))


def test_shipped_rate_config_builds_the_default_experiment():
    tree = load_config(CONFIGS / "rates_default.json", "rates-run")
    config = experiment_from_config(tree, seed=11, workers=2)
    assert config.master_seed == 11
    assert config.workers == 2
    assert config.n_grid == (500, 1000, 2000, 4000)
    assert config.solver.k == 2
    assert config.methods == ("noisy-kmeans", "naive-kmeans-on-z", "kmeans-on-x")
    assert config.bandwidth(256) == pytest.approx([0.2])


def test_experiment_config_errors_keep_lines():
    text = (
        '{\n  "density": {"kind": "uniform"},\n  "noise": {"kind": "laplace", "scale": 0.3},\n'
        '  "k": 2,\n  "rate_params": {"s": [1]},\n  "n_grid": [100, 50, 200]\n}'
    )
    with pytest.raises(ConfigError) as err:
        experiment_from_config(parse_config(text, "rates.json"))
    assert "n_grid" in str(err.value)
    assert err.value.source == "rates.json"
