import json

import numpy as np
import pandas as pd
import pytest

from src.app import cli
from src.app.cli import main
from src.app.io import dumps, error_payload, write_csv
from src.data.samples import write_sample_csv
from src.errors import ConfigError

KERNEL = {
    "kernel": {"kind": "sinc"},
    "noise": {"kind": "laplace", "scale": 1.0},
    "bandwidth": [0.5],
    "t_range": [-5.0, 5.0],
    "points": 41,
}
SAMPLE = {"density": {"kind": "gaussian-mixture", "means": [-1.0, 1.0], "sds": 0.4}, "n": 300, "seed": 7}
KDE = {
    "noise": {"kind": "laplace", "scale": 0.3},
    "bandwidth": [0.4],
    "region": {"lower": [-2.6], "upper": [2.6], "resolution": [48]},
    "sample": SAMPLE,
}
CLUSTER = {**KDE, "solver": {"k": 2, "restarts": 4}}
RATES = {
    "density": {"kind": "gaussian-mixture", "means": [-1.0, 1.0], "sds": 0.4, "resolution": 48},
    "noise": {"kind": "laplace", "scale": 0.3},
    "k": 2,
    "rate_params": {"beta": [2.0], "s": [2.0]},
    "n_grid": [100, 200, 400],
    "replicates": 4,
    "solver": {"restarts": 2},
    "baselines": ["naive-kmeans-on-z"],
}
PLAN = {"rate_params": {"beta": [2.0], "s": [2.0]}, "n_grid": [16, 256, 4096]}


def _config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


def _run(args, out):
    return main([*args, "--output-dir", str(out)])


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_kernel_command(tmp_path, capsys):
    assert _run(["kernel", "--config", _config(tmp_path, KERNEL)], tmp_path / "out") == 0
    table = pd.read_csv(tmp_path / "out" / "kernel_table.csv")
    assert list(table.columns) == ["schema_version", "t", "k_eta_1"]
    assert len(table) == 41
    assert (table["schema_version"] == 1).all()
    assert "kernel_table.csv (41 rows)." in capsys.readouterr().out


def test_kde_command_writes_density_and_sample(tmp_path):
    assert _run(["kde", "--config", _config(tmp_path, KDE)], tmp_path / "out") == 0
    density = pd.read_csv(tmp_path / "out" / "density.csv")
    assert list(density.columns) == ["schema_version", "x1", "value"]
    assert len(density) == 48
    sample = pd.read_csv(tmp_path / "out" / "sample.csv")
    assert list(sample.columns) == ["x1"] and len(sample) == 300


def test_kde_command_reads_a_sample_file_next_to_the_config(tmp_path):
    write_sample_csv(tmp_path / "obs.csv", np.linspace(-1.0, 1.0, 50).reshape(-1, 1))
    config = {**KDE, "sample": {"path": "obs.csv"}, "deconvolve": False}
    assert _run(["kde", "--config", _config(tmp_path, config)], tmp_path / "out") == 0
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["density.csv"]


def test_cluster_command(tmp_path):
    assert _run(["cluster", "--config", _config(tmp_path, CLUSTER)], tmp_path / "out") == 0
    payload = json.loads((tmp_path / "out" / "cluster.json").read_text())
    assert payload["schema_version"] == 1
    assert payload["n"] == 300
    centers = sorted(c[0] for c in payload["report"]["centers"])
    assert centers[0] < 0 < centers[1]
    assert set(payload["report"]["flags"]) == {"negative_mass_cells", "empty_cells_repaired", "negative_weight_policy"}
    risk = pd.read_csv(tmp_path / "out" / "risk.csv")
    assert list(risk.columns) == [
        "schema_version", "n", "lambda_1", "empirical_risk", "true_risk", "excess_risk", "seed"
    ]


def test_rates_plan_command(tmp_path):
    assert _run(["rates", "plan", "--config", _config(tmp_path, PLAN)], tmp_path / "out") == 0
    payload = json.loads((tmp_path / "out" / "plan.json").read_text())
    assert [row["n"] for row in payload["rows"]] == [16, 256, 4096]
    assert payload["rows"][1]["lambda_kmeans_1"] == pytest.approx(0.5)
    assert payload["rows"][0]["fast_rate"] is False
    assert payload["rate_params"]["s"] == [2.0]


def test_rates_run_command(tmp_path):
    config = _config(tmp_path, RATES)
    code = _run(["rates", "run", "--config", config, "--threads", "2"], tmp_path / "a")
    assert code == 0
    cells = pd.read_csv(tmp_path / "a" / "cells.csv")
    assert len(cells) == 3 * 4 * 2
    rate = json.loads((tmp_path / "a" / "rate.json").read_text())
    assert set(rate["estimates"]) == {"noisy-kmeans", "naive-kmeans-on-z"}
    assert _run(["rates", "run", "--config", config], tmp_path / "b") == code
    assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")


@pytest.mark.parametrize(
    "args, payload",
    [
        (["kernel"], KERNEL),
        (["kde"], KDE),
        (["cluster"], CLUSTER),
        (["rates", "plan"], PLAN),
    ],
)
def test_reruns_are_byte_identical(tmp_path, args, payload):
    config = _config(tmp_path, payload)
    assert _run([*args, "--config", config], tmp_path / "first") == 0
    assert _run([*args, "--config", config], tmp_path / "second") == 0
    assert _snapshot(tmp_path / "first") == _snapshot(tmp_path / "second")


def test_seed_flag_overrides_config(tmp_path):
    config = _config(tmp_path, KDE)
    _run(["kde", "--config", config], tmp_path / "a")
    _run(["kde", "--config", config, "--seed", "8"], tmp_path / "b")
    assert (tmp_path / "a" / "sample.csv").read_bytes() != (tmp_path / "b" / "sample.csv").read_bytes()


def test_environment_supplies_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("NOISYQ_OUTPUT_DIR", str(tmp_path / "from-env"))
    assert main(["rates", "plan", "--config", _config(tmp_path, PLAN)]) == 0
    assert (tmp_path / "from-env" / "plan.json").is_file()


def test_config_errors_exit_with_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "bandwidth": [0.5],\n  "bogus": 1\n}\n')
    assert _run(["kernel", "--config", str(path)], tmp_path / "out") == 2
    error = _error_json(capsys.readouterr().err)
    assert error["error"] == "ConfigError"
    assert error["line"] == 3
    assert error["source"] == str(path)

    assert _run(["kde", "--config", str(tmp_path / "missing.json")], tmp_path / "out") == 2


def _error_json(stderr):
    return json.loads(stderr[stderr.rindex('{\n  "error"') :])


def test_runtime_errors_exit_with_one(tmp_path, capsys):
    config = {**CLUSTER, "region": {"lower": [-2.6], "upper": [2.6], "resolution": [8]}, "solver": {"k": 10}}
    assert _run(["cluster", "--config", _config(tmp_path, config)], tmp_path / "out") == 1
    error = _error_json(capsys.readouterr().err)
    assert error["error"] == "InvalidParameterError"
    assert error["schema_version"] == 1


def test_dumps_format():
    text = dumps({"b": 1, "a": [0.1, 2.0, float("nan")], "c": np.float64(1e-20)})
    assert text == '{\n  "a": [\n    0.10000000000000001,\n    2.0,\n    null\n  ],\n  "b": 1,\n  "c": 9.9999999999999995e-21\n}'
    assert dumps([]) == "[]"
    with pytest.raises(TypeError):
        dumps(object())


def test_write_csv_prepends_schema_version(tmp_path):
    path = tmp_path / "t.csv"
    assert write_csv(path, pd.DataFrame({"x": [0.1, 1.0]})) == 2
    assert path.read_text() == "schema_version,x\n1,0.10000000000000001\n1,1\n"


def test_error_payload():
    payload = error_payload(ConfigError("Bad value.", source="c.json", line=4))
    assert payload == {
        "schema_version": 1,
        "error": "ConfigError",
        "message": "Bad value.",
        "source": "c.json",
        "line": 4,
    }


def test_library_value_errors_still_produce_error_json(tmp_path, capsys, monkeypatch):
    def broken(tree, opts):
        raise ValueError("n_samples=2 should be >= n_clusters=5.")

    monkeypatch.setitem(cli.COMMANDS, "kernel", broken)
    assert _run(["kernel", "--config", _config(tmp_path, KERNEL)], tmp_path / "out") == 1
    error = _error_json(capsys.readouterr().err)
    assert error["error"] == "ValueError"
    assert "n_clusters" in error["message"]
