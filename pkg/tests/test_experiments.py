import dataclasses

import numpy as np
import pandas as pd
import pytest

from src.analysis import experiments
from src.analysis.experiments import (
    BASELINES,
    default_experiment,
    fit_rate,
    replicate_means,
    run_cell,
    run_experiment,
)
from src.analysis.noisy_kmeans import SolverConfig, oracle_codebook
from src.analysis.rate_theory import RateParams
from src.data.noise_models import laplace_noise, zero_noise
from src.errors import DimensionMismatchError, ExperimentRejectedError, InsufficientDataError, InvalidParameterError


def _small(**overrides):
    params = {
        "resolution": 64,
        "n_grid": (100, 200, 400),
        "replicates": 4,
        "solver": SolverConfig(k=2, restarts=2),
    }
    params.update(overrides)
    return default_experiment(**params)


def _records(values_by_n, method="noisy-kmeans"):
    rows = []
    for n, value in values_by_n.items():
        for r in range(4):
            rows.append({"n": n, "replicate": r, "method": method, "status": "ok", "excess_risk": value})
    return pd.DataFrame(rows)


def test_default_experiment():
    config = default_experiment()
    assert config.methods == ("noisy-kmeans", *BASELINES)
    assert config.n_grid == (500, 1000, 2000, 4000)
    assert config.solver.k == 2
    assert config.bandwidth(4000) == pytest.approx([0.4 * 4000 ** (-1 / 8)], rel=1e-12)
    assert config.rate_params.scale_constant == 0.4


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        _small(n_grid=(100, 200))
    with pytest.raises(InvalidParameterError):
        _small(n_grid=(100, 400, 200))
    with pytest.raises(InvalidParameterError):
        _small(replicates=3)
    with pytest.raises(InvalidParameterError):
        _small(baselines=("k-medians",))
    with pytest.raises(InvalidParameterError):
        _small(schedule="adaptive")
    with pytest.raises(DimensionMismatchError):
        _small(noise=laplace_noise(2, [0.3, 0.3]))
    assert _small(solver=SolverConfig(k=5)).solver.k == 2


def test_run_cell_is_reproducible():
    config = _small()
    oracle = oracle_codebook(config.density, config.region, config.k)
    first = run_cell(config, 200, 1, oracle=oracle)
    second = run_cell(config, 200, 1, oracle=oracle)
    assert first == second
    assert [row["method"] for row in first] == list(config.methods)
    assert all(row["status"] == "ok" for row in first)
    assert all(row["excess_risk"] >= -1e-8 for row in first)
    assert first[0]["lambda_1"] == pytest.approx(0.4 * 200 ** (-1 / 8))
    other = run_cell(config, 200, 2, oracle=oracle)
    assert other[0]["seed"] != first[0]["seed"]
    with pytest.raises(InvalidParameterError):
        run_cell(config, 300, 0, oracle=oracle)


def test_baseline_errors_mark_the_cell_failed():
    config = _small(k=5, n_grid=(2, 3, 4))
    oracle = oracle_codebook(config.density, config.region, config.k)
    rows = run_cell(config, 2, 0, oracle=oracle)
    assert [row["method"] for row in rows] == list(config.methods)
    for row in rows[1:]:
        assert row["status"] == "failed"
        assert row["flags"].startswith("ValueError")
        assert np.isnan(row["excess_risk"])


def test_fit_rate_recovers_known_exponents():
    ns = [100, 200, 400, 800]
    est = fit_rate(_records({n: 3.0 / n for n in ns}), rate_params=RateParams(beta=[2.0], s=[2.0]))
    assert est.fitted_exponent == pytest.approx(1.0, abs=1e-10)
    assert est.standard_error == pytest.approx(0.0, abs=1e-8)
    assert est.theoretical_exponent == pytest.approx(0.5)
    assert est.per_n["replicates"].tolist() == [4, 4, 4, 4]

    half = fit_rate(_records({n: 3.0 * n**-0.5 for n in ns}))
    assert half.fitted_exponent == pytest.approx(0.5, abs=1e-10)
    doubled = fit_rate(_records({n: 6.0 * n**-0.5 for n in ns}))
    assert doubled.fitted_exponent == pytest.approx(half.fitted_exponent, abs=1e-10)
    assert doubled.intercept - half.intercept == pytest.approx(np.log(2.0), abs=1e-10)


def test_fit_rate_filters_methods_and_failures():
    ns = [100, 200, 400]
    frame = pd.concat(
        [
            _records({n: 1.0 / n for n in ns}),
            _records({n: 5.0 for n in ns}, method="naive-kmeans-on-z"),
            pd.DataFrame([{"n": 100, "replicate": 9, "method": "noisy-kmeans", "status": "failed", "excess_risk": 1e3}]),
        ]
    )
    assert fit_rate(frame).fitted_exponent == pytest.approx(1.0, abs=1e-10)
    assert fit_rate(frame, "naive-kmeans-on-z").fitted_exponent == pytest.approx(0.0, abs=1e-10)


def test_fit_rate_needs_three_sizes_and_floors_zero_means():
    with pytest.raises(InsufficientDataError):
        fit_rate(_records({100: 0.1, 200: 0.05}))
    est = fit_rate(_records({100: 0.1, 200: 0.05, 400: 0.0}))
    assert est.floored
    assert np.isfinite(est.fitted_exponent)
    assert est.to_dict()["floored"] is True


def test_small_experiment_runs_and_is_independent_of_workers():
    config = _small()
    result = run_experiment(config, strict=False)
    assert len(result.cells) == 3 * 4 * 3
    assert set(result.estimates) == set(config.methods)
    assert result.failed_cells == 0
    assert result.oracle.centers[0, 0] == pytest.approx(-result.oracle.centers[1, 0], abs=1e-2)
    assert result.oracle_residual >= 0
    payload = result.to_dict()
    assert set(payload) == {"oracle", "oracle_residual", "rejected", "failed_cells", "estimates"}

    threaded = run_experiment(dataclasses.replace(config, workers=3), strict=False)
    pd.testing.assert_frame_equal(result.cells, threaded.cells)

    means = replicate_means(result.cells)
    assert list(means.index) == [100, 200, 400]


def test_large_oracle_residual_rejects_the_experiment(monkeypatch):
    monkeypatch.setattr(experiments, "oracle_residual", lambda config, oracle: 1.0)
    config = _small()
    with pytest.raises(ExperimentRejectedError):
        run_experiment(config)
    assert run_experiment(config, strict=False).rejected


@pytest.mark.slow
def test_noisy_kmeans_rate_on_bimodal_mixture():
    config = default_experiment(workers=4)
    result = run_experiment(config, strict=False)
    assert result.failed_cells == 0
    assert not result.rejected
    estimate = result.estimates["noisy-kmeans"]
    assert 0.15 <= estimate.fitted_exponent <= 1.1

    means = estimate.per_n["mean"].to_numpy()
    assert int(np.sum(np.diff(means) > 0)) <= 1

    wide = replicate_means(result.cells)
    assert wide.loc[4000, "noisy-kmeans"] <= wide.loc[4000, "naive-kmeans-on-z"]


def test_zero_noise_cell_agrees_with_sample_kmeans():
    config = _small(noise=zero_noise(1), n_grid=(400, 800, 1600))
    oracle = oracle_codebook(config.density, config.region, config.k)
    noisy, naive, _ = run_cell(config, 400, 0, oracle=oracle)
    assert noisy["excess_risk"] < 0.02 and naive["excess_risk"] < 0.02
    assert noisy["excess_risk"] == pytest.approx(naive["excess_risk"], abs=0.01)


@pytest.mark.slow
def test_noise_hurts_at_every_sample_size():
    noisy = run_experiment(default_experiment(noise=laplace_noise(1, [0.4]), baselines=(), workers=4), strict=False)
    clean = run_experiment(default_experiment(noise=zero_noise(1), baselines=(), workers=4), strict=False)
    noisy_means = replicate_means(noisy.cells)["noisy-kmeans"]
    clean_means = replicate_means(clean.cells)["noisy-kmeans"]
    assert (noisy_means >= clean_means).all()
