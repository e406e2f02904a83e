import numpy as np
import pytest

from src.data.noise_models import (
    custom_noise,
    custom_table_noise,
    decay_ratio,
    empirical_cf,
    laplace_noise,
    sample_noise,
    zero_noise,
)
from src.errors import DimensionMismatchError, EmptySampleError, InvalidParameterError


def test_laplace_cf_values():
    noise = laplace_noise(1, [1.0])
    assert noise.cf_axis(0, [0.0, 1.0, 2.0]) == pytest.approx([1.0, 0.5, 0.2])
    assert noise.beta.tolist() == [2.0]


def test_laplace_cf_is_a_product_over_axes():
    noise = laplace_noise(2, [1.0, 2.0])
    assert noise.cf(np.array([[1.0, 1.0]])) == pytest.approx([0.5 * 0.2])
    with pytest.raises(DimensionMismatchError):
        noise.cf(np.array([1.0, 1.0, 1.0]))


def test_laplace_rejects_nonpositive_scale():
    with pytest.raises(InvalidParameterError):
        laplace_noise(1, [0.0])
    with pytest.raises(ValueError):
        laplace_noise(2, [1.0, -1.0])


def test_zero_noise():
    noise = zero_noise(2)
    assert noise.is_zero
    assert np.all(noise.cf(np.random.default_rng(0).normal(size=(5, 2))) == 1.0)
    assert np.all(sample_noise(noise, 10, seed=3) == 0.0)


def test_sampling_is_deterministic_in_seed():
    noise = laplace_noise(2, [0.5, 1.0])
    a = sample_noise(noise, 100, seed=11)
    b = sample_noise(noise, 100, seed=11)
    c = sample_noise(noise, 100, seed=12)
    assert a.shape == (100, 2)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sampling_needs_at_least_one_draw():
    with pytest.raises(EmptySampleError):
        sample_noise(laplace_noise(1, [1.0]), 0, seed=0)


def test_laplace_variance_matches_scale():
    draws = sample_noise(laplace_noise(1, [1.0]), 100_000, seed=2024)
    assert abs(draws.var() - 2.0) < 0.05


def test_empirical_cf_matches_laplace_cf():
    noise = laplace_noise(1, [0.7])
    draws = sample_noise(noise, 100_000, seed=5)[:, 0]
    t = np.array([0.5, 1.0, 2.0])
    assert np.max(np.abs(empirical_cf(draws, t) - noise.cf_axis(0, t))) < 0.02


def test_decay_ratio_tends_to_inverse_square_scale():
    noise = laplace_noise(1, [0.5])
    ratio = decay_ratio(noise, 0, np.array([1e2, 1e4]))
    assert ratio[-1] == pytest.approx(4.0, rel=1e-6)
    assert np.all(ratio > 0)


def test_custom_noise_checks_cf():
    with pytest.raises(InvalidParameterError):
        custom_noise([lambda t: 0.5 / (1.0 + t * t)], [2.0])
    vanishing = lambda t: np.where(np.abs(t) > 5.0, 0.0, 1.0 / (1.0 + t * t))
    with pytest.raises(InvalidParameterError):
        custom_noise([vanishing], [2.0])
    ok = custom_noise([lambda t: 1.0 / (1.0 + t * t)], [2.0])
    assert ok.kind == "custom"
    assert not ok.has_sampler


def test_custom_noise_requires_hermitian_cf():
    even_imaginary = lambda t: (1.0 + 0.5j * np.abs(t)) / (1.0 + t * t) ** 2
    with pytest.raises(InvalidParameterError, match="conj"):
        custom_noise([even_imaginary], [2.0])
    exponential = custom_noise([lambda t: 1.0 / (1.0 - 1j * t)], [1.0])
    assert exponential.cf(np.array([-2.0])) == pytest.approx(np.conj(exponential.cf(np.array([2.0]))))


def test_custom_table_noise_interpolates_and_extends_with_power_tail():
    noise = custom_table_noise([[0.0, 1.0, 2.0]], [[1.0, 0.5, 0.2]], [2.0])
    assert noise.cf_axis(0, [-1.0, 0.5, 1.5]) == pytest.approx([0.5, 0.75, 0.35])
    assert noise.cf_axis(0, [4.0]) == pytest.approx([0.2 * 0.25])
    with pytest.raises(InvalidParameterError):
        sample_noise(noise, 5, seed=0)


def test_custom_table_noise_validates_tables():
    with pytest.raises(InvalidParameterError):
        custom_table_noise([[0.5, 1.0]], [[1.0, 0.5]], [2.0])
    with pytest.raises(InvalidParameterError):
        custom_table_noise([[0.0, 2.0, 1.0]], [[1.0, 0.5, 0.2]], [2.0])
