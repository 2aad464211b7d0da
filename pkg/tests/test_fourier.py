from __future__ import annotations

import math

import numpy as np
import pytest

from arnoldlab.errors import ConfigError
from arnoldlab.fourier import (
    GridInterpolant,
    PeriodicInterpolant,
    evaluate_coefficients,
    fourier_coefficients,
    periodic_grid,
    spectral_antiderivative,
    spectral_derivative,
)


def test_periodic_grid() -> None:
    np.testing.assert_allclose(periodic_grid(4), [0.0, math.pi / 2, math.pi, 1.5 * math.pi])
    np.testing.assert_allclose(periodic_grid(2, 1.0), [0.0, 0.5])
    with pytest.raises(ConfigError):
        periodic_grid(0)


def test_spectral_derivative_of_trig_polynomial() -> None:
    x = periodic_grid(32)

    derivative = spectral_derivative(np.sin(3 * x) + 0.5 * np.cos(x))

    np.testing.assert_allclose(derivative, 3 * np.cos(3 * x) - 0.5 * np.sin(x), atol=1e-12)


def test_spectral_derivative_acts_on_last_axis() -> None:
    x = periodic_grid(16)
    rows = np.stack([np.sin(x), np.cos(2 * x)])

    derivative = spectral_derivative(rows)

    assert derivative.shape == (2, 16)
    np.testing.assert_allclose(derivative[1], -2 * np.sin(2 * x), atol=1e-12)


def test_antiderivative_keeps_the_mean_as_a_ramp() -> None:
    x = periodic_grid(24)

    primitive = spectral_antiderivative(np.cos(2 * x) + 0.5)

    np.testing.assert_allclose(primitive, 0.5 * np.sin(2 * x) + 0.5 * x, atol=1e-12)
    assert primitive[0] == 0.0


def test_periodic_interpolant_between_nodes() -> None:
    x = periodic_grid(16)
    interp = PeriodicInterpolant(np.sin(x) + 0.3 * np.cos(2 * x))

    value = interp(0.37)

    assert isinstance(value, float)
    assert value == pytest.approx(math.sin(0.37) + 0.3 * math.cos(0.74), abs=1e-12)
    assert interp.derivative(0.37) == pytest.approx(
        math.cos(0.37) - 0.6 * math.sin(0.74), abs=1e-12
    )
    assert interp(np.array([0.1, 0.2])).shape == (2,)


def test_periodic_interpolant_rejects_bad_rows() -> None:
    with pytest.raises(ConfigError):
        PeriodicInterpolant(np.zeros((2, 4)))
    with pytest.raises(ConfigError):
        PeriodicInterpolant(np.array([]))


def test_fourier_coefficients_of_unit_period_samples() -> None:
    theta = periodic_grid(8, 1.0)
    values = 0.2 + np.cos(2 * math.pi * theta) + 0.5 * np.sin(4 * math.pi * theta)

    coeffs = fourier_coefficients(values, 2)

    np.testing.assert_allclose(coeffs, [0.25j, 0.5, 0.2, 0.5, -0.25j], atol=1e-14)
    assert evaluate_coefficients(coeffs, 0.123) == pytest.approx(
        0.2 + math.cos(2 * math.pi * 0.123) + 0.5 * math.sin(4 * math.pi * 0.123), abs=1e-12
    )


def test_fourier_degree_needs_enough_samples() -> None:
    assert fourier_coefficients(np.ones(4), 0).shape == (1,)
    with pytest.raises(ConfigError):
        fourier_coefficients(np.ones(8), 4)
    with pytest.raises(ConfigError):
        fourier_coefficients(np.ones(8), -1)


def test_grid_interpolant_with_two_rows_is_linear_in_eta() -> None:
    xis = periodic_grid(8)
    values = np.stack([np.cos(xis), 2 * np.cos(xis)])
    interp = GridInterpolant(np.array([0.0, 1.0]), values)

    assert interp(0.5, 0.3) == pytest.approx(1.5 * math.cos(0.3), abs=1e-12)
    assert interp(1.0, 0.3) == pytest.approx(2 * math.cos(0.3), abs=1e-12)
    np.testing.assert_array_equal(interp.contains(np.array([-0.1, 0.5, 1.0])), [False, True, True])


def test_grid_interpolant_reproduces_cubics_in_eta() -> None:
    xis = periodic_grid(8)
    etas = np.linspace(-1.0, 1.0, 5)
    values = (etas**3 - etas)[:, None] * np.cos(xis)[None, :] + 0.5 * np.sin(2 * xis)[None, :]
    interp = GridInterpolant(etas, values)
    eta = np.array([-0.8, 0.3, 0.65])
    xi = np.array([0.2, 1.7, 4.0])

    expected = (eta**3 - eta) * np.cos(xi) + 0.5 * np.sin(2 * xi)
    np.testing.assert_allclose(interp(eta, xi), expected, atol=1e-12)
    assert interp(1.5, 0.0) == pytest.approx(interp(1.0, 0.0), abs=1e-15)


def test_grid_interpolant_needs_two_rows() -> None:
    with pytest.raises(ConfigError):
        GridInterpolant(np.array([0.0]), np.ones((1, 8)))
    with pytest.raises(ConfigError):
        GridInterpolant(np.array([0.0, 1.0]), np.ones((3, 8)))
