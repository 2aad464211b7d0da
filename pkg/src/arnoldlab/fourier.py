"""Spectral tools on uniform periodic grids (last axis)."""

from __future__ import annotations

import math

import numpy as np
from scipy import fft
from scipy.interpolate import CubicSpline

from .errors import ConfigError
from .models import TWO_PI


def periodic_grid(n: int, period: float = TWO_PI) -> np.ndarray:
    if n < 1:
        raise ConfigError("a periodic grid needs at least one node")
    return period * np.arange(n) / n


def _wavenumbers(n: int, period: float) -> np.ndarray:
    return TWO_PI * fft.rfftfreq(n, d=period / n)


def spectral_derivative(values: np.ndarray, period: float = TWO_PI) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    coeffs = fft.rfft(values, axis=-1)
    k = _wavenumbers(n, period)
    derivative = 1j * k * coeffs
    if n % 2 == 0:
        derivative[..., -1] = 0.0
    return fft.irfft(derivative, n=n, axis=-1)


def spectral_antiderivative(values: np.ndarray, period: float = TWO_PI) -> np.ndarray:
    """∫₀^x f on the grid nodes, mean part included as mean·x."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    coeffs = fft.rfft(values, axis=-1)
    k = _wavenumbers(n, period)
    mean = coeffs[..., 0].real / n
    periodic = np.zeros_like(coeffs)
    periodic[..., 1:] = coeffs[..., 1:] / (1j * k[1:])
    if n % 2 == 0:
        periodic[..., -1] = 0.0
    primitive = fft.irfft(periodic, n=n, axis=-1)
    x = periodic_grid(n, period)
    return primitive - primitive[..., :1] + mean[..., None] * x


def _interpolation_coefficients(values: np.ndarray) -> np.ndarray:
    """One-sided coefficients c_k with f(x) = Re Σ c_k e^{ikx}, last axis."""
    n = values.shape[-1]
    coeffs = fft.rfft(values, axis=-1) / n
    coeffs[..., 1:] *= 2.0
    if n % 2 == 0:
        coeffs[..., -1] *= 0.5
    return coeffs


class PeriodicInterpolant:
    """Trigonometric interpolant of samples on a uniform grid of one period."""

    __slots__ = ("_coeffs", "_n", "_period")

    def __init__(self, values: np.ndarray, period: float = TWO_PI) -> None:
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ConfigError("interpolation needs a one-dimensional sample row")
        self._n = values.size
        self._period = period
        self._coeffs = _interpolation_coefficients(values)

    def _phases(self, x):
        x = np.asarray(x, dtype=float)
        k = np.arange(self._coeffs.size)
        return np.multiply.outer(x, k) * (TWO_PI / self._period)

    def __call__(self, x):
        phase = self._phases(x)
        out = np.cos(phase) @ self._coeffs.real - np.sin(phase) @ self._coeffs.imag
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, x):
        phase = self._phases(x)
        k = np.arange(self._coeffs.size) * (TWO_PI / self._period)
        out = -(np.sin(phase) * k) @ self._coeffs.real - (np.cos(phase) * k) @ self._coeffs.imag
        return float(out) if np.ndim(out) == 0 else out


def fourier_coefficients(values: np.ndarray, degree: int) -> np.ndarray:
    """Complex c_k, k = −d..d, of samples on a uniform grid of one period.

    f(θ) ≈ Σ c_k e^{2πikθ} for 1-periodic θ.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if degree < 0 or 2 * degree >= n:
        raise ConfigError(f"degree {degree} needs more than {2 * degree} samples, got {n}")
    full = fft.fft(values, axis=-1) / n
    positive = full[..., : degree + 1]
    negative = full[..., n - degree :] if degree else full[..., :0]
    return np.concatenate([negative, positive], axis=-1)


def evaluate_coefficients(coeffs: np.ndarray, theta) -> np.ndarray:
    """Σ c_k e^{2πikθ} (real part) for coefficients ordered k = −d..d."""
    coeffs = np.asarray(coeffs)
    degree = (coeffs.shape[-1] - 1) // 2
    k = np.arange(-degree, degree + 1)
    phase = np.exp(2j * math.pi * np.multiply.outer(np.asarray(theta, dtype=float), k))
    return np.real(phase @ coeffs)


class GridInterpolant:
    """Values on an (η, ξ) grid: cubic spline in η across rows, trigonometric in ξ.

    η is clamped to the grid range.
    """

    __slots__ = ("_etas", "_spline", "_k")

    def __init__(self, etas: np.ndarray, values: np.ndarray) -> None:
        etas = np.asarray(etas, dtype=float)
        values = np.asarray(values, dtype=float)
        if etas.ndim != 1 or etas.size < 2 or values.shape[0] != etas.size:
            raise ConfigError("grid interpolation needs at least two rows matching the η nodes")
        coeffs = _interpolation_coefficients(values)
        self._etas = etas
        self._spline = CubicSpline(etas, np.stack([coeffs.real, coeffs.imag], axis=1), axis=0)
        self._k = np.arange(coeffs.shape[-1])

    def __call__(self, eta, xi):
        eta, xi = np.broadcast_arrays(np.asarray(eta, dtype=float), np.asarray(xi, dtype=float))
        parts = self._spline(np.clip(eta, self._etas[0], self._etas[-1]))
        phase = np.exp(1j * xi[..., None] * self._k)
        out = np.sum(parts[..., 0, :] * phase.real - parts[..., 1, :] * phase.imag, axis=-1)
        return float(out) if out.ndim == 0 else out

    def contains(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        return (eta >= self._etas[0]) & (eta <= self._etas[-1])
