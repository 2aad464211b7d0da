"""Exact area-preserving twist maps of the cylinder from generating functions.

A generating function h(x, x′) with 1-periodic x defines (x, y) → (x′, y′) by
∂₁h(x, x′) = −y and y′ = ∂₂h(x, x′). The presets here are

    h = a·(x′ − x)²/2 + ε·h₁(x, x′),
    h₁ = Σ c·cos 2π(kx + lx′) + s·sin 2π(kx + lx′),

so the integrable part has ρ(y) = y/a.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import linregress

from .errors import ConfigError, ConvergenceError
from .fourier import spectral_derivative
from .models import TWO_PI

logger = logging.getLogger(__name__)

NEWTON_ITERATIONS = 50
NEWTON_TOL = 1e-14
AREA_TOL = 1e-8
JACOBIAN_STEP = 1e-4

PerturbationTerm = tuple[int, int, float, float]
PlaneMap = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

DEFAULT_PERTURBATION: tuple[PerturbationTerm, ...] = (
    (1, 0, 1.0 / (4.0 * math.pi**2), 0.0),
    (1, 1, 0.5 / (4.0 * math.pi**2), 0.0),
    (0, 1, 0.0, 0.25 / (4.0 * math.pi**2)),
)


@dataclass(frozen=True)
class GeneratingFunction:
    a: float
    eps: float = 0.0
    terms: tuple[PerturbationTerm, ...] = ()

    def __post_init__(self) -> None:
        if self.a <= 0.0:
            raise ConfigError(f"the integrable part needs a > 0, got {self.a}")

    def _phases(self, x, x_next):
        x, x_next = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(x_next, dtype=float))
        for k, l, c, s in self.terms:
            phase = TWO_PI * (k * x + l * x_next)
            yield k, l, c, s, np.cos(phase), np.sin(phase)

    def h1(self, x, x_next):
        total = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(x_next)))
        for _, _, c, s, cos_p, sin_p in self._phases(x, x_next):
            total = total + c * cos_p + s * sin_p
        return total

    def h1_partials(self, x, x_next) -> dict[str, np.ndarray]:
        """∂₁, ∂₂, ∂₁₁, ∂₁₂, ∂₂₂ of the perturbation h₁."""
        shape = np.broadcast_shapes(np.shape(x), np.shape(x_next))
        out = {name: np.zeros(shape) for name in ("d1", "d2", "d11", "d12", "d22")}
        for k, l, c, s, cos_p, sin_p in self._phases(x, x_next):
            first = TWO_PI * (-c * sin_p + s * cos_p)
            second = -(TWO_PI**2) * (c * cos_p + s * sin_p)
            out["d1"] += k * first
            out["d2"] += l * first
            out["d11"] += k * k * second
            out["d12"] += k * l * second
            out["d22"] += l * l * second
        return out

    def __call__(self, x, x_next):
        delta = np.asarray(x_next, dtype=float) - np.asarray(x, dtype=float)
        return 0.5 * self.a * delta**2 + self.eps * self.h1(x, x_next)

    def partials(self, x, x_next) -> dict[str, np.ndarray]:
        delta = np.asarray(x_next, dtype=float) - np.asarray(x, dtype=float)
        p = self.h1_partials(x, x_next)
        return {
            "d1": -self.a * delta + self.eps * p["d1"],
            "d2": self.a * delta + self.eps * p["d2"],
            "d11": self.a + self.eps * p["d11"],
            "d12": -self.a + self.eps * p["d12"],
            "d22": self.a + self.eps * p["d22"],
        }

    def rho(self, y):
        """Inverse of aU′: the x-advance of the integrable part."""
        return np.asarray(y, dtype=float) / self.a

    def rho_prime(self, y):
        return np.full(np.shape(y), 1.0 / self.a)

    def rho_second(self, y):
        return np.zeros(np.shape(y))

    def twist_margin(self, n: int = 64) -> float:
        """−max ∂₁₂h over an n × n grid of one period; positive means twist."""
        x, x_next = np.meshgrid(np.arange(n) / n, np.arange(n) / n, indexing="ij")
        return float(-np.max(self.partials(x, x + x_next)["d12"]))

    def periodicity_error(self, n: int = 64) -> float:
        x, x_next = np.meshgrid(np.arange(n) / n, np.arange(n) / n, indexing="ij")
        return float(np.max(np.abs(self(x + 1.0, x_next + 1.0) - self(x, x_next))))


def integrable(a: float = 1.0) -> GeneratingFunction:
    return GeneratingFunction(a=a)


def standard(K: float) -> GeneratingFunction:
    """(x′ − x)²/2 + (K/4π²) cos 2πx, the standard map."""
    return GeneratingFunction(a=1.0, eps=1.0, terms=((1, 0, K / (4.0 * math.pi**2), 0.0),))


def perturbed(
    a: float, h1: Iterable[PerturbationTerm] = DEFAULT_PERTURBATION, eps: float = 0.0
) -> GeneratingFunction:
    return GeneratingFunction(a=a, eps=eps, terms=tuple(h1))


def log_scaled(eps: float, h1: Iterable[PerturbationTerm] = DEFAULT_PERTURBATION) -> GeneratingFunction:
    """a(ε) = 1/log(1/ε): the x-advance per unit y grows like log(1/ε)."""
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"log scaling needs eps in (0, 1), got {eps}")
    return GeneratingFunction(a=1.0 / math.log(1.0 / eps), eps=eps, terms=tuple(h1))


class TwistMap:
    """(x, y) → (x′, y′) on the lift; vectorised."""

    __slots__ = ("h",)

    def __init__(self, h: GeneratingFunction) -> None:
        self.h = h

    def solve_next(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        x_next = x + self.h.rho(y)
        for _ in range(NEWTON_ITERATIONS):
            d = self.h.partials(x, x_next)
            if np.any(d["d12"] >= 0.0):
                raise ConvergenceError("Newton step left the twist region (d12 h >= 0)")
            step = (d["d1"] + y) / d["d12"]
            x_next = x_next - step
            if float(np.max(np.abs(step), initial=0.0)) <= NEWTON_TOL * max(
                1.0, float(np.max(np.abs(x_next), initial=0.0))
            ):
                return x_next
        raise ConvergenceError(f"generating equation did not converge in {NEWTON_ITERATIONS} steps")

    def __call__(self, x, y):
        x_next = self.solve_next(x, y)
        y_next = self.h.partials(x, x_next)["d2"]
        if np.ndim(x_next) == 0:
            return float(x_next), float(y_next)
        return x_next, y_next

    def residuals(self, x, y) -> tuple[float, float]:
        """max |∂₁h + y| and |∂₂h − y′| at the produced images."""
        x_next, y_next = self(x, y)
        d = self.h.partials(x, x_next)
        return float(np.max(np.abs(d["d1"] + y))), float(np.max(np.abs(d["d2"] - y_next)))


def twist_from_generating(h: GeneratingFunction) -> TwistMap:
    if h.twist_margin() <= 0.0:
        raise ConfigError("generating function violates the twist condition d12 h < 0")
    return TwistMap(h)


@dataclass(frozen=True, eq=False)
class ExpansionCoefficients:
    """x′ = x + ρ(y) + εx1 + ε²x2, y′ = y + εr1 + ε²r2 up to O(ε³)."""

    x1: np.ndarray
    x2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray


def expand_map(gf: GeneratingFunction, x, r) -> ExpansionCoefficients:
    """Coefficients evaluated at (x, x + ρ(r)) with g₀ = ∂₁h₁."""
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    rho_p = gf.rho_prime(r)
    if np.any(rho_p == 0.0):
        raise ConfigError("degenerate twist: rho' vanishes")
    p = gf.h1_partials(x, x + gf.rho(r))
    g0 = p["d1"]
    return ExpansionCoefficients(
        x1=rho_p * g0,
        x2=rho_p**2 * p["d12"] * g0 + 0.5 * gf.rho_second(r) * g0**2,
        r1=p["d1"] + p["d2"],
        r2=rho_p * (p["d12"] + p["d22"]) * g0,
    )


def expansion_remainder(gf: GeneratingFunction, x, r) -> float:
    """max distance between the exact map and its second-order expansion.

    Measured in the twist coordinates (x, ρ(y)), where both components of
    the log-scaled family scale alike.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    x_next, y_next = TwistMap(gf)(x, r)
    c = expand_map(gf, x, r)
    eps = gf.eps
    x_model = x + gf.rho(r) + eps * c.x1 + eps**2 * c.x2
    y_model = r + eps * c.r1 + eps**2 * c.r2
    y_error = np.abs(gf.rho(y_next) - gf.rho(y_model))
    return float(max(np.max(np.abs(x_next - x_model)), np.max(y_error)))


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Slope of log y against log x."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size < 2 or np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ConfigError("a log-log slope needs at least two positive points")
    return float(linregress(np.log(xs), np.log(ys)).slope)


@dataclass(frozen=True)
class AreaReport:
    max_flux: float
    max_det_error: float
    tolerance: float = AREA_TOL

    @property
    def passed(self) -> bool:
        return self.max_flux <= self.tolerance and self.max_det_error <= self.tolerance


def curve_flux(mapping: PlaneMap, y0: float, n_points: int) -> float:
    """Signed area between the image of {y = y0} and the circle itself."""
    s = np.arange(n_points) / n_points
    x_img, y_img = mapping(s, np.full(n_points, y0))
    slope = 1.0 + spectral_derivative(np.asarray(x_img) - s, period=1.0)
    return float(np.mean(np.asarray(y_img) * slope) - y0)


def _jacobian_det(mapping: PlaneMap, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Central differences with one Richardson step."""

    def columns(step: float):
        xp, yp = mapping(x + step, y)
        xm, ym = mapping(x - step, y)
        dx = (np.asarray(xp) - xm, np.asarray(yp) - ym)
        xp, yp = mapping(x, y + step)
        xm, ym = mapping(x, y - step)
        dy = (np.asarray(xp) - xm, np.asarray(yp) - ym)
        return [v / (2.0 * step) for v in (*dx, *dy)]

    coarse = columns(JACOBIAN_STEP)
    fine = columns(0.5 * JACOBIAN_STEP)
    a, c, b, d = ((4.0 * f - g) / 3.0 for f, g in zip(fine, coarse, strict=True))
    return a * d - b * c


def verify_exact_area(
    mapping: PlaneMap,
    n_curves: int = 8,
    n_points: int = 256,
    *,
    n_samples: int = 1000,
    seed: int = 0,
    y_range: tuple[float, float] = (0.0, 1.0),
) -> AreaReport:
    """Zero flux through horizontal circles and unit Jacobian at random points."""
    if n_curves < 1 or n_points < 8:
        raise ConfigError("verify_exact_area needs n_curves >= 1 and n_points >= 8")
    levels = np.linspace(*y_range, n_curves, endpoint=False)
    flux = max(abs(curve_flux(mapping, float(y0), n_points)) for y0 in levels)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x = rng.uniform(0.0, 1.0, n_samples)
    y = rng.uniform(*y_range, n_samples)
    det_error = float(np.max(np.abs(_jacobian_det(mapping, x, y) - 1.0)))
    logger.debug("area check: flux %.2e, det error %.2e", flux, det_error)
    return AreaReport(max_flux=flux, max_det_error=det_error)


def to_angle(x):
    """1-periodic coordinate to a 2π angle."""
    return TWO_PI * np.asarray(x, dtype=float)


def from_angle(angle):
    return np.asarray(angle, dtype=float) / TWO_PI


def in_angles(mapping: PlaneMap) -> PlaneMap:
    """The same map in (2πx, 2πy) coordinates."""

    def angle_map(X, Y):
        x_next, y_next = mapping(from_angle(X), from_angle(Y))
        return to_angle(x_next), to_angle(y_next)

    return angle_map
