"""Random cylinder maps over the two-symbol shift.

The model lives on 1-periodic θ and r:

    θ⁺ = θ + r + ε u_ω(θ, r),    r⁺ = r + ε v_ω(θ, r) + ε² w_ω(θ, r)

with ω = ±1 drawn by a fair coin. Fields are harmonic tables in θ whose
coefficients are sampled on an r-grid and interpolated linearly in between.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .config import Calibration, load_calibration
from .errors import ConfigError, ConvergenceError, EscapeError, ResonanceError
from .fourier import (
    GridInterpolant,
    evaluate_coefficients,
    fourier_coefficients,
    spectral_antiderivative,
    spectral_derivative,
)
from .melnikov import MelnikovPotential, melnikov_partials
from .models import TWO_PI, CenterCylinder, LeafDensity
from .sepmap import RescaledMap

logger = logging.getLogger(__name__)

HYPOTHESIS_TOL = 1e-8
ZERO_COEFF_TOL = 1e-12
HOMOLOGICAL_GUARD = 1e-3
CHART_ITERATIONS = 100
CHART_TOL = 1e-14
SYMBOLS = (-1, 1)


def symbol_sign(bit: int) -> int:
    """Shift symbols 0/1 act as the maps f₋₁/f₊₁."""
    if bit not in (0, 1):
        raise ConfigError(f"symbols are 0 or 1, got {bit}")
    return 2 * bit - 1


class ThetaField:
    """Real field Σ c_k(r) e^{2πikθ}, k = −d..d, linear in r between grid nodes."""

    __slots__ = ("coefficients", "r_grid")

    def __init__(self, coefficients: np.ndarray, r_grid: Iterable[float] = (0.0,)) -> None:
        coefficients = np.atleast_2d(np.asarray(coefficients, dtype=complex))
        r_grid = np.asarray(list(r_grid), dtype=float)
        if coefficients.shape[-1] % 2 != 1:
            raise ConfigError("a harmonic table needs an odd number of columns k = -d..d")
        if coefficients.shape[0] != r_grid.size:
            raise ConfigError(
                f"{coefficients.shape[0]} coefficient rows for {r_grid.size} r-grid nodes"
            )
        if r_grid.size > 1 and np.any(np.diff(r_grid) <= 0.0):
            raise ConfigError("the r-grid must be strictly increasing")
        self.coefficients = coefficients
        self.r_grid = r_grid

    @classmethod
    def zero(cls, degree: int = 1) -> ThetaField:
        return cls(np.zeros((1, 2 * degree + 1)))

    @classmethod
    def harmonic(
        cls, k: int, *, cos: float = 0.0, sin: float = 0.0, degree: int | None = None
    ) -> ThetaField:
        """cos·cos 2πkθ + sin·sin 2πkθ."""
        k = abs(int(k))
        degree = max(k, 1) if degree is None else degree
        if k > degree:
            raise ConfigError(f"harmonic {k} exceeds degree {degree}")
        row = np.zeros(2 * degree + 1, dtype=complex)
        if k == 0:
            row[degree] = cos
        else:
            row[degree + k] += 0.5 * cos - 0.5j * sin
            row[degree - k] += 0.5 * cos + 0.5j * sin
        return cls(row[None, :])

    @classmethod
    def from_samples(cls, values: np.ndarray, r_grid: Iterable[float], degree: int) -> ThetaField:
        """Fit rows sampled on the uniform grid θ_j = j/n."""
        return cls(fourier_coefficients(np.atleast_2d(values), degree), r_grid)

    @property
    def degree(self) -> int:
        return (self.coefficients.shape[-1] - 1) // 2

    def effective_degree(self, tol: float = ZERO_COEFF_TOL) -> int:
        magnitude = np.max(np.abs(self.coefficients), axis=0)
        k = np.abs(np.arange(-self.degree, self.degree + 1))
        active = k[magnitude > tol]
        return int(active.max()) if active.size else 0

    def coefficients_at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.r_grid.size == 1:
            return np.broadcast_to(self.coefficients[0], r.shape + self.coefficients.shape[-1:])
        position = np.interp(r, self.r_grid, np.arange(self.r_grid.size))
        lower = np.minimum(np.floor(position).astype(int), self.r_grid.size - 2)
        weight = (position - lower)[..., None]
        return (1.0 - weight) * self.coefficients[lower] + weight * self.coefficients[lower + 1]

    def __call__(self, theta, r=0.0):
        theta, r = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(r, dtype=float))
        k = np.arange(-self.degree, self.degree + 1)
        phase = np.exp(2j * math.pi * theta[..., None] * k)
        out = np.real(np.sum(self.coefficients_at(r) * phase, axis=-1))
        return float(out) if out.ndim == 0 else out

    def mean(self, r=0.0):
        """θ-average, the k = 0 coefficient."""
        out = np.real(self.coefficients_at(r)[..., self.degree])
        return float(out) if np.ndim(out) == 0 else out

    def mean_square(self, r=0.0):
        """∫₀¹ f² dθ by Parseval."""
        out = np.sum(np.abs(self.coefficients_at(r)) ** 2, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def padded(self, degree: int) -> ThetaField:
        if degree < self.degree:
            raise ConfigError(f"cannot pad degree {self.degree} down to {degree}")
        extra = degree - self.degree
        return ThetaField(np.pad(self.coefficients, ((0, 0), (extra, extra))), self.r_grid)

    def resampled(self, r_grid: Iterable[float]) -> ThetaField:
        r_grid = np.asarray(list(r_grid), dtype=float)
        return ThetaField(self.coefficients_at(r_grid), r_grid)

    def _aligned(self, other: ThetaField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        degree = max(self.degree, other.degree)
        left, right = self.padded(degree), other.padded(degree)
        if left.r_grid.size >= right.r_grid.size:
            grid = left.r_grid
        else:
            grid = right.r_grid
        if not np.array_equal(left.r_grid, grid):
            left = left.resampled(grid)
        if not np.array_equal(right.r_grid, grid):
            right = right.resampled(grid)
        return left.coefficients, right.coefficients, grid

    def __add__(self, other: ThetaField) -> ThetaField:
        left, right, grid = self._aligned(other)
        return ThetaField(left + right, grid)

    def __sub__(self, other: ThetaField) -> ThetaField:
        left, right, grid = self._aligned(other)
        return ThetaField(left - right, grid)

    def scaled(self, factor: float) -> ThetaField:
        return ThetaField(factor * self.coefficients, self.r_grid)

    def to_dict(self) -> dict[str, Any]:
        return {
            "degree": self.degree,
            "r_grid": self.r_grid.tolist(),
            "real": self.coefficients.real.tolist(),
            "imag": self.coefficients.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ThetaField:
        try:
            coefficients = np.asarray(data["real"], dtype=float) + 1j * np.asarray(
                data["imag"], dtype=float
            )
            field_ = cls(coefficients, data["r_grid"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed harmonic field: {exc}") from exc
        if field_.degree != int(data.get("degree", field_.degree)):
            raise ConfigError("declared degree does not match the coefficient table")
        return field_


@dataclass(frozen=True, eq=False)
class CylinderMap:
    u: ThetaField
    v: ThetaField
    w: ThetaField

    @property
    def degree(self) -> int:
        return max(self.u.degree, self.v.degree, self.w.degree)

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name).to_dict() for name in ("u", "v", "w")}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CylinderMap:
        try:
            return cls(**{name: ThetaField.from_dict(data[name]) for name in ("u", "v", "w")})
        except KeyError as exc:
            raise ConfigError(f"cylinder map is missing field {exc}") from exc


@dataclass(frozen=True, eq=False)
class CylinderMapFamily:
    """The maps f₋₁, f₊₁ of the skew product, a common ε and remainder metadata."""

    maps: Mapping[int, CylinderMap]
    eps: float
    remainder: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if set(self.maps) != set(SYMBOLS):
            raise ConfigError(f"a family needs maps for symbols -1 and +1, got {sorted(self.maps)}")
        if not 0.0 < self.eps < 1.0:
            raise ConfigError(f"family eps must lie in (0, 1), got {self.eps}")

    @property
    def degree(self) -> int:
        return max(m.degree for m in self.maps.values())

    @property
    def r_grid(self) -> np.ndarray:
        grids = [getattr(m, name).r_grid for m in self.maps.values() for name in ("u", "v", "w")]
        return np.unique(np.concatenate(grids))

    def expected(self, name: str) -> ThetaField:
        """Eu, Ev or Ew: the average over the two symbols."""
        return (getattr(self.maps[1], name) + getattr(self.maps[-1], name)).scaled(0.5)

    def difference(self, name: str = "v") -> ThetaField:
        """½(f₊₁ − f₋₁), the difference potential for ``v``."""
        return (getattr(self.maps[1], name) - getattr(self.maps[-1], name)).scaled(0.5)

    def with_eps(self, eps: float) -> CylinderMapFamily:
        return CylinderMapFamily(maps=self.maps, eps=eps, remainder=self.remainder)

    def to_dict(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "remainder": dict(self.remainder),
            "maps": {str(symbol): self.maps[symbol].to_dict() for symbol in SYMBOLS},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CylinderMapFamily:
        try:
            maps = {int(key): CylinderMap.from_dict(value) for key, value in data["maps"].items()}
            return cls(
                maps=maps,
                eps=float(data["eps"]),
                remainder={str(k): float(v) for k, v in data.get("remainder", {}).items()},
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed cylinder map family: {exc}") from exc


def difference_family(eps: float, amplitude: float = 1.0, harmonic: int = 1) -> CylinderMapFamily:
    """v₊₁ = a·sin 2πkθ, v₋₁ = −a·sin 2πkθ, u = w = 0."""
    degree = max(1, harmonic)
    zero = ThetaField.zero(degree)
    kick = ThetaField.harmonic(harmonic, sin=amplitude, degree=degree)
    return CylinderMapFamily(
        maps={
            1: CylinderMap(u=zero, v=kick, w=zero),
            -1: CylinderMap(u=zero, v=kick.scaled(-1.0), w=zero),
        },
        eps=eps,
    )


# ---------------------------------------------------------------------------
# leaves in canonical coordinates


def _leaf_gradients(center: CenterCylinder) -> tuple[np.ndarray, ...]:
    """(I_η, I_ξ, τ_η, τ_ξ) on the center grid."""
    edge = 2 if center.etas.size > 2 else 1
    i_eta = np.gradient(center.action, center.etas, axis=0, edge_order=edge)
    tau_eta = np.gradient(center.tau, center.etas, axis=0, edge_order=edge)
    i_xi = spectral_derivative(center.action)
    tau_xi = spectral_derivative(center.tau)
    return i_eta, i_xi, tau_eta, tau_xi


def leaf_density(center: CenterCylinder, eps: float) -> LeafDensity:
    """ρ = 1 + η·τ_ξ + ε·det ∂(I, τ)/∂(η, ξ) on the center grid."""
    i_eta, i_xi, tau_eta, tau_xi = _leaf_gradients(center)
    eta = center.etas[:, None]
    rho = 1.0 + eta * tau_xi + eps * (i_eta * tau_xi - i_xi * tau_eta)
    if np.any(rho <= 0.0):
        raise ConvergenceError(
            f"leaf density of {center.label} is not positive (min {float(np.min(rho)):.3e})"
        )
    return LeafDensity(label=center.label, etas=center.etas, xis=center.xis, rho=rho, eps=eps)


@dataclass(frozen=True, eq=False)
class CanonicalChart:
    """(η, ξ) → (r, θ) with dr∧dθ = ρ dη∧dξ.

    r(η) integrates the ξ-mean ρ̄ of the density; θ = ξ + p(η, ξ) with p
    periodic, θ in 2π units.
    """

    label: str
    etas: np.ndarray
    xis: np.ndarray
    rho: np.ndarray
    rho_bar: np.ndarray
    periodic: np.ndarray
    _r: CubicSpline = field(repr=False)
    _p: GridInterpolant = field(repr=False)

    def r(self, eta):
        out = self.etas[0] + self._r(np.asarray(eta, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def r_prime(self, eta):
        out = self._r(np.asarray(eta, dtype=float), 1)
        return float(out) if np.ndim(out) == 0 else out

    def theta(self, eta, xi):
        return np.asarray(xi, dtype=float) + self._p(eta, xi)

    def theta_unit(self, eta, xi):
        return self.theta(eta, xi) / TWO_PI

    def xi_of(self, eta, theta):
        """Invert θ(η, ·) by the contraction ξ = θ − p(η, ξ)."""
        theta = np.asarray(theta, dtype=float)
        xi = theta.copy()
        for _ in range(CHART_ITERATIONS):
            updated = theta - self._p(eta, xi)
            if float(np.max(np.abs(updated - xi))) <= CHART_TOL * max(1.0, float(np.max(np.abs(theta)))):
                return updated
            xi = updated
        raise ConvergenceError(f"canonical chart of {self.label} did not invert")

    @property
    def jacobian_error(self) -> float:
        """max |r_η θ_ξ − ρ| on the grid; r does not depend on ξ."""
        theta_xi = 1.0 + spectral_derivative(self.periodic)
        det = self.r_prime(self.etas)[:, None] * theta_xi
        return float(np.max(np.abs(det - self.rho)))

    @property
    def max_r_slope_error(self) -> float:
        return float(np.max(np.abs(self.rho_bar - 1.0)))


def canonical_coords(density: LeafDensity) -> CanonicalChart:
    rho = np.asarray(density.rho, dtype=float)
    if np.any(rho <= 0.0):
        raise ConfigError("canonical coordinates need a positive density")
    rho_bar = rho.mean(axis=1)
    theta = spectral_antiderivative(rho) / rho_bar[:, None]
    periodic = theta - density.xis[None, :]
    spline = CubicSpline(density.etas, rho_bar).antiderivative()
    return CanonicalChart(
        label=density.label,
        etas=density.etas,
        xis=density.xis,
        rho=rho,
        rho_bar=rho_bar,
        periodic=periodic,
        _r=spline,
        _p=GridInterpolant(density.etas, periodic),
    )


@dataclass(frozen=True, eq=False)
class SkewReduction:
    family: CylinderMapFamily
    charts: Mapping[str, CanonicalChart]
    densities: Mapping[str, LeafDensity]
    scale: float
    mean_advance: Mapping[str, np.ndarray]
    advance_error: float
    cocycle_error: float
    jacobian_error: float


_LEAVES = {"00": -1, "11": 1}


def _leaf_map(
    center: CenterCylinder,
    density: LeafDensity,
    chart: CanonicalChart,
    mapping: RescaledMap,
    scale: float,
    n_theta: int,
    degree: int,
) -> tuple[CylinderMap, np.ndarray, np.ndarray, float]:
    rows = np.arange(1, center.etas.size - 1) if center.etas.size > 2 else np.arange(center.etas.size)
    theta_unit = np.arange(n_theta) / n_theta
    eta = np.repeat(center.etas[rows][:, None], n_theta, axis=1)
    xi = chart.xi_of(eta, TWO_PI * np.broadcast_to(theta_unit, eta.shape))
    action = GridInterpolant(center.etas, center.action)(eta, xi)
    tau = GridInterpolant(center.etas, center.tau)(eta, xi)
    eta_p, xi_p, action_p, tau_p = mapping(eta, xi, action, tau)
    inside = GridInterpolant(center.etas, center.action).contains(eta_p)
    if not np.all(inside):
        raise EscapeError(f"leaf {center.label} maps outside its eta grid")

    eps_model = mapping.eps * scale
    r, r_p = chart.r(eta), chart.r(eta_p)
    kick = scale * (r_p - r)
    v = -np.asarray(melnikov_partials(mapping.M, eta, xi, tau).m_xi)
    w = (kick - eps_model * v) / eps_model**2
    advance = (chart.theta(eta_p, xi_p) - chart.theta(eta, xi)) / TWO_PI
    mean_advance = advance.mean(axis=1)
    u = (advance - mean_advance[:, None]) / eps_model
    r_rows = scale * chart.r(center.etas[rows])
    advance_error = float(np.max(np.abs(mean_advance - r_rows)))

    rho = GridInterpolant(center.etas, density.rho)
    grads = [GridInterpolant(center.etas, g)(eta, xi) for g in _leaf_gradients(center)]
    i_eta, i_xi, tau_eta, tau_xi = grads
    ratio = np.empty(eta.shape)
    for idx in np.ndindex(*eta.shape):
        jac = mapping.exact_jacobian((eta[idx], xi[idx], action[idx], tau[idx]))
        tangent = np.array(
            [[1.0, 0.0], [0.0, 1.0], [i_eta[idx], i_xi[idx]], [tau_eta[idx], tau_xi[idx]]]
        )
        image = (jac @ tangent)[:2]
        ratio[idx] = rho(eta_p[idx], xi_p[idx]) * np.linalg.det(image) / rho(eta[idx], xi[idx])
    jacobian_error = float(np.max(np.abs(ratio - 1.0)))
    logger.debug(
        "leaf %s: advance error %.2e, jacobian error %.2e", center.label, advance_error, jacobian_error
    )

    fields = CylinderMap(
        u=ThetaField.from_samples(u, r_rows, degree),
        v=ThetaField.from_samples(v, r_rows, degree),
        w=ThetaField.from_samples(w, r_rows, degree),
    )
    return fields, mean_advance, r_rows, jacobian_error


def reduce_to_skew_product(
    centers: Mapping[str, CenterCylinder] | Iterable[CenterCylinder],
    eps: float,
    delta: float,
    M: MelnikovPotential,
    *,
    degree: int = 3,
    n_theta: int | None = None,
    calibration: Calibration | None = None,
) -> SkewReduction:
    """Cylinder maps of the fixed leaves 00 (f₋₁) and 11 (f₊₁).

    In canonical coordinates the leaf map advances θ by about R = Δ·r with
    Δ = |log(κεδ)|/2π; the model parameter is ε_model = εΔ. The kick is
    v = −M_ξ on the leaf, w the measured second-order remainder of R and
    u the θ-advance around its row mean.
    """
    if not isinstance(centers, Mapping):
        centers = {c.label: c for c in centers}
    missing = set(_LEAVES) - set(centers)
    if missing:
        raise ConfigError(f"the reduction needs the fixed leaves, missing {sorted(missing)}")
    for center in centers.values():
        if not math.isclose(center.eps, eps, rel_tol=1e-12) or not math.isclose(
            center.delta, delta, rel_tol=1e-12
        ):
            raise ConfigError(f"center {center.label} was built for other (eps, delta)")
    n = centers["00"].shift_integer
    if n >= 0:
        raise ConfigError(f"log(kappa eps delta) must be negative, got 2pi*{n}")
    scale = float(-n)
    cal = calibration or load_calibration()
    mapping = RescaledMap(M, eps, cal.kappa(1))
    n_theta = n_theta or centers["00"].xis.size
    if 2 * degree >= n_theta:
        raise ConfigError(f"degree {degree} needs more than {2 * degree} theta samples")

    maps: dict[int, CylinderMap] = {}
    densities: dict[str, LeafDensity] = {}
    charts: dict[str, CanonicalChart] = {}
    mean_advance: dict[str, np.ndarray] = {}
    advance_errors: list[float] = []
    jacobian_errors: list[float] = []
    for label, symbol in _LEAVES.items():
        density = leaf_density(centers[label], eps)
        chart = canonical_coords(density)
        fields, advance, r_rows, jac_error = _leaf_map(
            centers[label], density, chart, mapping, scale, n_theta, degree
        )
        maps[symbol] = fields
        densities[label] = density
        charts[label] = chart
        mean_advance[label] = advance
        advance_errors.append(float(np.max(np.abs(advance - r_rows))))
        jacobian_errors.append(jac_error)
    cocycle_error = float(np.max(np.abs(mean_advance["00"] - mean_advance["11"])))
    family = CylinderMapFamily(
        maps=maps,
        eps=eps * scale,
        remainder={
            "scale": scale,
            "advance_error": max(advance_errors),
            "cocycle_error": cocycle_error,
            "jacobian_error": max(jacobian_errors),
        },
    )
    logger.info(
        "skew reduction: scale %.1f, advance error %.2e, cocycle error %.2e",
        scale,
        max(advance_errors),
        cocycle_error,
    )
    return SkewReduction(
        family=family,
        charts=charts,
        densities=densities,
        scale=scale,
        mean_advance=mean_advance,
        advance_error=max(advance_errors),
        cocycle_error=cocycle_error,
        jacobian_error=max(jacobian_errors),
    )


# ---------------------------------------------------------------------------
# hypotheses, homological equation, drift and variance


@dataclass(frozen=True)
class HypothesisResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class HypothesisReport:
    results: tuple[HypothesisResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> HypothesisResult:
        for result in self.results:
            if result.name == name:
                return result
        raise KeyError(name)


def _r_range(F: CylinderMapFamily) -> tuple[float, float]:
    grid = F.r_grid
    return float(grid[0]), float(grid[-1])


def _integer_rs(F: CylinderMapFamily) -> list[int]:
    low, high = _r_range(F)
    values = list(range(math.ceil(low), math.floor(high) + 1))
    return values or [round(low)]


def _rationals(F: CylinderMapFamily, q: int) -> list[tuple[int, int]]:
    low, high = _r_range(F)
    start = q * math.floor(low)
    stop = max(q * math.ceil(high), start + q)
    return [(p, q) for p in range(start, stop) if math.gcd(p, q) == 1]


def _resonant_part(ev: ThetaField, p: int, q: int, degree: int) -> np.ndarray:
    """Coefficients of Ev_{p,q}: the harmonics kq with 0 < |kq| < d at r = p/q."""
    coeffs = np.array(ev.padded(max(degree, ev.degree)).coefficients_at(p / q))
    d = (coeffs.size - 1) // 2
    k = np.arange(-d, d + 1)
    keep = (k != 0) & (k % q == 0) & (np.abs(k) < degree)
    coeffs[~keep] = 0.0
    return coeffs


def _root_derivatives(coeffs: np.ndarray, n_theta: int) -> list[float]:
    """|f′| at the zeros of f = Σ c_k e^{2πikθ} on [0, 1); tangential zeros give 0."""
    d = (coeffs.size - 1) // 2
    k = np.arange(-d, d + 1)
    derivative = 2j * math.pi * k * coeffs
    theta = np.arange(n_theta + 1) / n_theta
    values = evaluate_coefficients(coeffs, theta)
    scale = float(np.max(np.abs(values)))
    out: list[float] = []
    for j in range(n_theta):
        a, b = values[j], values[j + 1]
        if a == 0.0:
            out.append(abs(float(evaluate_coefficients(derivative, theta[j]))))
        elif a * b < 0.0:
            root = brentq(
                lambda t: float(evaluate_coefficients(coeffs, t)), theta[j], theta[j + 1], xtol=1e-15
            )
            out.append(abs(float(evaluate_coefficients(derivative, root))))
    # near-tangential minima of |f| without a sign change
    sample = values[:-1]
    before, after = np.roll(sample, 1), np.roll(sample, -1)
    same_sign = (np.sign(before) == np.sign(sample)) & (np.sign(after) == np.sign(sample))
    local_min = np.abs(sample) <= np.minimum(np.abs(before), np.abs(after))
    touching = same_sign & local_min & (np.abs(sample) <= HYPOTHESIS_TOL * max(scale, 1.0))
    out.extend(0.0 for _ in range(int(np.count_nonzero(touching & (sample != 0.0)))))
    return out


def check_hypotheses(
    F: CylinderMapFamily, *, degree: int | None = None, n_theta: int = 256
) -> HypothesisReport:
    """Zero average, no common zeros, nonzero variance, degree, no common
    periodic orbits and non-degenerate resonant zeros, with margins."""
    d = F.degree if degree is None else degree
    v_plus, v_minus = F.maps[1].v, F.maps[-1].v
    theta = np.arange(n_theta) / n_theta
    r_nodes = F.r_grid
    results: list[HypothesisResult] = []

    averages = [abs(f.mean(r)) for f in (v_plus, v_minus) for r in r_nodes]
    h0 = max(averages)
    results.append(HypothesisResult("H0", h0 <= HYPOTHESIS_TOL, h0, "max |∫v_i dθ|"))

    h1 = min(
        float(np.min(np.hypot(v_plus(theta, r), v_minus(theta, r)))) for r in _integer_rs(F)
    )
    results.append(HypothesisResult("H1", h1 > HYPOTHESIS_TOL, h1, "min |(v₊, v₋)| at integer r"))

    diff = F.difference("v")
    sigma = min(diff.mean_square(r) for r in r_nodes)
    per_map = ", ".join(
        f"∫v{'+' if s > 0 else '-'}² = {min(F.maps[s].v.mean_square(r) for r in r_nodes):.6g}"
        for s in SYMBOLS
    )
    results.append(HypothesisResult("H2", sigma > HYPOTHESIS_TOL, sigma, per_map))

    top = max(
        getattr(m, name).effective_degree() for m in F.maps.values() for name in ("u", "v", "w")
    )
    results.append(HypothesisResult("H3", top <= d, float(d - top), f"effective degree {top}"))

    h4 = math.inf
    where = ""
    for q in range(1, 2 * d + 1):
        for p, _ in _rationals(F, q):
            r = p / q
            total = np.zeros(n_theta)
            for k in range(1, q + 1):
                total += (v_minus(theta + k / q, r) - v_plus(theta + k / q, r)) ** 2
            low = float(np.min(total))
            if low < h4:
                h4, where = low, f"r = {p}/{q}"
    results.append(HypothesisResult("H4", h4 > HYPOTHESIS_TOL, h4, where))

    ev = F.expected("v")
    h5 = math.inf
    where = ""
    if d <= 1:
        h5, where = 0.0, "no harmonic with 0 < |kq| < d"
    # q ≥ d admits no harmonic 0 < |kq| < d
    for q in range(1, d):
        for p, _ in _rationals(F, q):
            coeffs = _resonant_part(ev, p, q, d)
            if not np.any(np.abs(coeffs) > ZERO_COEFF_TOL):
                derivs = [0.0]
            else:
                derivs = _root_derivatives(coeffs, n_theta) or [0.0]
            low = min(derivs)
            if low < h5:
                h5, where = low, f"r = {p}/{q}"
    results.append(HypothesisResult("H5", h5 > HYPOTHESIS_TOL, h5, where))
    report = HypothesisReport(tuple(results))
    logger.info(
        "hypotheses: %s", ", ".join(f"{r.name}={'ok' if r.passed else 'fail'}" for r in results)
    )
    return report


def solve_homological(
    ev_coeffs: np.ndarray, r_tilde: float, degree: int, *, guard: float = HOMOLOGICAL_GUARD
) -> np.ndarray:
    """S₁^k = i·Ev^k / (2πk(1 − e^{2πikr̃})) for 0 < |k| ≤ d, S₁⁰ = 0.

    Input and output are ordered k = −d..d; harmonics of Ev above d are dropped.
    """
    ev_coeffs = np.asarray(ev_coeffs, dtype=complex)
    d_in = (ev_coeffs.size - 1) // 2
    out = np.zeros(2 * degree + 1, dtype=complex)
    for k in range(-degree, degree + 1):
        if k == 0 or abs(k) > d_in:
            continue
        value = ev_coeffs[d_in + k]
        if value == 0.0:
            continue
        gap = 1.0 - np.exp(2j * math.pi * k * r_tilde)
        if abs(gap) < guard:
            raise ResonanceError(
                f"small divisor |1 - exp(2 pi i k r)| = {abs(gap):.2e} at k = {k}, r = {r_tilde}"
            )
        out[degree + k] = 1j * value / (TWO_PI * k * gap)
    return out


def theta_derivative(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=complex)
    d = (coeffs.size - 1) // 2
    return 2j * math.pi * np.arange(-d, d + 1) * coeffs


def cocycle_residual(
    s_coeffs: np.ndarray, ev_coeffs: np.ndarray, r_tilde: float, n_theta: int = 256
) -> float:
    """max |∂S(θ) + Ev(θ) − ∂S(θ + r̃)| on a uniform grid."""
    theta = np.arange(n_theta) / n_theta
    ds = theta_derivative(s_coeffs)
    residual = (
        evaluate_coefficients(ds, theta)
        + evaluate_coefficients(ev_coeffs, theta)
        - evaluate_coefficients(ds, theta + r_tilde)
    )
    return float(np.max(np.abs(residual)))


@dataclass(frozen=True)
class DriftVariance:
    b: float
    sigma2: float


def drift_variance(
    F: CylinderMapFamily, r: float, *, n_theta: int = 256, guard: float = HOMOLOGICAL_GUARD
) -> DriftVariance:
    """b = ∫(Ev ∂θS₁ + Ew) dθ and σ² = ∫v² dθ for the difference potential v."""
    ev = np.array(F.expected("v").coefficients_at(r))
    ew = np.array(F.expected("w").coefficients_at(r))
    s1 = solve_homological(ev, r, (ev.size - 1) // 2, guard=guard)
    theta = np.arange(n_theta) / n_theta
    e2 = evaluate_coefficients(ev, theta) * evaluate_coefficients(
        theta_derivative(s1), theta
    ) + evaluate_coefficients(ew, theta)
    b = math.fsum(e2.tolist()) / n_theta
    return DriftVariance(b=b, sigma2=F.difference("v").mean_square(r))


# ---------------------------------------------------------------------------
# random iteration


@dataclass(frozen=True)
class RemainderInjection:
    """Bounded stand-in for the O(ε^{1+a}) remainders, signed by the symbol."""

    amplitude: float
    power: float = 1.0 / 6.0
    harmonic: int = 1

    def theta_term(self, theta, symbols, eps: float):
        return self.amplitude * symbols * eps ** (1.0 + self.power) * np.sin(
            TWO_PI * self.harmonic * theta
        )

    def r_term(self, theta, symbols, eps: float):
        return self.amplitude * symbols * eps ** (2.0 + self.power) * np.cos(
            TWO_PI * self.harmonic * theta
        )


def skew_step(
    F: CylinderMapFamily,
    theta: np.ndarray,
    r: np.ndarray,
    symbols: np.ndarray,
    eps: float,
    remainder: RemainderInjection | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    theta_next = np.empty_like(theta)
    r_next = np.empty_like(r)
    for symbol in SYMBOLS:
        pick = symbols == symbol
        if not np.any(pick):
            continue
        f = F.maps[symbol]
        t, x = theta[pick], r[pick]
        theta_next[pick] = t + x + eps * f.u(t, x)
        r_next[pick] = x + eps * f.v(t, x) + eps * eps * f.w(t, x)
    if remainder is not None:
        theta_next += remainder.theta_term(theta, symbols, eps)
        r_next += remainder.r_term(theta, symbols, eps)
    return np.mod(theta_next, 1.0), r_next


@dataclass(frozen=True, eq=False)
class SkewTrajectory:
    theta: np.ndarray
    r: np.ndarray
    symbols: np.ndarray

    def __len__(self) -> int:
        return int(self.theta.size)


def _coin(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def random_iterate(
    F: CylinderMapFamily,
    seed: int,
    n: int,
    start: tuple[float, float],
    *,
    remainder: RemainderInjection | None = None,
    band: tuple[float, float] | None = None,
) -> SkewTrajectory:
    """n steps of f_{ω_{n−1}} ∘ … ∘ f_{ω_0} with a fair coin per step."""
    if n < 0:
        raise ConfigError("the number of steps must be non-negative")
    symbols = 2 * _coin(seed).integers(0, 2, size=n) - 1
    theta = np.empty(n + 1)
    r = np.empty(n + 1)
    theta[0], r[0] = float(start[0]) % 1.0, float(start[1])
    for step in range(n):
        t, x = skew_step(
            F, theta[step : step + 1], r[step : step + 1], symbols[step : step + 1], F.eps, remainder
        )
        theta[step + 1], r[step + 1] = t[0], x[0]
        if band is not None and not band[0] <= r[step + 1] <= band[1]:
            raise EscapeError(f"r = {r[step + 1]:.6f} left the band {band} at step {step + 1}")
    return SkewTrajectory(theta=theta, r=r, symbols=symbols)


def iterate_ensemble(
    F: CylinderMapFamily,
    theta: np.ndarray,
    r: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    *,
    eps: float | None = None,
    remainder: RemainderInjection | None = None,
    band: tuple[float, float] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised iteration; a trajectory leaving the band is stopped there.

    Returns (θ, r, stopped). The coin is drawn for every trajectory at every
    step so that stopping does not shift the streams of the others.
    """
    eps = F.eps if eps is None else eps
    theta = np.mod(np.array(theta, dtype=float), 1.0)
    r = np.array(r, dtype=float)
    stopped = np.zeros(theta.shape, dtype=bool)
    for _ in range(n_steps):
        symbols = 2 * rng.integers(0, 2, size=theta.shape) - 1
        active = ~stopped
        if not np.any(active):
            continue
        t, x = skew_step(F, theta[active], r[active], symbols[active], eps, remainder)
        theta[active], r[active] = t, x
        if band is not None:
            stopped |= (r < band[0]) | (r > band[1])
    return theta, r, stopped
