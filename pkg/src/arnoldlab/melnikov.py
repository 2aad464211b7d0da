"""Splitting (Melnikov) potential of (cos q − 1)·P(φ, t) perturbations.

Two coordinate frames are supported. ``Frame.APEX`` is the closed form
M(η, ξ, τ) = −2π Σ x(ω)[p' cos θ + p'' sin θ] with θ = k1ξ + ωτ and
ω = k1η + k2. ``Frame.SECTION`` takes ξ and −τ as the rotor and time phases
at the loop apex, θ = k1ξ − k2τ; in that frame the separatrix map kicks are
exactly −εM_ξ and −εM_τ.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import ConfigError, ConvergenceError
from .hamiltonian import pendulum_separatrix
from .models import TWO_PI, Frame
from .trig import TrigPolynomial

HALF_PI = 0.5 * math.pi
SERIES_CUTOFF = 1e-4
DERIVATIVE_SERIES_CUTOFF = 1e-3
_OVERFLOW_ARGUMENT = 350.0


def _x(omega):
    """ω / sinh(πω/2) with the removable singularity at 0."""
    omega = np.asarray(omega, dtype=float)
    u = HALF_PI * omega
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        direct = omega / np.sinh(u)
    series = 2.0 / math.pi - math.pi * omega**2 / 12.0
    out = np.where(np.abs(omega) < SERIES_CUTOFF, series, direct)
    return np.where(np.abs(u) > _OVERFLOW_ARGUMENT, 0.0, out)


def _x_prime(omega):
    omega = np.asarray(omega, dtype=float)
    u = HALF_PI * omega
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        sh = np.sinh(u)
        direct = (sh - u * np.cosh(u)) / (sh * sh)
    series = -u / 3.0 + 7.0 * u**3 / 90.0
    out = np.where(np.abs(omega) < DERIVATIVE_SERIES_CUTOFF, series, direct)
    return np.where(np.abs(u) > _OVERFLOW_ARGUMENT, 0.0, out)


def _x_second(omega):
    omega = np.asarray(omega, dtype=float)
    u = HALF_PI * omega
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        sh = np.sinh(u)
        direct = (u * sh * sh + 2.0 * u - 2.0 * sh * np.cosh(u)) / sh**3
    series = -1.0 / 3.0 + 7.0 * u**2 / 30.0
    out = HALF_PI * np.where(np.abs(omega) < DERIVATIVE_SERIES_CUTOFF, series, direct)
    return np.where(np.abs(u) > _OVERFLOW_ARGUMENT, 0.0, out)


def bessi_harmonic(omega: float, phase: float) -> float:
    """∫ 2 sech²(s) cos(ωs + phase) ds = 2πω cos(phase) / sinh(πω/2)."""
    return float(TWO_PI * _x(omega) * math.cos(phase))


def bessi_quadrature(omega: float, phase: float, t_cut: float = 40.0) -> float:
    value, _ = quad(
        lambda s: 2.0 / math.cosh(s) ** 2 * math.cos(omega * s + phase),
        -t_cut,
        t_cut,
        epsabs=1e-14,
        epsrel=1e-13,
        limit=400,
    )
    return float(value)


@dataclass(frozen=True)
class MelnikovPartials:
    """Partial derivatives of the potential at one point (or grid)."""

    eta: object
    m: object
    m_xi: object
    m_tau: object
    m_eta: object
    m_tautau: object
    m_xitau: object
    m_xixi: object
    m_xieta: object
    m_taueta: object
    m_etaeta: object

    @property
    def m1(self):
        """The [M1] function M_τ − ηM_ξ."""
        return self.m_tau - self.eta * self.m_xi

    @property
    def delta(self):
        """Action kick Δ = −M_τ + ηM_ξ of the rescaled map."""
        return -self.m1

    @property
    def alpha(self):
        return -self.m_tautau + self.eta * self.m_xitau

    @property
    def gamma(self):
        return -self.m_xitau + self.eta * self.m_xixi

    @property
    def zeta(self):
        return -self.m_taueta + self.m_xi + self.eta * self.m_xieta

    @property
    def delta_m(self):
        """ΔM = M_ττ − 2ηM_ξτ + η²M_ξξ."""
        return self.m_tautau - 2.0 * self.eta * self.m_xitau + self.eta**2 * self.m_xixi


class MelnikovPotential:
    __slots__ = ("factor", "sigma", "frame", "_k1", "_k2", "_pc", "_ps")

    def __init__(
        self, factor: TrigPolynomial, sigma: int = 1, frame: Frame = Frame.APEX
    ) -> None:
        if sigma not in (1, -1):
            raise ConfigError(f"loop sign must be +1 or -1, got {sigma}")
        rows = [
            (k1, k2, pc, ps)
            for (k1, k2), (pc, ps) in factor.factor_harmonics().items()
            if (k1, k2) != (0, 0)
        ]
        self.factor = factor
        self.sigma = sigma
        self.frame = Frame(frame)
        self._k1 = np.array([r[0] for r in rows], dtype=float)
        self._k2 = np.array([r[1] for r in rows], dtype=float)
        self._pc = np.array([r[2] for r in rows], dtype=float)
        self._ps = np.array([r[3] for r in rows], dtype=float)

    def in_frame(self, frame: Frame) -> MelnikovPotential:
        return MelnikovPotential(self.factor, self.sigma, frame)

    @property
    def depends_on_xi(self) -> bool:
        return bool(np.any(self._k1 != 0))

    def _terms(self, eta, xi, tau):
        eta, xi, tau = np.broadcast_arrays(
            np.asarray(eta, dtype=float), np.asarray(xi, dtype=float), np.asarray(tau, dtype=float)
        )
        for k1, k2, pc, ps in zip(self._k1, self._k2, self._pc, self._ps, strict=True):
            omega = k1 * eta + k2
            if self.frame is Frame.APEX:
                theta = k1 * xi + omega * tau
            else:
                theta = k1 * xi - k2 * tau
            cos_t, sin_t = np.cos(theta), np.sin(theta)
            c = pc * cos_t + ps * sin_t
            s = -pc * sin_t + ps * cos_t
            yield k1, k2, omega, c, s

    def __call__(self, eta, xi, tau):
        return splitting_potential(self, eta, xi, tau)

    def table(self) -> str:
        lines = [f"# splitting potential harmonics, frame={self.frame.value}", "# k_phi k_t cos sin"]
        for row in zip(self._k1, self._k2, self._pc, self._ps, strict=True):
            lines.append(f"{int(row[0])} {int(row[1])} {row[2]!r} {row[3]!r}")
        return "\n".join(lines) + "\n"


def _shape(eta, xi, tau) -> tuple[int, ...]:
    return np.broadcast_shapes(np.shape(eta), np.shape(xi), np.shape(tau))


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def splitting_potential(M: MelnikovPotential, eta, xi, tau):
    total = np.zeros(_shape(eta, xi, tau))
    for _, _, omega, c, _ in M._terms(eta, xi, tau):
        total = total - TWO_PI * _x(omega) * c
    return _scalar(total)


def melnikov_partials(M: MelnikovPotential, eta, xi, tau) -> MelnikovPartials:
    """Term-by-term derivatives of the harmonic sum."""
    shape = _shape(eta, xi, tau)
    acc = {name: np.zeros(shape) for name in (
        "m", "m_xi", "m_tau", "m_eta", "m_tautau", "m_xitau",
        "m_xixi", "m_xieta", "m_taueta", "m_etaeta",
    )}
    tau_b = np.broadcast_to(np.asarray(tau, dtype=float), shape)
    apex = M.frame is Frame.APEX
    for k1, k2, omega, c, s in M._terms(eta, xi, tau):
        amp = -TWO_PI * _x(omega)
        amp_1 = -TWO_PI * _x_prime(omega) * k1
        amp_2 = -TWO_PI * _x_second(omega) * k1 * k1
        acc["m"] += amp * c
        acc["m_xi"] += amp * k1 * s
        acc["m_xixi"] -= amp * k1 * k1 * c
        if apex:
            w_tau = omega
            lever = k1 * tau_b
            acc["m_tau"] += amp * w_tau * s
            acc["m_eta"] += amp_1 * c + amp * lever * s
            acc["m_tautau"] -= amp * w_tau * w_tau * c
            acc["m_xitau"] -= amp * k1 * w_tau * c
            acc["m_xieta"] += k1 * (amp_1 * s - amp * lever * c)
            acc["m_taueta"] += amp_1 * w_tau * s + amp * k1 * s - amp * w_tau * lever * c
            acc["m_etaeta"] += amp_2 * c + 2.0 * amp_1 * lever * s - amp * lever * lever * c
        else:
            acc["m_tau"] -= amp * k2 * s
            acc["m_eta"] += amp_1 * c
            acc["m_tautau"] -= amp * k2 * k2 * c
            acc["m_xitau"] += amp * k1 * k2 * c
            acc["m_xieta"] += amp_1 * k1 * s
            acc["m_taueta"] -= amp_1 * k2 * s
            acc["m_etaeta"] += amp_2 * c
    eta_b = np.broadcast_to(np.asarray(eta, dtype=float), shape)
    return MelnikovPartials(
        eta=_scalar(np.array(eta_b)), **{name: _scalar(value) for name, value in acc.items()}
    )


def melnikov_quadrature_oracle(
    P: TrigPolynomial,
    eta: float,
    xi: float,
    tau: float,
    sigma: int = 1,
    t_cut: float = 30.0,
    frame: Frame = Frame.APEX,
) -> float:
    """−∫ (1 − cos q(s))·(P − P̄) along the σ-loop of the unperturbed separatrix."""
    if t_cut < 20.0:
        raise ConfigError(f"t_cut must be at least 20, got {t_cut}")
    if P.is_zero:
        return 0.0
    centered = P.without_constant()
    if Frame(frame) is Frame.APEX:
        def phases(s: float) -> tuple[float, float]:
            return xi + eta * (s + tau), s + tau
    else:
        def phases(s: float) -> tuple[float, float]:
            return xi + eta * s, s - tau

    def integrand(s: float) -> float:
        _, q = pendulum_separatrix(s, sigma)
        phi, t = phases(s)
        return -(1.0 - math.cos(q)) * centered(0.0, phi, t)

    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, error = quad(integrand, -t_cut, t_cut, epsabs=1e-13, epsrel=1e-12, limit=500)
        except IntegrationWarning as exc:
            raise ConvergenceError(f"adaptive quadrature did not converge: {exc}") from exc
    if error > 1e-9:
        raise ConvergenceError(f"quadrature error estimate {error:.2e} above tolerance")
    return float(value)


def uniform_bound_constant(
    M: MelnikovPotential, a: float, etas: np.ndarray, xis: np.ndarray, taus: np.ndarray
) -> float:
    """Fitted C in sup |M_τ + 2π sin τ| ≤ C·a for the normalized class."""
    if a <= 0.0:
        raise ConfigError("the bound constant needs a > 0")
    eta, xi, tau = np.meshgrid(etas, xis, taus, indexing="ij")
    partials = melnikov_partials(M, eta, xi, tau)
    return float(np.max(np.abs(partials.m_tau + TWO_PI * np.sin(tau)))) / a
