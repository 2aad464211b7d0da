"""Separatrix map of the rotor-pendulum system and its direct-integration oracle.

A map state (η, ξ, h, τ, σ) describes the orbit just before it runs along
the σ-loop: η and h are the rotor action and the total energy near the
saddle, ξ and −τ the rotor and time phases at the loop apex. Kicks use the
section-frame splitting potential evaluated at (η⁺, ξ, τ).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.stats import linregress

from .config import FIXED_POINT_ITERATIONS, MARGINAL_DELTA_M, Calibration, load_calibration
from .errors import ConfigError, ConvergenceError, EscapeError
from .hamiltonian import integrate_to_section
from .melnikov import MelnikovPotential, melnikov_partials
from .models import TWO_PI, Frame, SepJacobian, SepState, wrap_angle
from .trig import TrigPolynomial

logger = logging.getLogger(__name__)

TAU_LOW = -0.5 * math.pi
HALF_LOOP_CUT = 30.0


def w_coordinate(eta, h):
    """h − E(η) with E(I) = I²/2."""
    return h - 0.5 * eta * eta


def reduce_tau(tau):
    """Reduce into [−π/2, 3π/2)."""
    return np.mod(np.asarray(tau, dtype=float) - TAU_LOW, TWO_PI) + TAU_LOW


def _section_potential(P: TrigPolynomial, sigma: int) -> MelnikovPotential:
    return MelnikovPotential(P, sigma=sigma, frame=Frame.SECTION)


def solve_eta_plus(M: MelnikovPotential, eps: float, eta, xi, tau):
    """Fixed point of η⁺ = η − ε M_ξ(η⁺, ξ, τ)."""
    eta = np.asarray(eta, dtype=float)
    current = eta
    for _ in range(FIXED_POINT_ITERATIONS):
        updated = eta - eps * np.asarray(melnikov_partials(M, current, xi, tau).m_xi)
        change = float(np.max(np.abs(updated - current))) if np.size(updated) else 0.0
        current = updated
        if change <= 1e-14 * max(1.0, float(np.max(np.abs(eta))) if eta.size else 1.0):
            return current if current.ndim else float(current)
    raise ConvergenceError(
        f"eta+ fixed point did not contract in {FIXED_POINT_ITERATIONS} iterations"
    )


class SecondOrderTerms:
    """ε² coefficients (M₂^η, M₂^h) of the order-2 map.

    They are evaluated at the first-order image (η⁺, ξ, h⁺, τ); ξ⁺ and τ⁺
    keep their first-order form.
    """

    def __call__(self, image: SepState, eps: float) -> tuple[float, float]:
        raise NotImplementedError


@dataclass(frozen=True)
class FlowFittedTerms(SecondOrderTerms):
    """M₂ read off the apex flow at ε/2 and ε/4, with the ε³ part extrapolated away.

    Both fit states are first-order preimages of the same (η⁺, ξ, h⁺, τ), so
    the residual η_flow − η⁺ is ε²M₂ + ε³C + … at each fit ε.
    """

    P: TrigPolynomial

    def __call__(self, image: SepState, eps: float) -> tuple[float, float]:
        if eps == 0.0 or self.P.is_zero:
            return 0.0, 0.0
        M = _section_potential(self.P, image.sigma)
        partials = melnikov_partials(M, image.eta, image.xi, image.tau)
        residuals = []
        for fit_eps in (0.5 * eps, 0.25 * eps):
            start = SepState(
                eta=image.eta + fit_eps * float(partials.m_xi),
                xi=image.xi,
                h=image.h + fit_eps * float(partials.m_tau),
                tau=image.tau,
                sigma=image.sigma,
            )
            landed = numeric_sepmap_oracle(start, fit_eps, self.P, check_window=False).state
            residuals.append(np.array([landed.eta - image.eta, landed.h - image.h]))
        coarse, fine = residuals
        d_eta, d_h = (8.0 * fine - coarse) / (0.5 * eps) ** 2
        logger.debug("second-order terms M2_eta=%.6g M2_h=%.6g", d_eta, d_h)
        return float(d_eta), float(d_h)


def analytic_sepmap(
    s: SepState,
    eps: float,
    P: TrigPolynomial,
    order: int = 1,
    *,
    calibration: Calibration | None = None,
    check_window: bool = True,
    second_order: SecondOrderTerms | None = None,
) -> tuple[SepState, int]:
    """One application of the separatrix map; returns (state, t⁺)."""
    cal = calibration or load_calibration()
    if order not in (1, 2):
        raise ConfigError(f"separatrix map order must be 1 or 2, got {order}")
    if check_window:
        cal.check_w(s.w, eps, order)
    M = _section_potential(P, s.sigma)
    eta_plus = solve_eta_plus(M, eps, s.eta, s.xi, s.tau)
    partials = melnikov_partials(M, eta_plus, s.xi, s.tau)
    h_plus = s.h - eps * partials.m_tau
    xi_kicked = s.xi + eps * partials.m_eta
    if order == 2:
        terms = second_order or FlowFittedTerms(P)
        image = SepState(eta=float(eta_plus), xi=s.xi, h=float(h_plus), tau=s.tau, sigma=s.sigma)
        d_eta, d_h = terms(image, eps)
        eta_plus = eta_plus + eps * eps * d_eta
        h_plus = h_plus + eps * eps * d_h
    w_plus = h_plus - 0.5 * eta_plus * eta_plus
    if w_plus == 0.0:
        raise EscapeError("the kicked orbit lands on the separatrix (w+ = 0)")
    log_term = math.log(abs(cal.kappa(s.sigma) * w_plus))
    xi_plus = xi_kicked - eta_plus * log_term
    tau_raw = s.tau + log_term
    t_plus = -math.floor((tau_raw - TAU_LOW) / TWO_PI)
    state = SepState(
        eta=float(eta_plus),
        xi=float(wrap_angle(xi_plus)),
        h=float(h_plus),
        tau=float(tau_raw + TWO_PI * t_plus),
        sigma=s.sigma * (1 if w_plus > 0 else -1),
    )
    return state, int(t_plus)


class RescaledMap:
    """Truncated separatrix map in (η, ξ, I, τ) with I = w/ε.

    I⁺ = I + Δ + εM_ξ²/2, where the last term keeps the map exactly
    symplectic; ξ is returned unreduced and τ in [−π/2, 3π/2).
    """

    __slots__ = ("M", "eps", "kappa")

    def __init__(self, M: MelnikovPotential, eps: float, kappa: float) -> None:
        if M.frame is not Frame.SECTION:
            M = M.in_frame(Frame.SECTION)
        self.M = M
        self.eps = eps
        self.kappa = kappa

    @classmethod
    def for_polynomial(
        cls, P: TrigPolynomial, eps: float, calibration: Calibration | None = None
    ) -> RescaledMap:
        cal = calibration or load_calibration()
        return cls(_section_potential(P, 1), eps, cal.kappa(1))

    def kick(self, eta, xi, action, tau):
        eta_plus = solve_eta_plus(self.M, self.eps, eta, xi, tau)
        partials = melnikov_partials(self.M, eta_plus, xi, tau)
        action_plus = (
            action + partials.delta + 0.5 * self.eps * np.asarray(partials.m_xi) ** 2
        )
        return eta_plus, xi + self.eps * partials.m_eta, action_plus, partials

    def __call__(self, eta, xi, action, tau):
        eta_plus, xi_kicked, action_plus, _ = self.kick(eta, xi, action, tau)
        if np.any(np.asarray(action_plus) <= 0.0):
            raise EscapeError("rescaled action left I > 0 under the map")
        log_term = np.log(self.kappa * self.eps * np.asarray(action_plus))
        xi_plus = xi_kicked - eta_plus * log_term
        tau_plus = reduce_tau(np.asarray(tau) + log_term)
        if np.ndim(tau_plus) == 0:
            return float(eta_plus), float(xi_plus), float(action_plus), float(tau_plus)
        return eta_plus, xi_plus, action_plus, tau_plus

    def log_level(self, action) -> float:
        return float(np.log(self.kappa * self.eps * action))

    def exact_jacobian(self, point) -> np.ndarray:
        """Chain-rule product of the twist and kick differentials."""
        eta, xi, action, tau = (float(v) for v in point)
        eps = self.eps
        eta_plus, _, action_plus, d = self.kick(eta, xi, action, tau)
        if action_plus <= 0.0:
            raise EscapeError("singular I+ in the Jacobian")
        denom = 1.0 + eps * d.m_xieta
        deta_plus = np.array([1.0, -eps * d.m_xixi, 0.0, -eps * d.m_xitau]) / denom
        dxi = np.array([0.0, 1.0, 0.0, 0.0]) + eps * (
            d.m_etaeta * deta_plus + np.array([0.0, d.m_xieta, 0.0, d.m_taueta])
        )
        # I⁺ = I − M_τ + ηM_ξ − εM_ξ²/2 with the partials taken at η⁺
        g_eta_plus = -d.m_taueta + eta * d.m_xieta - eps * d.m_xi * d.m_xieta
        g_xi = -d.m_xitau + eta * d.m_xixi - eps * d.m_xi * d.m_xixi
        g_tau = -d.m_tautau + eta * d.m_xitau - eps * d.m_xi * d.m_xitau
        daction = np.array([d.m_xi, g_xi, 1.0, g_tau]) + g_eta_plus * deta_plus
        kick = np.vstack([deta_plus, dxi, daction, np.array([0.0, 0.0, 0.0, 1.0])])
        log_term = math.log(self.kappa * eps * action_plus)
        beta = 1.0 / action_plus
        twist = np.array(
            [
                [1.0, 0.0, 0.0, 0.0],
                [-log_term, 1.0, -eta_plus * beta, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, beta, 1.0],
            ]
        )
        return twist @ kick

    def finite_difference_jacobian(self, point, step: float = 1e-6) -> np.ndarray:
        base = np.array(point, dtype=float)
        steps = step * np.maximum(1.0, np.abs(base))
        steps[2] = step * abs(base[2])
        out = np.empty((4, 4))
        for j in range(4):
            plus, minus = base.copy(), base.copy()
            plus[j] += steps[j]
            minus[j] -= steps[j]
            f_plus = np.array(self(*plus))
            f_minus = np.array(self(*minus))
            diff = f_plus - f_minus
            diff[3] = (diff[3] + math.pi) % TWO_PI - math.pi
            out[:, j] = diff / (2.0 * steps[j])
        return out


def display_jacobian(
    eta: float, log_term: float, alpha: float, beta: float, gamma: float, zeta: float
) -> np.ndarray:
    """Leading-order differential in (η, ξ, I, τ) with the error terms dropped."""
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [-log_term - eta * beta * zeta, 1.0 - eta * beta * gamma, -eta * beta, -eta * beta * alpha],
            [zeta, gamma, 1.0, alpha],
            [beta * zeta, beta * gamma, beta, 1.0 + beta * alpha],
        ]
    )


def sepmap_jacobian(
    s: SepState,
    eps: float,
    P: TrigPolynomial,
    delta: float,
    *,
    calibration: Calibration | None = None,
) -> SepJacobian:
    cal = calibration or load_calibration()
    action = s.rescaled_action(eps)
    cal.check_action(action, delta)
    mapping = RescaledMap(_section_potential(P, s.sigma), eps, cal.kappa(s.sigma))
    point = (s.eta, s.xi, action, s.tau)
    eta_plus, _, action_plus, partials = mapping.kick(*point)
    if action_plus <= 0.0:
        raise EscapeError(f"singular I+ = {float(action_plus):.3e}")
    beta = 1.0 / float(action_plus)
    log_term = mapping.log_level(float(action_plus))
    display = display_jacobian(
        float(eta_plus),
        log_term,
        float(partials.alpha),
        beta,
        float(partials.gamma),
        float(partials.zeta),
    )
    return SepJacobian(
        point=point,
        display=display,
        exact=mapping.exact_jacobian(point),
        finite_difference=mapping.finite_difference_jacobian(point),
        alpha=float(partials.alpha),
        beta=beta,
        gamma=float(partials.gamma),
        zeta=float(partials.zeta),
        delta_m=float(partials.delta_m),
        action_plus=float(action_plus),
    )


@dataclass(frozen=True, eq=False)
class Eigenstructure:
    """Eigenpairs sorted as (λ1, λ2, λ3, λ4); vectors are columns."""

    values: np.ndarray
    vectors: np.ndarray
    e3_closed: np.ndarray
    e4_closed: np.ndarray
    delta_m: float
    marginal: bool

    @property
    def v3(self) -> np.ndarray:
        return unit_vector(np.real(self.vectors[:, 2]))

    @property
    def v4(self) -> np.ndarray:
        return unit_vector(np.real(self.vectors[:, 3]))

    @property
    def frame_angle(self) -> float:
        cosine = abs(float(self.v3 @ self.v4))
        return math.acos(min(1.0, cosine))

    @property
    def product(self) -> complex:
        return complex(np.prod(self.values))


def unit_vector(vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ConvergenceError("zero eigenvector")
    pivot = vector[np.argmax(np.abs(vector))]
    return vector / norm * (1.0 if pivot >= 0 else -1.0)


def sort_eigenpairs(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        values, vectors = np.linalg.eig(matrix)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigen-solver failed: {exc}") from exc
    magnitude = np.abs(values)
    i3 = int(np.argmax(magnitude))
    i4 = int(np.argmin(magnitude))
    rest = [i for i in range(4) if i not in (i3, i4)]
    rest.sort(key=lambda i: abs(values[i] - 1.0))
    order = rest + [i3, i4]
    return values[order], vectors[:, order]


def closed_form_frame(eta: float, delta_m: float) -> tuple[np.ndarray, np.ndarray]:
    e3 = unit_vector(np.array([0.0, eta, 0.0, -1.0]))
    e4 = unit_vector(np.array([0.0, eta, -delta_m, -1.0]))
    return e3, e4


def eigenstructure(
    s: SepState,
    eps: float,
    P: TrigPolynomial,
    delta: float,
    *,
    calibration: Calibration | None = None,
) -> Eigenstructure:
    jac = sepmap_jacobian(s, eps, P, delta, calibration=calibration)
    values, vectors = sort_eigenpairs(jac.exact)
    e3, e4 = closed_form_frame(s.eta, jac.delta_m)
    marginal = abs(jac.delta_m) < MARGINAL_DELTA_M
    if marginal:
        logger.warning("[M1]-marginal point: |ΔM| = %.3e", abs(jac.delta_m))
    return Eigenstructure(
        values=values,
        vectors=vectors,
        e3_closed=e3,
        e4_closed=e4,
        delta_m=jac.delta_m,
        marginal=marginal,
    )


@dataclass(frozen=True)
class ApexPoint:
    """Phase point on q = π: rotor action, rotor phase, total energy, −t."""

    action: float
    xi: float
    energy: float
    tau: float
    sigma: int


@dataclass(frozen=True)
class OracleResult:
    state: SepState
    transit_time: float
    t_plus: int
    apex: ApexPoint


def _quad(func, lower: float, upper: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = quad(func, lower, upper, epsabs=1e-13, epsrel=1e-12, limit=400)
        except IntegrationWarning as exc:
            raise ConvergenceError(f"half-loop quadrature did not converge: {exc}") from exc
    return float(value)


def half_loop_kicks(
    P: TrigPolynomial, eps: float, eta: float, xi: float, tau: float
) -> tuple[float, float]:
    """Changes of (I, H) from the saddle to the apex along the unperturbed loop."""
    if eps == 0.0 or P.is_zero:
        return 0.0, 0.0

    def weight(s: float) -> float:
        return 2.0 / math.cosh(s) ** 2

    def d_action(s: float) -> float:
        _, dphi, _ = P.gradient(0.0, xi + eta * s, s - tau)
        return weight(s) * dphi

    def d_energy(s: float) -> float:
        _, _, dt = P.gradient(0.0, xi + eta * s, s - tau)
        return -weight(s) * dt

    return (
        eps * _quad(d_action, -HALF_LOOP_CUT, 0.0),
        eps * _quad(d_energy, -HALF_LOOP_CUT, 0.0),
    )


def apex_from_state(s: SepState, eps: float, P: TrigPolynomial) -> ApexPoint:
    d_action, d_energy = half_loop_kicks(P, eps, s.eta, s.xi, s.tau)
    return ApexPoint(
        action=s.eta + d_action,
        xi=s.xi,
        energy=s.h + d_energy,
        tau=s.tau,
        sigma=s.sigma,
    )


def state_from_apex(apex: ApexPoint, eps: float, P: TrigPolynomial) -> SepState:
    d_action, d_energy = half_loop_kicks(P, eps, apex.action, apex.xi, apex.tau)
    eta = apex.action - d_action
    d_action, d_energy = half_loop_kicks(P, eps, eta, apex.xi, apex.tau)
    return SepState(
        eta=apex.action - d_action,
        xi=apex.xi,
        h=apex.energy - d_energy,
        tau=apex.tau,
        sigma=apex.sigma,
    )


def _total_energy(y: np.ndarray, eps: float, P: TrigPolynomial) -> float:
    p, q, action, phi, t = (float(v) for v in y)
    return (
        0.5 * action * action
        + 0.5 * p * p
        + math.cos(q)
        - 1.0
        + eps * (math.cos(q) - 1.0) * float(P(0.0, phi, t))
    )


def apex_return(
    apex: ApexPoint, eps: float, P: TrigPolynomial, *, t_max: float | None = None
) -> tuple[ApexPoint, float]:
    """Flow from one crossing of q = π to the next one."""
    factor_value = float(P(0.0, apex.xi, -apex.tau))
    kinetic = apex.energy - 0.5 * apex.action**2 + 2.0 + 2.0 * eps * factor_value
    if kinetic <= 0.0:
        raise EscapeError("no real pendulum momentum at the apex for this energy")
    p0 = apex.sigma * math.sqrt(2.0 * kinetic)
    y0 = np.array([p0, math.pi, apex.action, apex.xi, -apex.tau])
    w_estimate = kinetic - 2.0
    if t_max is None:
        t_max = 2.0 * math.log(32.0 / max(abs(w_estimate), 1e-300)) + 30.0

    def crossing(_time: float, y: np.ndarray) -> float:
        return math.sin(0.5 * (y[1] - math.pi))

    crossing.terminal = True
    crossing.direction = -1.0 if apex.sigma > 0 else 1.0

    full = P.with_separatrix_factor() if not P.is_zero else P
    result = integrate_to_section(y0, eps, full, t_max, events=crossing)
    if result.status != 1 or not len(result.t_events[0]):
        raise EscapeError(f"no return to q = pi within t = {t_max:.1f}")
    transit = float(result.t_events[0][0])
    y = result.y_events[0][0]
    sigma = 1 if y[0] > 0 else -1
    landed = ApexPoint(
        action=float(y[2]),
        xi=float(wrap_angle(y[3])),
        energy=_total_energy(y, eps, P),
        tau=float(reduce_tau(-y[4])),
        sigma=sigma,
    )
    return landed, transit


def numeric_sepmap_oracle(
    s: SepState,
    eps: float,
    P: TrigPolynomial,
    *,
    calibration: Calibration | None = None,
    check_window: bool = True,
) -> OracleResult:
    cal = calibration or load_calibration()
    apex = apex_from_state(s, eps, P)
    landed, transit = apex_return(apex, eps, P)
    state = state_from_apex(landed, eps, P)
    if check_window and eps > 0.0:
        _, upper = cal.w_window(eps, 1)
        if abs(state.w) > 10.0 * upper:
            raise EscapeError(f"oracle orbit left the separatrix zone, |w| = {abs(state.w):.3e}")
    t_plus = round((state.tau - (s.tau - transit)) / TWO_PI)
    return OracleResult(state=state, transit_time=transit, t_plus=int(t_plus), apex=landed)


@dataclass(frozen=True)
class KappaFit:
    slope: float
    intercept: float
    kappa: float
    r_value: float


def calibrate_kappa(
    w_values, *, eta: float = 0.5, sigma: int = 1, xi: float = 0.0, tau: float = 0.0
) -> KappaFit:
    """Regress unperturbed transit times on log|w|; κ = exp(−intercept)."""
    w_values = np.asarray(w_values, dtype=float)
    if w_values.size < 2 or np.any(w_values == 0.0):
        raise ConfigError("need at least two nonzero w values")
    zero = TrigPolynomial({}, {})
    times = []
    for w in w_values:
        state = SepState(eta=eta, xi=xi, h=0.5 * eta * eta + float(w), tau=tau, sigma=sigma)
        _, transit = apex_return(apex_from_state(state, 0.0, zero), 0.0, zero)
        times.append(transit)
    fit = linregress(np.log(np.abs(w_values)), np.array(times))
    return KappaFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        kappa=math.exp(-float(fit.intercept)),
        r_value=float(fit.rvalue),
    )


def oracle_jacobian(
    apex: ApexPoint, eps: float, P: TrigPolynomial, step: float = 1e-6
) -> np.ndarray:
    """Central differences of the apex-to-apex map in (I, ξ, H, τ).

    The energy step shrinks with the distance to the separatrix, where the
    return time varies like log|w|.
    """
    base = np.array([apex.action, apex.xi, apex.energy, apex.tau])
    w = apex.energy - 0.5 * apex.action**2 + 2.0 * eps * float(P(0.0, apex.xi, -apex.tau))
    steps = np.full(4, step)
    steps[2] = step * min(1.0, max(100.0 * abs(w), 1e-3))
    out = np.empty((4, 4))
    for j in range(4):
        images = []
        for sign in (1.0, -1.0):
            shifted = base.copy()
            shifted[j] += sign * steps[j]
            landed, _ = apex_return(ApexPoint(*shifted, sigma=apex.sigma), eps, P)
            images.append(np.array([landed.action, landed.xi, landed.energy, landed.tau]))
        diff = images[0] - images[1]
        for angle in (1, 3):
            diff[angle] = (diff[angle] + math.pi) % TWO_PI - math.pi
        out[:, j] = diff / (2.0 * steps[j])
    return out


@dataclass(frozen=True)
class SigmaTrial:
    state: SepState
    oracle_sigma: int
    analytic_sigma: int

    @property
    def agrees(self) -> bool:
        return self.oracle_sigma == self.analytic_sigma


def sigma_rule_trials(
    P: TrigPolynomial,
    eps: float,
    n_trials: int,
    seed: int,
    *,
    calibration: Calibration | None = None,
) -> list[SigmaTrial]:
    """Random states of both energy signs; loop switching of oracle vs σ⁺ = σ·sgn w⁺.

    Draws whose kicked |w⁺| falls below 10ε^{3/2} are redrawn, since the
    oracle cannot resolve the sign there.
    """
    cal = calibration or load_calibration()
    rng = np.random.Generator(np.random.Philox(seed))
    lower, upper = cal.w_window(eps, 1)
    margin = 10.0 * eps**1.5
    trials: list[SigmaTrial] = []
    while len(trials) < n_trials:
        eta = float(rng.uniform(-1.0, 1.0))
        w = float(rng.choice([-1.0, 1.0]) * rng.uniform(max(lower, margin), 0.5 * upper))
        state = SepState(
            eta=eta,
            xi=float(rng.uniform(0.0, TWO_PI)),
            h=0.5 * eta * eta + w,
            tau=float(rng.uniform(-0.5, 0.5)),
            sigma=int(rng.choice([-1, 1])),
        )
        predicted, _ = analytic_sepmap(state, eps, P, calibration=cal)
        if abs(predicted.w) < margin:
            continue
        result = numeric_sepmap_oracle(state, eps, P, calibration=cal)
        trials.append(SigmaTrial(state, result.state.sigma, predicted.sigma))
    return trials
