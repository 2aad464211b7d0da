"""Rotor-pendulum Hamiltonian, its flow and the unperturbed separatrix."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, ConvergenceError, StepLimitError
from .models import TWO_PI, PhaseState, Scheme, Trajectory, wrap_angle
from .trig import TrigPolynomial

logger = logging.getLogger(__name__)

MAX_STEPS = 50_000_000


def eval_hamiltonian(s: PhaseState, eps: float, P: TrigPolynomial) -> float:
    return (
        0.5 * s.I * s.I
        + 0.5 * s.p * s.p
        + math.cos(s.q)
        - 1.0
        + eps * P(s.q, s.phi, s.t)
    )


def hamiltonian_array(states: np.ndarray, eps: float, P: TrigPolynomial) -> np.ndarray:
    p, q, action, phi, t = states.T
    return 0.5 * action**2 + 0.5 * p**2 + np.cos(q) - 1.0 + eps * P(q, phi, t)


def vector_field(
    s: PhaseState, eps: float, P: TrigPolynomial
) -> tuple[float, float, float, float, float]:
    """Return (ṗ, q̇, İ, φ̇, ṫ)."""
    dq, dphi, _ = P.gradient(s.q, s.phi, s.t)
    return (math.sin(s.q) - eps * dq, s.p, -eps * dphi, s.I, 1.0)


def _kick(p, q, action, phi, t, eps, P, dt):
    if eps == 0.0 or P.is_zero:
        return p + dt * np.sin(q), action
    dq, dphi, _ = P.gradient(q, phi, t)
    return p + dt * (np.sin(q) - eps * dq), action - dt * eps * dphi


def strang_step(
    states: np.ndarray, eps: float, P: TrigPolynomial, dt: float
) -> np.ndarray:
    """One drift-kick-drift step on rows (p, q, I, φ, t)."""
    p, q, action, phi, t = (states[..., i] for i in range(5))
    half = 0.5 * dt
    q = q + half * p
    phi = phi + half * action
    t = t + half
    p, action = _kick(p, q, action, phi, t, eps, P, dt)
    q = wrap_angle(q + half * p)
    phi = wrap_angle(phi + half * action)
    t = wrap_angle(t + half)
    return np.stack([p, q, action, phi, t], axis=-1)


def _check_steps(dt: float, n_steps: int) -> None:
    if not dt > 0.0:
        raise ConfigError(f"step must be positive, got {dt}")
    if n_steps < 0:
        raise ConfigError(f"step count must be non-negative, got {n_steps}")
    if n_steps > MAX_STEPS:
        raise StepLimitError(f"{n_steps} steps exceed the limit of {MAX_STEPS}")


def integrate(
    s0: PhaseState,
    eps: float,
    P: TrigPolynomial,
    dt: float,
    n_steps: int,
    *,
    reverse: bool = False,
    record_every: int = 1,
) -> Trajectory:
    """Strang splitting of H_ε; ``times`` are elapsed integration times."""
    _check_steps(dt, n_steps)
    if record_every < 1:
        raise ConfigError("record_every must be at least 1")
    signed = -dt if reverse else dt
    state = s0.reduced().as_array()
    kept_times = [0.0]
    kept_states = [state]
    for step in range(1, n_steps + 1):
        state = strang_step(state, eps, P, signed)
        if step % record_every == 0 or step == n_steps:
            kept_times.append(step * dt)
            kept_states.append(state)
    return Trajectory(
        times=np.array(kept_times),
        states=np.array(kept_states),
        step=dt,
        scheme=Scheme.STRANG,
    )


def integrate_ensemble(
    states: np.ndarray,
    eps: float,
    P: TrigPolynomial,
    dt: float,
    n_steps: int,
) -> np.ndarray:
    """Advance an (N, 5) array of phase points by ``n_steps`` Strang steps."""
    _check_steps(dt, n_steps)
    current = np.array(states, dtype=float)
    for _ in range(n_steps):
        current = strang_step(current, eps, P, dt)
    return current


def energy_balance(trajectory: Trajectory, eps: float, P: TrigPolynomial) -> np.ndarray:
    """H(t) − H(0) − ε∫∂_t P dt along a recorded trajectory.

    This is the drift of the extended energy H + T (T conjugate to t), which
    the exact flow keeps at zero.
    """
    states = trajectory.states
    energy = hamiltonian_array(states, eps, P)
    _, _, dt_p = P.gradient(states[:, 1], states[:, 3], states[:, 4])
    work = np.concatenate(
        ([0.0], np.cumsum(0.5 * (dt_p[1:] + dt_p[:-1]) * np.diff(trajectory.times)))
    )
    return energy - energy[0] - eps * work


def pendulum_separatrix(time, sigma: int = 1):
    """Point of the σ-loop of the pendulum separatrix at parameter ``time``.

    The apex (q = π, p = 2σ) sits at time 0.
    """
    if sigma not in (1, -1):
        raise ConfigError(f"loop sign must be +1 or -1, got {sigma}")
    time = np.asarray(time, dtype=float)
    p = 2.0 * sigma / np.cosh(time)
    q = np.mod(math.pi + 2.0 * sigma * np.arctan(np.sinh(time)), TWO_PI)
    if p.ndim == 0:
        return float(p), float(q)
    return p, q


def flow_rhs(eps: float, P: TrigPolynomial):
    """Right-hand side for scipy on rows (p, q, I, φ, t) without angle reduction."""

    def rhs(_time: float, y: np.ndarray) -> np.ndarray:
        p, q, action, phi, t = y
        dq, dphi, _ = P.gradient(q, phi, t)
        return np.array([math.sin(q) - eps * dq, p, -eps * dphi, action, 1.0])

    return rhs


def integrate_to_section(
    y0: np.ndarray,
    eps: float,
    P: TrigPolynomial,
    t_max: float,
    events=None,
    *,
    rtol: float = 1e-12,
    atol: float = 1e-13,
):
    """DOP853 integration of the unreduced flow, optionally stopping at events."""
    result = solve_ivp(
        flow_rhs(eps, P),
        (0.0, t_max),
        np.asarray(y0, dtype=float),
        method="DOP853",
        events=events,
        rtol=rtol,
        atol=atol,
        dense_output=False,
    )
    if result.status == -1:
        raise ConvergenceError(f"DOP853 integration failed: {result.message}")
    logger.debug("section integration took %d evaluations", result.nfev)
    return result
