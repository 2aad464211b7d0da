"""Grid checks of the non-resonance, perturbation-class and [M1] hypotheses."""

from __future__ import annotations

import concurrent.futures
import logging
import math

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigError
from .melnikov import MelnikovPotential, melnikov_partials
from .models import TWO_PI, M1Report, M1Zeros
from .trig import SINH_HALF_PI, TrigPolynomial

logger = logging.getLogger(__name__)

M1_GRID_POINTS = 256
ROOT_TOL = 1e-12
FLAT_DERIVATIVE = 1e-8
TANGENT_TOL = 1e-9
CONTINUITY_FACTOR = 10.0


def doubled_harmonics(P: TrigPolynomial) -> set[tuple[int, int]]:
    """(k_φ, k_t) frequencies of P and of all pairwise sums."""
    base: set[tuple[int, int]] = set()
    for (_, k2, k3), _, _ in P.terms():
        if (k2, k3) != (0, 0):
            base.add((k2, k3))
            base.add((-k2, -k3))
    doubled = set(base)
    for first in base:
        for second in base:
            doubled.add((first[0] + second[0], first[1] + second[1]))
    return {k for k in doubled if k[0] != 0}


def nonresonant_test(I: float, beta: float, P: TrigPolynomial) -> bool:
    """True iff |k2·I + k3| ≥ β on the doubled harmonic set.

    Frequencies with k2 = 0 never resonate and are skipped.
    """
    if beta <= 0.0:
        raise ConfigError(f"beta must be positive, got {beta}")
    return all(abs(k2 * I + k3) >= beta for k2, k3 in doubled_harmonics(P))


def _m1(M: MelnikovPotential, eta, xi, tau):
    return melnikov_partials(M, eta, xi, tau).m1


def _m1_slope(M: MelnikovPotential, eta: float, xi: float, tau: float) -> float:
    partials = melnikov_partials(M, eta, xi, tau)
    return float(partials.m_tautau - eta * partials.m_xitau)


def _refine(M: MelnikovPotential, eta: float, xi: float, lo: float, hi: float) -> float:
    """Newton inside a sign-change bracket, bisecting when Newton misbehaves."""
    f_lo = float(_m1(M, eta, xi, lo))
    x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = float(_m1(M, eta, xi, x))
        if fx == 0.0:
            return x
        if math.copysign(1.0, fx) == math.copysign(1.0, f_lo):
            lo, f_lo = x, fx
        else:
            hi = x
        slope = _m1_slope(M, eta, xi, x)
        candidate = x - fx / slope if abs(slope) >= FLAT_DERIVATIVE else None
        if candidate is None or not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if abs(candidate - x) <= ROOT_TOL or hi - lo <= ROOT_TOL:
            return candidate
        x = candidate
    return x


def _circular_gap(a: float, b: float) -> float:
    gap = abs(a - b) % TWO_PI
    return min(gap, TWO_PI - gap)


def find_m1_zeros(
    M: MelnikovPotential, eta: float, xi: float, *, n_grid: int = M1_GRID_POINTS
) -> M1Zeros:
    """Roots in [0, 2π) of M_τ − ηM_ξ at fixed (η, ξ).

    Transversal roots come from sign changes on the sampling grid; tangential
    ones from local minima of |f| that reach zero and are flagged degenerate.
    """
    taus = TWO_PI * np.arange(n_grid) / n_grid
    values = np.asarray(_m1(M, eta, xi, taus), dtype=float)
    roots: list[float] = []
    flags: list[bool] = []

    def add(root: float, *, tangential: bool = False) -> None:
        root = float(np.mod(root, TWO_PI))
        if any(_circular_gap(root, known) < 1e-9 for known in roots):
            return
        roots.append(root)
        flat = abs(_m1_slope(M, eta, xi, root)) < FLAT_DERIVATIVE
        flags.append(tangential or flat)

    sign_change = np.zeros(n_grid, dtype=bool)
    for i in range(n_grid):
        j = (i + 1) % n_grid
        lo = taus[i]
        hi = taus[j] if j else TWO_PI
        if values[i] == 0.0:
            add(lo)
        elif values[i] * values[j] < 0.0:
            sign_change[i] = True
            add(_refine(M, eta, xi, lo, hi))

    magnitude = np.abs(values)
    scale = max(float(np.max(magnitude)), 1.0)
    for i in range(n_grid):
        prev, nxt = (i - 1) % n_grid, (i + 1) % n_grid
        if values[i] == 0.0 or sign_change[prev] or sign_change[i]:
            continue
        if magnitude[i] > magnitude[prev] or magnitude[i] > magnitude[nxt]:
            continue
        if magnitude[i] > 1e-2 * scale:
            continue
        width = TWO_PI / n_grid
        best = minimize_scalar(
            lambda tau: abs(float(_m1(M, eta, xi, tau))),
            bounds=(taus[i] - width, taus[i] + width),
            method="bounded",
            options={"xatol": ROOT_TOL},
        )
        if abs(float(_m1(M, eta, xi, best.x))) <= TANGENT_TOL:
            add(float(best.x), tangential=True)

    order = np.argsort(roots)
    return M1Zeros(
        eta=float(eta),
        xi=float(xi),
        roots=tuple(roots[i] for i in order),
        degenerate=tuple(flags[i] for i in order),
    )


def _scan_row(M: MelnikovPotential, eta: float, xis: np.ndarray) -> list[M1Zeros]:
    return [find_m1_zeros(M, float(eta), float(xi)) for xi in xis]


def check_m1(
    M: MelnikovPotential,
    etas: np.ndarray,
    xis: np.ndarray,
    *,
    threshold: float = 0.0,
    workers: int = 1,
) -> M1Report:
    etas = np.asarray(etas, dtype=float)
    xis = np.asarray(xis, dtype=float)
    if etas.size == 0 or xis.size == 0:
        raise ConfigError("the [M1] grid must have at least one cell")
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(lambda eta: _scan_row(M, eta, xis), etas))

    roots = np.full((etas.size, xis.size, 2), np.nan)
    delta_m = np.full((etas.size, xis.size, 2), np.nan)
    counts = np.zeros((etas.size, xis.size), dtype=int)
    failing: list[tuple[float, float, int]] = []
    for i, row in enumerate(rows):
        for j, zeros in enumerate(row):
            counts[i, j] = zeros.count
            if not zeros.regular:
                failing.append((zeros.eta, zeros.xi, zeros.count))
                continue
            roots[i, j] = zeros.roots
            partials = melnikov_partials(M, zeros.eta, zeros.xi, np.array(zeros.roots))
            delta_m[i, j] = partials.delta_m

    finite = np.abs(delta_m[np.isfinite(delta_m)])
    min_abs = float(finite.min()) if finite.size else 0.0
    continuity = _branches_continuous(roots, etas, xis)
    passed = not failing and min_abs > threshold
    if failing:
        logger.info("[M1] fails in %d of %d cells", len(failing), counts.size)
    return M1Report(
        etas=etas,
        xis=xis,
        roots=roots,
        delta_m=delta_m,
        root_counts=counts,
        failing_cells=tuple(failing),
        min_abs_delta_m=min_abs,
        threshold=threshold,
        continuity_ok=continuity,
        passed=passed,
    )


def _branches_continuous(roots: np.ndarray, etas: np.ndarray, xis: np.ndarray) -> bool:
    spacing = max(
        float(np.max(np.diff(etas))) if etas.size > 1 else 0.0,
        float(np.max(np.diff(xis))) if xis.size > 1 else 0.0,
    )
    limit = CONTINUITY_FACTOR * max(spacing, 1e-12)
    n_eta, n_xi, _ = roots.shape
    for i in range(n_eta):
        for j in range(n_xi):
            here = roots[i, j]
            if np.any(np.isnan(here)):
                continue
            for ni, nj in ((i + 1, j), (i, j + 1)):
                if ni >= n_eta or nj >= n_xi:
                    continue
                there = roots[ni, nj]
                if np.any(np.isnan(there)):
                    continue
                for root in here:
                    if min(_circular_gap(root, other) for other in there) > limit:
                        return False
    return True


def m1_degenerate_locus(
    M: MelnikovPotential, etas: np.ndarray, xis: np.ndarray
) -> list[tuple[float, float, float]]:
    """(η, ξ, τ) of every tangential [M1] root found on the grid."""
    found: list[tuple[float, float, float]] = []
    for eta in np.asarray(etas, dtype=float):
        for xi in np.asarray(xis, dtype=float):
            zeros = find_m1_zeros(M, float(eta), float(xi))
            for root, flat in zip(zeros.roots, zeros.degenerate, strict=True):
                if flat:
                    found.append((float(eta), float(xi), root))
    return found


def check_pert_class(P: TrigPolynomial, a: float, rho: float) -> bool:
    """Membership in the normalized perturbation class with parameters (a, ρ).

    The leading coefficient is accepted with either sign; the library's
    normalized class uses −sinh(π/2) so that M starts as +2π cos τ.
    """
    if a < 0.0 or rho <= 0.0:
        raise ConfigError(f"need a >= 0 and rho > 0, got a={a}, rho={rho}")
    harmonics = P.factor_harmonics()
    lead_cos, lead_sin = harmonics.get((0, 1), (0.0, 0.0))
    if abs(abs(lead_cos) - SINH_HALF_PI) > 1e-12 * SINH_HALF_PI:
        return False
    if abs(lead_sin) > a:
        return False
    bound = a * (1.0 + 1e-12)
    lower = 0.0
    for (k_phi, k_t), (pc, ps) in harmonics.items():
        if (k_phi, k_t) != (0, 1) and (abs(pc) > bound or abs(ps) > bound):
            return False
        if (k_phi, k_t) == (1, 1) or (k_phi % 2 == 1 and k_t % 2 == 0):
            lower = max(lower, math.hypot(pc, ps))
    return lower >= rho * a * (1.0 - 1e-12)
