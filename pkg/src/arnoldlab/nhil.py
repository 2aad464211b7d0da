"""Approximately invariant cylinders of the rescaled separatrix map and their blocks.

A center is labelled ij: i is the current symbol (τ near iπ) and j the
previous one. Fixed centers 00 and 11 sit at the action level δ, the
period-two pair 01/10 at δe^{-π}; the map sends ij to the center ji.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, root

from .config import CENTER_GRID, K_INTERVAL, Calibration, load_calibration
from .errors import ConfigError, ConvergenceError, EscapeError, ShadowingError, WindowError
from .fourier import GridInterpolant, PeriodicInterpolant, periodic_grid
from .melnikov import MelnikovPotential, melnikov_partials
from .models import TWO_PI, BlockVariant, CenterCylinder, IsolatingBlock, SepState, SymbolWord
from .sepmap import RescaledMap, sort_eigenpairs, unit_vector

logger = logging.getLogger(__name__)

CENTER_PASSES = 3
BRANCH_ITERATIONS = 50
BRANCH_TOL = 1e-13
ROW_XTOL = 1e-12
ROW_FTOL = 1e-9
QUANTIZATION_TOL = 1e-9
LANDING_FACTOR = 1.5
SHOOT_GROWTH = 4.0
SHADOW_XTOL = 1e-14
LABELS = ("00", "01", "10", "11")


def wrap_difference(value):
    """Reduce an angle difference into [−π, π)."""
    return np.mod(np.asarray(value, dtype=float) + math.pi, TWO_PI) - math.pi


def center_level(label: str, delta: float) -> float:
    return delta if label[0] == label[1] else delta * math.exp(-math.pi)


def image_label(label: str) -> str:
    return label[1] + label[0]


@dataclass(frozen=True)
class QuantizedDelta:
    """δ = e^{2πn}/(κε), so that log(κεδ) is a multiple of 2π."""

    delta: float
    n: int
    eps: float

    @property
    def log_level(self) -> float:
        return TWO_PI * self.n


def quantize_delta(
    eps: float,
    target: float,
    calibration: Calibration | None = None,
    *,
    check_window: bool = True,
) -> QuantizedDelta:
    cal = calibration or load_calibration()
    if not eps > 0.0 or not target > 0.0:
        raise ConfigError(f"need eps > 0 and a positive delta target, got {eps}, {target}")
    kappa = cal.kappa(1)
    n = round(math.log(kappa * eps * target) / TWO_PI)
    delta = math.exp(TWO_PI * n) / (kappa * eps)
    if check_window:
        cal.check_delta(delta, eps)
    logger.debug("delta target %.3e quantized to %.3e (n = %d)", target, delta, n)
    return QuantizedDelta(delta=delta, n=int(n), eps=eps)


def matched_eps(
    eps: float, exponent: float, calibration: Calibration | None = None
) -> QuantizedDelta:
    """The ε′ closest to ``eps`` whose quantized δ is exactly ε′**exponent."""
    cal = calibration or load_calibration()
    if not 0.0 < exponent < 1.0:
        raise ConfigError(f"delta exponent must lie in (0, 1), got {exponent}")
    log_kappa = math.log(cal.kappa(1))
    n = round(((1.0 + exponent) * math.log(eps) + log_kappa) / TWO_PI)
    eps_matched = math.exp((TWO_PI * n - log_kappa) / (1.0 + exponent))
    if not 0.0 < eps_matched <= 0.1:
        raise WindowError(f"no admissible eps near {eps:.3e} for delta = eps^{exponent}")
    return quantize_delta(eps_matched, eps_matched**exponent, cal)


@dataclass(frozen=True, eq=False)
class CenterGrid:
    etas: np.ndarray
    xis: np.ndarray

    @classmethod
    def uniform(
        cls,
        n_eta: int = CENTER_GRID[0],
        n_xi: int = CENTER_GRID[1],
        eta_range: tuple[float, float] = K_INTERVAL,
    ) -> CenterGrid:
        if n_eta < 2 or n_xi < 4:
            raise ConfigError("a center grid needs at least 2 x 4 nodes")
        return cls(etas=np.linspace(*eta_range, n_eta), xis=periodic_grid(n_xi))

    @property
    def shape(self) -> tuple[int, int]:
        return self.etas.size, self.xis.size

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.etas, self.xis, indexing="ij")

    def nearest(self, eta, xi) -> tuple[np.ndarray, np.ndarray]:
        spacing = (self.etas[-1] - self.etas[0]) / (self.etas.size - 1)
        rows = np.clip(np.rint((np.asarray(eta) - self.etas[0]) / spacing), 0, self.etas.size - 1)
        cols = np.rint(np.mod(np.asarray(xi), TWO_PI) / (TWO_PI / self.xis.size))
        return rows.astype(int), (cols.astype(int) % self.xis.size)


def shift_map(grid: CenterGrid, log_level: float) -> np.ndarray:
    """σ(η, ξ) = ξ − ηΛ (mod 2π), the leading-order ξ advance of a center."""
    eta, xi = grid.mesh()
    return np.mod(xi - eta * log_level, TWO_PI)


def m1_branch(M: MelnikovPotential, grid: CenterGrid, symbol: int) -> np.ndarray:
    """Zero branch τ⁰(η, ξ) of M_τ − ηM_ξ continued from τ = symbol·π."""
    eta, xi = grid.mesh()
    start = symbol * math.pi
    tau = np.full(eta.shape, start)
    for _ in range(BRANCH_ITERATIONS):
        d = melnikov_partials(M, eta, xi, tau)
        slope = np.asarray(d.m_tautau - eta * d.m_xitau)
        if np.any(np.abs(slope) < 1e-12):
            raise ConvergenceError(f"flat [M1] function on the branch near {start:.3f}")
        step = np.asarray(d.m1) / slope
        tau = tau - step
        if float(np.max(np.abs(step))) <= BRANCH_TOL:
            break
    else:
        raise ConvergenceError(f"[M1] branch near {start:.3f} did not converge")
    if float(np.max(np.abs(tau - start))) > 0.5 * math.pi:
        raise ConvergenceError(f"[M1] branch near {start:.3f} wandered to another zero")
    return tau


def _eta_slopes(grid: CenterGrid, values: np.ndarray) -> np.ndarray:
    edge = 2 if grid.etas.size > 2 else 1
    return np.gradient(values, grid.etas, axis=0, edge_order=edge)


def _solve_row(
    mapping: RescaledMap,
    eta: float,
    xis: np.ndarray,
    labels: Sequence[str],
    delta: float,
    guess: np.ndarray,
    slopes: np.ndarray,
) -> np.ndarray:
    """Scaled unknowns (u, v) with I = level·(1 + u), τ = iπ + v for one η row.

    ``guess`` and ``slopes`` have shape (labels, 2, n_xi); slopes hold the
    η-derivatives of the target action and τ from the previous pass.
    """
    n = xis.size
    m = len(labels)
    levels = [center_level(label, delta) for label in labels]
    symbols = [int(label[0]) for label in labels]
    targets = [labels.index(image_label(label)) for label in labels]
    etas = np.full(n, eta)
    slope_rows = [
        (PeriodicInterpolant(slopes[k, 0]), PeriodicInterpolant(slopes[k, 1])) for k in range(m)
    ]

    def residual(x: np.ndarray) -> np.ndarray:
        block = x.reshape(m, 2, n)
        out = np.empty_like(block)
        rows = [(PeriodicInterpolant(block[k, 0]), PeriodicInterpolant(block[k, 1])) for k in range(m)]
        for k in range(m):
            action = levels[k] * (1.0 + block[k, 0])
            if np.any(action <= 0.0):
                raise EscapeError(f"center action became non-positive at eta={eta:.4f}")
            tau = symbols[k] * math.pi + block[k, 1]
            eta_p, xi_p, action_p, tau_p = mapping(etas, xis, action, tau)
            t = targets[k]
            d_eta = eta_p - eta
            target_action = levels[t] * (1.0 + rows[t][0](xi_p)) + d_eta * slope_rows[t][0](xi_p)
            target_tau = symbols[t] * math.pi + rows[t][1](xi_p) + d_eta * slope_rows[t][1](xi_p)
            out[k, 0] = (action_p - target_action) / levels[t]
            out[k, 1] = wrap_difference(tau_p - target_tau)
        return out.ravel()

    x0 = guess.ravel()
    if float(np.max(np.abs(residual(x0)))) <= 1e-2 * ROW_FTOL:
        return guess.copy()
    result = root(residual, x0, method="hybr", options={"xtol": ROW_XTOL})
    worst = float(np.max(np.abs(result.fun)))
    if not result.success and worst > ROW_FTOL:
        raise ConvergenceError(
            f"center solve failed at eta={eta:.4f}: {result.message} (residual {worst:.2e})"
        )
    return result.x.reshape(m, 2, n)


@dataclass(frozen=True, eq=False)
class _Solution:
    action: np.ndarray
    tau: np.ndarray
    tau0: np.ndarray
    residual_action: float
    residual_tau: float


def _solve_centers(
    mapping: RescaledMap,
    grid: CenterGrid,
    labels: Sequence[str],
    delta: float,
    workers: int,
) -> dict[str, _Solution]:
    n_eta, n_xi = grid.shape
    m = len(labels)
    tau0 = {label: m1_branch(mapping.M, grid, int(label[0])) for label in labels}
    unknowns = np.zeros((n_eta, m, 2, n_xi))
    for k, label in enumerate(labels):
        unknowns[:, k, 1, :] = tau0[label] - int(label[0]) * math.pi
    levels = np.array([center_level(label, delta) for label in labels])

    def slopes_of(current: np.ndarray) -> np.ndarray:
        out = np.zeros_like(current)
        for k in range(m):
            out[:, k, 0, :] = levels[k] * _eta_slopes(grid, current[:, k, 0, :])
            out[:, k, 1, :] = _eta_slopes(grid, current[:, k, 1, :])
        return out

    slopes = np.zeros_like(unknowns)
    for pass_index in range(CENTER_PASSES):
        if pass_index:
            slopes = slopes_of(unknowns)
        with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            rows = list(
                pool.map(
                    lambda r: _solve_row(
                        mapping, float(grid.etas[r]), grid.xis, labels, delta, unknowns[r], slopes[r]
                    ),
                    range(n_eta),
                )
            )
        unknowns = np.stack(rows)
        logger.debug("center pass %d done for %s", pass_index + 1, ",".join(labels))

    actions = {label: levels[k] * (1.0 + unknowns[:, k, 0, :]) for k, label in enumerate(labels)}
    taus = {label: int(label[0]) * math.pi + unknowns[:, k, 1, :] for k, label in enumerate(labels)}
    out: dict[str, _Solution] = {}
    for label in labels:
        res_action, res_tau = center_residuals(
            mapping, grid, actions[label], taus[label], actions[image_label(label)], taus[image_label(label)]
        )
        out[label] = _Solution(actions[label], taus[label], tau0[label], res_action, res_tau)
    return out


def center_residuals(
    mapping: RescaledMap,
    grid: CenterGrid,
    action: np.ndarray,
    tau: np.ndarray,
    target_action: np.ndarray,
    target_tau: np.ndarray,
) -> tuple[float, float]:
    """Max |I⁺ − I_t| and |τ⁺ − τ_t| when the map is applied to a center grid.

    The target graph is interpolated spectrally in ξ at the image and
    corrected to first order in η⁺ − η with grid derivatives.
    """
    eta, xi = grid.mesh()
    if np.any(action <= 0.0):
        raise EscapeError("center grid has a non-positive action")
    eta_p, xi_p, action_p, tau_p = mapping(eta, xi, action, tau)
    d_eta = eta_p - eta
    targets = []
    for values in (target_action, target_tau):
        at_row = GridInterpolant(grid.etas, values)(eta, xi_p)
        slope = GridInterpolant(grid.etas, _eta_slopes(grid, values))(eta, xi_p)
        targets.append(at_row + d_eta * slope)
    res_action = float(np.max(np.abs(action_p - targets[0])))
    res_tau = float(np.max(np.abs(wrap_difference(tau_p - targets[1]))))
    return res_action, res_tau


def _check_quantized(mapping: RescaledMap, delta: float) -> int:
    n = math.log(mapping.kappa * mapping.eps * delta) / TWO_PI
    if abs(n - round(n)) > QUANTIZATION_TOL:
        raise ConfigError(f"delta = {delta:.6e} is not quantized; use quantize_delta")
    return int(round(n))


def _cylinder(
    label: str,
    grid: CenterGrid,
    solution: _Solution,
    eps: float,
    delta: float,
    a: float,
    n: int,
) -> CenterCylinder:
    symbol = int(label[0])
    level = center_level(label, delta)
    if a > 0.0:
        action_bar = (solution.action / level - 1.0) / a
        tau_first = (solution.tau0 - symbol * math.pi) / a
        tau_second = (solution.tau - solution.tau0) / (a * delta)
    else:
        action_bar = np.zeros(grid.shape)
        tau_first = np.zeros(grid.shape)
        tau_second = np.zeros(grid.shape)
    return CenterCylinder(
        label=label,
        etas=grid.etas,
        xis=grid.xis,
        action=solution.action,
        tau=solution.tau,
        eps=eps,
        delta=delta,
        a=a,
        shift_integer=n,
        residual_action=solution.residual_action,
        residual_tau=solution.residual_tau,
        image_label=image_label(label),
        action_bar=action_bar,
        tau_first=tau_first,
        tau_second=tau_second,
    )


def _mapping(M: MelnikovPotential, eps: float, calibration: Calibration | None) -> RescaledMap:
    cal = calibration or load_calibration()
    return RescaledMap(M, eps, cal.kappa(1))


def solve_fixed_centers(
    M: MelnikovPotential,
    eps: float,
    delta: float,
    a: float,
    i: int,
    grid: CenterGrid | None = None,
    *,
    calibration: Calibration | None = None,
    workers: int = 1,
) -> CenterCylinder:
    """The invariant graph (I_ii, τ_ii) over the grid for symbol ``i``."""
    if i not in (0, 1):
        raise ConfigError(f"symbol must be 0 or 1, got {i}")
    grid = grid or CenterGrid.uniform()
    mapping = _mapping(M, eps, calibration)
    n = _check_quantized(mapping, delta)
    label = f"{i}{i}"
    solution = _solve_centers(mapping, grid, [label], delta, workers)[label]
    logger.info(
        "center %s: residuals %.2e (I), %.2e (tau)",
        label,
        solution.residual_action,
        solution.residual_tau,
    )
    return _cylinder(label, grid, solution, eps, delta, a, n)


def solve_period2_centers(
    M: MelnikovPotential,
    eps: float,
    delta: float,
    a: float,
    grid: CenterGrid | None = None,
    *,
    calibration: Calibration | None = None,
    workers: int = 1,
) -> tuple[CenterCylinder, CenterCylinder]:
    """The pair (01, 10) exchanged by the map, solved jointly."""
    grid = grid or CenterGrid.uniform()
    mapping = _mapping(M, eps, calibration)
    n = _check_quantized(mapping, delta)
    solutions = _solve_centers(mapping, grid, ["01", "10"], delta, workers)
    pair = tuple(
        _cylinder(label, grid, solutions[label], eps, delta, a, n) for label in ("01", "10")
    )
    return pair[0], pair[1]


def shift_relation_error(center: CenterCylinder, source: CenterCylinder) -> float:
    """max |Ī(η, σ) − (τ¹_image(η, σ) − τ¹_source(η, ξ))| over the grid.

    ``center`` is the image of ``source`` under the map; σ is the shift of
    the source level.
    """
    grid = CenterGrid(etas=source.etas, xis=source.xis)
    log_level = TWO_PI * source.shift_integer + math.log(source.level / source.delta)
    eta, _ = grid.mesh()
    sigma = shift_map(grid, log_level)
    action_bar = GridInterpolant(grid.etas, center.action_bar)(eta, sigma)
    tau_first = GridInterpolant(grid.etas, center.tau_first)(eta, sigma)
    return float(np.max(np.abs(action_bar - (tau_first - source.tau_first))))


def build_blocks(
    centers: Iterable[CenterCylinder],
    mapping: RescaledMap,
    kappa: tuple[float, float, float, float],
    *,
    variant: BlockVariant = BlockVariant.STABLE,
) -> list[IsolatingBlock]:
    """Parallelogram blocks around each center, aligned with the eigenframe (v3, v4)."""
    k1, k2, k3, _ = kappa
    blocks: list[IsolatingBlock] = []
    for center in centers:
        grid = CenterGrid(etas=center.etas, xis=center.xis)
        eta, xi = grid.mesh()
        *_, partials = mapping.kick(eta, xi, center.action, center.tau)
        v3 = np.empty(grid.shape + (4,))
        v4 = np.empty(grid.shape + (4,))
        lam = np.empty(grid.shape)
        for r, c in np.ndindex(*grid.shape):
            point = (eta[r, c], xi[r, c], center.action[r, c], center.tau[r, c])
            values, vectors = sort_eigenpairs(mapping.exact_jacobian(point))
            v3[r, c] = unit_vector(np.real(vectors[:, 2]))
            v4[r, c] = unit_vector(np.real(vectors[:, 3]))
            lam[r, c] = float(np.real(values[2]))
        delta = center.delta
        if BlockVariant(variant) is BlockVariant.STABLE:
            widths = (k1 * center.level, k2 * delta * delta)
        else:
            widths = (k1 * delta * delta, k2 * delta)
        block = IsolatingBlock(
            label=center.label,
            center=center,
            v3=v3,
            v4=v4,
            delta_m=np.asarray(partials.delta_m, dtype=float),
            lambda_unstable=lam,
            width_unstable=widths[0],
            width_stable=widths[1],
            delta=delta,
            variant=BlockVariant(variant),
        )
        if block.min_frame_angle < k3:
            raise ConvergenceError(
                f"eigenframe angle {block.min_frame_angle:.3e} of block {center.label} "
                f"below {k3}"
            )
        blocks.append(block)
    return blocks


@dataclass(frozen=True)
class Violation:
    condition: str
    label: str
    point: tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class BlockReport:
    label: str
    target: str
    n_samples: int
    violations: tuple[Violation, ...]
    shrink_ratio: float
    expand_ratio: float
    slab_ratio: float

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass(frozen=True, eq=False)
class ConeReport:
    label: str
    n_samples: int
    violations: tuple[Violation, ...]
    min_unstable_expansion: float
    min_stable_expansion: float
    expansion_bound: float
    m_u: float

    @property
    def passed(self) -> bool:
        return not self.violations


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


class _Target:
    """Center graph and eigenframe of a block, evaluated at arbitrary points."""

    def __init__(self, block: IsolatingBlock) -> None:
        center = block.center
        self.block = block
        self.grid = CenterGrid(etas=center.etas, xis=center.xis)
        self.action = GridInterpolant(center.etas, center.action)
        self.tau = GridInterpolant(center.etas, center.tau)

    def center_point(self, eta, xi) -> np.ndarray:
        eta, xi = np.broadcast_arrays(np.asarray(eta, dtype=float), np.asarray(xi, dtype=float))
        return np.stack([eta, xi, self.action(eta, xi), self.tau(eta, xi)], axis=-1)

    def frame(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = self.grid.nearest(points[..., 0], points[..., 1])
        return rows, cols

    def coordinates(self, vectors: np.ndarray, rows, cols) -> np.ndarray:
        """Components along (e_η, e_ξ, v3, v4) at the given nodes."""
        vectors = np.atleast_2d(vectors)
        basis = np.zeros(vectors.shape[:-1] + (4, 4))
        basis[..., 0, 0] = 1.0
        basis[..., 1, 1] = 1.0
        basis[..., :, 2] = self.block.v3[rows, cols]
        basis[..., :, 3] = self.block.v4[rows, cols]
        return np.linalg.solve(basis, vectors[..., None])[..., 0]

    def offsets(self, points: np.ndarray, rows=None, cols=None) -> np.ndarray:
        """Coordinates of points relative to the center at their own (η, ξ)."""
        if rows is None:
            rows, cols = self.frame(points)
        base = self.center_point(points[..., 0], points[..., 1])
        diff = points - base
        diff[..., 3] = wrap_difference(diff[..., 3])
        return self.coordinates(diff, rows, cols)

    def contains_eta(self, eta) -> np.ndarray:
        return self.action.contains(eta)


def _image(mapping: RescaledMap, points: np.ndarray) -> np.ndarray:
    return np.stack(mapping(*(points[..., k] for k in range(4))), axis=-1)


def _sample_nodes(block: IsolatingBlock, rng: np.random.Generator, n: int):
    center = block.center
    rows = rng.integers(0, center.etas.size, n)
    cols = rng.integers(0, center.xis.size, n)
    base = np.stack(
        [center.etas[rows], center.xis[cols], center.action[rows, cols], center.tau[rows, cols]],
        axis=-1,
    )
    return rows, cols, base


def _violations(condition: str, label: str, points: np.ndarray, mask: np.ndarray) -> list[Violation]:
    return [
        Violation(condition=condition, label=label, point=tuple(float(v) for v in p))
        for p in points[mask]
    ]


def _verify_block(
    block: IsolatingBlock,
    target_block: IsolatingBlock,
    mapping: RescaledMap,
    n_samples: int,
    rng: np.random.Generator,
) -> BlockReport:
    target = _Target(target_block)
    rows, cols, base = _sample_nodes(block, rng, n_samples)
    v3 = block.v3[rows, cols]
    v4 = block.v4[rows, cols]
    w3, w4 = block.width_unstable, block.width_stable
    w3_t, w4_t = target_block.width_unstable, target_block.width_stable
    landing = np.minimum(w3, LANDING_FACTOR * w3_t / np.abs(block.lambda_unstable[rows, cols]))
    s3 = rng.uniform(-1.0, 1.0, n_samples) * landing
    s4 = rng.uniform(-1.0, 1.0, n_samples) * w4
    face_s4 = rng.uniform(-1.0, 1.0, n_samples) * w4

    interior = base + s3[:, None] * v3 + s4[:, None] * v4
    plus_face = base + w3 * v3 + face_s4[:, None] * v4
    minus_face = base - w3 * v3 + face_s4[:, None] * v4
    pair_plus = base + s3[:, None] * v3 + w4 * v4
    pair_minus = base + s3[:, None] * v3 - w4 * v4

    img_interior = _image(mapping, interior)
    img_plus = _image(mapping, plus_face)
    img_minus = _image(mapping, minus_face)
    img_pair_plus = _image(mapping, pair_plus)
    img_pair_minus = _image(mapping, pair_minus)

    found: list[Violation] = []
    tol = 1.0 + 1e-9

    r, c = target.frame(img_pair_plus)
    separation = img_pair_plus - img_pair_minus
    separation[:, 3] = wrap_difference(separation[:, 3])
    sep4 = np.abs(target.coordinates(separation, r, c)[:, 3])
    found += _violations("shrink", block.label, pair_plus, sep4 > w4_t * tol)

    extent = np.abs(wrap_difference(img_plus[:, 3] - img_minus[:, 3]))
    found += _violations("expand", block.label, plus_face, extent < 2.0 * w3_t)

    inside = target.contains_eta(img_interior[:, 0])
    found += _violations("slab", block.label, interior, ~inside)
    coords = target.offsets(img_interior)
    in_strip = inside & (np.abs(coords[:, 2]) <= w3_t)
    found += _violations("slab", block.label, interior, in_strip & (np.abs(coords[:, 3]) > w4_t * tol))

    r, c = target.frame(img_plus)
    c3_plus = target.offsets(img_plus, r, c)[:, 2]
    c3_minus = target.offsets(img_minus, r, c)[:, 2]
    found += _violations("degree", block.label, plus_face, c3_plus * c3_minus >= 0.0)

    strip_c4 = np.abs(coords[in_strip, 3])
    report = BlockReport(
        label=block.label,
        target=target_block.label,
        n_samples=n_samples,
        violations=tuple(found),
        shrink_ratio=float(np.max(sep4) / w4_t),
        expand_ratio=float(np.min(extent) / (2.0 * w3_t)),
        slab_ratio=float(np.max(strip_c4) / w4_t) if strip_c4.size else 0.0,
    )
    logger.info(
        "block %s -> %s: %d violations, shrink %.3e, expand %.3e",
        report.label,
        report.target,
        len(found),
        report.shrink_ratio,
        report.expand_ratio,
    )
    return report


def verify_block_conditions(
    blocks: Sequence[IsolatingBlock],
    mapping: RescaledMap,
    n_samples: int,
    seed: int = 0,
    *,
    workers: int = 1,
) -> tuple[BlockReport, ...]:
    """Monte Carlo shrink, expand, slab and boundary-degree checks.

    Each block is checked against the block of its center image.
    """
    if n_samples < 1:
        raise ConfigError("verification needs at least one sample")
    by_label = {block.label: block for block in blocks}
    jobs = []
    for index, block in enumerate(blocks):
        target = by_label.get(image_label(block.label))
        if target is None:
            logger.warning("block %s has no target block; skipped", block.label)
            continue
        jobs.append((block, target, _rng(seed, index)))
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return tuple(
            pool.map(lambda job: _verify_block(job[0], job[1], mapping, n_samples, job[2]), jobs)
        )


def _cone_basis(mapping: RescaledMap, points: np.ndarray) -> np.ndarray:
    """Columns (E1c, E2c, Eu, Es) at each point."""
    eta, xi, action, tau = (points[..., k] for k in range(4))
    *_, partials = mapping.kick(eta, xi, action, tau)
    delta_m = np.asarray(partials.delta_m, dtype=float)
    basis = np.zeros(points.shape[:-1] + (4, 4))
    basis[..., 1, 0] = 1.0
    basis[..., 0, 1] = 1.0
    basis[..., 1, 2] = -eta
    basis[..., 3, 2] = 1.0
    basis[..., 1, 3] = -eta
    basis[..., 2, 3] = delta_m
    basis[..., 3, 3] = 1.0
    return basis


def _cone_vectors(
    rng: np.random.Generator, n: int, X: float, theta: float, axis: int
) -> np.ndarray:
    """Coordinates (c1, c2, cu, cs) inside the cone around ``axis`` (2 or 3)."""
    coords = np.zeros((n, 4))
    coords[:, axis] = rng.choice((-1.0, 1.0), n)
    budget = theta * rng.uniform(0.0, 1.0, n)
    share = rng.uniform(0.0, 1.0, n)
    other = 5 - axis
    coords[:, other] = budget * share * rng.choice((-1.0, 1.0), n)
    angle = rng.uniform(0.0, TWO_PI, n)
    radius = budget * (1.0 - share) / X
    coords[:, 0] = radius * np.cos(angle)
    coords[:, 1] = radius * np.sin(angle)
    return coords


def _in_cone(coords: np.ndarray, X: float, theta: float, axis: int) -> np.ndarray:
    other = 5 - axis
    center = np.hypot(coords[:, 0], coords[:, 1])
    return X * center + np.abs(coords[:, other]) <= theta * np.abs(coords[:, axis]) * (1.0 + 1e-9)


def _verify_cones(
    block: IsolatingBlock,
    mapping: RescaledMap,
    n_samples: int,
    X: float,
    theta_u: float,
    m_u: float,
    rng: np.random.Generator,
) -> ConeReport:
    rows, cols, base = _sample_nodes(block, rng, n_samples)
    s3 = rng.uniform(-1.0, 1.0, n_samples) * block.width_unstable
    s4 = rng.uniform(-1.0, 1.0, n_samples) * block.width_stable
    points = base + s3[:, None] * block.v3[rows, cols] + s4[:, None] * block.v4[rows, cols]
    images = _image(mapping, points)
    jacobians = np.stack([mapping.exact_jacobian(p) for p in points])
    basis_here = _cone_basis(mapping, points)
    basis_there = _cone_basis(mapping, images)
    bound = m_u / (4.0 * block.delta)

    unstable = _cone_vectors(rng, n_samples, X, theta_u, 2)
    pushed = np.einsum("nij,njk,nk->ni", jacobians, basis_here, unstable)
    pushed_coords = np.linalg.solve(basis_there, pushed[..., None])[..., 0]
    u_growth = np.abs(pushed_coords[:, 2]) / np.abs(unstable[:, 2])
    u_bad = ~_in_cone(pushed_coords, X, theta_u, 2) | (u_growth < bound)

    stable = _cone_vectors(rng, n_samples, X, theta_u, 3)
    vectors = np.einsum("nij,nj->ni", basis_there, stable)
    pulled = np.linalg.solve(jacobians, vectors[..., None])[..., 0]
    pulled_coords = np.linalg.solve(basis_here, pulled[..., None])[..., 0]
    s_growth = np.abs(pulled_coords[:, 3]) / np.abs(stable[:, 3])
    s_bad = ~_in_cone(pulled_coords, X, theta_u, 3) | (s_growth < bound)

    found = _violations("unstable-cone", block.label, points, u_bad)
    found += _violations("stable-cone", block.label, points, s_bad)
    return ConeReport(
        label=block.label,
        n_samples=n_samples,
        violations=tuple(found),
        min_unstable_expansion=float(np.min(u_growth)),
        min_stable_expansion=float(np.min(s_growth)),
        expansion_bound=bound,
        m_u=m_u,
    )


def verify_cones(
    blocks: Sequence[IsolatingBlock],
    mapping: RescaledMap,
    n_samples: int,
    X: float = 1.0,
    theta_u: float = 0.5,
    seed: int = 0,
    *,
    workers: int = 1,
) -> tuple[ConeReport, ...]:
    """Cone invariance and expansion of the differential, forward and backward."""
    if n_samples < 1:
        raise ConfigError("verification needs at least one sample")
    if X <= 0.0 or theta_u <= 0.0:
        raise ConfigError("cone parameters X and theta_u must be positive")
    m_u = min(float(np.min(np.abs(block.delta_m))) for block in blocks)
    offset = len(blocks)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return tuple(
            pool.map(
                lambda item: _verify_cones(
                    item[1], mapping, n_samples, X, theta_u, m_u, _rng(seed, offset + item[0])
                ),
                enumerate(blocks),
            )
        )


@dataclass(frozen=True, eq=False)
class ShadowOrbit:
    """Pseudo-orbit of a word.

    ``corrections`` are the per-step projections of the image onto the next
    center slab along v4; ``shifts`` are the slides along v3 that aim each
    image at that slab.
    """

    points: np.ndarray
    labels: tuple[str, ...]
    corrections: tuple[float, ...] = field(default=())
    shifts: tuple[float, ...] = field(default=())

    @property
    def max_correction(self) -> float:
        return max(self.corrections, default=0.0)

    @property
    def max_shift(self) -> float:
        return max(self.shifts, default=0.0)


def _sign_change(func, width: float, start: float) -> float | None:
    """Smallest span s ≤ width, growing from ``start``, with func(−s)·func(s) ≤ 0."""
    span = min(start, width)
    while True:
        try:
            low, high = func(-span), func(span)
        except EscapeError:
            return None
        if low * high <= 0.0:
            return span
        if span >= width:
            return None
        span = min(width, SHOOT_GROWTH * span)


def _shoot(
    point: np.ndarray, here: _Target, there: _Target, mapping: RescaledMap, step: int
) -> tuple[np.ndarray, float]:
    """Slide along v3 so the image has zero v3 coordinate in the next block."""
    r, c = here.frame(point[None, :])
    v3 = here.block.v3[r[0], c[0]]
    r_t, c_t = there.frame(_image(mapping, point[None, :]))

    def landing(s: float) -> float:
        image = _image(mapping, (point + s * v3)[None, :])
        return float(there.offsets(image, r_t, c_t)[0, 2])

    width = here.block.width_unstable
    span = _sign_change(landing, width, here.block.width_stable)
    if span is None:
        raise ShadowingError(
            f"no landing on block {there.block.label} within the v3 width", step=step, correction=width
        )
    s_star = brentq(landing, -span, span, xtol=SHADOW_XTOL * max(1.0, span))
    return point + s_star * v3, abs(s_star)


def _project_stable(image: np.ndarray, there: _Target, step: int) -> tuple[np.ndarray, float]:
    """Bisection on the v4 coordinate, moving only (I, τ)."""
    r, c = there.frame(image[None, :])
    direction = there.block.v4[r[0], c[0]].copy()
    direction[:2] = 0.0

    def coordinate(b: float) -> float:
        return float(there.offsets((image + b * direction)[None, :], r, c)[0, 3])

    offset = coordinate(0.0)
    if offset == 0.0:
        return image, 0.0
    span = _sign_change(coordinate, there.block.width_stable, 2.0 * abs(offset))
    if span is None:
        raise ShadowingError(
            f"no v4 correction onto block {there.block.label} within its width",
            step=step,
            correction=there.block.width_stable,
        )
    b_star = brentq(coordinate, -span, span, xtol=SHADOW_XTOL * max(1.0, span))
    correction = abs(b_star)
    if correction > there.block.width_stable:
        raise ShadowingError(
            f"image lies off block {there.block.label} along v4", step=step, correction=correction
        )
    return image + b_star * direction, correction


def shadow_orbit(
    word: str | Sequence[int] | SymbolWord,
    start: SepState,
    blocks: Sequence[IsolatingBlock],
    mapping: RescaledMap,
) -> ShadowOrbit:
    """Greedy shooting through the blocks prescribed by a 0/1 word.

    Each step slides the point along v3 so that its image lands on the next
    block's v3 = 0 slab, then corrects the image's (I, τ) onto the center
    slab by bisection on its v4 coordinate. A correction wider than the
    block's v4 width κ₂δ² is a shadowing failure.
    """
    labels = SymbolWord.parse(word).labels
    by_label = {block.label: block for block in blocks}
    missing = sorted(set(labels) - set(by_label))
    if missing:
        raise ConfigError(f"no block for labels {', '.join(missing)}")

    point = np.array([start.eta, start.xi, start.rescaled_action(mapping.eps), start.tau])
    first = _Target(by_label[labels[0]])
    offset = first.offsets(point[None, :])[0]
    if abs(offset[2]) > first.block.width_unstable or abs(offset[3]) > first.block.width_stable:
        raise ShadowingError(
            f"start lies outside block {labels[0]}", step=0, correction=float(abs(offset[3]))
        )

    points = [point]
    corrections: list[float] = []
    shifts: list[float] = []
    for step in range(len(labels) - 1):
        here = _Target(by_label[labels[step]])
        there = _Target(by_label[labels[step + 1]])
        point, shift = _shoot(point, here, there, mapping, step)
        points[-1] = point
        image = _image(mapping, point[None, :])[0]
        point, correction = _project_stable(image, there, step)
        points.append(point)
        shifts.append(shift)
        corrections.append(correction)
        logger.debug(
            "shadow step %d -> %s, shift %.3e, correction %.3e", step, labels[step + 1], shift, correction
        )
    return ShadowOrbit(
        points=np.array(points),
        labels=labels,
        corrections=tuple(corrections),
        shifts=tuple(shifts),
    )
