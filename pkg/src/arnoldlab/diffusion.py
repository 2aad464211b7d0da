"""Monte Carlo ensembles and the statistics used to compare them.

Every ensemble is split into fixed chunks of ``CHUNK`` trajectories. Chunk c
draws from Philox keyed by SeedSequence(seed, spawn_key=(c,)), so the result
does not depend on how many workers run the chunks.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import chisquare, ks_2samp, linregress, norm

from .config import CHUNK
from .errors import ConfigError
from .hamiltonian import integrate_ensemble
from .models import TWO_PI, DiffusionEstimate, EnsembleConfig, Histogram
from .skew_product import CylinderMapFamily, RemainderInjection, iterate_ensemble
from .trig import TrigPolynomial

logger = logging.getLogger(__name__)

ITO_STREAM = 1
FULL_FLOW_STREAM = 2
MIN_EXPECTED = 5.0

Coefficient = float | Callable[[np.ndarray], np.ndarray]


def chunk_rng(seed: int, chunk: int, stream: int = 0) -> np.random.Generator:
    key = (chunk,) if stream == 0 else (stream, chunk)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _chunks(n_samples: int) -> list[tuple[int, int]]:
    """(chunk index, chunk size) pairs covering n_samples."""
    return [(c, min(CHUNK, n_samples - c * CHUNK)) for c in range(math.ceil(n_samples / CHUNK))]


def _map_chunks(work: Callable[[int, int], object], n_samples: int, workers: int) -> list:
    chunks = _chunks(n_samples)
    if workers <= 1:
        return [work(c, size) for c, size in chunks]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: work(*item), chunks))


def sample_moments(samples: np.ndarray) -> tuple[float, float]:
    """Mean and unbiased variance with compensated sums."""
    values = np.asarray(samples, dtype=float).ravel()
    n = values.size
    if n == 0:
        raise ConfigError("moments need at least one sample")
    mean = math.fsum(values.tolist()) / n
    if n == 1:
        return mean, 0.0
    variance = math.fsum(((values - mean) ** 2).tolist()) / (n - 1)
    return mean, variance


def histogram(
    samples: np.ndarray, n_bins: int, range: tuple[float, float] | None = None
) -> Histogram:
    """Counts on n_bins equal bins; samples outside ``range`` go to under/overflow."""
    if n_bins < 1:
        raise ConfigError(f"a histogram needs at least one bin, got {n_bins}")
    values = np.asarray(samples, dtype=float).ravel()
    if range is None:
        if values.size == 0:
            range = (0.0, 1.0)
        else:
            low, high = float(values.min()), float(values.max())
            range = (low - 0.5, high + 0.5) if low == high else (low, high)
    low, high = float(range[0]), float(range[1])
    if not low < high:
        raise ConfigError(f"histogram range must be increasing, got {range}")
    underflow = int(np.count_nonzero(values < low))
    overflow = int(np.count_nonzero(values > high))
    inside = values[(values >= low) & (values <= high)]
    counts, edges = np.histogram(inside, bins=n_bins, range=(low, high))
    return Histogram(counts=counts, edges=edges, underflow=underflow, overflow=overflow)


def summarize(
    samples: np.ndarray,
    *,
    n_bins: int = 50,
    label: str = "",
    stopped: int = 0,
    ks: float | None = None,
) -> DiffusionEstimate:
    samples = np.asarray(samples, dtype=float)
    mean, variance = sample_moments(samples)
    return DiffusionEstimate(
        samples=samples,
        mean=mean,
        variance=variance,
        histogram=histogram(samples, n_bins),
        ks=ks,
        stopped=stopped,
        label=label,
    )


def run_model_ensemble(
    cfg: EnsembleConfig,
    F: CylinderMapFamily,
    *,
    workers: int = 1,
    remainder: RemainderInjection | None = None,
    n_bins: int = 50,
) -> DiffusionEstimate:
    """Samples of r_n − r₀ after n = round(s/ε²) random steps.

    Trajectories leaving ``cfg.band`` are stopped and keep their stopped value.
    """
    n_steps = cfg.n_steps

    def work(chunk: int, size: int) -> tuple[np.ndarray, int]:
        rng = chunk_rng(cfg.seed, chunk)
        if cfg.theta_law == "uniform":
            theta = rng.uniform(0.0, 1.0, size)
        else:
            theta = np.zeros(size)
        r = np.full(size, cfg.r0)
        _, r_final, stopped = iterate_ensemble(
            F, theta, r, n_steps, rng, eps=cfg.eps, remainder=remainder, band=cfg.band
        )
        return r_final - cfg.r0, int(np.count_nonzero(stopped))

    parts = _map_chunks(work, cfg.n_samples, workers)
    samples = np.concatenate([p[0] for p in parts])
    stopped = sum(p[1] for p in parts)
    if stopped:
        logger.info("%d of %d trajectories stopped at the band", stopped, cfg.n_samples)
    return summarize(samples, n_bins=n_bins, label=f"s={cfg.s:g}", stopped=stopped)


def _as_function(value: Coefficient) -> Callable[[np.ndarray], np.ndarray]:
    if callable(value):
        return value
    constant = float(value)
    return lambda x: np.full_like(x, constant)


def simulate_ito(
    b: Coefficient,
    sigma: Coefficient,
    s: float,
    n_samples: int,
    dt: float,
    seed: int,
    *,
    x0: float = 0.0,
    workers: int = 1,
) -> np.ndarray:
    """Euler–Maruyama samples of X_s − X₀ for dX = b dt + σ dB."""
    if s <= 0.0 or n_samples < 1:
        raise ConfigError("simulate_ito needs s > 0 and at least one sample")
    if not 0.0 < dt <= s / 100.0:
        raise ConfigError(f"dt = {dt} must lie in (0, s/100] for s = {s}")
    n_steps = math.ceil(s / dt - 1e-9)
    h = s / n_steps
    drift, diffusion = _as_function(b), _as_function(sigma)

    def work(chunk: int, size: int) -> np.ndarray:
        rng = chunk_rng(seed, chunk, ITO_STREAM)
        x = np.full(size, float(x0))
        root_h = math.sqrt(h)
        for _ in range(n_steps):
            x = x + drift(x) * h + diffusion(x) * root_h * rng.standard_normal(size)
        return x - x0

    return np.concatenate(_map_chunks(work, n_samples, workers))


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float).ravel(), np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ConfigError("the KS distance needs two nonempty samples")
    return float(ks_2samp(a, b).statistic)


def diffusion_time(eps: float) -> float:
    """T = ε⁻² ln(1/ε)."""
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"the diffusion time needs eps in (0, 1), got {eps}")
    return math.log(1.0 / eps) / (eps * eps)


def initial_cloud(
    eps: float, I_star: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform points of B²_{√ε}(0) × B_ε(I*) × T² as rows (p, q, I, φ, t)."""
    radius = math.sqrt(eps) * np.sqrt(rng.uniform(0.0, 1.0, size))
    angle = rng.uniform(0.0, TWO_PI, size)
    states = np.empty((size, 5))
    states[:, 0] = radius * np.cos(angle)
    states[:, 1] = radius * np.sin(angle)
    states[:, 2] = I_star + eps * rng.uniform(-1.0, 1.0, size)
    states[:, 3] = rng.uniform(0.0, TWO_PI, size)
    states[:, 4] = rng.uniform(0.0, TWO_PI, size)
    return states


def run_full_ensemble(
    eps: float,
    I_star: float,
    P: TrigPolynomial,
    multipliers: Sequence[float],
    n_samples: int,
    *,
    seed: int,
    dt: float,
    base_time: float = 0.0,
    workers: int = 1,
    n_bins: int = 50,
    on_chunk: Callable[[int], None] | None = None,
) -> list[DiffusionEstimate]:
    """I(m·T) − I* for each horizon multiplier m, integrating the full flow.

    ``P`` is the factor P(φ, t) of the (cos q − 1)·P perturbation. Samples
    whose state stops being finite are excluded and counted as stopped.
    """
    if not 0.0 <= eps <= 0.1:
        raise ConfigError(f"eps must lie in [0, 0.1], got {eps}")
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    if not multipliers or any(m <= 0.0 for m in multipliers):
        raise ConfigError("horizon multipliers must be positive")
    if base_time > 0.0:
        T = base_time
    elif eps > 0.0:
        T = diffusion_time(eps)
    else:
        raise ConfigError("eps = 0 needs an explicit base time")
    full = P.with_separatrix_factor() if not (P.is_zero or P.depends_on_q) else P
    horizons = sorted(float(m) for m in multipliers)
    targets = [round(m * T / dt) for m in horizons]

    def work(chunk: int, size: int) -> list[np.ndarray]:
        rng = chunk_rng(seed, chunk, FULL_FLOW_STREAM)
        states = initial_cloud(eps, I_star, size, rng)
        done = 0
        out = []
        for target in targets:
            states = integrate_ensemble(states, eps, full, dt, target - done)
            done = target
            out.append(states[:, 2] - I_star)
        if on_chunk is not None:
            on_chunk(size)
        return out

    parts = _map_chunks(work, n_samples, workers)
    estimates = []
    for index, m in enumerate(horizons):
        samples = np.concatenate([p[index] for p in parts])
        finite = np.isfinite(samples)
        failed = int(np.count_nonzero(~finite))
        if failed == samples.size:
            raise ConfigError(f"every trajectory failed before {m:g}T")
        estimates.append(
            summarize(samples[finite], n_bins=n_bins, label=f"{m:g}T", stopped=failed)
        )
        logger.info("horizon %gT: variance %.3e (%d failed)", m, estimates[-1].variance, failed)
    return estimates


@dataclass(frozen=True)
class AffineFit:
    slope: float
    intercept: float
    r_squared: float


def affine_fit(s_values: Sequence[float], variances: Sequence[float]) -> AffineFit:
    if len(s_values) != len(variances) or len(s_values) < 2:
        raise ConfigError("an affine fit needs at least two matching points")
    fit = linregress(np.asarray(s_values, dtype=float), np.asarray(variances, dtype=float))
    return AffineFit(slope=float(fit.slope), intercept=float(fit.intercept), r_squared=float(fit.rvalue**2))


def variance_ratio(first: DiffusionEstimate, second: DiffusionEstimate) -> float:
    if first.variance <= 0.0:
        raise ConfigError(f"reference estimate {first.label!r} has zero variance")
    return second.variance / first.variance


def is_unimodal(hist: Histogram, *, window: int = 5, significance: float = 3.0) -> bool:
    """At most one peak of the smoothed counts that stands out of the noise.

    A peak counts when its prominence exceeds ``significance`` Poisson
    standard deviations of the largest bin.
    """
    counts = np.asarray(hist.counts, dtype=float)
    if counts.sum() == 0:
        return False
    kernel = np.ones(max(1, window)) / max(1, window)
    smooth = np.convolve(np.pad(counts, (1, 1)), kernel, mode="same")
    peak = float(smooth.max())
    peaks, _ = find_peaks(smooth, prominence=max(significance * math.sqrt(peak), 0.05 * peak))
    return len(peaks) <= 1


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha


def _merged(observed: list[float], expected: list[float]) -> tuple[np.ndarray, np.ndarray]:
    """Merge neighbouring cells until each expects at least MIN_EXPECTED counts."""
    obs_out: list[float] = []
    exp_out: list[float] = []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected, strict=True):
        acc_o += o
        acc_e += e
        if acc_e >= MIN_EXPECTED:
            obs_out.append(acc_o)
            exp_out.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0.0 or acc_o > 0.0:
        if exp_out:
            obs_out[-1] += acc_o
            exp_out[-1] += acc_e
        else:
            obs_out.append(acc_o)
            exp_out.append(acc_e)
    return np.array(obs_out), np.array(exp_out)


def chi_square_normal(
    samples: np.ndarray,
    n_bins: int = 50,
    range: tuple[float, float] = (-4.0, 4.0),
    *,
    loc: float = 0.0,
    scale: float = 1.0,
    alpha: float = 0.01,
) -> ChiSquareResult:
    """Pearson test of binned samples against N(loc, scale²); tails are cells too."""
    hist = histogram(samples, n_bins, range)
    total = hist.total
    cdf = norm.cdf(hist.edges, loc=loc, scale=scale)
    expected = [total * cdf[0], *(total * np.diff(cdf)).tolist(), total * (1.0 - cdf[-1])]
    observed = [hist.underflow, *hist.counts.tolist(), hist.overflow]
    obs, exp = _merged([float(o) for o in observed], [float(e) for e in expected])
    if obs.size < 2:
        raise ConfigError("too few populated cells for a chi-square test")
    exp = exp * (obs.sum() / exp.sum())
    result = chisquare(obs, exp)
    return ChiSquareResult(
        statistic=float(result.statistic),
        dof=int(obs.size - 1),
        p_value=float(result.pvalue),
        alpha=alpha,
    )
