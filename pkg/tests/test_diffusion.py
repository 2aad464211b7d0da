from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from arnoldlab.diffusion import (
    affine_fit,
    chi_square_normal,
    diffusion_time,
    histogram,
    initial_cloud,
    is_unimodal,
    ks_distance,
    run_full_ensemble,
    run_model_ensemble,
    sample_moments,
    simulate_ito,
    summarize,
    variance_ratio,
)
from arnoldlab.errors import ConfigError
from arnoldlab.models import EnsembleConfig, Histogram
from arnoldlab.skew_product import difference_family
from arnoldlab.trig import arnold


def test_moments() -> None:
    mean, variance = sample_moments(np.array([1.0, 2.0, 3.0, 4.0]))

    assert mean == 2.5
    assert variance == pytest.approx(5.0 / 3.0)
    assert sample_moments(np.array([7.0])) == (7.0, 0.0)
    with pytest.raises(ConfigError):
        sample_moments(np.array([]))


def test_histogram_tails() -> None:
    hist = histogram(np.array([0.1, 0.5, 0.9, -1.0, 2.0]), 4, (0.0, 1.0))

    assert hist.counts.tolist() == [1, 0, 1, 1]
    assert (hist.underflow, hist.overflow, hist.total) == (1, 1, 5)
    np.testing.assert_allclose(hist.centers, [0.125, 0.375, 0.625, 0.875])


def test_histogram_ranges() -> None:
    assert histogram(np.array([2.0, 2.0]), 2).edges.tolist() == [1.5, 2.0, 2.5]
    with pytest.raises(ConfigError):
        histogram(np.array([1.0]), 0)
    with pytest.raises(ConfigError):
        histogram(np.array([1.0]), 3, (1.0, 1.0))


def test_ensemble_config() -> None:
    assert EnsembleConfig(eps=0.1, s=1.0, n_samples=1, seed=0).n_steps == 100
    assert EnsembleConfig(eps=0.1, s=1e-6, n_samples=1, seed=0).n_steps == 1
    with pytest.raises(ConfigError):
        EnsembleConfig(eps=0.2, s=1.0, n_samples=1, seed=0)
    with pytest.raises(ConfigError):
        EnsembleConfig(eps=0.1, s=1.0, n_samples=1, seed=0, theta_law="normal")


def test_model_ensemble_does_not_depend_on_workers() -> None:
    cfg = EnsembleConfig(eps=0.1, s=0.1, n_samples=1500, seed=4, r0=0.3)
    F = difference_family(0.1)

    serial = run_model_ensemble(cfg, F)
    threaded = run_model_ensemble(cfg, F, workers=3)

    assert serial.n_samples == 1500
    np.testing.assert_array_equal(serial.samples, threaded.samples)
    assert serial.label == "s=0.1"


def test_model_variance_grows_like_sigma_squared_times_s() -> None:
    cfg = EnsembleConfig(eps=0.05, s=1.0, n_samples=4000, seed=1, r0=0.3)

    estimate = run_model_ensemble(cfg, difference_family(0.05))

    assert estimate.variance == pytest.approx(0.5, rel=0.1)
    assert abs(estimate.mean) < 0.05
    assert estimate.stopped == 0


def test_band_stops_trajectories() -> None:
    cfg = EnsembleConfig(eps=0.1, s=1.0, n_samples=200, seed=2, r0=0.3, band=(0.25, 0.35))

    estimate = run_model_ensemble(cfg, difference_family(0.1))

    assert estimate.stopped > 0
    assert np.all(np.abs(estimate.samples) <= 0.05 + 0.1)


def test_ito_reference() -> None:
    samples = simulate_ito(0.5, 1.0, 1.0, 4000, 0.01, 3)

    mean, variance = sample_moments(samples)
    assert mean == pytest.approx(0.5, abs=0.06)
    assert variance == pytest.approx(1.0, rel=0.1)
    np.testing.assert_array_equal(samples[:100], simulate_ito(0.5, 1.0, 1.0, 4000, 0.01, 3, workers=2)[:100])


def test_ito_state_dependent_coefficients() -> None:
    samples = simulate_ito(lambda x: -x, lambda x: np.zeros_like(x), 1.0, 3, 0.001, 0, x0=2.0)

    np.testing.assert_allclose(samples, 2.0 * (math.exp(-1.0) - 1.0), rtol=1e-3)


def test_ito_step_guard() -> None:
    with pytest.raises(ConfigError):
        simulate_ito(0.0, 1.0, 1.0, 10, 0.05, 0)
    with pytest.raises(ConfigError):
        simulate_ito(0.0, 1.0, 0.0, 10, 0.001, 0)


def test_ks_distance() -> None:
    a = np.linspace(0.0, 1.0, 50)

    assert ks_distance(a, a) == 0.0
    assert ks_distance(a, a + 5.0) == 1.0
    with pytest.raises(ConfigError):
        ks_distance(a, np.array([]))


def test_diffusion_time() -> None:
    assert diffusion_time(0.1) == pytest.approx(100.0 * math.log(10.0))
    with pytest.raises(ConfigError):
        diffusion_time(1.0)


def test_initial_cloud_lies_in_the_ball() -> None:
    states = initial_cloud(0.01, 1.4, 500, np.random.default_rng(0))

    assert states.shape == (500, 5)
    assert np.all(np.hypot(states[:, 0], states[:, 1]) <= 0.1)
    assert np.all(np.abs(states[:, 2] - 1.4) <= 0.01)
    assert np.all((states[:, 3:] >= 0.0) & (states[:, 3:] < 2 * math.pi))


def test_full_flow_ensemble_on_short_horizons() -> None:
    seen = []

    estimates = run_full_ensemble(
        0.01, math.sqrt(2.0), arnold(), (2.0, 1.0), 8, seed=0, dt=0.05, base_time=1.0,
        on_chunk=seen.append,
    )

    assert [e.label for e in estimates] == ["1T", "2T"]
    assert seen == [8]
    for estimate in estimates:
        assert estimate.n_samples == 8
        assert estimate.stopped == 0
        assert np.all(np.abs(estimate.samples) < 0.1)


def test_full_flow_guards() -> None:
    with pytest.raises(ConfigError):
        run_full_ensemble(0.2, 1.0, arnold(), (1.0,), 4, seed=0, dt=0.05)
    with pytest.raises(ConfigError):
        run_full_ensemble(0.0, 1.0, arnold(), (1.0,), 4, seed=0, dt=0.05)
    with pytest.raises(ConfigError):
        run_full_ensemble(0.01, 1.0, arnold(), (), 4, seed=0, dt=0.05, base_time=1.0)
    with pytest.raises(ConfigError):
        run_full_ensemble(0.01, 1.0, arnold(), (1.0,), 0, seed=0, dt=0.05, base_time=1.0)


def test_affine_fit_and_ratio() -> None:
    fit = affine_fit([1.0, 2.0, 3.0], [2.1, 4.1, 6.1])

    assert fit.slope == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(0.1)
    assert fit.r_squared == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        affine_fit([1.0], [1.0])

    first = summarize(np.array([-1.0, 1.0]))
    second = summarize(np.array([-2.0, 2.0]))
    assert variance_ratio(first, second) == pytest.approx(4.0)
    with pytest.raises(ConfigError):
        variance_ratio(summarize(np.array([1.0, 1.0])), second)


def _bumps(*centers: float) -> Histogram:
    edges = np.linspace(-4.0, 4.0, 41)
    x = 0.5 * (edges[:-1] + edges[1:])
    counts = sum(np.exp(-0.5 * ((x - c) / 0.5) ** 2) for c in centers)
    return Histogram(counts=np.rint(1000.0 * counts).astype(int), edges=edges)


def test_unimodality() -> None:
    assert is_unimodal(_bumps(0.0))
    assert not is_unimodal(_bumps(-2.0, 2.0))
    assert not is_unimodal(Histogram(counts=np.zeros(10, dtype=int), edges=np.linspace(0, 1, 11)))


def test_chi_square_against_the_normal_law() -> None:
    quantiles = norm.ppf((np.arange(4000) + 0.5) / 4000)

    good = chi_square_normal(quantiles)
    bad = chi_square_normal(np.linspace(-3.0, 3.0, 4000))

    assert good.passed
    assert good.dof > 10
    assert not bad.passed
    assert chi_square_normal(2.0 + 0.5 * quantiles, loc=2.0, scale=0.5, range=(0.0, 4.0)).passed
