from __future__ import annotations

import math

import numpy as np
import pytest

from arnoldlab.errors import ConfigError, ConvergenceError, EscapeError, ResonanceError
from arnoldlab.fourier import periodic_grid
from arnoldlab.models import CenterCylinder
from arnoldlab.skew_product import (
    CylinderMap,
    CylinderMapFamily,
    RemainderInjection,
    ThetaField,
    canonical_coords,
    check_hypotheses,
    cocycle_residual,
    difference_family,
    drift_variance,
    iterate_ensemble,
    leaf_density,
    random_iterate,
    reduce_to_skew_product,
    skew_step,
    solve_homological,
    symbol_sign,
)

from conftest import mk_centers, mk_family, mk_potential


def _leaf(
    label: str = "00", tau_amplitude: float = 0.1, shift_integer: int = -2
) -> CenterCylinder:
    etas = np.linspace(-1.0, 1.0, 5)
    xis = periodic_grid(16)
    shape = (etas.size, xis.size)
    return CenterCylinder(
        label=label,
        etas=etas,
        xis=xis,
        action=np.full(shape, 0.05),
        tau=np.broadcast_to(tau_amplitude * np.sin(xis), shape).copy(),
        eps=2e-3,
        delta=0.05,
        a=0.05,
        shift_integer=shift_integer,
        residual_action=0.0,
        residual_tau=0.0,
        image_label=label,
        action_bar=np.zeros(shape),
        tau_first=np.zeros(shape),
        tau_second=np.zeros(shape),
    )


def test_symbol_sign() -> None:
    assert symbol_sign(0) == -1
    assert symbol_sign(1) == 1
    with pytest.raises(ConfigError):
        symbol_sign(2)


def test_harmonic_fields() -> None:
    cos = ThetaField.harmonic(1, cos=1.0)
    sin = ThetaField.harmonic(2, sin=0.5)

    total = cos + sin

    assert total.degree == 2
    assert total(0.125) == pytest.approx(math.cos(math.pi / 4) + 0.5, abs=1e-14)
    assert sin.mean_square() == pytest.approx(0.125)
    assert total.mean() == 0.0
    assert ThetaField.harmonic(1, cos=1.0, degree=3).effective_degree() == 1
    np.testing.assert_allclose((cos - cos)(np.linspace(0.0, 1.0, 5)), 0.0)


def test_field_interpolates_linearly_in_r() -> None:
    field = ThetaField(np.array([[0.0, 1.0, 0.0], [0.0, 3.0, 0.0]]), [0.0, 1.0])

    assert field.mean(0.25) == pytest.approx(1.5)
    assert field(0.4, 2.0) == pytest.approx(3.0)
    assert field.resampled([0.5]).mean() == pytest.approx(2.0)


def test_field_validation() -> None:
    with pytest.raises(ConfigError):
        ThetaField(np.zeros((1, 4)))
    with pytest.raises(ConfigError):
        ThetaField(np.zeros((2, 3)), [0.0])
    with pytest.raises(ConfigError):
        ThetaField(np.zeros((2, 3)), [1.0, 0.0])
    with pytest.raises(ConfigError):
        ThetaField.harmonic(3, cos=1.0, degree=2)
    with pytest.raises(ConfigError):
        ThetaField.harmonic(1, cos=1.0, degree=3).padded(2)


def test_field_dict_errors() -> None:
    data = ThetaField.harmonic(1, sin=1.0).to_dict()

    assert ThetaField.from_dict(data)(0.25) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        ThetaField.from_dict({"real": [[0.0, 1.0, 0.0]]})
    with pytest.raises(ConfigError):
        ThetaField.from_dict({**data, "degree": 5})


def test_family_average_and_difference() -> None:
    F = mk_family(shared_v=0.5, amplitude=0.8)

    assert F.expected("v")(0.0) == pytest.approx(0.5)
    assert F.difference("v")(0.25) == pytest.approx(0.8)
    assert F.with_eps(0.02).eps == 0.02
    again = CylinderMapFamily.from_dict(F.to_dict())
    assert again.maps[-1].v(0.3) == pytest.approx(F.maps[-1].v(0.3), abs=1e-14)


def test_family_validation() -> None:
    zero = ThetaField.zero()
    one_map = CylinderMap(u=zero, v=zero, w=zero)
    with pytest.raises(ConfigError):
        CylinderMapFamily(maps={1: one_map}, eps=0.01)
    with pytest.raises(ConfigError):
        CylinderMapFamily(maps={1: one_map, -1: one_map}, eps=1.0)
    with pytest.raises(ConfigError):
        CylinderMapFamily.from_dict({"eps": 0.01, "maps": {"1": {}}})
    with pytest.raises(ConfigError):
        CylinderMap.from_dict({"u": zero.to_dict()})


def test_hypotheses_of_a_shared_cosine_family() -> None:
    report = check_hypotheses(mk_family(shared_v=0.5), degree=2)

    assert report["H0"].passed
    assert report["H1"].margin == pytest.approx(math.sqrt(0.5), rel=1e-12)
    assert report["H2"].margin == pytest.approx(0.5)
    assert report["H3"].passed
    assert not report["H4"].passed
    assert report["H5"].passed
    assert report["H5"].margin == pytest.approx(math.pi, rel=1e-9)
    assert not report.passed
    with pytest.raises(KeyError):
        report["H6"]


def test_hypotheses_of_sine_and_cosine() -> None:
    sin, cos = ThetaField.harmonic(1, sin=1.0), ThetaField.harmonic(1, cos=1.0)
    zero = ThetaField.zero()
    F = CylinderMapFamily(
        maps={1: CylinderMap(u=zero, v=sin, w=zero), -1: CylinderMap(u=zero, v=cos, w=zero)},
        eps=0.01,
    )

    report = check_hypotheses(F)

    assert report["H0"].passed
    assert report["H1"].margin == pytest.approx(1.0)
    assert report["H2"].margin == pytest.approx(0.25)


def test_common_zero_and_degenerate_average() -> None:
    report = check_hypotheses(difference_family(0.01))

    assert not report["H1"].passed
    assert not report["H5"].passed
    assert report["H2"].passed


def test_resonant_part_stays_below_the_degree() -> None:
    zero = ThetaField.zero(2)
    common = ThetaField.harmonic(2, cos=0.5, degree=2)
    kick = ThetaField.harmonic(1, sin=1.0, degree=2)
    F = CylinderMapFamily(
        maps={
            1: CylinderMap(u=zero, v=common + kick, w=zero),
            -1: CylinderMap(u=zero, v=common - kick, w=zero),
        },
        eps=0.01,
    )

    assert not check_hypotheses(F, degree=2)["H5"].passed
    assert check_hypotheses(F, degree=3)["H5"].margin == pytest.approx(2 * math.pi, rel=1e-9)
    linear = check_hypotheses(mk_family(shared_v=0.5))["H5"]
    assert not linear.passed
    assert linear.margin == 0.0


def test_degree_hypothesis() -> None:
    report = check_hypotheses(mk_family(harmonic=2), degree=1)

    assert not report["H3"].passed
    assert report["H3"].margin == -1.0


def test_homological_solution_closes_the_cocycle() -> None:
    ev = (ThetaField.harmonic(1, cos=1.0) + ThetaField.harmonic(2, sin=0.3)).coefficients[0]

    s1 = solve_homological(ev, 0.3, 2)

    assert s1[2] == 0.0
    assert cocycle_residual(s1, ev, 0.3) < 1e-12


def test_small_divisor_is_rejected() -> None:
    ev = ThetaField.harmonic(1, cos=1.0).coefficients[0]

    with pytest.raises(ResonanceError):
        solve_homological(ev, 0.0, 1)
    with pytest.raises(ResonanceError):
        solve_homological(ev, 1e-5, 1)
    assert np.any(solve_homological(ev, 1e-5, 1, guard=1e-6) != 0.0)


def test_drift_and_variance_of_difference_family() -> None:
    dv = drift_variance(difference_family(0.01, amplitude=0.8), 0.3)

    assert dv.b == 0.0
    assert dv.sigma2 == pytest.approx(0.32)


def test_drift_from_expected_potential() -> None:
    dv = drift_variance(mk_family(shared_v=0.5, drift_w=0.2), 0.3)

    assert dv.b == pytest.approx(0.2 - 0.0625, abs=1e-12)
    assert dv.sigma2 == pytest.approx(0.5)


def test_skew_step_with_remainder() -> None:
    F = mk_family(amplitude=0.0)
    injection = RemainderInjection(amplitude=1.0)
    eps = 0.01

    theta, r = skew_step(F, np.array([0.25]), np.array([0.1]), np.array([1]), eps, injection)

    assert theta[0] == pytest.approx(0.35 + eps ** (7 / 6), abs=1e-14)
    assert r[0] == pytest.approx(0.1, abs=1e-15)


def test_random_iteration_is_reproducible() -> None:
    F = mk_family(shared_v=0.5)

    first = random_iterate(F, 11, 200, (0.1, 0.2))
    second = random_iterate(F, 11, 200, (0.1, 0.2))

    assert len(first) == 201
    np.testing.assert_array_equal(first.r, second.r)
    np.testing.assert_array_equal(first.symbols, second.symbols)
    assert set(np.unique(first.symbols)) <= {-1, 1}
    assert np.all((first.theta >= 0.0) & (first.theta < 1.0))


def test_deterministic_drift_orbit() -> None:
    F = mk_family(amplitude=0.0, mean_v=1.0)

    path = random_iterate(F, 0, 3, (0.1, 0.2))

    np.testing.assert_allclose(path.r, [0.2, 0.21, 0.22, 0.23], atol=1e-14)
    np.testing.assert_allclose(path.theta, [0.1, 0.3, 0.51, 0.73], atol=1e-14)
    with pytest.raises(ConfigError):
        random_iterate(F, 0, -1, (0.0, 0.0))
    with pytest.raises(EscapeError):
        random_iterate(F, 0, 10, (0.0, 0.0), band=(-1.0, 0.05))


def test_ensemble_stops_at_the_band() -> None:
    F = mk_family(amplitude=0.0, mean_v=1.0)
    rng = np.random.default_rng(0)

    theta, r, stopped = iterate_ensemble(
        F, np.zeros(4), np.zeros(4), 10, rng, band=(-1.0, 0.055)
    )

    assert np.all(stopped)
    np.testing.assert_allclose(r, 0.06, atol=1e-14)
    assert theta.shape == (4,)


def test_ensemble_streams_are_reproducible() -> None:
    F = mk_family(shared_v=0.5)
    start = np.linspace(0.0, 0.9, 10)

    a = iterate_ensemble(F, start, start, 50, np.random.default_rng(5), eps=0.02)
    b = iterate_ensemble(F, start, start, 50, np.random.default_rng(5), eps=0.02)

    np.testing.assert_array_equal(a[1], b[1])
    assert not np.any(a[2])


def test_leaf_density_and_canonical_chart() -> None:
    center = _leaf()
    eta = center.etas[:, None]

    density = leaf_density(center, 2e-3)
    chart = canonical_coords(density)

    np.testing.assert_allclose(density.rho, 1.0 + 0.1 * eta * np.cos(center.xis), atol=1e-12)
    assert density.max_deviation == pytest.approx(0.1, abs=1e-12)
    assert chart.max_r_slope_error < 1e-12
    assert chart.jacobian_error < 1e-10
    assert chart.r(0.3) == pytest.approx(0.3, abs=1e-12)
    np.testing.assert_allclose(chart.periodic, 0.1 * eta * np.sin(center.xis), atol=1e-12)
    xi = chart.xi_of(0.5, 2.0)
    assert float(chart.theta(0.5, xi)) == pytest.approx(2.0, abs=1e-12)


def test_folded_leaf_is_rejected() -> None:
    with pytest.raises(ConvergenceError):
        leaf_density(_leaf(tau_amplitude=2.0), 2e-3)


def test_reduction_guards() -> None:
    M = mk_potential()
    with pytest.raises(ConfigError):
        reduce_to_skew_product({"00": _leaf()}, 2e-3, 0.05, M)
    with pytest.raises(ConfigError):
        reduce_to_skew_product([_leaf("00"), _leaf("11")], 1e-3, 0.05, M)
    with pytest.raises(ConfigError):
        reduce_to_skew_product(
            [_leaf("00", shift_integer=1), _leaf("11", shift_integer=1)], 2e-3, 0.05, M
        )


@pytest.mark.slow
def test_reduction_of_solved_leaves() -> None:
    centers = mk_centers(n_eta=5, n_xi=8)
    eps, delta = centers["00"].eps, centers["00"].delta

    reduction = reduce_to_skew_product(centers, eps, delta, mk_potential())

    assert reduction.scale == 2.0
    assert reduction.family.eps == pytest.approx(2.0 * eps)
    assert set(reduction.charts) == {"00", "11"}
    assert reduction.family.degree == 3
    assert math.isfinite(reduction.cocycle_error)
