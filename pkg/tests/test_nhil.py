from __future__ import annotations

import math

import numpy as np
import pytest

from arnoldlab.config import load_calibration
from arnoldlab.errors import ConfigError, ConvergenceError, ShadowingError, WindowError
from arnoldlab.melnikov import MelnikovPotential, melnikov_partials
from arnoldlab.models import BlockVariant, CenterCylinder, Frame, SepState, SymbolWord
from arnoldlab.nhil import (
    CenterGrid,
    build_blocks,
    center_level,
    image_label,
    m1_branch,
    matched_eps,
    quantize_delta,
    shadow_orbit,
    shift_map,
    shift_relation_error,
    solve_fixed_centers,
    verify_block_conditions,
    verify_cones,
    wrap_difference,
)
from arnoldlab.sepmap import RescaledMap
from arnoldlab.trig import normalized_class

from conftest import mk_centers, mk_grid, mk_potential

KAPPA = (0.05, 0.5, 0.2, 0.5)


@pytest.fixture(scope="module")
def centers() -> dict[str, CenterCylinder]:
    return mk_centers(n_eta=5, n_xi=8)


@pytest.fixture(scope="module")
def mapping(centers: dict[str, CenterCylinder]) -> RescaledMap:
    eps = centers["00"].eps
    return RescaledMap(mk_potential(a=0.05), eps, load_calibration().kappa(1))


def test_labels_and_levels() -> None:
    assert image_label("01") == "10"
    assert image_label("11") == "11"
    assert center_level("00", 0.1) == 0.1
    assert center_level("10", 0.1) == pytest.approx(0.1 * math.exp(-math.pi))
    np.testing.assert_allclose(wrap_difference([3 * math.pi, -0.5]), [-math.pi, -0.5])


def test_quantized_delta_makes_the_log_level_a_full_turn() -> None:
    cal = load_calibration()

    q = quantize_delta(1e-4, 1e-2, cal)

    assert q.n == -3
    assert math.log(cal.kappa(1) * q.eps * q.delta) == pytest.approx(q.log_level, rel=1e-12)
    assert q.delta == pytest.approx(2.08e-3, rel=1e-2)


def test_quantized_delta_window() -> None:
    with pytest.raises(WindowError):
        quantize_delta(1e-4, 1e-5)
    assert quantize_delta(1e-4, 1e-5, check_window=False).n == -4
    with pytest.raises(ConfigError):
        quantize_delta(0.0, 1e-2)


def test_matched_eps_hits_the_power_law() -> None:
    q = matched_eps(2e-3, 0.5)

    assert q.n == -2
    assert q.eps == pytest.approx(2.318e-3, rel=1e-3)
    assert q.delta == pytest.approx(q.eps**0.5, rel=1e-12)
    with pytest.raises(ConfigError):
        matched_eps(2e-3, 1.0)


def test_grid_nearest_node() -> None:
    grid = CenterGrid.uniform(5, 8, (-1.0, 1.0))

    rows, cols = grid.nearest(np.array([0.26, 5.0]), np.array([2 * math.pi - 0.1, 0.0]))

    assert grid.shape == (5, 8)
    assert rows.tolist() == [3, 4]
    assert cols.tolist() == [0, 0]
    with pytest.raises(ConfigError):
        CenterGrid.uniform(1, 8)
    with pytest.raises(ConfigError):
        CenterGrid.uniform(3, 2)


def test_shift_map_is_reduced() -> None:
    grid = mk_grid(n_eta=3, n_xi=8)

    sigma = shift_map(grid, -4 * math.pi - 0.3)

    assert np.all((sigma >= 0.0) & (sigma < 2 * math.pi))
    eta, xi = grid.mesh()
    np.testing.assert_allclose(
        wrap_difference(sigma - xi - eta * (4 * math.pi + 0.3)), 0.0, atol=1e-12
    )


def test_leading_branch_sits_on_the_symbol() -> None:
    M = MelnikovPotential(normalized_class(0.0), frame=Frame.SECTION)

    tau = m1_branch(M, mk_grid(n_eta=3, n_xi=8), 1)

    np.testing.assert_allclose(tau, math.pi, atol=1e-12)


def test_perturbed_branch_zeroes_m1() -> None:
    M = mk_potential(a=0.05)
    grid = mk_grid(n_eta=3, n_xi=8)
    eta, xi = grid.mesh()

    tau = m1_branch(M, grid, 0)

    np.testing.assert_allclose(melnikov_partials(M, eta, xi, tau).m1, 0.0, atol=1e-10)
    assert float(np.max(np.abs(tau))) < 0.5


def test_fixed_centers_are_invariant(centers: dict[str, CenterCylinder]) -> None:
    for label in ("00", "11"):
        center = centers[label]
        assert center.image_label == label
        assert center.shift_integer == -2
        assert center.action.shape == (5, 8)
        assert center.max_residual < 1e-5
        assert float(np.max(np.abs(center.action / center.delta - 1.0))) < 0.5
        offset = wrap_difference(center.tau - center.current_symbol * math.pi)
        assert float(np.max(np.abs(offset))) < 0.3


def test_shift_relation_of_fixed_centers(centers: dict[str, CenterCylinder]) -> None:
    center = centers["00"]

    assert shift_relation_error(center, center) < 0.5


def test_center_solve_guards() -> None:
    M = mk_potential()
    with pytest.raises(ConfigError):
        solve_fixed_centers(M, 1e-3, 0.05, 0.05, 2, mk_grid(n_eta=3, n_xi=8))
    with pytest.raises(ConfigError):
        solve_fixed_centers(M, 1e-3, 0.05, 0.05, 0, mk_grid(n_eta=3, n_xi=8))


def test_blocks_follow_the_eigenframe(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)

    assert [block.label for block in blocks] == ["00", "11"]
    for block in blocks:
        assert block.variant is BlockVariant.STABLE
        assert block.v3.shape == (5, 8, 4)
        np.testing.assert_allclose(np.linalg.norm(block.v4, axis=-1), 1.0)
        assert np.all(np.abs(block.lambda_unstable) > 1.0)
        assert block.width_unstable == pytest.approx(0.05 * block.center.level)
        assert block.width_stable == pytest.approx(0.5 * block.delta**2)
        assert block.min_frame_angle >= 0.2


def test_unstable_variant_widths(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    (block,) = build_blocks([centers["11"]], mapping, KAPPA, variant=BlockVariant.UNSTABLE)

    assert block.width_unstable == pytest.approx(0.05 * block.delta**2)
    assert block.width_stable == pytest.approx(0.5 * block.delta)


def test_frame_angle_requirement(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    with pytest.raises(ConvergenceError):
        build_blocks([centers["00"]], mapping, (0.05, 0.5, 1.6, 0.5))


def test_shadowing_needs_blocks_for_every_label(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)
    start = SepState.from_rescaled(0.0, 0.0, centers["00"].delta, 0.0, mapping.eps)

    with pytest.raises(ConfigError):
        shadow_orbit("01", start, blocks, mapping)
    with pytest.raises(ConfigError):
        shadow_orbit("012", start, blocks, mapping)
    with pytest.raises(ConfigError):
        shadow_orbit("", start, blocks, mapping)


def test_shadowing_start_outside_block(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)
    start = SepState.from_rescaled(0.0, 0.0, 1.5 * centers["00"].delta, 0.5, mapping.eps)

    with pytest.raises(ShadowingError) as info:
        shadow_orbit("00", start, blocks, mapping)
    assert info.value.step == 0


def test_verification_rejects_empty_samples(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)

    with pytest.raises(ConfigError):
        verify_block_conditions(blocks, mapping, 0)
    with pytest.raises(ConfigError):
        verify_cones(blocks, mapping, 0)
    with pytest.raises(ConfigError):
        verify_cones(blocks, mapping, 10, X=0.0)


@pytest.mark.slow
def test_block_reports_are_reproducible(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)

    first = verify_block_conditions(blocks, mapping, 50, seed=3, workers=2)
    second = verify_block_conditions(blocks, mapping, 50, seed=3)

    assert [(r.label, r.target) for r in first] == [("00", "00"), ("11", "11")]
    assert all(r.n_samples == 50 for r in first)
    assert [r.shrink_ratio for r in first] == [r.shrink_ratio for r in second]
    assert [len(r.violations) for r in first] == [len(r.violations) for r in second]


@pytest.mark.slow
def test_cone_reports(centers: dict[str, CenterCylinder], mapping: RescaledMap) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)

    reports = verify_cones(blocks, mapping, 40, seed=1)

    assert [r.label for r in reports] == ["00", "11"]
    m_u = min(float(np.min(np.abs(b.delta_m))) for b in blocks)
    for report in reports:
        assert report.m_u == m_u
        assert report.expansion_bound == pytest.approx(m_u / (4 * blocks[0].delta))
        assert report.min_unstable_expansion > 0.0


def _center_start(center: CenterCylinder, eps: float, row: int = 2, col: int = 3) -> SepState:
    return SepState.from_rescaled(
        float(center.etas[row]),
        float(center.xis[col]),
        float(center.action[row, col]),
        float(center.tau[row, col]),
        eps,
    )


def test_symbol_word_labels() -> None:
    assert SymbolWord.parse("0000").labels == ("00",) * 4
    assert SymbolWord.parse([0, 1, 0, 1]).labels == ("01", "10", "01", "10")
    assert SymbolWord.parse("1").labels == ("11",)
    assert str(SymbolWord.parse((1, 0))) == "10"
    assert len(SymbolWord.parse("010")) == 3
    for bad in ("", "012", "0a"):
        with pytest.raises(ConfigError):
            SymbolWord.parse(bad)


def test_single_symbol_word_returns_the_start(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)
    start = _center_start(centers["00"], mapping.eps)

    orbit = shadow_orbit("0", start, blocks, mapping)

    assert orbit.labels == ("00",)
    np.testing.assert_array_equal(
        orbit.points, [[start.eta, start.xi, start.rescaled_action(mapping.eps), start.tau]]
    )
    assert orbit.corrections == ()
    assert orbit.max_correction == 0.0


@pytest.mark.slow
def test_constant_word_stays_in_the_fixed_block(
    centers: dict[str, CenterCylinder], mapping: RescaledMap
) -> None:
    blocks = build_blocks(centers.values(), mapping, KAPPA)
    start = _center_start(centers["00"], mapping.eps)

    orbit = shadow_orbit("0" * 20, start, blocks, mapping)

    assert orbit.labels == ("00",) * 20
    assert orbit.points.shape == (20, 4)
    assert len(orbit.corrections) == len(orbit.shifts) == 19
    assert orbit.max_correction <= blocks[0].width_stable
    assert blocks[0].width_stable == pytest.approx(KAPPA[1] * blocks[0].delta**2)
    assert orbit.max_shift <= blocks[0].width_unstable
    np.testing.assert_allclose(orbit.points[:, 2], blocks[0].delta, rtol=0.5)


@pytest.mark.slow
def test_alternating_word_visits_the_period_two_blocks() -> None:
    centers = mk_centers(n_eta=5, n_xi=8, period2=True)
    eps = centers["01"].eps
    mapping = RescaledMap(mk_potential(a=0.05), eps, load_calibration().kappa(1))
    blocks = build_blocks(centers.values(), mapping, KAPPA)
    widths = {block.label: block.width_stable for block in blocks}
    start = _center_start(centers["01"], eps)

    orbit = shadow_orbit("010101", start, blocks, mapping)

    assert orbit.labels == ("01", "10", "01", "10", "01", "10")
    for label, correction in zip(orbit.labels[1:], orbit.corrections, strict=True):
        assert correction <= widths[label]


@pytest.mark.slow
def test_period_two_centers_are_exchanged() -> None:
    centers = mk_centers(n_eta=4, n_xi=8, period2=True)

    for label in ("01", "10"):
        center = centers[label]
        assert center.image_label == image_label(label)
        assert center.level == pytest.approx(center.delta * math.exp(-math.pi))
        assert center.max_residual < 1e-5
