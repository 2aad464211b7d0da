from __future__ import annotations

from collections.abc import Iterable

from arnoldlab.config import load_calibration
from arnoldlab.melnikov import MelnikovPotential
from arnoldlab.models import CenterCylinder, Frame, PhaseState, SepState
from arnoldlab.nhil import CenterGrid, matched_eps, solve_fixed_centers, solve_period2_centers
from arnoldlab.skew_product import CylinderMap, CylinderMapFamily, ThetaField
from arnoldlab.trig import PRESETS, TrigPolynomial, factor


def mk_polynomial(
    *,
    preset: str = "normalized",
    a: float = 0.05,
    rows: Iterable[tuple[int, int, float, float]] | None = None,
) -> TrigPolynomial:
    if rows is not None:
        return factor(rows)
    return PRESETS[preset](a)


def mk_phase(
    *, p: float = 0.5, q: float = 1.0, I: float = 0.3, phi: float = 0.2, t: float = 0.0
) -> PhaseState:
    return PhaseState(p=p, q=q, I=I, phi=phi, t=t)


def mk_state(
    *,
    eta: float = 0.7,
    xi: float = 1.0,
    w: float = 1e-4,
    tau: float = 0.3,
    sigma: int = 1,
) -> SepState:
    return SepState(eta=eta, xi=xi, h=0.5 * eta * eta + w, tau=tau, sigma=sigma)


def mk_potential(
    *, preset: str = "normalized", a: float = 0.05, frame: Frame = Frame.SECTION, sigma: int = 1
) -> MelnikovPotential:
    return MelnikovPotential(mk_polynomial(preset=preset, a=a), sigma=sigma, frame=frame)


def mk_grid(
    *, n_eta: int = 6, n_xi: int = 16, eta_range: tuple[float, float] = (-1.0, 1.0)
) -> CenterGrid:
    return CenterGrid.uniform(n_eta, n_xi, eta_range)


def mk_centers(
    *,
    eps: float = 2e-3,
    a: float = 0.05,
    n_eta: int = 6,
    n_xi: int = 16,
    eta_range: tuple[float, float] = (-1.0, 1.0),
    period2: bool = False,
) -> dict[str, CenterCylinder]:
    """Solved centers at the ε′ near ``eps`` whose δ is ε′^½ exactly."""
    cal = load_calibration()
    quantized = matched_eps(eps, 0.5, cal)
    M = mk_potential(a=a)
    grid = mk_grid(n_eta=n_eta, n_xi=n_xi, eta_range=eta_range)
    centers = {
        f"{i}{i}": solve_fixed_centers(
            M, quantized.eps, quantized.delta, a, i, grid, calibration=cal
        )
        for i in (0, 1)
    }
    if period2:
        c01, c10 = solve_period2_centers(
            M, quantized.eps, quantized.delta, a, grid, calibration=cal
        )
        centers.update({"01": c01, "10": c10})
    return centers


def mk_family(
    *,
    eps: float = 0.01,
    amplitude: float = 1.0,
    harmonic: int = 1,
    mean_v: float = 0.0,
    drift_w: float = 0.0,
    shared_v: float = 0.0,
    u_amplitude: float = 0.0,
) -> CylinderMapFamily:
    """v±₁ = ±a·sin 2πkθ + shared·cos 2πθ + mean_v, w = drift_w, u = u_amp·cos 2πθ."""
    degree = max(1, harmonic)
    kick = ThetaField.harmonic(harmonic, sin=amplitude, degree=degree)
    common = ThetaField.harmonic(1, cos=shared_v, degree=degree) + ThetaField.harmonic(
        0, cos=mean_v, degree=degree
    )
    w = ThetaField.harmonic(0, cos=drift_w, degree=degree)
    u = ThetaField.harmonic(1, cos=u_amplitude, degree=degree)
    return CylinderMapFamily(
        maps={
            1: CylinderMap(u=u, v=common + kick, w=w),
            -1: CylinderMap(u=u, v=common - kick, w=w),
        },
        eps=eps,
    )
