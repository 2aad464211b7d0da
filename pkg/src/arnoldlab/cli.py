from __future__ import annotations

import json
import logging
import math
import threading
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.progress import Progress, SpinnerColumn, TextColumn

from . import store
from .conditions import check_m1, check_pert_class, m1_degenerate_locus
from .config import (
    KS_THRESHOLD,
    M1_THRESHOLD,
    ExperimentConfig,
    describe as describe_config,
    load_calibration,
    load_config,
)
from .diffusion import (
    affine_fit,
    chi_square_normal,
    histogram,
    is_unimodal,
    ks_distance,
    run_full_ensemble,
    run_model_ensemble,
    simulate_ito,
    variance_ratio,
)
from .errors import ArnoldLabError, ConfigError, NumericError
from .export import (
    grid_payload,
    to_jsonable,
    write_histogram,
    write_json,
    write_samples_csv,
    write_text,
)
from .fourier import periodic_grid
from .melnikov import (
    MelnikovPotential,
    bessi_harmonic,
    bessi_quadrature,
    melnikov_quadrature_oracle,
    uniform_bound_constant,
)
from .models import TWO_PI, EnsembleConfig, Frame, SepState, SymbolWord
from .nhil import (
    CenterGrid,
    build_blocks,
    matched_eps,
    quantize_delta,
    shadow_orbit,
    shift_relation_error,
    solve_fixed_centers,
    solve_period2_centers,
    verify_block_conditions,
    verify_cones,
)
from .sepmap import (
    RescaledMap,
    analytic_sepmap,
    apex_from_state,
    calibrate_kappa,
    eigenstructure,
    numeric_sepmap_oracle,
    oracle_jacobian,
    sepmap_jacobian,
    sigma_rule_trials,
)
from .skew_product import (
    CylinderMapFamily,
    check_hypotheses,
    difference_family,
    drift_variance,
    reduce_to_skew_product,
)
from .twist import (
    expansion_remainder,
    fit_slope,
    log_scaled,
    perturbed,
    standard,
    twist_from_generating,
    verify_exact_area,
)

app = typer.Typer(
    help="Numerical laboratory for Arnold diffusion in the rotor-pendulum system",
    invoke_without_command=True,
)
console = Console()
logger = logging.getLogger(__name__)

BESSI_TOL = 1e-8
KAPPA_SLOPE_TOL = 0.02
REMAINDER_SLOPE_ERROR = 0.1
ORACLE_DET_TOL = 1e-5
EIGEN_PRODUCT_TOL = 1e-6
TRACE_TOL = 0.05
CLASS_RHO = 0.5
RESIDUAL_SPREAD = 0.5
VARIANCE_TOL = 0.04
AFFINE_R2 = 0.99
RATIO_TOL = 0.25
TWIST_RESIDUAL_TOL = 1e-10
MAX_LISTED = 20


@dataclass(frozen=True)
class Session:
    config: ExperimentConfig
    out: Path


@dataclass
class Outcome:
    artifacts: list[Path] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self, ok: bool, message: str) -> bool:
        if not ok:
            self.failures.append(message)
        return ok


Status = Callable[[str], None]


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


def _format(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


@contextmanager
def _status(label: str) -> Iterator[Status]:
    with Progress(
        SpinnerColumn(),
        TextColumn("{task.description}"),
        console=console,
        transient=True,
    ) as progress:
        task_id = progress.add_task(f"{label}...", total=None)
        lock = threading.Lock()

        def update(text: str) -> None:
            with lock:
                progress.update(task_id, description=f"{label}: {text}")

        yield update


def _execute(
    ctx: typer.Context, command: str, body: Callable[[ExperimentConfig, Path, Status], Outcome]
) -> None:
    session: Session = ctx.obj
    out_dir = session.out / command
    started = time.perf_counter()
    try:
        with _status(command) as status:
            outcome = body(session.config, out_dir, status)
        summary = json.loads(json.dumps(to_jsonable(outcome.summary)))
        summary["passed"] = outcome.passed
        summary["failures"] = list(outcome.failures)
        outcome.artifacts.append(write_json(out_dir / "summary.json", summary))
    except ArnoldLabError as exc:
        console.print(f"[red]{command} failed:[/red] {escape(str(exc))}")
        store.record_run(
            session.out,
            command=command,
            config_digest=session.config.digest(),
            seed=session.config.seed,
            status="error",
            exit_code=exc.exit_code,
            seconds=time.perf_counter() - started,
            artifacts=[],
            summary={"error": str(exc)},
        )
        raise typer.Exit(exc.exit_code)

    exit_code = 0 if outcome.passed else 1
    run_id = store.record_run(
        session.out,
        command=command,
        config_digest=session.config.digest(),
        seed=session.config.seed,
        status="passed" if outcome.passed else "failed",
        exit_code=exit_code,
        seconds=time.perf_counter() - started,
        artifacts=outcome.artifacts,
        summary=summary,
    )

    console.print()
    for key, value in summary.items():
        if isinstance(value, (bool, int, float, str)):
            console.print(f"{key}: {escape(_format(value))}")
    console.print(f"Outputs: {out_dir} (run {run_id})")
    if not outcome.passed:
        for message in outcome.failures:
            console.print(f"[red]Acceptance check failed:[/red] {escape(message)}")
        raise typer.Exit(1)


# ---------------------------------------------------------------------------
# melnikov


def _melnikov(config: ExperimentConfig, out_dir: Path, status: Status) -> Outcome:
    cfg = config.melnikov
    P = config.polynomial()
    potentials = {sigma: MelnikovPotential(P, sigma=sigma) for sigma in (1, -1)}
    M = potentials[1]
    outcome = Outcome()
    outcome.artifacts.append(write_text(out_dir / "perturbation.txt", P.to_table()))
    outcome.artifacts.append(write_text(out_dir / "potential_harmonics.txt", M.table()))

    etas = np.linspace(cfg.eta_min, cfg.eta_max, cfg.m1_eta_points)
    xis = periodic_grid(cfg.m1_xi_points)
    eta, xi = np.meshgrid(etas, xis, indexing="ij")
    outcome.artifacts.append(
        write_json(
            out_dir / "potential.json",
            {"frame": Frame.APEX.value, "tau": 0.0, "potential": grid_payload(M(eta, xi, 0.0), eta=etas, xi=xis)},
        )
    )

    status("closed form against orbit quadrature")
    rng = _rng(config.seed, 0)
    columns: dict[str, list[float]] = {k: [] for k in ("eta", "xi", "tau", "sigma", "closed", "quadrature", "error")}
    for _ in range(cfg.n_points):
        point = (
            float(rng.uniform(cfg.eta_min, cfg.eta_max)),
            float(rng.uniform(0.0, TWO_PI)),
            float(rng.uniform(0.0, TWO_PI)),
        )
        sigma = int(rng.choice([-1, 1]))
        closed = float(potentials[sigma](*point))
        oracle = melnikov_quadrature_oracle(P, *point, sigma=sigma, t_cut=cfg.t_cut)
        for key, value in zip(columns, (*point, sigma, closed, oracle, abs(closed - oracle)), strict=True):
            columns[key].append(float(value))
    outcome.artifacts.append(write_samples_csv(out_dir / "oracle.csv", columns))
    max_error = max(columns["error"], default=0.0)
    outcome.summary["oracle_max_error"] = max_error
    outcome.check(
        max_error <= cfg.tolerance,
        f"closed form differs from quadrature by {max_error:.3e} > {cfg.tolerance:.1e}",
    )

    status("harmonic identity")
    bessi_error = 0.0
    for omega in np.linspace(0.1, 5.0, 25):
        scale = abs(bessi_harmonic(float(omega), 0.0))
        for phase in TWO_PI * np.arange(20) / 20:
            gap = abs(bessi_harmonic(float(omega), float(phase)) - bessi_quadrature(float(omega), float(phase)))
            bessi_error = max(bessi_error, gap / scale)
    outcome.summary["bessi_max_relative_error"] = bessi_error
    outcome.check(bessi_error <= BESSI_TOL, f"harmonic identity error {bessi_error:.3e} > {BESSI_TOL:.0e}")

    status("[M1] zero branches")
    section = M.in_frame(Frame.SECTION)
    report = check_m1(section, etas, xis, threshold=M1_THRESHOLD, workers=config.workers)
    locus = [] if report.passed else m1_degenerate_locus(section, etas, xis)
    outcome.artifacts.append(write_json(out_dir / "m1.json", {"report": report, "degenerate_locus": locus}))
    outcome.summary["m1_passed"] = report.passed
    outcome.summary["m1_min_abs_delta_m"] = report.min_abs_delta_m
    outcome.summary["m1_failing_cells"] = len(report.failing_cells)

    a = config.perturbation.a
    in_class = a > 0.0 and check_pert_class(P, a, CLASS_RHO)
    outcome.summary["normalized_class"] = in_class
    if in_class:
        constant = uniform_bound_constant(section, a, etas, xis, periodic_grid(64))
        outcome.summary["bound_constant"] = constant
        fitted = load_calibration().fitted.get("melnikov_bound")
        if fitted is not None:
            outcome.summary["bound_constant_calibrated"] = fitted
    return outcome


# ---------------------------------------------------------------------------
# sepmap


def _sepmap(config: ExperimentConfig, out_dir: Path, status: Status) -> Outcome:
    cfg = config.sepmap
    P = config.polynomial()
    cal = load_calibration()
    outcome = Outcome()

    eta_errors: list[float] = []
    h_errors: list[float] = []
    for index, eps in enumerate(cfg.eps_values):
        status(f"analytic map against the flow at eps={eps:g}")
        rng = _rng(config.seed, index)
        _, upper = cal.w_window(eps, cfg.order)
        w = math.copysign(min(abs(cfg.w_multiple) * eps, 0.5 * upper), cfg.w_multiple)
        worst_eta = worst_h = 0.0
        for _ in range(cfg.n_samples):
            state = SepState(
                eta=cfg.eta,
                xi=cfg.xi + float(rng.uniform(-0.5, 0.5)),
                h=0.5 * cfg.eta * cfg.eta + w,
                tau=cfg.tau + float(rng.uniform(-0.25, 0.25)),
                sigma=int(rng.choice([-1, 1])),
            )
            predicted, _ = analytic_sepmap(state, eps, P, cfg.order, calibration=cal)
            measured = numeric_sepmap_oracle(state, eps, P, calibration=cal).state
            worst_eta = max(worst_eta, abs(predicted.eta - measured.eta))
            worst_h = max(worst_h, abs(predicted.h - measured.h))
        eta_errors.append(worst_eta)
        h_errors.append(worst_h)
    outcome.artifacts.append(
        write_samples_csv(
            out_dir / "scaling.csv",
            {"eps": list(cfg.eps_values), "eta_error": eta_errors, "h_error": h_errors},
        )
    )
    if max(eta_errors) <= 1e-15:
        slope = math.inf
    else:
        slope = fit_slope(cfg.eps_values, eta_errors)
    outcome.summary["eta_error_slope"] = slope
    outcome.check(slope >= cfg.slope_min, f"eta error slope {slope:.3f} below {cfg.slope_min}")

    status("passage-time constant")
    fit = calibrate_kappa(np.logspace(-6.0, -3.0, 4))
    outcome.summary["transit_slope"] = fit.slope
    outcome.summary["kappa_fitted"] = fit.kappa
    outcome.summary["kappa_calibrated"] = cal.kappa(1)
    outcome.check(
        abs(fit.slope + 1.0) <= KAPPA_SLOPE_TOL,
        f"transit-time slope {fit.slope:.4f} is not -1 within {KAPPA_SLOPE_TOL}",
    )

    status("differential and eigenstructure")
    eps = cfg.jacobian_eps
    delta = eps**cfg.delta_exponent
    state = SepState.from_rescaled(cfg.eta, cfg.xi, delta, cfg.tau, eps)
    jac = sepmap_jacobian(state, eps, P, delta, calibration=cal)
    eig = eigenstructure(state, eps, P, delta, calibration=cal)
    trace = float(np.trace(jac.exact))
    trace_error = abs(trace - jac.predicted_trace) / abs(jac.predicted_trace)
    product_error = abs(eig.product - 1.0)
    flow_jacobian = oracle_jacobian(apex_from_state(state, eps, P), eps, P)
    flow_det_error = abs(float(np.linalg.det(flow_jacobian)) - 1.0)
    outcome.artifacts.append(
        write_json(
            out_dir / "eigenstructure.json",
            {
                "point": jac.point,
                "eps": eps,
                "delta": delta,
                "display": jac.display,
                "exact": jac.exact,
                "finite_difference": jac.finite_difference,
                "oracle": flow_jacobian,
                "eigenvalues": eig.values,
                "eigenvectors": eig.vectors,
                "e3_closed": eig.e3_closed,
                "e4_closed": eig.e4_closed,
                "frame_angle": eig.frame_angle,
                "delta_m": eig.delta_m,
                "marginal": eig.marginal,
                "trace": trace,
                "predicted_trace": jac.predicted_trace,
            },
        )
    )
    outcome.summary["eigenvalue_product_error"] = product_error
    outcome.summary["trace_relative_error"] = trace_error
    outcome.summary["oracle_det_error"] = flow_det_error
    outcome.check(product_error <= EIGEN_PRODUCT_TOL, f"eigenvalue product off by {product_error:.3e}")
    outcome.check(trace_error <= TRACE_TOL, f"trace misses its prediction by {trace_error:.1%}")
    outcome.check(flow_det_error <= ORACLE_DET_TOL, f"oracle Jacobian |det - 1| = {flow_det_error:.3e}")

    status("loop switching rule")
    trials = sigma_rule_trials(P, cfg.eps_values[0], cfg.n_samples, config.seed, calibration=cal)
    outcome.summary["sigma_rule_agreement"] = sum(t.agrees for t in trials) / len(trials)
    return outcome


# ---------------------------------------------------------------------------
# nhil


def _center_payload(center) -> dict[str, Any]:
    axes = {"eta": center.etas, "xi": center.xis}
    return {
        "label": center.label,
        "image_label": center.image_label,
        "eps": center.eps,
        "delta": center.delta,
        "a": center.a,
        "shift_integer": center.shift_integer,
        "residual_action": center.residual_action,
        "residual_tau": center.residual_tau,
        **{
            name: grid_payload(getattr(center, name), **axes)
            for name in ("action", "tau", "action_bar", "tau_first", "tau_second")
        },
    }


def _report_payload(report) -> dict[str, Any]:
    data = to_jsonable(report)
    data["n_violations"] = len(report.violations)
    data["violations"] = data["violations"][:MAX_LISTED]
    data["passed"] = report.passed
    return data


def _nhil(config: ExperimentConfig, out_dir: Path, status: Status) -> Outcome:
    cfg = config.nhil
    P = config.polynomial()
    a = config.perturbation.a
    cal = load_calibration()
    M = MelnikovPotential(P, frame=Frame.SECTION)
    grid = CenterGrid.uniform(cfg.eta_points, cfg.xi_points, (cfg.eta_min, cfg.eta_max))
    outcome = Outcome()

    quantized = quantize_delta(cfg.eps, cfg.eps**cfg.delta_exponent, cal)
    delta = quantized.delta
    outcome.summary["delta"] = delta
    outcome.summary["shift_integer"] = quantized.n

    status("fixed centers")
    centers = [
        solve_fixed_centers(M, cfg.eps, delta, a, i, grid, calibration=cal, workers=config.workers)
        for i in (0, 1)
    ]
    status("period-two centers")
    centers.extend(solve_period2_centers(M, cfg.eps, delta, a, grid, calibration=cal, workers=config.workers))
    by_label = {c.label: c for c in centers}
    for center in centers:
        outcome.artifacts.append(write_json(out_dir / f"center_{center.label}.json", _center_payload(center)))
    outcome.summary["max_center_residual"] = max(c.max_residual for c in centers)
    outcome.summary["shift_relation_error"] = max(
        shift_relation_error(by_label[c.image_label], c) for c in centers
    )

    status("isolating blocks")
    mapping = RescaledMap.for_polynomial(P, cfg.eps, cal)
    blocks = build_blocks(centers, mapping, cfg.kappa)
    block_reports = verify_block_conditions(
        blocks, mapping, cfg.n_samples, config.seed, workers=config.workers
    )
    status("cones")
    cone_reports = verify_cones(
        blocks, mapping, cfg.n_samples, cfg.cone_x, cfg.theta_u, config.seed, workers=config.workers
    )
    outcome.artifacts.append(
        write_json(
            out_dir / "blocks.json",
            {
                "blocks": [
                    {
                        "label": b.label,
                        "width_unstable": b.width_unstable,
                        "width_stable": b.width_stable,
                        "min_frame_angle": b.min_frame_angle,
                        "min_abs_delta_m": float(np.min(np.abs(b.delta_m))),
                    }
                    for b in blocks
                ],
                "conditions": [_report_payload(r) for r in block_reports],
                "cones": [_report_payload(r) for r in cone_reports],
            },
        )
    )
    block_violations = sum(len(r.violations) for r in block_reports)
    cone_violations = sum(len(r.violations) for r in cone_reports)
    outcome.summary["block_violations"] = block_violations
    outcome.summary["cone_violations"] = cone_violations
    outcome.check(block_violations == 0, f"{block_violations} block-condition violations")
    outcome.check(cone_violations == 0, f"{cone_violations} cone violations")

    status("shadowing orbit")
    word = SymbolWord.parse(cfg.word)
    start_center = by_label[word.labels[0]]
    row = cfg.eta_points // 2
    start = SepState.from_rescaled(
        float(start_center.etas[row]),
        float(start_center.xis[0]),
        float(start_center.action[row, 0]),
        float(start_center.tau[row, 0]),
        cfg.eps,
    )
    orbit = shadow_orbit(word, start, blocks, mapping)
    lines = ["# step label eta xi I tau shift correction"]
    for step, (label, point) in enumerate(zip(orbit.labels, orbit.points, strict=True)):
        shift = orbit.shifts[step] if step < len(orbit.shifts) else 0.0
        correction = orbit.corrections[step - 1] if step > 0 else 0.0
        lines.append(
            f"{step} {label} " + " ".join(repr(float(v)) for v in point) + f" {shift!r} {correction!r}"
        )
    outcome.artifacts.append(write_text(out_dir / "shadow.txt", "\n".join(lines) + "\n"))
    outcome.summary["shadow_max_correction"] = orbit.max_correction
    outcome.summary["shadow_max_shift"] = orbit.max_shift

    if cfg.study_eps and a > 0.0:
        status("residual scaling in delta")
        rows: dict[str, list[float]] = {"eps": [], "delta": [], "residual": [], "constant": []}
        for eps in cfg.study_eps:
            matched = matched_eps(eps, cfg.delta_exponent, cal)
            center = solve_fixed_centers(
                M, matched.eps, matched.delta, a, 0, grid, calibration=cal, workers=config.workers
            )
            rows["eps"].append(matched.eps)
            rows["delta"].append(matched.delta)
            rows["residual"].append(center.max_residual)
            rows["constant"].append(center.max_residual / (a * matched.delta**2))
        outcome.artifacts.append(write_samples_csv(out_dir / "residual_scaling.csv", rows))
        median = float(np.median(rows["constant"]))
        spread = max(abs(c / median - 1.0) for c in rows["constant"]) if median > 0.0 else math.inf
        outcome.summary["residual_constant"] = median
        outcome.summary["residual_constant_spread"] = spread
        outcome.check(
            spread <= RESIDUAL_SPREAD,
            f"center residual constants spread {spread:.0%} around their median",
        )

    status("skew-product reduction")
    try:
        reduction = reduce_to_skew_product(by_label, cfg.eps, delta, M, degree=cfg.degree, calibration=cal)
        hypotheses = check_hypotheses(reduction.family)
    except NumericError as exc:
        logger.warning("skew-product reduction failed: %s", exc)
        outcome.summary["reduction_error"] = str(exc)
    else:
        outcome.artifacts.append(write_json(out_dir / "family.json", reduction.family.to_dict()))
        outcome.artifacts.append(
            write_json(
                out_dir / "reduction.json",
                {
                    "scale": reduction.scale,
                    "advance_error": reduction.advance_error,
                    "cocycle_error": reduction.cocycle_error,
                    "jacobian_error": reduction.jacobian_error,
                    "hypotheses": hypotheses,
                },
            )
        )
        outcome.summary["reduced_eps"] = reduction.family.eps
        outcome.summary["reduced_hypotheses_passed"] = hypotheses.passed
    return outcome


# ---------------------------------------------------------------------------
# diffuse


def _load_family(config: ExperimentConfig) -> CylinderMapFamily:
    cfg = config.diffuse
    if not cfg.family:
        return difference_family(cfg.eps)
    path = config.resolve(cfg.family)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read cylinder map family {path}: {exc}") from exc
    return CylinderMapFamily.from_dict(data).with_eps(cfg.eps)


def _diffuse(config: ExperimentConfig, out_dir: Path, status: Status) -> Outcome:
    cfg = config.diffuse
    F = _load_family(config)
    outcome = Outcome()

    status("hypotheses")
    hypotheses = check_hypotheses(F)
    drift = drift_variance(F, cfg.r0)
    outcome.artifacts.append(write_json(out_dir / "hypotheses.json", hypotheses))
    outcome.summary["hypotheses_passed"] = hypotheses.passed
    outcome.summary["drift"] = drift.b
    outcome.summary["sigma2"] = drift.sigma2
    if not hypotheses.passed:
        # reported only: the common-orbit sum at q = 1 vanishes for every mean-zero pair
        logger.warning(
            "hypotheses fail: %s", ", ".join(r.name for r in hypotheses.results if not r.passed)
        )

    n_samples = config.model_samples

    def ensemble(s: float):
        run = EnsembleConfig(eps=cfg.eps, s=s, n_samples=n_samples, seed=config.seed, r0=cfg.r0)
        return run_model_ensemble(run, F, workers=config.workers, n_bins=cfg.n_bins)

    status(f"model ensemble at s={cfg.s:g}")
    model = ensemble(cfg.s)
    status("Euler-Maruyama reference")
    reference = simulate_ito(
        drift.b, math.sqrt(drift.sigma2), cfg.s, n_samples, cfg.ito_dt, config.seed,
        x0=cfg.r0, workers=config.workers,
    )
    model = replace(model, ks=ks_distance(model.samples, reference))
    target = drift.sigma2 * cfg.s
    outcome.summary["model_mean"] = model.mean
    outcome.summary["model_variance"] = model.variance
    outcome.summary["target_variance"] = target
    outcome.summary["ks_distance"] = model.ks
    outcome.summary["stopped"] = model.stopped
    outcome.check(
        abs(model.variance - target) <= VARIANCE_TOL * target,
        f"variance {model.variance:.4f} misses {target:.4f} by more than {VARIANCE_TOL:.0%}",
    )
    outcome.check(model.ks <= KS_THRESHOLD, f"KS distance {model.ks:.4f} > {KS_THRESHOLD}")
    if target > 0.0:
        normality = chi_square_normal(
            model.samples, n_bins=cfg.n_bins, loc=drift.b * cfg.s, scale=math.sqrt(target)
        )
        outcome.summary["chi_square_p_value"] = normality.p_value

    outcome.artifacts.append(
        write_samples_csv(out_dir / "samples.csv", {"model": model.samples, "ito": reference})
    )
    outcome.artifacts.append(write_histogram(out_dir / "model.hist", model.histogram, model.label))
    edges = model.histogram.edges
    reference_hist = histogram(reference, cfg.n_bins, (float(edges[0]), float(edges[-1])))
    outcome.artifacts.append(
        write_histogram(out_dir / "ito.hist", reference_hist, "Euler-Maruyama reference")
    )

    if cfg.s_values:
        variances = []
        for s in cfg.s_values:
            status(f"model ensemble at s={s:g}")
            variances.append(model.variance if s == cfg.s else ensemble(s).variance)
        fit = affine_fit(cfg.s_values, variances)
        outcome.artifacts.append(
            write_samples_csv(out_dir / "variance_scan.csv", {"s": list(cfg.s_values), "variance": variances})
        )
        outcome.summary["affine_slope"] = fit.slope
        outcome.summary["affine_r2"] = fit.r_squared
        outcome.check(fit.r_squared >= AFFINE_R2, f"variance is not affine in s (R^2 = {fit.r_squared:.4f})")

    if cfg.full_flow:
        done = 0
        lock = threading.Lock()
        total = config.full_flow_samples

        def advance(size: int) -> None:
            nonlocal done
            with lock:
                done += size
                status(f"full flow {done}/{total}")

        status(f"full flow 0/{total}")
        estimates = run_full_ensemble(
            cfg.full_eps,
            cfg.i_star,
            config.polynomial(),
            cfg.horizons,
            total,
            seed=config.seed,
            dt=cfg.full_dt,
            base_time=cfg.base_time,
            workers=config.workers,
            n_bins=cfg.n_bins,
            on_chunk=advance,
        )
        for estimate in estimates:
            outcome.artifacts.append(
                write_samples_csv(out_dir / f"full_{estimate.label}.csv", {"displacement": estimate.samples})
            )
            outcome.artifacts.append(
                write_histogram(out_dir / f"full_{estimate.label}.hist", estimate.histogram, estimate.label)
            )
        outcome.summary["full_flow"] = [
            {"label": e.label, "mean": e.mean, "variance": e.variance, "failed": e.stopped}
            for e in estimates
        ]
        unimodal = all(is_unimodal(e.histogram) for e in estimates)
        outcome.summary["full_flow_unimodal"] = unimodal
        outcome.check(unimodal, "a full-flow histogram is not unimodal")
        if len(estimates) > 1:
            horizons = sorted(cfg.horizons)
            expected = horizons[-1] / horizons[0]
            ratio = variance_ratio(estimates[0], estimates[-1])
            outcome.summary["full_flow_variance_ratio"] = ratio
            outcome.check(
                abs(ratio - expected) <= RATIO_TOL * expected,
                f"variance ratio {ratio:.3f} outside {expected:g} +/- {RATIO_TOL:.0%}",
            )
    return outcome


# ---------------------------------------------------------------------------
# twist


def _twist(config: ExperimentConfig, out_dir: Path, status: Status) -> Outcome:
    cfg = config.twist
    outcome = Outcome()
    x, y = np.meshgrid(
        np.arange(cfg.n_points) / cfg.n_points, np.linspace(0.0, 1.0, cfg.n_curves), indexing="ij"
    )

    status("standard map")
    mapping = twist_from_generating(standard(cfg.standard_k))
    residual = max(mapping.residuals(x, y))
    area = verify_exact_area(mapping, cfg.n_curves, cfg.n_points, seed=config.seed)
    outcome.summary["generating_residual"] = residual
    outcome.summary["max_flux"] = area.max_flux
    outcome.summary["max_det_error"] = area.max_det_error
    outcome.check(residual <= TWIST_RESIDUAL_TOL, f"generating-equation residual {residual:.3e}")
    outcome.check(area.passed, f"standard map is not exact area preserving ({area.max_flux:.2e}, {area.max_det_error:.2e})")

    status("second-order expansion")
    regular = [expansion_remainder(perturbed(1.0, eps=eps), x, y) for eps in cfg.eps_values]
    singular = [expansion_remainder(log_scaled(eps), x, y) for eps in cfg.eps_values]
    scaled = [eps * math.log(1.0 / eps) for eps in cfg.eps_values]
    outcome.artifacts.append(
        write_samples_csv(
            out_dir / "remainders.csv",
            {"eps": list(cfg.eps_values), "regular": regular, "eps_log": scaled, "singular": singular},
        )
    )
    slope_regular = fit_slope(cfg.eps_values, regular)
    slope_singular = fit_slope(scaled, singular)
    outcome.summary["remainder_slope"] = slope_regular
    outcome.summary["remainder_slope_log_scaled"] = slope_singular
    outcome.summary["remainder_slope_min"] = cfg.slope_min
    outcome.summary["remainder_slope_error_bar"] = REMAINDER_SLOPE_ERROR
    # error bar of a three-point log-log fit
    floor = cfg.slope_min - REMAINDER_SLOPE_ERROR
    outcome.check(slope_regular >= floor, f"remainder slope {slope_regular:.3f} below {cfg.slope_min}")
    outcome.check(
        slope_singular >= floor,
        f"log-scaled remainder slope {slope_singular:.3f} below {cfg.slope_min}",
    )
    outcome.artifacts.append(
        write_json(
            out_dir / "twist.json",
            {"standard_k": cfg.standard_k, "area": area, "residual": residual},
        )
    )
    return outcome


# ---------------------------------------------------------------------------
# commands


@app.callback()
def _main(
    ctx: typer.Context,
    config: Path | None = typer.Option(None, "--config", help="Experiment file (TOML)"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Unsigned 64-bit seed"),
    workers: int | None = typer.Option(None, "--workers", min=1, help="Worker threads"),
    out: Path = typer.Option(Path("runs"), "--out", help="Output directory"),
    full_scale: bool = typer.Option(False, "--full-scale", help="Use 10^6-sample ensembles"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    _configure_logging(verbose)
    try:
        base = load_config(config) if config is not None else ExperimentConfig()
        experiment = base.with_overrides(seed=seed, workers=workers, full_scale=full_scale or None)
    except ConfigError as exc:
        console.print(f"[red]Invalid configuration:[/red] {escape(str(exc))}")
        raise typer.Exit(exc.exit_code)
    ctx.obj = Session(config=experiment, out=out)
    if ctx.invoked_subcommand is None:
        console.print(ctx.get_help())
        raise typer.Exit(2)


@app.command()
def melnikov(ctx: typer.Context) -> None:
    """Splitting potential tables and the quadrature cross-check."""
    _execute(ctx, "melnikov", _melnikov)


@app.command()
def sepmap(ctx: typer.Context) -> None:
    """Separatrix map against the flow, κ fit and eigenstructure."""
    _execute(ctx, "sepmap", _sepmap)


@app.command()
def nhil(ctx: typer.Context) -> None:
    """Center cylinders, isolating blocks, cones and a shadowing orbit."""
    _execute(ctx, "nhil", _nhil)


@app.command()
def diffuse(ctx: typer.Context) -> None:
    """Random skew-product ensembles against the Itô limit and the full flow."""
    _execute(ctx, "diffuse", _diffuse)


@app.command()
def twist(ctx: typer.Context) -> None:
    """Generating-function residuals, exact area and expansion slopes."""
    _execute(ctx, "twist", _twist)


@app.command()
def describe(ctx: typer.Context) -> None:
    """Print the effective configuration as TOML."""
    session: Session = ctx.obj
    typer.echo(describe_config(session.config), nl=False)


if __name__ == "__main__":
    app()
