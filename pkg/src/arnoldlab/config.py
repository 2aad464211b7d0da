from __future__ import annotations

import json
import math
import tomllib
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Any

from blake3 import blake3

from .errors import ConfigError, WindowError
from .models import SymbolWord
from .trig import PRESETS, TrigPolynomial, factor

CALIBRATION_FILE = Path(__file__).with_name("calibration.toml")

FIXED_POINT_ITERATIONS = 10
M1_THRESHOLD = math.pi
MARGINAL_DELTA_M = 0.1
CENTER_GRID = (64, 64)
K_INTERVAL = (-2.0, 2.0)
CHUNK = 1024
DESK_MODEL_SAMPLES = 100_000
DESK_FULL_SAMPLES = 1_000
FULL_SCALE_SAMPLES = 1_000_000
KS_THRESHOLD = 0.02


@dataclass(frozen=True)
class Calibration:
    kappa_plus: float = 1.0 / 32.0
    kappa_minus: float = 1.0 / 32.0
    window_c: float = 4.0
    varpi: float = 0.75
    rho: float = 0.25
    fitted: dict[str, float] = field(default_factory=dict)

    def kappa(self, sigma: int) -> float:
        return self.kappa_plus if sigma > 0 else self.kappa_minus

    def w_window(self, eps: float, order: int) -> tuple[float, float]:
        """Admissible (lower, upper) bounds on |w| for a map of the given order."""
        c = self.window_c
        if order == 1:
            return eps * eps / c, c * eps**0.875
        if order == 2:
            return eps ** (1.0 + self.varpi) / c, c * eps
        raise ConfigError(f"separatrix map order must be 1 or 2, got {order}")

    def check_w(self, w: float, eps: float, order: int) -> None:
        lower, upper = self.w_window(eps, order)
        if not lower < abs(w) < upper:
            raise WindowError(
                f"|w| = {abs(w):.3e} outside the order-{order} window ({lower:.3e}, {upper:.3e})"
            )

    def delta_window(self, eps: float) -> tuple[float, float]:
        return eps**self.varpi, eps**self.rho

    def check_delta(self, delta: float, eps: float) -> None:
        lower, upper = self.delta_window(eps)
        if not lower < delta < upper:
            raise WindowError(f"delta = {delta:.3e} outside ({lower:.3e}, {upper:.3e})")

    def check_action(self, action: float, delta: float) -> None:
        c = self.window_c
        if not delta / c < action < c * delta:
            raise WindowError(
                f"rescaled action {action:.3e} outside ({delta / c:.3e}, {c * delta:.3e})"
            )


def load_calibration(path: Path | None = None) -> Calibration:
    if path is None:
        return _packaged_calibration()
    return _read_calibration(path)


@lru_cache(maxsize=1)
def _packaged_calibration() -> Calibration:
    return _read_calibration(CALIBRATION_FILE)


def _read_calibration(path: Path) -> Calibration:
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read calibration file {path}: {exc}") from exc
    section = data.get("separatrix", {})
    try:
        calibration = Calibration(
            kappa_plus=float(section.get("kappa_plus", 1.0 / 32.0)),
            kappa_minus=float(section.get("kappa_minus", 1.0 / 32.0)),
            window_c=float(section.get("window_c", 4.0)),
            varpi=float(section.get("varpi", 0.75)),
            rho=float(section.get("rho", 0.25)),
            fitted={str(k): float(v) for k, v in data.get("fitted", {}).items()},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed calibration file {path}: {exc}") from exc
    if calibration.kappa_plus <= 0 or calibration.kappa_minus <= 0:
        raise ConfigError("calibration kappa values must be positive")
    if calibration.window_c <= 1.0:
        raise ConfigError("calibration window constant must exceed 1")
    if not 0.0 < calibration.rho < calibration.varpi < 1.0:
        raise ConfigError("calibration exponents need 0 < rho < varpi < 1")
    return calibration


@dataclass(frozen=True)
class PerturbationConfig:
    preset: str = "normalized"
    a: float = 0.05
    rows: tuple[tuple[int, int, float, float], ...] = ()
    table: str = ""

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown perturbation preset {self.preset!r}")
        if self.a < 0.0:
            raise ConfigError("perturbation amplitude a must be non-negative")

    def build(self, base_dir: Path | None = None) -> TrigPolynomial:
        """Factor P(φ, t); a harmonic table wins over rows, rows over the preset."""
        if self.table:
            path = Path(self.table)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            polynomial = TrigPolynomial.load(path)
            polynomial.factor_harmonics()
            return polynomial
        if self.rows:
            return factor(self.rows)
        return PRESETS[self.preset](self.a)


@dataclass(frozen=True)
class MelnikovConfig:
    n_points: int = 100
    eta_min: float = -2.0
    eta_max: float = 2.0
    t_cut: float = 30.0
    tolerance: float = 1e-6
    m1_eta_points: int = 17
    m1_xi_points: int = 16

    def validate(self) -> None:
        if self.n_points < 1:
            raise ConfigError("melnikov.n_points must be at least 1")
        if self.eta_min >= self.eta_max:
            raise ConfigError("melnikov.eta_min must be below eta_max")
        if self.t_cut < 20.0:
            raise ConfigError("melnikov.t_cut must be at least 20")
        if self.tolerance <= 0.0:
            raise ConfigError("melnikov.tolerance must be positive")
        if self.m1_eta_points < 1 or self.m1_xi_points < 1:
            raise ConfigError("the [M1] grid needs at least one cell")


@dataclass(frozen=True)
class SepmapConfig:
    eps_values: tuple[float, ...] = (1e-3, 3e-4, 1e-4)
    eta: float = 0.7
    xi: float = 1.0
    tau: float = 0.2
    w_multiple: float = 5.0
    n_samples: int = 20
    delta_exponent: float = 0.5
    jacobian_eps: float = 1e-4
    slope_min: float = 1.5
    order: int = 1

    def validate(self) -> None:
        if not self.eps_values or any(not 0.0 < e <= 0.1 for e in self.eps_values):
            raise WindowError("sepmap.eps_values must lie in (0, 0.1]")
        if self.w_multiple == 0.0:
            raise ConfigError("sepmap.w_multiple must be nonzero")
        if self.n_samples < 1:
            raise ConfigError("sepmap.n_samples must be at least 1")
        if not 0.0 < self.delta_exponent < 1.0:
            raise WindowError("sepmap.delta_exponent must lie in (0, 1)")
        if not 0.0 < self.jacobian_eps <= 0.1:
            raise WindowError("sepmap.jacobian_eps must lie in (0, 0.1]")
        if self.order not in (1, 2):
            raise ConfigError("sepmap.order must be 1 or 2")


@dataclass(frozen=True)
class NhilConfig:
    eps: float = 1e-4
    delta_exponent: float = 0.5
    eta_points: int = 64
    xi_points: int = 64
    eta_min: float = -2.0
    eta_max: float = 2.0
    kappa: tuple[float, float, float, float] = (0.05, 0.5, 0.2, 0.5)
    n_samples: int = 10_000
    cone_x: float = 1.0
    theta_u: float = 0.5
    word: str = "0000000000"
    study_eps: tuple[float, ...] = (2e-3, 4e-5, 5e-7)
    degree: int = 3

    def validate(self) -> None:
        if not 0.0 < self.eps <= 0.1:
            raise WindowError("nhil.eps must lie in (0, 0.1]")
        if not 0.0 < self.delta_exponent < 1.0:
            raise WindowError("nhil.delta_exponent must lie in (0, 1)")
        if self.eta_points < 2 or self.xi_points < 4:
            raise ConfigError("nhil grid needs at least 2 x 4 nodes")
        if self.eta_min >= self.eta_max:
            raise ConfigError("nhil.eta_min must be below eta_max")
        if len(self.kappa) != 4 or any(k <= 0.0 for k in self.kappa):
            raise ConfigError("nhil.kappa needs four positive constants")
        if self.n_samples < 1:
            raise ConfigError("nhil.n_samples must be at least 1")
        if self.cone_x <= 0.0 or self.theta_u <= 0.0:
            raise ConfigError("nhil.cone_x and nhil.theta_u must be positive")
        SymbolWord.parse(self.word)
        if len(self.study_eps) == 1 or any(not 0.0 < e <= 0.1 for e in self.study_eps):
            raise WindowError("nhil.study_eps needs no values or at least two in (0, 0.1]")
        if self.degree < 1:
            raise ConfigError("nhil.degree must be at least 1")


@dataclass(frozen=True)
class DiffuseConfig:
    eps: float = 0.01
    s: float = 1.0
    n_samples: int = DESK_MODEL_SAMPLES
    r0: float = 0.3
    s_values: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0)
    ito_dt: float = 0.001
    n_bins: int = 50
    full_eps: float = 0.01
    full_samples: int = DESK_FULL_SAMPLES
    full_dt: float = 0.05
    horizons: tuple[float, ...] = (1.0, 4.0)
    i_star: float = math.sqrt(2.0)
    base_time: float = 0.0
    full_flow: bool = True
    family: str = ""

    def validate(self) -> None:
        for name in ("eps", "full_eps"):
            if not 0.0 < getattr(self, name) <= 0.1:
                raise WindowError(f"diffuse.{name} must lie in (0, 0.1]")
        if self.s <= 0.0 or any(s <= 0.0 for s in self.s_values):
            raise ConfigError("diffuse rescaled times must be positive")
        if self.n_samples < 1 or self.full_samples < 1:
            raise ConfigError("diffuse sample counts must be at least 1")
        if self.ito_dt > self.s / 100.0:
            raise ConfigError("diffuse.ito_dt must not exceed s/100")
        if self.n_bins < 1:
            raise ConfigError("diffuse.n_bins must be at least 1")
        if self.full_dt <= 0.0:
            raise ConfigError("diffuse.full_dt must be positive")
        if not self.horizons or any(h <= 0.0 for h in self.horizons):
            raise ConfigError("diffuse.horizons must be positive multipliers")
        if len(self.s_values) == 1:
            raise ConfigError("diffuse.s_values needs no values or at least two")
        if self.base_time < 0.0:
            raise ConfigError("diffuse.base_time must be non-negative")


@dataclass(frozen=True)
class TwistConfig:
    eps_values: tuple[float, ...] = (1e-3, 3e-4, 1e-4)
    standard_k: float = 0.9
    n_curves: int = 8
    n_points: int = 256
    slope_min: float = 3.0

    def validate(self) -> None:
        if len(self.eps_values) < 2 or any(not 0.0 < e < 1.0 for e in self.eps_values):
            raise WindowError("twist.eps_values needs at least two values in (0, 1)")
        if self.n_curves < 1 or self.n_points < 8:
            raise ConfigError("twist needs n_curves >= 1 and n_points >= 8")


_SECTIONS: dict[str, type] = {
    "perturbation": PerturbationConfig,
    "melnikov": MelnikovConfig,
    "sepmap": SepmapConfig,
    "nhil": NhilConfig,
    "diffuse": DiffuseConfig,
    "twist": TwistConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    melnikov: MelnikovConfig = field(default_factory=MelnikovConfig)
    sepmap: SepmapConfig = field(default_factory=SepmapConfig)
    nhil: NhilConfig = field(default_factory=NhilConfig)
    diffuse: DiffuseConfig = field(default_factory=DiffuseConfig)
    twist: TwistConfig = field(default_factory=TwistConfig)
    seed: int = 0
    workers: int = 1
    full_scale: bool = False
    base_dir: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for name in _SECTIONS:
            getattr(self, name).validate()

    @property
    def model_samples(self) -> int:
        return FULL_SCALE_SAMPLES if self.full_scale else self.diffuse.n_samples

    @property
    def full_flow_samples(self) -> int:
        return FULL_SCALE_SAMPLES if self.full_scale else self.diffuse.full_samples

    def polynomial(self) -> TrigPolynomial:
        base = Path(self.base_dir) if self.base_dir else None
        return self.perturbation.build(base)

    def resolve(self, value: str) -> Path:
        """A path from the config file, relative to the file's directory."""
        path = Path(value)
        if self.base_dir and not path.is_absolute():
            path = Path(self.base_dir) / path
        return path

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("base_dir")
        return data

    def digest(self) -> str:
        """blake3 of the canonical JSON form; identifies runs in the ledger."""
        payload = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=True)
        return blake3(payload.encode("utf-8")).hexdigest()

    def with_overrides(self, **changes: Any) -> ExperimentConfig:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(**data)


def _coerce(section: str, cls: type, raw: dict[str, Any]) -> Any:
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    defaults = cls()
    values: dict[str, Any] = {}
    for key, value in raw.items():
        current = getattr(defaults, key)
        try:
            if isinstance(current, tuple):
                if key == "rows":
                    value = tuple(
                        (int(r[0]), int(r[1]), float(r[2]), float(r[3])) for r in value
                    )
                else:
                    value = tuple(float(v) for v in value)
            elif isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int):
                if isinstance(value, bool) or int(value) != value:
                    raise ValueError(f"expected an integer, got {value!r}")
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            elif isinstance(current, str):
                if not isinstance(value, str):
                    raise ValueError(f"expected a string, got {value!r}")
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
        values[key] = value
    return cls(**values)


def load_config(path: Path) -> ExperimentConfig:
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_mapping(data, base_dir=path.resolve().parent)


def config_from_mapping(data: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    top_level = {"seed", "workers", "full_scale"}
    unknown = sorted(set(data) - set(_SECTIONS) - top_level)
    if unknown:
        raise ConfigError(f"unknown config sections or keys: {', '.join(unknown)}")
    sections = {
        name: _coerce(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()
    }
    scalars = _coerce("top level", _TopLevel, {k: data[k] for k in top_level if k in data})
    return ExperimentConfig(
        **sections,
        seed=scalars.seed,
        workers=scalars.workers,
        full_scale=scalars.full_scale,
        base_dir=str(base_dir) if base_dir else "",
    )


@dataclass(frozen=True)
class _TopLevel:
    seed: int = 0
    workers: int = 1
    full_scale: bool = False


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=True)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return str(value)


def describe(config: ExperimentConfig | None = None) -> str:
    """Render a config (the defaults when omitted) as TOML text."""
    config = config or ExperimentConfig()
    lines = [
        "# arnoldlab experiment configuration",
        f"seed = {config.seed}",
        f"workers = {config.workers}",
        f"full_scale = {_toml_value(config.full_scale)}",
    ]
    for name in _SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        section = getattr(config, name)
        for f in fields(section):
            lines.append(f"{f.name} = {_toml_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"
