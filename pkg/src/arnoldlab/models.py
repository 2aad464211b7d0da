from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


def wrap_angle(value):
    """Reduce an angle (scalar or array) into [0, 2π)."""
    return np.mod(value, TWO_PI)


class Frame(str, Enum):
    APEX = "apex"
    SECTION = "section"


class Scheme(str, Enum):
    STRANG = "strang-dkd"
    DOP853 = "dop853"


class BlockVariant(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class PhaseState:
    p: float
    q: float
    I: float
    phi: float
    t: float

    def reduced(self) -> PhaseState:
        return PhaseState(
            p=self.p,
            q=float(wrap_angle(self.q)),
            I=self.I,
            phi=float(wrap_angle(self.phi)),
            t=float(wrap_angle(self.t)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.q, self.I, self.phi, self.t], dtype=float)

    @classmethod
    def from_array(cls, values) -> PhaseState:
        p, q, action, phi, t = (float(v) for v in values)
        return cls(p=p, q=q, I=action, phi=phi, t=t)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution; ``states`` has columns p, q, I, phi, t."""

    times: np.ndarray
    states: np.ndarray
    step: float
    scheme: Scheme

    def __post_init__(self) -> None:
        if self.times.ndim != 1 or self.states.shape != (self.times.size, 5):
            raise ValueError("trajectory arrays have inconsistent shapes")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory time stamps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.times.size)

    def state(self, index: int) -> PhaseState:
        return PhaseState.from_array(self.states[index])

    @property
    def initial(self) -> PhaseState:
        return self.state(0)

    @property
    def final(self) -> PhaseState:
        return self.state(-1)


@dataclass(frozen=True)
class SepState:
    eta: float
    xi: float
    h: float
    tau: float
    sigma: int = 1

    def __post_init__(self) -> None:
        if self.sigma not in (1, -1):
            raise ValueError(f"loop sign must be +1 or -1, got {self.sigma}")

    @property
    def w(self) -> float:
        return self.h - 0.5 * self.eta * self.eta

    def rescaled_action(self, eps: float) -> float:
        return self.w / eps

    @classmethod
    def from_rescaled(
        cls, eta: float, xi: float, action: float, tau: float, eps: float, sigma: int = 1
    ) -> SepState:
        return cls(eta=eta, xi=xi, h=0.5 * eta * eta + eps * action, tau=tau, sigma=sigma)


@dataclass(frozen=True, eq=False)
class SepJacobian:
    """Differential of the rescaled separatrix map in (η, ξ, I, τ)."""

    point: tuple[float, float, float, float]
    display: np.ndarray
    exact: np.ndarray
    finite_difference: np.ndarray
    alpha: float
    beta: float
    gamma: float
    zeta: float
    delta_m: float
    action_plus: float

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.display))

    @property
    def predicted_trace(self) -> float:
        return 4.0 - self.delta_m * self.beta


@dataclass(frozen=True)
class M1Zeros:
    eta: float
    xi: float
    roots: tuple[float, ...]
    degenerate: tuple[bool, ...]

    @property
    def count(self) -> int:
        return len(self.roots)

    @property
    def regular(self) -> bool:
        return self.count == 2 and not any(self.degenerate)


@dataclass(frozen=True, eq=False)
class M1Report:
    etas: np.ndarray
    xis: np.ndarray
    roots: np.ndarray
    delta_m: np.ndarray
    root_counts: np.ndarray
    failing_cells: tuple[tuple[float, float, int], ...]
    min_abs_delta_m: float
    threshold: float
    continuity_ok: bool
    passed: bool


@dataclass(frozen=True, eq=False)
class CenterCylinder:
    """Grid of an approximately invariant cylinder over K × [0, 2π)."""

    label: str
    etas: np.ndarray
    xis: np.ndarray
    action: np.ndarray
    tau: np.ndarray
    eps: float
    delta: float
    a: float
    shift_integer: int
    residual_action: float
    residual_tau: float
    image_label: str
    action_bar: np.ndarray = field(repr=False)
    tau_first: np.ndarray = field(repr=False)
    tau_second: np.ndarray = field(repr=False)

    @property
    def current_symbol(self) -> int:
        return int(self.label[0])

    @property
    def level(self) -> float:
        """Unperturbed action level, δ or δe^{-π}."""
        return self.delta if self.label[0] == self.label[1] else self.delta * math.exp(-math.pi)

    @property
    def max_residual(self) -> float:
        return max(self.residual_action, self.residual_tau)


@dataclass(frozen=True, eq=False)
class IsolatingBlock:
    label: str
    center: CenterCylinder
    v3: np.ndarray
    v4: np.ndarray
    delta_m: np.ndarray
    lambda_unstable: np.ndarray
    width_unstable: float
    width_stable: float
    delta: float
    variant: BlockVariant = BlockVariant.STABLE

    @property
    def min_frame_angle(self) -> float:
        cosines = np.abs(np.einsum("ijk,ijk->ij", self.v3, self.v4))
        return float(np.min(np.arccos(np.clip(cosines, 0.0, 1.0))))


@dataclass(frozen=True, eq=False)
class LeafDensity:
    label: str
    etas: np.ndarray
    xis: np.ndarray
    rho: np.ndarray
    eps: float

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.rho - 1.0)))


@dataclass(frozen=True)
class SymbolWord:
    """Finite 0/1 word; step i visits the block labelled (ω_i, ω_{i−1})."""

    symbols: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.symbols or any(s not in (0, 1) for s in self.symbols):
            raise ConfigError("a symbol word is a nonempty sequence of 0 and 1")

    @classmethod
    def parse(cls, word: str | Sequence[int] | SymbolWord) -> SymbolWord:
        if isinstance(word, SymbolWord):
            return word
        try:
            symbols = tuple(int(s) for s in word)
        except ValueError as exc:
            raise ConfigError(f"symbol word {word!r} is not made of 0 and 1") from exc
        return cls(symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __str__(self) -> str:
        return "".join(str(s) for s in self.symbols)

    @property
    def labels(self) -> tuple[str, ...]:
        """Block label per step; the first step reads ω₁ as its previous symbol."""
        previous = self.symbols[1] if len(self.symbols) > 1 else self.symbols[0]
        labels = []
        for symbol in self.symbols:
            labels.append(f"{symbol}{previous}")
            previous = symbol
        return tuple(labels)


@dataclass(frozen=True)
class EnsembleConfig:
    eps: float
    s: float
    n_samples: int
    seed: int
    r0: float = 0.0
    theta_law: str = "uniform"
    band: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.eps <= 0.1:
            raise ConfigError(f"eps must lie in (0, 0.1], got {self.eps}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be at least 1")
        if self.s <= 0.0:
            raise ConfigError("rescaled time s must be positive")
        if self.theta_law not in ("uniform", "fixed"):
            raise ConfigError(f"unknown theta law {self.theta_law!r}")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.s / (self.eps * self.eps)))


@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray
    edges: np.ndarray
    underflow: int = 0
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass(frozen=True, eq=False)
class DiffusionEstimate:
    samples: np.ndarray
    mean: float
    variance: float
    histogram: Histogram
    ks: float | None = None
    stopped: int = 0
    label: str = ""

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)
