from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .errors import ConfigError, HarmonicTableError

Harmonic = tuple[int, int, int]
Term = tuple[Harmonic, float, float]

SINH_HALF_PI = math.sinh(math.pi / 2.0)
_ZERO: Harmonic = (0, 0, 0)


def canonical_harmonic(k: Harmonic, cos_coeff: float, sin_coeff: float) -> Term:
    """Return the unique representative of ±k.

    The first nonzero index is made positive; cos is even and sin is odd
    under k → −k, so only the sine coefficient changes sign.
    """
    k = (int(k[0]), int(k[1]), int(k[2]))
    if k == _ZERO:
        return k, float(cos_coeff), 0.0
    for entry in k:
        if entry != 0:
            if entry < 0:
                return (-k[0], -k[1], -k[2]), float(cos_coeff), -float(sin_coeff)
            break
    return k, float(cos_coeff), float(sin_coeff)


class TrigPolynomial:
    """Real trigonometric polynomial in (q, φ, t).

    P = Σ_k p'_k cos(k1 q + k2 φ + k3 t) + p''_k sin(k1 q + k2 φ + k3 t)
    """

    __slots__ = ("_cos", "_sin", "_degree", "_k", "_pc", "_ps")

    def __init__(
        self,
        cos_coeffs: Mapping[Harmonic, float],
        sin_coeffs: Mapping[Harmonic, float],
        degree: int | None = None,
    ) -> None:
        merged: dict[Harmonic, list[float]] = {}
        for source, column in ((cos_coeffs, 0), (sin_coeffs, 1)):
            for k, value in source.items():
                pc, ps = (value, 0.0) if column == 0 else (0.0, value)
                key, pc, ps = canonical_harmonic(k, pc, ps)
                slot = merged.setdefault(key, [0.0, 0.0])
                slot[0] += pc
                slot[1] += ps
        kept = {k: v for k, v in merged.items() if v[0] != 0.0 or v[1] != 0.0}
        inferred = max((max(abs(i) for i in k) for k in kept), default=0)
        if degree is None:
            degree = max(inferred, 1)
        if degree < 1:
            raise ConfigError(f"degree must be positive, got {degree}")
        if inferred > degree:
            raise ConfigError(f"harmonic index exceeds degree {degree}")
        ordered = sorted(kept)
        self._degree = int(degree)
        self._cos = MappingProxyType({k: kept[k][0] for k in ordered if kept[k][0] != 0.0})
        self._sin = MappingProxyType({k: kept[k][1] for k in ordered if kept[k][1] != 0.0})
        self._k = np.array(ordered, dtype=float).reshape(-1, 3)
        self._pc = np.array([kept[k][0] for k in ordered], dtype=float)
        self._ps = np.array([kept[k][1] for k in ordered], dtype=float)

    @classmethod
    def from_terms(cls, terms: Iterable[Term], degree: int | None = None) -> TrigPolynomial:
        cos_coeffs: dict[Harmonic, float] = {}
        sin_coeffs: dict[Harmonic, float] = {}
        for k, pc, ps in terms:
            key, pc, ps = canonical_harmonic(k, pc, ps)
            cos_coeffs[key] = cos_coeffs.get(key, 0.0) + pc
            sin_coeffs[key] = sin_coeffs.get(key, 0.0) + ps
        return cls(cos_coeffs, sin_coeffs, degree)

    @property
    def degree(self) -> int:
        return self._degree

    @property
    def cos_coeffs(self) -> Mapping[Harmonic, float]:
        return self._cos

    @property
    def sin_coeffs(self) -> Mapping[Harmonic, float]:
        return self._sin

    def terms(self) -> list[Term]:
        return [
            ((int(k[0]), int(k[1]), int(k[2])), float(pc), float(ps))
            for k, pc, ps in zip(self._k, self._pc, self._ps, strict=True)
        ]

    def coefficient(self, k: Harmonic) -> tuple[float, float]:
        key, _, flip = canonical_harmonic(k, 0.0, 1.0)
        pc = self._cos.get(key, 0.0)
        ps = self._sin.get(key, 0.0)
        return pc, ps if flip > 0 else -ps

    @property
    def is_zero(self) -> bool:
        return self._k.shape[0] == 0

    @property
    def mean(self) -> float:
        return float(self._cos.get(_ZERO, 0.0))

    @property
    def depends_on_q(self) -> bool:
        return bool(np.any(self._k[:, 0] != 0))

    def without_constant(self) -> TrigPolynomial:
        return TrigPolynomial.from_terms(
            [term for term in self.terms() if term[0] != _ZERO], self._degree
        )

    def scaled(self, factor: float) -> TrigPolynomial:
        return TrigPolynomial.from_terms(
            [(k, factor * pc, factor * ps) for k, pc, ps in self.terms()], self._degree
        )

    def __add__(self, other: TrigPolynomial) -> TrigPolynomial:
        return TrigPolynomial.from_terms(
            self.terms() + other.terms(), max(self._degree, other._degree)
        )

    def _phases(self, q, phi, t):
        q, phi, t = np.broadcast_arrays(
            np.asarray(q, dtype=float), np.asarray(phi, dtype=float), np.asarray(t, dtype=float)
        )
        return [k[0] * q + k[1] * phi + k[2] * t for k in self._k], q.shape

    def __call__(self, q, phi, t):
        phases, shape = self._phases(q, phi, t)
        total = np.zeros(shape)
        for theta, pc, ps in zip(phases, self._pc, self._ps, strict=True):
            total = total + pc * np.cos(theta) + ps * np.sin(theta)
        return total if total.ndim else float(total)

    def gradient(self, q, phi, t):
        """Return (∂_q P, ∂_φ P, ∂_t P)."""
        phases, shape = self._phases(q, phi, t)
        dq, dphi, dt = np.zeros(shape), np.zeros(shape), np.zeros(shape)
        for theta, k, pc, ps in zip(phases, self._k, self._pc, self._ps, strict=True):
            slope = ps * np.cos(theta) - pc * np.sin(theta)
            dq = dq + k[0] * slope
            dphi = dphi + k[1] * slope
            dt = dt + k[2] * slope
        if dq.ndim == 0:
            return float(dq), float(dphi), float(dt)
        return dq, dphi, dt

    def factor_harmonics(self) -> dict[tuple[int, int], tuple[float, float]]:
        """Harmonics (k_φ, k_t) of a q-independent factor P(φ, t)."""
        if self.depends_on_q:
            raise ConfigError("the perturbation factor must not depend on q")
        return {
            (int(k[1]), int(k[2])): (float(pc), float(ps))
            for k, pc, ps in zip(self._k, self._pc, self._ps, strict=True)
        }

    def with_separatrix_factor(self) -> TrigPolynomial:
        """Return (cos q − 1)·P for a q-independent factor P(φ, t)."""
        terms: list[Term] = []
        for (k2, k3), (pc, ps) in self.factor_harmonics().items():
            terms.append(((1, k2, k3), 0.5 * pc, 0.5 * ps))
            terms.append(((-1, k2, k3), 0.5 * pc, 0.5 * ps))
            terms.append(((0, k2, k3), -pc, -ps))
        return TrigPolynomial.from_terms(terms, max(self._degree, 1))

    def to_table(self) -> str:
        lines = ["# k1 k2 k3 cos sin"]
        for (k1, k2, k3), pc, ps in self.terms():
            lines.append(f"{k1} {k2} {k3} {pc!r} {ps!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text: str) -> TrigPolynomial:
        terms: list[Term] = []
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 5:
                raise HarmonicTableError(
                    f"expected 5 fields 'k1 k2 k3 cos sin', got {len(fields)}", line=number
                )
            try:
                k = (int(fields[0]), int(fields[1]), int(fields[2]))
            except ValueError as exc:
                raise HarmonicTableError(f"harmonic indices must be integers: {exc}", line=number)
            try:
                pc, ps = float(fields[3]), float(fields[4])
            except ValueError as exc:
                raise HarmonicTableError(f"coefficients must be real: {exc}", line=number)
            if not (math.isfinite(pc) and math.isfinite(ps)):
                raise HarmonicTableError("coefficients must be finite", line=number)
            terms.append((k, pc, ps))
        return cls.from_terms(terms)

    @classmethod
    def load(cls, path: Path) -> TrigPolynomial:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise HarmonicTableError(f"cannot read harmonic table {path}: {exc}")
        return cls.from_table(text)

    def __repr__(self) -> str:
        return f"TrigPolynomial(degree={self._degree}, terms={self.terms()!r})"


def factor(terms: Iterable[tuple[int, int, float, float]]) -> TrigPolynomial:
    """Build P(φ, t) from rows (k_φ, k_t, p', p'')."""
    return TrigPolynomial.from_terms(((0, k2, k3), pc, ps) for k2, k3, pc, ps in terms)


def arnold() -> TrigPolynomial:
    """cos φ + cos t."""
    return factor([(1, 0, 1.0, 0.0), (0, 1, 1.0, 0.0)])


def zero() -> TrigPolynomial:
    return TrigPolynomial({}, {})


DEFAULT_CLASS_TERMS: tuple[tuple[int, int, float, float], ...] = (
    (1, 2, 1.0, 0.0),
    (3, 0, 1.0, 0.0),
)


def normalized_class(
    a: float, extra: Iterable[tuple[int, int, float, float]] = DEFAULT_CLASS_TERMS
) -> TrigPolynomial:
    """−sinh(π/2)·cos t + a·Σ extra.

    The leading coefficient is negative so that the splitting potential
    starts as +2π cos τ.
    """
    rows = [(0, 1, -SINH_HALF_PI, 0.0)]
    rows.extend((k2, k3, a * pc, a * ps) for k2, k3, pc, ps in extra)
    return factor(rows)


PRESETS = {
    "arnold": lambda a: arnold(),
    "normalized": normalized_class,
    "zero": lambda a: zero(),
}
