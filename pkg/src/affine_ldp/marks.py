"""Mark laws with closed-form tilted moments.

Every quantity the rest of the package needs from a mark distribution is a
tilted moment ``E[Z**k * exp(s*Z)]``; the three supported families give it
in closed form, which keeps numerical quadrature out of the Newton and ODE
loops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import IncommensurableLattices, MGFDomainExceeded


class MarkLaw:
    """Interface shared by the mark families."""

    kind: str = ""

    def moment(self, k: int, s: float = 0.0) -> float:
        """Return ``E[Z**k exp(s Z)]``, i.e. the k-th derivative of the MGF at s."""
        return float(self.moment_array(k, np.asarray(s, dtype=float)))

    def moment_array(self, k: int, s: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`moment` over an array of tilts."""
        raise NotImplementedError

    def mgf(self, s: float) -> float:
        return self.moment(0, s)

    @property
    def mean(self) -> float:
        return self.moment(1, 0.0)

    @property
    def second_moment(self) -> float:
        return self.moment(2, 0.0)

    @property
    def mgf_sup(self) -> float:
        """Supremum of the exponential-moment domain ``{s : E[e^{sZ}] < inf}``."""
        return math.inf

    def tilt(self, s: float) -> "MarkLaw":
        """Law with density proportional to ``exp(s z)`` relative to this one."""
        raise NotImplementedError

    def span(self) -> Optional[Fraction]:
        """Lattice span as an exact fraction, or None for a non-lattice law."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(MarkLaw):
    value: float = 1.0
    kind = "constant"

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"constant mark must be positive, got {self.value}")

    def moment_array(self, k, s):
        c = self.value
        return c**k * np.exp(s * c)

    def tilt(self, s):
        return self

    def span(self):
        return _as_fraction(self.value)

    def to_dict(self):
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class Exponential(MarkLaw):
    mean_: float = 1.0
    kind = "exponential"

    def __post_init__(self):
        if not self.mean_ > 0:
            raise ValueError(f"exponential mean must be positive, got {self.mean_}")

    @property
    def mgf_sup(self):
        return 1.0 / self.mean_

    def moment_array(self, k, s):
        mu = self.mean_
        q = 1.0 - mu * s
        if np.any(q <= 0.0):
            raise MGFDomainExceeded(
                f"tilt {np.max(s)} reaches the exponential MGF boundary {1.0 / mu}")
        return math.factorial(k) * mu**k / q ** (k + 1)

    def tilt(self, s):
        q = 1.0 - self.mean_ * s
        if q <= 0.0:
            raise MGFDomainExceeded(
                f"tilt {s} reaches the exponential MGF boundary {1.0 / self.mean_}")
        return Exponential(self.mean_ / q)

    def span(self):
        return None

    def to_dict(self):
        return {"type": "exponential", "mean": self.mean_}


@dataclass(frozen=True)
class FiniteLattice(MarkLaw):
    """Finitely supported law on ``{k * b}`` given as ``(k, probability)`` atoms."""

    b: float = 1.0
    atoms: Tuple[Tuple[int, float], ...] = ((1, 1.0),)
    kind = "lattice"

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("lattice span must be positive")
        atoms = tuple((int(k), float(p)) for k, p in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if any(k < 0 for k, _ in atoms) or any(p < 0 for _, p in atoms):
            raise ValueError("lattice atoms need nonnegative multiples and probabilities")
        total = sum(p for _, p in atoms)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"lattice probabilities sum to {total}, not 1")
        if all(k == 0 for k, p in atoms if p > 0):
            raise ValueError("lattice law must put mass on a positive atom")

    @property
    def support(self) -> np.ndarray:
        return np.array([k * self.b for k, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    def moment_array(self, k, s):
        z = self.support
        s = np.asarray(s, dtype=float)
        return np.sum(self.probs * z**k * np.exp(s[..., None] * z), axis=-1)

    def tilt(self, s):
        w = self.probs * np.exp(s * self.support)
        w = w / w.sum()
        return FiniteLattice(self.b, tuple((k, float(p)) for (k, _), p in zip(self.atoms, w)))

    def span(self):
        ks = [k for k, p in self.atoms if p > 0 and k > 0]
        return _as_fraction(self.b) * math.gcd(*ks)

    def to_dict(self):
        return {"type": "lattice", "span": self.b, "atoms": [list(a) for a in self.atoms]}


def _as_fraction(x: float) -> Fraction:
    f = Fraction(x).limit_denominator(10**6)
    if abs(float(f) - x) > 1e-12 * max(1.0, abs(x)):
        raise IncommensurableLattices(f"span {x!r} has no short rational representation")
    return f


def common_span(laws: Sequence[MarkLaw]) -> Optional[float]:
    """Largest ``b`` with every law supported on ``b*N``; None if any law is non-lattice."""
    spans = [law.span() for law in laws]
    if any(s is None for s in spans):
        return None
    g = spans[0]
    for s in spans[1:]:
        num = math.gcd(g.numerator * s.denominator, s.numerator * g.denominator)
        g = Fraction(num, g.denominator * s.denominator)
    return float(g)


def mark_from_dict(spec: dict) -> MarkLaw:
    kind = str(spec.get("type", "")).lower()
    if kind == "constant":
        return Constant(float(spec["value"]))
    if kind == "exponential":
        return Exponential(float(spec["mean"]))
    if kind in ("lattice", "finite_lattice"):
        return FiniteLattice(float(spec["span"]), tuple(tuple(a) for a in spec["atoms"]))
    raise ValueError(f"unknown mark type {spec.get('type')!r}")
