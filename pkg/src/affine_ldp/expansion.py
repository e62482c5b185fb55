"""Expansion coefficients and the assembled tail approximations.

All approximations share the form

    exp(-t I(R)) / sqrt(2 pi t eta''(h)) * (k_0 + k_1 / t + k_2 / t**2 + ...),

with lattice coefficients ``c_k`` (probability) and ``c_hat_k`` (expectation of
a payoff ``g``), or non-lattice coefficients ``d_k`` and ``d_hat_k``.

Each first-order coefficient is computed twice: once through the general
partition sums and once through an independent closed form.  The two must
agree to ``1e-12`` relative, which guards both against transcription slips.

Notes
-----
For the non-lattice sums the factor attached to the Hermite index ``m`` is
``(-1)^m (p + 2M)! / (m! (p + 2M - 2m)! 2^m)``, i.e. the coefficients of the
probabilists' Hermite polynomial.  The matching closed form of ``d_1`` has
``eta''' / (2 eta'')`` inside its second bracket.  Both were checked against
the exact Gamma tail (sums of exponentials), for which the truncation error
drops to second order only with these factors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gamma as gamma_fn, poch
from scipy.stats import norm

from .combinatorics import Partition, partitions
from .errors import GrowthBoundViolated, UnsupportedOrder
from .model import AffineModel, ergodic_quantities, lattice_span
from .ode import PsiPack, psi_derivatives, psi_higher_derivatives
from .transform import CumulantPack, solve_saddlepoint

__all__ = [
    "Partition", "partitions", "a_k_sequence", "Indicator", "Power", "LatticeCallable",
    "Series", "ExpansionResult", "lattice_coeffs", "nonlattice_coeffs",
    "tail_probability", "tail_expectation", "clt_tail", "CLTResult", "DUAL_PATH_RTOL",
]

DUAL_PATH_RTOL = 1e-12
SERIES_RTOL = 1e-16


class DualPathMismatch(AssertionError):
    """General and closed-form coefficient paths disagree."""


# ---------------------------------------------------------------------------
# a_k recursion

def a_k_sequence(s: float, K: int) -> List[float]:
    """Coefficients of the Gaussian-tail Laplace expansion.

    ``a_0 = 1`` and ``a_k = (-1)^k - sum_{j<k} (j+s)_{k-j} / ((k-j)! 2^{k-j}) a_j``,
    so that ``int_0^inf y^s exp(-lam (y+1)^2 / 2) dy`` is asymptotic to
    ``exp(-lam/2) sum_k Gamma(k+s+1) a_k / lam^{s+1+k}``.
    """
    a = []
    for k in range(K + 1):
        acc = (-1.0) ** k
        for j in range(k):
            acc -= poch(j + s, k - j) / (math.factorial(k - j) * 2.0 ** (k - j)) * a[j]
        a.append(acc)
    return a


# ---------------------------------------------------------------------------
# payoffs

@dataclass(frozen=True)
class Indicator:
    """``g = 1``: plain tail probability."""

    name = "prob"

    def lattice_value(self, x: np.ndarray) -> np.ndarray:
        return np.ones_like(x, dtype=float)

    def series(self) -> Tuple[float, Tuple[float, ...]]:
        return 0.0, (1.0,)

    def check_growth(self, h: float) -> None:
        return None


@dataclass(frozen=True)
class Power:
    """``g(x) = x**gamma``; ``gamma = 1`` is the stop-loss payoff ``(V - Rt)^+``."""

    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("power payoff needs gamma >= 0")

    @property
    def name(self) -> str:
        return "plus" if self.gamma == 1 else f"power:{self.gamma:g}"

    def lattice_value(self, x):
        x = np.asarray(x, dtype=float)
        if self.gamma == 0:
            return np.ones_like(x)
        return x**self.gamma

    def series(self):
        k = math.floor(self.gamma)
        coeffs = [0.0] * k + [1.0]
        return self.gamma - k, tuple(coeffs)

    def check_growth(self, h):
        return None


@dataclass(frozen=True)
class LatticeCallable:
    """Arbitrary payoff on lattice points with growth ``|g(x)| <= abar exp(hbar x)``."""

    g: Callable[[np.ndarray], np.ndarray]
    abar: float = 1.0
    hbar: float = 0.0
    name: str = "callable"

    def lattice_value(self, x):
        return np.asarray(self.g(np.asarray(x, dtype=float)), dtype=float)

    def series(self):
        raise ValueError("a lattice callable payoff has no power-series form")

    def check_growth(self, h):
        if self.hbar >= h:
            raise GrowthBoundViolated(f"payoff growth {self.hbar} is not below the tilt {h}")


@dataclass(frozen=True)
class Series:
    """``g(x) = sum_q coeffs[q] x^{q + offset}`` with ``coeffs[q] <= abar hbar^q / q!``."""

    coeffs: Tuple[float, ...]
    offset: float = 0.0
    abar: float = 1.0
    hbar: float = 0.0
    name: str = "series"

    def __post_init__(self):
        if not 0.0 <= self.offset < 1.0:
            raise ValueError("series offset must lie in [0, 1)")

    def lattice_value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for q, gq in enumerate(self.coeffs):
            if gq:
                p = q + self.offset
                out += gq * (x**p if p > 0 else np.ones_like(x))
        return out

    def series(self):
        return self.offset, tuple(self.coeffs)

    def check_growth(self, h):
        if self.hbar >= h:
            raise GrowthBoundViolated(f"payoff growth {self.hbar} is not below the tilt {h}")
        for q, gq in enumerate(self.coeffs):
            if gq > self.abar * self.hbar**q / math.factorial(q) * (1 + 1e-12):
                raise GrowthBoundViolated(f"series coefficient {q} exceeds its declared bound")


TailFunctional = Union[Indicator, Power, LatticeCallable, Series]


# ---------------------------------------------------------------------------
# shared pieces

def _double_factorial_odd(n: int) -> float:
    """``n!!`` for odd ``n >= -1``."""
    return float(math.prod(range(n, 0, -2))) if n > 0 else 1.0


def _partition_term(part: Partition, eta: Sequence[float]) -> float:
    """``prod_j (eta^{(j+2)} / (eta'' (j+2)(j+1)))^{m_j} / prod_j (m_j! j!^{m_j})``."""
    e2 = eta[2]
    vals = [eta[j + 2] / (e2 * (j + 2) * (j + 1)) for j in range(1, part.n + 1)]
    return part.inverse_weight() * part.product(vals)


def _check(general: float, closed: float, label: str) -> None:
    scale = max(abs(general), abs(closed))
    if scale > 0 and abs(general - closed) > DUAL_PATH_RTOL * scale:
        raise DualPathMismatch(f"{label}: general {general!r} vs closed form {closed!r}")


def _lattice_sums(g: Callable, h: float, powers: int, span: float = 1.0) -> np.ndarray:
    """``S_j = sum_q g(q b) e^{-q h} q^j`` for ``j = 0..powers`` (``q`` in lattice units)."""
    out = np.zeros(powers + 1)
    start, chunk = 0, 4096
    while True:
        q = np.arange(start, start + chunk, dtype=float)
        base = g(q * span) * np.exp(-q * h)
        terms = base[None, :] * q[None, :] ** np.arange(powers + 1)[:, None]
        out += terms.sum(axis=1)
        tail = np.abs(terms[:, -64:]).max(axis=1)
        start += chunk
        if np.all(tail <= SERIES_RTOL * np.maximum(np.abs(out), 1e-300)) or start > 10**7:
            return out


# ---------------------------------------------------------------------------
# lattice coefficients

def _lattice_general(k: int, h: float, eta: Sequence[float], psi: Sequence[float],
                     G: Sequence[float]) -> float:
    """``c_hat_k`` from the partition sum; ``G[m] = sum_q g(q) e^{-qh} (-q)^m / m!``."""
    e2 = eta[2]
    total = 0.0
    for m in range(2 * k + 1):
        for ell in range(2 * k + 1 - m):
            nn = 2 * k - m - ell
            inner = 0.0
            for part in partitions(nn):
                M = part.size
                inner += ((-1.0) ** M * _partition_term(part, eta)
                          * (-1.0) ** k * _double_factorial_odd(2 * (k + M) - 1) / e2**k)
            total += G[m] * psi[ell] / math.factorial(ell) * inner
    return total


def _lattice_closed(k: int, eta, psi, S) -> float:
    """Closed forms for ``k = 0, 1`` with ``S[j] = sum_q g(q) e^{-qh} q^j``."""
    p0, p1, p2 = psi[0], psi[1], psi[2]
    e2, e3, e4 = eta[2], eta[3], eta[4]
    if k == 0:
        return S[0] * p0
    return (-0.5 * p0 * S[2] / e2 - 0.5 * S[0] * p2 / e2
            + S[0] * p0 * (e4 / (8 * e2**2) - 5 * e3**2 / (24 * e2**3))
            + S[1] * p1 / e2 + 0.5 * S[0] * p1 * e3 / e2**2 - 0.5 * S[1] * p0 * e3 / e2**2)


def _lattice_closed_indicator(k: int, h: float, eta, psi) -> float:
    """Closed forms for the tail probability using geometric-series identities."""
    q = math.exp(-h)
    one = 1.0 - q
    p0, p1, p2 = psi[0], psi[1], psi[2]
    e2, e3, e4 = eta[2], eta[3], eta[4]
    if k == 0:
        return p0 / one
    return (-0.5 * p0 * (q + q * q) / one**3 / e2
            - 0.5 / one * p2 / e2
            + p0 / one * (e4 / (8 * e2**2) - 5 * e3**2 / (24 * e2**3))
            + q / one**2 * p1 / e2
            + 0.5 / one * p1 * e3 / e2**2
            - 0.5 * q * p0 / one**2 * e3 / e2**2)


def _rescaled(span: float, h: float, eta: Sequence[float], psi: Sequence[float]):
    """Derivatives in lattice units, where the lattice becomes the integers."""
    eta_u = [e / span**j for j, e in enumerate(eta)]
    psi_u = [p / span**j for j, p in enumerate(psi)]
    return h * span, eta_u, psi_u


def lattice_coeffs(cumulants: CumulantPack, psi: Union[PsiPack, Sequence[float]],
                   functional: TailFunctional = Indicator(), order: int = 1,
                   span: float = 1.0, experimental: bool = False,
                   return_general: bool = False):
    """Coefficients ``c_k`` (Indicator) or ``c_hat_k`` for ``k = 0..order``.

    Both the general partition sum and the closed form are evaluated for
    ``k <= 1`` and must agree; the closed form is returned.  Coefficients are
    scaled so that they multiply ``exp(-t I) / sqrt(2 pi t eta''(h))`` in
    original units.

    Raises
    ------
    GrowthBoundViolated
        If the payoff grows at least as fast as ``exp(h x)``.
    UnsupportedOrder
        For ``order >= 2`` outside experimental mode.
    """
    _check_order(order, experimental)
    h = cumulants.h
    functional.check_growth(h)
    psi_d = list(psi.derivs if isinstance(psi, PsiPack) else psi)
    if len(psi_d) < 2 * order + 1:
        raise UnsupportedOrder(f"order {order} needs psi derivatives up to {2 * order}")
    hu, eta_u, psi_u = _rescaled(span, h, cumulants.eta_derivs, psi_d)
    indicator = isinstance(functional, Indicator) or (
        isinstance(functional, Power) and functional.gamma == 0)
    S = _lattice_sums(functional.lattice_value, hu, 2 * order, span)
    G = [S[m] * (-1.0) ** m / math.factorial(m) for m in range(2 * order + 1)]
    closed, general = [], []
    for k in range(order + 1):
        gen = _lattice_general(k, hu, eta_u, psi_u, G)
        general.append(span * gen)
        if k <= 1:
            if indicator:
                cf = _lattice_closed_indicator(k, hu, eta_u, psi_u)
            else:
                cf = _lattice_closed(k, eta_u, psi_u, S)
            _check(gen, cf, f"lattice coefficient {k}")
            closed.append(span * cf)
        else:
            closed.append(span * gen)
    return (closed, general) if return_general else closed


# ---------------------------------------------------------------------------
# non-lattice coefficients

def _nonlattice_general(k: int, gam: float, h: float, eta, psi) -> float:
    """``d_hat_k`` for the single power ``x**gam``."""
    e2 = eta[2]
    lam = h * h * e2
    total = 0.0
    for p in range(2 * k + 1):
        for ell in range(p + 1):
            for part in partitions(ell):
                M = part.size
                head = psi[p - ell] / math.factorial(p - ell) * _partition_term(part, eta) / e2 ** (p / 2)
                top = p + 2 * M
                inner = 0.0
                for m in range(top // 2 + 1):
                    q = k + m - p - M
                    if q < 0:
                        continue
                    s = gam + top - 2 * m
                    herm = (-1.0) ** m * math.factorial(top) / (
                        math.factorial(m) * math.factorial(top - 2 * m) * 2.0**m)
                    inner += herm * gamma_fn(k + gam + M - m + 1) * a_k_sequence(s, q)[q]
                total += head * inner / lam ** (k - p / 2)
    return total / h ** (gam + 1)


def _skew_shift(gam, h, eta, psi, weight):
    # change in d_hat_1 when the third-cumulant ratio in its psi'/psi bracket
    # carries ``weight`` instead of the exact 1/2
    e2, e3 = eta[2], eta[3]
    return -(weight - 0.5) * e3 / e2 * psi[0] * gamma_fn(gam + 2) / (h ** (gam + 2) * e2)


def _nonlattice_closed(k: int, gam: float, h: float, eta, psi) -> float:
    p0, p1, p2 = psi[0], psi[1], psi[2]
    e2, e3, e4 = eta[2], eta[3], eta[4]
    pre = p0 / h ** (gam + 1)
    if k == 0:
        return gamma_fn(gam + 1) * pre
    g1, g2 = gamma_fn(gam + 1), gamma_fn(gam + 2)
    return (-pre * g2 * (1 + gam / 2) / (h * h * e2)
            + pre * (p1 / p0 - e3 / (2 * e2)) * g2 / (h * e2)
            + pre * g1 * (e4 / (8 * e2**2) - 5 * e3**2 / (24 * e2**3)
                          - p2 / (2 * p0 * e2) + e3 * p1 / (2 * p0 * e2**2)))


def nonlattice_coeffs(cumulants: CumulantPack, psi: Union[PsiPack, Sequence[float]],
                      functional: TailFunctional = Indicator(), order: int = 1,
                      experimental: bool = False, return_general: bool = False,
                      skew_weight: float = 0.5):
    """Coefficients ``d_k`` (Indicator) or ``d_hat_k`` for ``k = 0..order``.

    Series payoffs are summed term by term; the factorial bound on their
    coefficients makes the truncation at relative ``1e-16`` safe.

    ``skew_weight`` multiplies ``eta3 / eta2`` in the ``psi'/psi`` bracket
    of ``d_1``.  The exact value is 1/2; any other value is applied as a
    shift after the dual-path check and exists only to compare with tables
    computed with weight 1.
    """
    _check_order(order, experimental)
    h = cumulants.h
    functional.check_growth(h)
    eta = cumulants.eta_derivs
    psi_d = list(psi.derivs if isinstance(psi, PsiPack) else psi)
    if len(psi_d) < 2 * order + 1:
        raise UnsupportedOrder(f"order {order} needs psi derivatives up to {2 * order}")
    offset, coeffs = functional.series()
    closed, general = [], []
    for k in range(order + 1):
        gen = cf = 0.0
        for q, gq in enumerate(coeffs):
            if gq == 0:
                continue
            gam = offset + q
            tg = gq * _nonlattice_general(k, gam, h, eta, psi_d)
            gen += tg
            if k <= 1:
                cf += gq * _nonlattice_closed(k, gam, h, eta, psi_d)
            if abs(tg) <= SERIES_RTOL * abs(gen) and q > 0:
                break
        general.append(gen)
        if k <= 1:
            _check(gen, cf, f"non-lattice coefficient {k}")
            if k == 1 and skew_weight != 0.5:
                cf += sum(gq * _skew_shift(offset + q, h, eta, psi_d, skew_weight)
                          for q, gq in enumerate(coeffs) if gq != 0)
            closed.append(cf)
        else:
            closed.append(gen)
    return (closed, general) if return_general else closed


def _check_order(order, experimental):
    if order < 0 or order > 2 or (order == 2 and not experimental):
        raise UnsupportedOrder(
            "orders 0 and 1 are supported; order 2 needs experimental=True")


# ---------------------------------------------------------------------------
# assembled approximations

@dataclass
class ExpansionResult:
    regime: str
    span: Optional[float]
    order: int
    coefficients: List[float]
    rate: float
    eta2: float
    value: float
    level: float
    adjusted_level: float
    t: float
    h: float
    functional: str
    psi: Optional[PsiPack] = None
    cumulants: Optional[CumulantPack] = field(default=None, repr=False)
    experimental: bool = False

    @property
    def prefactor(self) -> Tuple[float, float]:
        return self.rate, self.eta2

    @property
    def leading(self) -> float:
        """``exp(-t I) / sqrt(2 pi t eta''(h))``."""
        return math.exp(-self.t * self.rate) / math.sqrt(2 * math.pi * self.t * self.eta2)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime, "span": self.span, "order": self.order,
            "experimental": self.experimental, "functional": self.functional,
            "level": self.level, "adjusted_level": self.adjusted_level, "t": self.t,
            "h": self.h, "rate": self.rate, "eta2": self.eta2,
            "coefficients": list(self.coefficients), "value": self.value,
            "psi": self.psi.to_dict() if self.psi else None,
            "eta_derivs": list(self.cumulants.eta_derivs) if self.cumulants else None,
        }


def _assemble(t, rate, eta2, coeffs):
    series = sum(c / t**k for k, c in enumerate(coeffs))
    return math.exp(-t * rate) / math.sqrt(2 * math.pi * t * eta2) * series


def tail_expectation(model: AffineModel, R: float, t: float,
                     functional: TailFunctional = Indicator(), order: int = 1,
                     psi_method: str = "fd", experimental: bool = False,
                     tilt_feedback: bool = True, skew_weight: float = 0.5) -> ExpansionResult:
    """Approximate ``E[g(V(t) - R t); V(t) >= R t]``.

    In the lattice regime the level is moved to the nearest point with
    ``R' t`` on the mark lattice, and the saddlepoint is taken at ``R'``.

    ``tilt_feedback`` and ``skew_weight`` default to the exact expansion;
    see :func:`affine_ldp.ode.psi_derivatives` and :func:`nonlattice_coeffs`
    for the simplified variants.
    """
    _check_order(order, experimental)
    if not t > 0:
        raise ValueError("time horizon must be positive")
    span = lattice_span(model)
    level = float(R)
    if span is not None:
        level = span * round(R * t / span) / t
    deriv_order = max(2 * order + 2, 4)
    cum = solve_saddlepoint(model, level, order=deriv_order, experimental=order >= 2)
    if order >= 2:
        psi_pack = psi_higher_derivatives(model, cum.h, 4, sol=cum.tilt,
                                          tilt_feedback=tilt_feedback)
    else:
        psi_pack = psi_derivatives(model, cum.h, psi_method, sol=cum.tilt,
                                   tilt_feedback=tilt_feedback)
    if span is not None:
        coeffs = lattice_coeffs(cum, psi_pack, functional, order, span, experimental)
        regime = "lattice"
    else:
        coeffs = nonlattice_coeffs(cum, psi_pack, functional, order, experimental,
                                   skew_weight=skew_weight)
        regime = "nonlattice"
    value = _assemble(t, cum.rate, cum.eta2, coeffs)
    return ExpansionResult(regime, span, order, coeffs, cum.rate, cum.eta2, value,
                           float(R), level, float(t), cum.h, functional.name,
                           psi_pack, cum, order >= 2)


def tail_probability(model: AffineModel, R: float, t: float, order: int = 1,
                     psi_method: str = "fd", experimental: bool = False,
                     tilt_feedback: bool = True, skew_weight: float = 0.5) -> ExpansionResult:
    """Approximate ``P(V(t) >= R t)``."""
    return tail_expectation(model, R, t, Indicator(), order, psi_method, experimental,
                            tilt_feedback, skew_weight)


@dataclass(frozen=True)
class CLTResult:
    y: float
    t: float
    probability: float
    threshold: float
    r: float
    sigma: float
    note: str = "valid for y = o(t^(1/6)) as t grows"

    def to_dict(self) -> dict:
        return dict(y=self.y, t=self.t, probability=self.probability, threshold=self.threshold,
                    r=self.r, sigma=self.sigma, note=self.note)


def clt_tail(model: AffineModel, y: float, t: float) -> CLTResult:
    """Gaussian approximation of ``P(V(t) >= r t + sigma sqrt(t) y)``."""
    eq = ergodic_quantities(model)
    sigma = math.sqrt(eq.sigma2)
    return CLTResult(float(y), float(t), float(norm.sf(y)),
                     eq.r * t + sigma * math.sqrt(t) * y, eq.r, sigma)
