"""Tilt function, limiting cumulant and saddlepoint.

For a tilt ``theta`` the vector ``u = u*(theta)`` solves, for each coordinate j,

    F_j(u) = sum_i u_i beta_ij - 1/2 u^T alpha^j u
             - sum_i (M_i(theta + u^T gamma_i) - 1) kappa_ij = 0,

on the branch through ``u*(0) = 0``; here ``M_i`` is the MGF of mark ``i``.
The limiting cumulant is

    eta(theta) = u*^T b + sum_i lambda_i (M_i(theta + u*^T gamma_i) - 1).

The branch is followed by Newton continuation from ``theta = 0``.
Derivatives in ``theta`` are obtained by differentiating ``F = 0``: the k-th
derivative is affine in ``u*^{(k)}`` with slope equal to the Newton
Jacobian, so each order costs one linear solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .combinatorics import composite_derivative
from .errors import (BeyondCriticalTilt, JacobianSingular, LevelBelowMean,
                     MGFDomainExceeded, UnsupportedOrder)
from .model import AffineModel, ergodic_quantities

NEWTON_TOL = 1e-12
MAX_NEWTON = 50
MAX_STEP = 0.05
MIN_STEP = 1e-6
MAX_ORDER = 4
MAX_ORDER_EXPERIMENTAL = 6


def mark_moments(model: AffineModel, k: int, w: np.ndarray) -> np.ndarray:
    """``E[Z_i^k exp(w_i Z_i)]`` for every event type."""
    return np.array([z.moment(k, float(wi)) for z, wi in zip(model.marks, w)])


def residual(model: AffineModel, theta: float, u: np.ndarray) -> np.ndarray:
    w = theta + model.gamma @ u
    quad = np.einsum("i,jik,k->j", u, model.alpha, u)
    return model.beta.T @ u - 0.5 * quad - model.kappa.T @ (mark_moments(model, 0, w) - 1.0)


def jacobian(model: AffineModel, theta: float, u: np.ndarray) -> np.ndarray:
    """``dF/du``; row j is the gradient of ``F_j``."""
    w = theta + model.gamma @ u
    M1 = mark_moments(model, 1, w)
    return model.beta.T - model.alpha @ u - model.kappa.T @ (M1[:, None] * model.gamma)


def _check_cond(J, theta):
    if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e13:
        raise JacobianSingular(f"tilt Jacobian is singular near theta={theta}", last_theta=theta)


@dataclass(frozen=True)
class TiltSolution:
    theta: float
    u_star: np.ndarray
    eta: float
    newton_iters: int
    residual: float

    def to_dict(self) -> dict:
        return {"theta": self.theta, "u_star": self.u_star.tolist(), "eta": self.eta,
                "newton_iters": self.newton_iters, "residual": self.residual}


def _newton(model, theta, u0):
    """Newton iterations from ``u0``; returns (u, iterations) or None."""
    u = u0.copy()
    for it in range(1, MAX_NEWTON + 1):
        try:
            F = residual(model, theta, u)
            if not np.all(np.isfinite(F)):
                return None
            J = jacobian(model, theta, u)
            du = np.linalg.solve(J, -F)
        except (MGFDomainExceeded, np.linalg.LinAlgError):
            return None
        u = u + du
        if not np.all(np.isfinite(u)):
            return None
        if np.max(np.abs(du)) <= 1e-15 * max(1.0, np.max(np.abs(u))):
            break
        if np.max(np.abs(du)) > 1e3 * (1.0 + np.max(np.abs(u0))):
            return None
    try:
        res = np.max(np.abs(residual(model, theta, u)))
    except MGFDomainExceeded:
        return None
    if not res <= NEWTON_TOL:
        return None
    return u, it, res


def _tangent(model, theta, u):
    # dF/dtheta = -kappa^T M'(w); tangent solves J u' = kappa^T M'(w)
    w = theta + model.gamma @ u
    J = jacobian(model, theta, u)
    return np.linalg.solve(J, model.kappa.T @ mark_moments(model, 1, w))


def solve_u_star(model: AffineModel, theta: float,
                 start: Optional[TiltSolution] = None) -> TiltSolution:
    """Follow the tilt branch from ``start`` (default ``theta = 0``) to ``theta``.

    Continuation steps are at most ``MAX_STEP`` and are halved whenever
    Newton fails, with a tangent predictor at each step.

    Raises
    ------
    BeyondCriticalTilt
        If the step falls below ``MIN_STEP`` without convergence.
    JacobianSingular
        If the branch reaches a fold.
    """
    theta = float(theta)
    if theta == 0.0:
        return TiltSolution(0.0, np.zeros(model.d), 0.0, 0, 0.0)
    if start is None or np.sign(start.theta) * np.sign(theta) < 0:
        cur_t, cur_u = 0.0, np.zeros(model.d)
    else:
        cur_t, cur_u = start.theta, start.u_star.copy()
    total = 0
    res = 0.0
    direction = 1.0 if theta > cur_t else -1.0
    step = MAX_STEP
    while cur_t != theta:
        J = jacobian(model, cur_t, cur_u)
        _check_cond(J, cur_t)
        try:
            tan = _tangent(model, cur_t, cur_u)
        except (MGFDomainExceeded, np.linalg.LinAlgError):
            tan = np.zeros(model.d)
        while True:
            nxt = cur_t + direction * step
            if direction * (nxt - theta) > 0:
                nxt = theta
            out = _newton(model, nxt, cur_u + (nxt - cur_t) * tan)
            if out is not None:
                break
            step /= 2
            if step < MIN_STEP:
                raise BeyondCriticalTilt(
                    f"tilt continuation stalled at theta={cur_t:.10g} on the way to {theta:.10g}",
                    last_theta=cur_t)
        cur_u, its, res = out
        total += its
        cur_t = nxt
        step = min(MAX_STEP, 2 * step)
    _check_cond(jacobian(model, cur_t, cur_u), cur_t)
    return TiltSolution(theta, cur_u, eta(model, theta, cur_u), total, float(res))


def eta(model: AffineModel, theta: float, u_star: np.ndarray) -> float:
    """Limiting cumulant at ``theta`` given the tilt vector there."""
    w = theta + model.gamma @ u_star
    return float(u_star @ model.b + model.lam @ (mark_moments(model, 0, w) - 1.0))


def _check_order(order, experimental):
    cap = MAX_ORDER_EXPERIMENTAL if experimental else MAX_ORDER
    if not 0 <= order <= cap:
        raise UnsupportedOrder(f"derivative order {order} outside 0..{cap}")


def _mgf_chain(model, k, w, wd):
    """k-th theta-derivative of ``M_i(w_i(theta))`` for every i.

    ``wd[l-1]`` holds ``w^{(l)}`` (vector over i).
    """
    outer = [mark_moments(model, j, w) for j in range(k + 1)]
    return np.array([composite_derivative(k, [o[i] for o in outer], [x[i] for x in wd])
                     for i in range(model.n)])


def u_star_derivatives(model: AffineModel, theta: float, order: int = MAX_ORDER,
                       sol: Optional[TiltSolution] = None,
                       experimental: bool = False) -> List[np.ndarray]:
    """``[u*, u*', ..., u*^{(order)}]`` at ``theta``.

    For each k the k-th derivative of ``F(theta, u*(theta)) = 0`` is
    evaluated with ``u*^{(k)}`` set to zero, which isolates the known part
    ``D_k``; then ``J u*^{(k)} = -D_k`` with ``J`` the tilt Jacobian.
    """
    _check_order(order, experimental)
    if sol is None or sol.theta != theta:
        sol = solve_u_star(model, theta)
    u = sol.u_star
    w = theta + model.gamma @ u
    J = jacobian(model, theta, u)
    _check_cond(J, theta)
    us = [u]
    wd = []  # w^{(l)} for l = 1..
    for k in range(1, order + 1):
        trial = us + [np.zeros(model.d)]
        wd_trial = wd + [(1.0 if k == 1 else 0.0) + np.zeros(model.n)]
        quad = np.zeros(model.d)
        for p in range(k + 1):
            quad += math.comb(k, p) * np.einsum("i,jik,k->j", trial[p], model.alpha, trial[k - p])
        D = (model.beta.T @ trial[k] - 0.5 * quad
             - model.kappa.T @ _mgf_chain(model, k, w, wd_trial))
        uk = np.linalg.solve(J, -D)
        us.append(uk)
        wd.append((1.0 if k == 1 else 0.0) + model.gamma @ uk)
    return us


def eta_derivatives(model: AffineModel, theta: float, order: int = MAX_ORDER,
                    us: Optional[Sequence[np.ndarray]] = None,
                    experimental: bool = False) -> List[float]:
    """``[eta, eta', ..., eta^{(order)}]`` at ``theta``."""
    _check_order(order, experimental)
    if us is None or len(us) < order + 1:
        us = u_star_derivatives(model, theta, order, experimental=experimental)
    w = theta + model.gamma @ us[0]
    wd = [(1.0 if l == 1 else 0.0) + model.gamma @ us[l] for l in range(1, order + 1)]
    out = [eta(model, theta, us[0])]
    for k in range(1, order + 1):
        out.append(float(us[k] @ model.b + model.lam @ _mgf_chain(model, k, w, wd[:k])))
    return out


# ---------------------------------------------------------------------------
# saddlepoint

@dataclass(frozen=True)
class CumulantPack:
    R: float
    h: float
    eta_derivs: List[float]
    rate: float
    u_star_derivs: List[np.ndarray]
    tilt: TiltSolution = field(repr=False, default=None)

    @property
    def eta2(self) -> float:
        return self.eta_derivs[2]

    def to_dict(self) -> dict:
        return {"R": self.R, "h": self.h, "eta_derivs": list(self.eta_derivs),
                "rate": self.rate, "u_star_derivs": [u.tolist() for u in self.u_star_derivs],
                "newton_iters": self.tilt.newton_iters if self.tilt else None,
                "residual": self.tilt.residual if self.tilt else None}


def cumulant_pack(model: AffineModel, h: float, R: Optional[float] = None,
                  sol: Optional[TiltSolution] = None, order: int = MAX_ORDER,
                  experimental: bool = False) -> CumulantPack:
    """Assemble derivatives of ``eta`` and ``u*`` at a given tilt ``h``."""
    if sol is None:
        sol = solve_u_star(model, h)
    us = u_star_derivatives(model, h, order, sol=sol, experimental=experimental)
    ed = eta_derivatives(model, h, order, us=us, experimental=experimental)
    R = ed[1] if R is None else R
    return CumulantPack(float(R), float(h), ed, float(h * R - ed[0]), us, sol)


def solve_saddlepoint(model: AffineModel, R: float, order: int = MAX_ORDER,
                      experimental: bool = False, xtol: float = 1e-10) -> CumulantPack:
    """Solve ``eta'(h) = R`` for ``h > 0``.

    Safeguarded Newton: the bracket ``[lo, hi]`` starts at ``lo = 0`` where
    ``eta'(0) = r < R``; a tilt where the branch cannot be continued also
    serves as an upper end.  Steps leaving the bracket are replaced by
    bisection.

    Raises
    ------
    LevelBelowMean
        If ``R <= r``.
    BeyondCriticalTilt
        If ``R`` exceeds ``eta'`` on the whole solvable range.
    """
    r = ergodic_quantities(model).r
    R = float(R)
    if not R > r:
        raise LevelBelowMean(f"level {R} is not above the mean rate {r}")
    lo_sol = solve_u_star(model, 0.0)
    lo, hi = 0.0, math.inf
    hi_reached = False  # whether ``hi`` is a solvable point with eta' > R
    h = 0.0
    sol = lo_sol

    def derivs(s):
        us = u_star_derivatives(model, s.theta, 2, sol=s)
        return eta_derivatives(model, s.theta, 2, us=us)

    e = derivs(sol)
    for _ in range(200):
        g, g1 = e[1] - R, e[2]
        if abs(g) <= 1e-13 * R:
            break
        cand = h - g / g1 if g1 > 0 else math.nan
        if not (lo < cand < hi) or not math.isfinite(cand):
            cand = 0.5 * (lo + hi) if math.isfinite(hi) else (2 * h if h > 0 else 0.1)
        try:
            trial = solve_u_star(model, cand, start=lo_sol if cand >= lo else None)
            te = derivs(trial)
        except (BeyondCriticalTilt, JacobianSingular, MGFDomainExceeded):
            hi = cand
            continue
        h, sol, e = cand, trial, te
        if e[1] < R:
            lo, lo_sol = h, sol
        else:
            hi, hi_reached = h, True
        if math.isfinite(hi) and hi - lo <= xtol * max(1.0, hi) and abs(e[1] - R) <= 1e-10 * R:
            break
        if math.isfinite(hi) and not hi_reached and hi - lo < MIN_STEP:
            raise BeyondCriticalTilt(
                f"level {R} exceeds eta' on the solvable range (last theta {lo:.10g})",
                last_theta=lo)
    else:
        raise BeyondCriticalTilt(f"saddlepoint iteration for level {R} did not converge",
                                 last_theta=lo)
    pack = cumulant_pack(model, h, R, sol=sol, order=order, experimental=experimental)
    return pack


def rate_function(model: AffineModel, R: float) -> float:
    return solve_saddlepoint(model, R, order=2).rate
