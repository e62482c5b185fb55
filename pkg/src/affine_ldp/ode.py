"""Limiting function psi from the affine transform ODEs.

Under the tilted measure the state stays affine, and

    E*[exp(-delta^T X(t)) | X(0) = x] = exp(A(t)^T x + B(t)),

where ``A(0) = -delta``, ``B(0) = 0`` and, writing ``s_i = theta + delta^T gamma_i``
and ``M_i`` for the untilted mark MGF,

    A_j' = -(beta*^T A)_j + 1/2 A^T alpha^j A
           + sum_i kappa_ij (M_i(s_i + gamma_i^T A) - M_i(s_i)),
    B'   = b^T A + 1/2 A^T a A + sum_i lambda_i (M_i(s_i + gamma_i^T A) - M_i(s_i)).

``A`` decays to zero and ``psi(theta) = exp(u*^T x0 + B(inf))`` at
``delta = u*(theta)``.

Two routes give ``psi'`` and ``psi''``:

* ``"fd"``: 5-point central differences at two step sizes combined by
  Richardson extrapolation.  Every stencil point is integrated on one
  frozen time mesh (the adaptive mesh of the centre point) so that the
  discretisation error is a smooth function of ``theta`` and does not
  pollute the difference quotients.
* ``"ode"``: forward sensitivities of ``(A, B)`` with respect to
  ``(theta, delta)`` up to second order, chained through ``u*'`` and ``u*''``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import RK45, solve_ivp

from .errors import NoDecay, StencilOutOfDomain, StiffnessFailure, BeyondCriticalTilt, \
    JacobianSingular, MGFDomainExceeded
from .marks import MarkLaw
from .model import AffineModel
from .transform import TiltSolution, solve_u_star, u_star_derivatives

DEFAULT_TOL = 1e-10
HORIZON_FACTOR = 200.0
FD_STEPS = (1e-3, 5e-4)


def _moments(model: AffineModel, k: int, S: np.ndarray) -> np.ndarray:
    """``E[Z_i^k exp(S[..., i] Z_i)]`` with the event index last."""
    S = np.asarray(S, dtype=float)
    return np.stack([z.moment_array(k, S[..., i]) for i, z in enumerate(model.marks)], axis=-1)


# ---------------------------------------------------------------------------
# tilted dynamics

@dataclass(frozen=True)
class TiltedDynamics:
    theta: float
    u_star: np.ndarray
    beta_star: np.ndarray
    lambda_star: np.ndarray
    kappa_star: np.ndarray
    tilted_marks: Tuple[MarkLaw, ...]

    def decay_matrix(self, gamma: np.ndarray) -> np.ndarray:
        """Linearisation of the A equation at zero is ``-decay_matrix``."""
        EZ = np.array([z.mean for z in self.tilted_marks])
        return self.beta_star.T - np.einsum("ij,i,ik->jk", self.kappa_star, EZ, gamma)

    def decay_rate(self, gamma: np.ndarray) -> float:
        return float(np.linalg.eigvals(self.decay_matrix(gamma)).real.min())


def beta_star(model: AffineModel, u_star: np.ndarray) -> np.ndarray:
    """Mean-reversion matrix under the tilt: the square-root diagonal shifts by ``alpha^j_jj u*_j``."""
    bs = model.beta.copy()
    for j in range(model.m):
        bs[j, j] -= model.alpha[j][j, j] * u_star[j]
    return bs


def tilt_dynamics(model: AffineModel, theta: float,
                  u_star: Optional[np.ndarray] = None) -> TiltedDynamics:
    if u_star is None:
        u_star = solve_u_star(model, theta).u_star
    s = theta + model.gamma @ u_star
    mgf = np.array([z.mgf(si) for z, si in zip(model.marks, s)])
    marks = tuple(z.tilt(si) for z, si in zip(model.marks, s))
    return TiltedDynamics(float(theta), np.asarray(u_star), beta_star(model, u_star),
                          model.lam * mgf, model.kappa * mgf[:, None], marks)


# ---------------------------------------------------------------------------
# right-hand sides

def _rhs_batch(model: AffineModel, theta: np.ndarray, delta: np.ndarray, A: np.ndarray,
               beta_delta: Optional[np.ndarray] = None):
    """Vector field for a batch: ``theta (K,)``, ``delta (K, d)``, ``A (K, d)``.

    ``beta_delta`` is the point at which ``beta*`` is evaluated; by default
    it is ``delta`` itself.
    """
    s = theta[:, None] + delta @ model.gamma.T
    w = s + A @ model.gamma.T
    jump = _moments(model, 0, w) - _moments(model, 0, s)
    dA = (-A @ model.beta + 0.5 * np.einsum("ki,jil,kl->kj", A, model.alpha, A)
          + jump @ model.kappa)
    adiag = np.array([model.alpha[j][j, j] if j < model.m else 0.0 for j in range(model.d)])
    dA += adiag * (delta if beta_delta is None else beta_delta) * A
    dB = A @ model.b + 0.5 * np.einsum("ki,il,kl->k", A, model.a, A) + jump @ model.lam
    return dA, dB


@dataclass(frozen=True)
class ABState:
    t: float
    A: np.ndarray
    B: float


@dataclass(frozen=True)
class ABResult:
    state: ABState
    B_inf: float
    mesh: np.ndarray
    horizon: float
    tol: float


def _horizon_cap(model, theta, delta):
    try:
        rho = tilt_dynamics(model, theta, delta).decay_rate(model.gamma)
    except MGFDomainExceeded:
        rho = 0.0
    if not rho > 0:
        rho = np.linalg.eigvals(model.stability_matrix()).real.min()
    return HORIZON_FACTOR / max(rho, 1e-3)


def _integrate_until_stationary(fun, y0, tol, cap, converged, method="RK45"):
    """Integrate in unit windows until ``converged(y_prev, y)`` or ``cap``."""
    t, y = 0.0, np.asarray(y0, dtype=float)
    mesh = [0.0]
    while True:
        if t >= cap:
            raise NoDecay(f"no stationarity reached before the horizon cap {cap:.4g}")
        t1 = min(t + 1.0, cap)
        sol = solve_ivp(fun, (t, t1), y, method=method, rtol=tol, atol=tol)
        if not sol.success:
            raise StiffnessFailure(sol.message)
        if not np.all(np.isfinite(sol.y[:, -1])):
            raise NoDecay("transform ODE solution blew up")
        mesh.extend(sol.t[1:].tolist())
        y_prev, y, t = y, sol.y[:, -1], t1
        if converged(y_prev, y):
            return t, y, np.array(mesh)


def integrate_AB(model: AffineModel, theta: float, delta, tol: float = DEFAULT_TOL,
                 horizon_cap: Optional[float] = None) -> ABResult:
    """Integrate the transform ODEs until ``A`` and the unit-time ``B`` increment fall below ``tol``.

    Raises
    ------
    NoDecay
        If stationarity is not reached within ``horizon_cap`` (default: 200
        characteristic times of the slowest linearised mode).
    StiffnessFailure
        If the adaptive integrator fails.
    """
    d = model.d
    delta = np.asarray(delta, dtype=float)
    th = np.array([float(theta)])
    cap = horizon_cap or _horizon_cap(model, theta, delta)

    def fun(t, y):
        dA, dB = _rhs_batch(model, th, delta[None, :], y[None, :d])
        return np.concatenate([dA[0], dB])

    def converged(y0, y1):
        return np.max(np.abs(y1[:d])) < tol and abs(y1[d] - y0[d]) < tol

    y0 = np.concatenate([-delta, [0.0]])
    T, y, mesh = _integrate_until_stationary(fun, y0, tol, cap, converged)
    return ABResult(ABState(T, y[:d].copy(), float(y[d])), float(y[d]), mesh, T, tol)


def _frozen_mesh_B(model: AffineModel, thetas: np.ndarray, deltas: np.ndarray,
                   mesh: np.ndarray, beta_delta: Optional[np.ndarray] = None) -> np.ndarray:
    """Replay the Dormand-Prince 5(4) stages on a fixed mesh for a batch of parameters."""
    Atab, Btab, Ctab = RK45.A, RK45.B, RK45.C
    K, d = deltas.shape
    A = -deltas.copy()
    B = np.zeros(K)
    for t0, t1 in zip(mesh[:-1], mesh[1:]):
        hstep = t1 - t0
        kA, kB = [], []
        for st in range(len(Ctab)):
            Ai = A + hstep * sum(Atab[st, q] * kA[q] for q in range(st)) if st else A
            dA, dB = _rhs_batch(model, thetas, deltas, Ai, beta_delta)
            kA.append(dA)
            kB.append(dB)
        A = A + hstep * sum(Btab[q] * kA[q] for q in range(len(Btab)))
        B = B + hstep * sum(Btab[q] * kB[q] for q in range(len(Btab)))
    return B


# ---------------------------------------------------------------------------
# psi and its derivatives

def psi(model: AffineModel, theta: float, tol: float = DEFAULT_TOL,
        sol: Optional[TiltSolution] = None) -> float:
    """``exp(u*(theta)^T x0 + B(inf))``."""
    if theta == 0.0:
        return 1.0
    if sol is None:
        sol = solve_u_star(model, theta)
    res = integrate_AB(model, theta, sol.u_star, tol)
    return math.exp(float(sol.u_star @ model.x0) + res.B_inf)


@dataclass(frozen=True)
class PsiPack:
    h: float
    psi: float
    psi_d1: float
    psi_d2: float
    method: str
    horizon: float
    ode_tol: float
    higher: Tuple[float, ...] = ()

    @property
    def derivs(self) -> List[float]:
        return [self.psi, self.psi_d1, self.psi_d2, *self.higher]

    def to_dict(self) -> dict:
        out = {"h": self.h, "psi": self.psi, "psi_d1": self.psi_d1, "psi_d2": self.psi_d2,
               "method": self.method, "horizon": self.horizon, "ode_tol": self.ode_tol}
        if self.higher:
            out["higher"] = list(self.higher)
        return out


def _fd_weights(h):
    # 5-point central stencils at offsets -2h..2h
    d1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
    d2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * h * h)
    return d1, d2


def _log_psi_on_stencil(model, h, tol, sol, offsets, tilt_feedback=True):
    """``log psi`` at ``h + offsets``, all integrated on the centre's frozen mesh."""
    thetas = np.array([h + o for o in offsets])
    sols = []
    for th in thetas:
        try:
            sols.append(solve_u_star(model, th, start=sol) if th != h else sol)
        except (BeyondCriticalTilt, JacobianSingular, MGFDomainExceeded) as exc:
            raise StencilOutOfDomain(f"stencil point {th:.6g} is not solvable: {exc}") from exc
    deltas = np.array([s.u_star for s in sols])
    centre = integrate_AB(model, h, sol.u_star, tol)
    try:
        Bs = _frozen_mesh_B(model, thetas, deltas, centre.mesh,
                            None if tilt_feedback else sol.u_star)
    except MGFDomainExceeded as exc:
        raise StencilOutOfDomain(str(exc)) from exc
    return dict(zip(offsets, deltas @ model.x0 + Bs)), centre


def _psi_fd(model, h, tol, sol, tilt_feedback=True):
    steps = FD_STEPS
    offsets = sorted({k * s for s in steps for k in (-2, -1, 0, 1, 2)})
    vals, centre = _log_psi_on_stencil(model, h, tol, sol, offsets, tilt_feedback)

    def quotients(step):
        f = np.array([vals[k * step] for k in (-2, -1, 0, 1, 2)])
        w1, w2 = _fd_weights(step)
        return w1 @ f, w2 @ f

    (a1, a2), (b1, b2) = quotients(steps[0]), quotients(steps[1])
    ratio = (steps[0] / steps[1]) ** 4
    l1 = (ratio * b1 - a1) / (ratio - 1)
    l2 = (ratio * b2 - a2) / (ratio - 1)
    p = math.exp(vals[0.0])
    return PsiPack(h, p, p * l1, p * (l2 + l1 * l1), "fd", centre.horizon, tol)


def _sensitivity_system(model: AffineModel, theta: float, delta: np.ndarray,
                        tilt_feedback: bool = True):
    """Right-hand side for ``(A, B)`` and their first and second sensitivities.

    Parameters are ``p = (theta, delta)`` of length ``P = d + 1``.  The state
    packs ``A (d)``, ``B``, ``A_p (d, P)``, ``B_p (P)``, ``A_pp (d, P, P)``
    and ``B_pp (P, P)``; the symmetric second-order blocks are stored in
    full for clarity.  With ``tilt_feedback=False`` the ``beta*`` matrix is
    held at ``delta`` and contributes nothing to the sensitivities.
    """
    d, n = model.d, model.n
    P = d + 1
    G = model.gamma
    c = np.hstack([np.ones((n, 1)), G])  # ds_i/dp
    s = theta + G @ delta
    Ms = [_moments(model, k, s) for k in range(3)]
    adiag = np.array([model.alpha[j][j, j] if j < model.m else 0.0 for j in range(d)])
    fb = 1.0 if tilt_feedback else 0.0
    # d(beta*^T A)_j / d delta_l contributes -adiag_j A_j [l == j]
    sizes = [d, 1, d * P, P, d * P * P, P * P]
    offs = np.cumsum([0] + sizes)

    def unpack(y):
        return [y[offs[q]:offs[q + 1]] for q in range(6)]

    def fun(t, y):
        A, B, Ap, Bp, App, Bpp = unpack(y)
        Ap = Ap.reshape(d, P)
        App = App.reshape(d, P, P)
        Bpp = Bpp.reshape(P, P)
        w = s + G @ A
        Mw = [_moments(model, k, w) for k in range(3)]
        # first derivatives of f (vector field for A) and g (for B)
        fA = (-model.beta.T + model.alpha @ A + np.diag(adiag * delta)
              + model.kappa.T @ (Mw[1][:, None] * G))
        fp = model.kappa.T @ ((Mw[1] - Ms[1])[:, None] * c)
        fp[:, 1:] += fb * np.diag(adiag * A)
        gA = model.b + model.a @ A + G.T @ (model.lam * Mw[1])
        gp = c.T @ (model.lam * (Mw[1] - Ms[1]))
        # second derivatives
        fAA = model.alpha + np.einsum("ij,i,il,ik->jlk", model.kappa, Mw[2], G, G)
        fAp = np.einsum("ij,i,il,im->jlm", model.kappa, Mw[2], G, c)
        for j in range(d):
            fAp[j, j, 1 + j] += fb * adiag[j]
        fpp = np.einsum("ij,i,im,iq->jmq", model.kappa, Mw[2] - Ms[2], c, c)
        gAA = model.a + np.einsum("i,il,ik->lk", model.lam * Mw[2], G, G)
        gAp = np.einsum("i,il,im->lm", model.lam * Mw[2], G, c)
        gpp = np.einsum("i,im,iq->mq", model.lam * (Mw[2] - Ms[2]), c, c)

        f = (-model.beta.T @ A + 0.5 * np.einsum("i,jik,k->j", A, model.alpha, A)
             + model.kappa.T @ (Mw[0] - Ms[0]) + adiag * delta * A)
        g = model.b @ A + 0.5 * A @ model.a @ A + model.lam @ (Mw[0] - Ms[0])
        dAp = fA @ Ap + fp
        dBp = gA @ Ap + gp
        cross_f = np.einsum("jlm,lq->jmq", fAp, Ap)
        dApp = (np.einsum("jl,lmq->jmq", fA, App)
                + np.einsum("jlk,lm,kq->jmq", fAA, Ap, Ap)
                + cross_f + cross_f.transpose(0, 2, 1) + fpp)
        cross_g = np.einsum("lm,lq->mq", gAp, Ap)
        dBpp = (np.einsum("l,lmq->mq", gA, App)
                + np.einsum("lk,lm,kq->mq", gAA, Ap, Ap)
                + cross_g + cross_g.T + gpp)
        return np.concatenate([f, [g], dAp.ravel(), dBp, dApp.ravel(), dBpp.ravel()])

    Ap0 = np.zeros((d, P))
    Ap0[:, 1:] = -np.eye(d)
    y0 = np.concatenate([-delta, [0.0], Ap0.ravel(), np.zeros(P),
                         np.zeros(d * P * P), np.zeros(P * P)])
    return fun, y0, unpack


def _psi_sensitivity(model, h, tol, sol, tilt_feedback=True):
    d = model.d
    P = d + 1
    fun, y0, unpack = _sensitivity_system(model, h, sol.u_star, tilt_feedback)

    def converged(y_prev, y1):
        A, B, Ap, Bp, App, Bpp = unpack(y1)
        _, B0, _, Bp0, _, Bpp0 = unpack(y_prev)
        small = max(np.max(np.abs(A)), np.max(np.abs(Ap)), np.max(np.abs(App)))
        drift = max(abs(B[0] - B0[0]), np.max(np.abs(Bp - Bp0)), np.max(np.abs(Bpp - Bpp0)))
        return small < tol and drift < tol

    cap = _horizon_cap(model, h, sol.u_star)
    T, y, _ = _integrate_until_stationary(fun, y0, tol, cap, converged)
    _, B, _, Bp, _, Bpp = unpack(y)
    Bpp = Bpp.reshape(P, P)
    us = u_star_derivatives(model, h, 2, sol=sol)
    p1 = np.concatenate([[1.0], us[1]])
    p2 = np.concatenate([[0.0], us[2]])
    dB = Bp @ p1
    d2B = p1 @ Bpp @ p1 + Bp @ p2
    l1 = model.x0 @ us[1] + dB
    l2 = model.x0 @ us[2] + d2B
    p = math.exp(float(sol.u_star @ model.x0) + B[0])
    return PsiPack(h, p, p * l1, p * (l2 + l1 * l1), "ode", T, tol)


def psi_higher_derivatives(model: AffineModel, h: float, order: int = 4,
                           tol: float = DEFAULT_TOL, step: float = 2e-3,
                           sol: Optional[TiltSolution] = None,
                           tilt_feedback: bool = True) -> PsiPack:
    """``psi`` and derivatives up to ``order <= 4`` for the experimental second-order expansion.

    The first two derivatives come from :func:`psi_derivatives`; the third
    and fourth from 7-point central stencils on ``log psi`` with step
    ``step``, so they carry roughly ``step**4`` truncation error.
    """
    if sol is None or sol.theta != h:
        sol = solve_u_star(model, h)
    base = _psi_fd(model, h, tol, sol, tilt_feedback)
    if order <= 2:
        return base
    vals, _ = _log_psi_on_stencil(model, h, tol, sol, [k * step for k in range(-3, 4)],
                                  tilt_feedback)
    f = np.array([vals[k * step] for k in range(-3, 4)])
    l3 = np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) @ f / (8 * step**3)
    l4 = np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) @ f / (6 * step**4)
    p = base.psi
    l1, l2 = base.psi_d1 / p, base.psi_d2 / p - (base.psi_d1 / p) ** 2
    d3 = p * (l3 + 3 * l1 * l2 + l1**3)
    d4 = p * (l4 + 4 * l1 * l3 + 3 * l2**2 + 6 * l1**2 * l2 + l1**4)
    return PsiPack(h, p, base.psi_d1, base.psi_d2, "fd", base.horizon, tol,
                   (d3, d4)[: order - 2])


def psi_derivatives(model: AffineModel, h: float, method: str = "fd",
                    tol: float = DEFAULT_TOL, sol: Optional[TiltSolution] = None,
                    tilt_feedback: bool = True) -> PsiPack:
    """``psi(h)``, ``psi'(h)`` and ``psi''(h)``.

    Parameters
    ----------
    method : {"fd", "ode"}
        Frozen-mesh finite differences (default) or forward sensitivities.
    tilt_feedback : bool
        If True (default) the derivatives are exact: ``beta*`` moves with
        ``u*(theta)``.  If False, ``beta*`` is held at its value at ``h``
        while everything else varies.  That drops a term from ``psi'`` and
        ``psi''`` and is kept only to compare against tabulated values
        computed under that simplification.

    Raises
    ------
    StencilOutOfDomain
        When a finite-difference stencil point leaves the solvable range.
    """
    if sol is None or sol.theta != h:
        sol = solve_u_star(model, h)
    if method in ("fd", "FiniteDifference"):
        return _psi_fd(model, h, tol, sol, tilt_feedback)
    if method in ("ode", "SensitivityODE"):
        return _psi_sensitivity(model, h, tol, sol, tilt_feedback)
    raise ValueError(f"unknown method {method!r}")
