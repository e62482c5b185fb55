"""Monte Carlo for affine point processes: plain estimators and exponential tilting.

Paths are simulated with a full-truncation Euler scheme.  Square-root
coordinates enter the diffusion matrix, the drift and the intensities
through their positive part.  Over a step of length ``dt`` the number of
type-``i`` events is drawn given the intensity at the start of the step,
and the marks are summed.  By default the count is Poisson.  The
``"bernoulli"`` event model allows at most one event per type and step.

Importance sampling simulates the tilted dynamics at the saddlepoint ``h``
and reweights each path by

    W = exp(-h V(t) + eta(h) t - u*(h)^T (X(t) - x0)).

Random numbers come from independent counter-based (Philox) streams, one
per block of ``BLOCK`` paths, keyed by ``(seed, block index)`` through
:class:`numpy.random.SeedSequence`.  Results therefore do not depend on
the number of worker threads; set ``AFFINE_LDP_WORKERS`` to override the
default of one worker per CPU.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numba
import numpy as np

from .errors import NegativeIntensity
from .marks import Constant, Exponential, FiniteLattice, MarkLaw
from .model import AffineModel
from .ode import TiltedDynamics, tilt_dynamics
from .transform import eta as eta_fn, solve_saddlepoint

BLOCK = 1000
SCHEMES = ("EulerFullTruncation",)
EVENT_MODELS = ("poisson", "bernoulli")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``antithetic`` pairs consecutive paths: the second path of each pair
    uses negated Gaussian increments and reflected uniforms.
    """

    paths: int = 10_000
    dt: float = 0.01
    seed: int = 0
    scheme: str = "EulerFullTruncation"
    antithetic: bool = False
    events: str = "poisson"

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("need at least one path")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.events not in EVENT_MODELS:
            raise ValueError(f"unknown event model {self.events!r}")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even path count")

    def to_dict(self) -> dict:
        return {"paths": self.paths, "dt": self.dt, "seed": self.seed, "scheme": self.scheme,
                "antithetic": self.antithetic, "events": self.events}


@dataclass(frozen=True)
class PathOutcome:
    V_t: float
    X_t: np.ndarray
    event_counts: np.ndarray
    log_weight: float = 0.0


@dataclass
class PathBatch:
    """Terminal values of many paths at several checkpoint times.

    ``V`` has shape ``(paths, K)``, ``X`` ``(paths, K, d)`` and ``counts``
    ``(paths, K, n)``; ``log_weight`` is zero for untilted simulation.
    """

    times: np.ndarray
    V: np.ndarray
    X: np.ndarray
    counts: np.ndarray
    log_weight: np.ndarray
    config: SimConfig
    theta: float = 0.0

    def outcome(self, p: int, k: int = -1) -> PathOutcome:
        return PathOutcome(float(self.V[p, k]), self.X[p, k].copy(),
                           self.counts[p, k].copy(), float(self.log_weight[p, k]))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    ci95: Tuple[float, float]
    paths: int
    sampler: str
    seed: int
    elapsed_seconds: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "ci95": list(self.ci95),
                "paths": self.paths, "sampler": self.sampler, "seed": self.seed,
                "elapsed_seconds": self.elapsed_seconds}

    @property
    def relative_halfwidth(self) -> float:
        return 1.96 * self.stderr / abs(self.mean) if self.mean else math.inf


# ---------------------------------------------------------------------------
# parameter packing for the compiled kernel

@dataclass(frozen=True)
class _Packed:
    x0: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    a: np.ndarray
    alpha: np.ndarray
    diag_diffusion: bool
    m: int
    lam: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray
    mark_kind: np.ndarray
    mark_par: np.ndarray
    atom_val: np.ndarray
    atom_cdf: np.ndarray


def _pack_marks(marks: Sequence[MarkLaw]):
    n = len(marks)
    width = max([len(z.atoms) for z in marks if isinstance(z, FiniteLattice)] + [1])
    kind = np.zeros(n, dtype=np.int64)
    par = np.zeros(n)
    vals = np.zeros((n, width))
    cdf = np.ones((n, width))
    for i, z in enumerate(marks):
        if isinstance(z, Constant):
            kind[i], par[i] = 0, z.value
        elif isinstance(z, Exponential):
            kind[i], par[i] = 1, z.mean_
        elif isinstance(z, FiniteLattice):
            kind[i] = 2
            k = len(z.atoms)
            vals[i, :k] = z.support
            vals[i, k:] = z.support[-1]
            cdf[i, :k] = np.cumsum(z.probs)
        else:
            raise TypeError(f"cannot simulate mark law {type(z).__name__}")
    return kind, par, vals, cdf


def _pack(model: AffineModel, tilted: Optional[TiltedDynamics]) -> _Packed:
    d, m = model.d, model.m
    b, beta, lam, kappa, marks = model.b, model.beta, model.lam, model.kappa, model.marks
    if tilted is not None:
        u = tilted.u_star
        # Girsanov drift shift (a + sum_j x_j alpha^j) u
        b = b + model.a @ u
        beta = beta - np.stack([model.alpha[j] @ u for j in range(d)], axis=1)
        lam, kappa, marks = tilted.lambda_star, tilted.kappa_star, tilted.tilted_marks
    diag = bool(np.all(model.a == 0))
    for j in range(d):
        off = model.alpha[j].copy()
        if j < m:
            off[j, j] = 0.0
        diag = diag and not np.any(off)
    kind, par, vals, cdf = _pack_marks(marks)
    return _Packed(np.array(model.x0, float), np.array(b, float), np.array(beta, float),
                   np.array(model.a, float), np.array(model.alpha, float), diag, m,
                   np.array(lam, float), np.array(kappa, float), np.array(model.gamma, float),
                   kind, par, vals, cdf)


# ---------------------------------------------------------------------------
# compiled kernel

@numba.njit(cache=True)
def _psd_sqrt_lower(S, out):
    # Cholesky factor of a positive semi-definite matrix; non-positive pivots zero a column
    d = S.shape[0]
    for j in range(d):
        for i in range(d):
            out[i, j] = 0.0
    for j in range(d):
        acc = S[j, j]
        for k in range(j):
            acc -= out[j, k] * out[j, k]
        if acc <= 0.0:
            continue
        piv = math.sqrt(acc)
        out[j, j] = piv
        for i in range(j + 1, d):
            acc = S[i, j]
            for k in range(j):
                acc -= out[i, k] * out[j, k]
            out[i, j] = acc / piv


@numba.njit(cache=True)
def _count(u, mean, bernoulli):
    if mean <= 0.0:
        return 0
    if bernoulli:
        return 1 if u < -math.expm1(-mean) else 0
    p = math.exp(-mean)
    cdf = p
    k = 0
    while u > cdf and k < 100000:
        k += 1
        p *= mean / k
        cdf += p
    return k


@numba.njit(cache=True)
def _mark(u, kind, par, vals, cdf):
    if kind == 0:
        return par
    if kind == 1:
        return -par * math.log1p(-u) if u < 1.0 else par * 50.0
    for k in range(cdf.shape[0]):
        if u <= cdf[k]:
            return vals[k]
    return vals[cdf.shape[0] - 1]


@numba.njit(cache=True)
def _seed_kernel_rng(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _advance(steps, Z, U, UM, reps, bernoulli, X, V, N,
             b, beta, a, alpha, diag, m, lam, kappa, gamma,
             mark_kind, mark_par, atom_val, atom_cdf):
    """Advance every path of a block over ``steps``; returns 1 on a negative intensity.

    ``Z[s, q]``, ``U[s, q]`` and ``UM[s, q]`` are the Gaussian draws, the
    event-count uniforms and the first-mark uniforms of draw row ``q`` at
    step ``s``; path ``p`` uses row ``p // reps`` and, when it is the second
    path of an antithetic pair, negated normals and reflected uniforms.
    Marks beyond the first in a step come from the kernel's own generator.
    """
    P, d = X.shape
    n = lam.shape[0]
    xt = np.empty(d)
    dw = np.empty(d)
    jump = np.empty(d)
    S = np.empty((d, d))
    L = np.empty((d, d))
    status = 0
    for s in range(steps.shape[0]):
        h = steps[s]
        sq = math.sqrt(h)
        for p in range(P):
            q = p // reps
            mirror = (p % reps) == 1
            sgn = -1.0 if mirror else 1.0
            for j in range(d):
                xt[j] = max(X[p, j], 0.0) if j < m else X[p, j]
            if diag:
                for j in range(d):
                    if j < m:
                        dw[j] = math.sqrt(alpha[j, j, j] * xt[j]) * sq * sgn * Z[s, q, j]
                    else:
                        dw[j] = 0.0
            else:
                for i1 in range(d):
                    for i2 in range(d):
                        acc = a[i1, i2]
                        for j in range(d):
                            acc += alpha[j, i1, i2] * xt[j]
                        S[i1, i2] = acc
                _psd_sqrt_lower(S, L)
                for i1 in range(d):
                    acc = 0.0
                    for i2 in range(i1 + 1):
                        acc += L[i1, i2] * Z[s, q, i2]
                    dw[i1] = acc * sq * sgn
            for j in range(d):
                jump[j] = 0.0
            for i in range(n):
                lam_i = lam[i]
                for j in range(d):
                    lam_i += kappa[i, j] * xt[j]
                if lam_i < -1e-12:
                    status = 1
                u = 1.0 - U[s, q, i] if mirror else U[s, q, i]
                c = _count(u, max(lam_i, 0.0) * h, bernoulli)
                if c == 0:
                    continue
                N[p, i] += c
                um = 1.0 - UM[s, q, i] if mirror else UM[s, q, i]
                msum = _mark(um, mark_kind[i], mark_par[i], atom_val[i], atom_cdf[i])
                for e in range(1, c):
                    msum += _mark(np.random.random(), mark_kind[i], mark_par[i],
                                  atom_val[i], atom_cdf[i])
                V[p] += msum
                for j in range(d):
                    jump[j] += gamma[i, j] * msum
            for j in range(d):
                drift = b[j]
                for l in range(d):
                    drift -= beta[j, l] * xt[l]
                X[p, j] = X[p, j] + drift * h + dw[j] + jump[j]
    return status


# ---------------------------------------------------------------------------
# drivers

CHUNK = 200


def _block_stream(seed: int, block: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) % 2**64, spawn_key=(block,))


def _workers() -> int:
    env = os.environ.get("AFFINE_LDP_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _step_grid(times: np.ndarray, dt: float):
    """Step lengths and, for each checkpoint, the number of steps taken before it."""
    steps, marks, t = [], [], 0.0
    for tk in times:
        k = max(1, int(math.ceil((tk - t) / dt - 1e-9)))
        seg = np.full(k, dt)
        seg[-1] = (tk - t) - dt * (k - 1)
        steps.append(seg)
        marks.append(sum(len(x) for x in steps))
        t = tk
    return np.concatenate(steps), marks


def simulate(model: AffineModel, times, config: SimConfig,
             tilted: Optional[TiltedDynamics] = None) -> PathBatch:
    """Simulate ``config.paths`` paths and record them at each of ``times``.

    Raises
    ------
    NegativeIntensity
        If an intensity is negative after truncation, which signals a
        parameter set outside the admissible range.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("checkpoint times must be positive and increasing")
    pk = _pack(model, tilted)
    P, K, d, n = config.paths, times.size, model.d, model.n
    V = np.zeros((P, K))
    X = np.zeros((P, K, d))
    N = np.zeros((P, K, n), dtype=np.int64)
    grid, stops = _step_grid(times, config.dt)
    reps = 2 if config.antithetic else 1
    bernoulli = config.events == "bernoulli"
    starts = list(range(0, P, BLOCK))
    constant_marks = bool(np.all(pk.mark_kind == 0))

    def run(start):
        stop = min(start + BLOCK, P)
        B = stop - start
        rows = (B + reps - 1) // reps
        ss = _block_stream(config.seed, start // BLOCK)
        gen = np.random.Generator(np.random.Philox(ss))
        _seed_kernel_rng(int(ss.generate_state(1, dtype=np.uint32)[0]))
        Xs = np.tile(pk.x0, (B, 1))
        Vs = np.zeros(B)
        Ns = np.zeros((B, n), dtype=np.int64)
        status, s0 = 0, 0
        for k, s_end in enumerate(stops):
            while s0 < s_end:
                s1 = min(s0 + CHUNK, s_end)
                L = s1 - s0
                Z = gen.standard_normal((L, rows, d))
                U = gen.random((L, rows, n))
                UM = U if constant_marks else gen.random((L, rows, n))
                status |= _advance(grid[s0:s1], Z, U, UM, reps, bernoulli, Xs, Vs, Ns,
                                   pk.b, pk.beta, pk.a, pk.alpha, pk.diag_diffusion, pk.m,
                                   pk.lam, pk.kappa, pk.gamma, pk.mark_kind, pk.mark_par,
                                   pk.atom_val, pk.atom_cdf)
                s0 = s1
            V[start:stop, k] = Vs
            X[start:stop, k] = Xs
            N[start:stop, k] = Ns
        return status

    workers = min(_workers(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            status = list(pool.map(run, starts))
    else:
        status = [run(s) for s in starts]
    if any(status):
        raise NegativeIntensity("an intensity became negative along a simulated path")

    logw = np.zeros((P, K))
    theta = 0.0
    if tilted is not None:
        theta = tilted.theta
        et = eta_fn(model, theta, tilted.u_star)
        logw = -theta * V + et * times[None, :] - (X - model.x0) @ tilted.u_star
    return PathBatch(times, V, X, N, logw, config, theta)


def simulate_path(model: AffineModel, t: float, stream: Union[int, np.random.SeedSequence] = 0,
                  tilted: Optional[TiltedDynamics] = None, dt: float = 0.01,
                  events: str = "poisson") -> PathOutcome:
    """One path on ``[0, t]``; ``stream`` is a seed or a :class:`~numpy.random.SeedSequence`."""
    if isinstance(stream, np.random.SeedSequence):
        stream = int(stream.generate_state(1, dtype=np.uint64)[0])
    batch = simulate(model, [t], SimConfig(1, dt, int(stream), events=events), tilted)
    return batch.outcome(0)


def _payoff(functional, excess):
    hit = excess >= 0
    vals = np.zeros_like(excess)
    if np.any(hit):
        vals[hit] = functional.lattice_value(excess[hit])
    return vals


def _summarise(samples: np.ndarray, sampler: str, config: SimConfig, elapsed: float) -> MCEstimate:
    if config.antithetic:
        samples = 0.5 * (samples[0::2] + samples[1::2])
    n = samples.size
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return MCEstimate(mean, se, (mean - 1.96 * se, mean + 1.96 * se), config.paths,
                      sampler, config.seed, elapsed)


def estimate(batch: PathBatch, R: float, functional=None, k: int = -1,
             elapsed: float = 0.0) -> MCEstimate:
    """``E[g(V(t) - R t); V(t) >= R t]`` at checkpoint ``k`` of a simulated batch."""
    if functional is None:
        from .expansion import Indicator
        functional = Indicator()
    t = batch.times[k]
    vals = _payoff(functional, batch.V[:, k] - R * t)
    sampler = "Plain"
    if batch.theta != 0.0:
        vals = vals * np.exp(batch.log_weight[:, k])
        sampler = f"ImportanceSampling({batch.theta:.10g})"
    return _summarise(vals, sampler, batch.config, elapsed)


def plain_mc(model: AffineModel, R: float, t: float, functional=None,
             config: SimConfig = SimConfig()) -> MCEstimate:
    """Average of ``g(V(t) - R t) 1{V(t) >= R t}`` over untilted paths."""
    t0 = time.perf_counter()
    batch = simulate(model, [t], config)
    return estimate(batch, R, functional, 0, time.perf_counter() - t0)


def tilted_for_level(model: AffineModel, R: float) -> TiltedDynamics:
    """Tilted dynamics at the saddlepoint of level ``R``."""
    cum = solve_saddlepoint(model, R, order=2)
    return tilt_dynamics(model, cum.h, cum.tilt.u_star)


def importance_sampling(model: AffineModel, R: float, t: float, functional=None,
                        config: SimConfig = SimConfig(),
                        tilted: Optional[TiltedDynamics] = None) -> MCEstimate:
    """Exponentially tilted estimator at the saddlepoint ``h`` of level ``R``."""
    t0 = time.perf_counter()
    if tilted is None:
        tilted = tilted_for_level(model, R)
    batch = simulate(model, [t], config, tilted)
    return estimate(batch, R, functional, 0, time.perf_counter() - t0)


def weight_identity_residual(batch: PathBatch, model: AffineModel,
                             tilted: TiltedDynamics) -> float:
    """Largest ``|W exp(h V - eta t + u*^T (X - x0)) - 1|`` over the batch (zero up to rounding)."""
    et = eta_fn(model, tilted.theta, tilted.u_star)
    expo = (batch.log_weight + tilted.theta * batch.V - et * batch.times[None, :]
            + (batch.X - model.x0) @ tilted.u_star)
    return float(np.max(np.abs(np.expm1(expo))))
