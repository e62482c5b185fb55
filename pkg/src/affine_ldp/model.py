"""Affine point process parameters, admissibility checks and ergodic constants.

The state ``X`` solves

    dX = (b - beta X) dt + sigma(X) dW + sum_i gamma_i dL_i,
    sigma(x) sigma(x)^T = a + sum_j alpha^j x_j,

and event type ``i`` arrives with intensity ``lambda_i + kappa_i^T X``,
carrying a mark drawn from ``marks[i]``.  The first ``m`` coordinates form
the square-root block (index set ``I``); the remaining ``d - m`` are
Gaussian (index set ``J``).

Clause identifiers used in :class:`ValidationReport` are ``"I(1)"`` ...
``"I(6)"``, ``"II"`` and ``"III"``; they follow the standard admissibility
conditions for affine jump diffusions with a square-root block.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, ModelFileError, SingularStabilityMatrix
from .marks import MarkLaw, common_span, mark_from_dict

PSD_FLOOR = -1e-10
STABILITY_FLOOR = 1e-10


def _frozen(x, shape=None) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if shape is not None and arr.shape != shape:
        raise DimensionMismatch(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AffineModel:
    """Immutable parameter set of an affine point process.

    Arrays are copied and made read-only on construction.  ``gamma`` stores
    the jump directions row-wise (row ``i`` is ``gamma_i``) and ``alpha`` is a
    ``(d, d, d)`` stack with ``alpha[j]`` the matrix multiplying ``x_j``.
    """

    d: int
    n: int
    m: int
    a: np.ndarray
    alpha: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray
    x0: np.ndarray
    marks: Tuple[MarkLaw, ...]

    def __post_init__(self):
        d, n, m = int(self.d), int(self.n), int(self.m)
        if d < 1 or n < 1 or not 0 <= m <= d:
            raise DimensionMismatch(f"need d >= 1, n >= 1 and 0 <= m <= d, got {(d, n, m)}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        try:
            object.__setattr__(self, "a", _frozen(self.a, (d, d)))
            object.__setattr__(self, "alpha", _frozen(self.alpha, (d, d, d)))
            object.__setattr__(self, "b", _frozen(self.b, (d,)))
            object.__setattr__(self, "beta", _frozen(self.beta, (d, d)))
            object.__setattr__(self, "lam", _frozen(self.lam, (n,)))
            object.__setattr__(self, "kappa", _frozen(self.kappa, (n, d)))
            object.__setattr__(self, "gamma", _frozen(self.gamma, (n, d)))
            object.__setattr__(self, "x0", _frozen(self.x0, (d,)))
        except ValueError as exc:  # ragged nested lists
            if isinstance(exc, DimensionMismatch):
                raise
            raise DimensionMismatch(str(exc)) from exc
        marks = tuple(self.marks)
        if len(marks) != n:
            raise DimensionMismatch(f"expected {n} mark laws, got {len(marks)}")
        object.__setattr__(self, "marks", marks)

    # convenience -----------------------------------------------------
    @property
    def mark_means(self) -> np.ndarray:
        return np.array([z.mean for z in self.marks])

    @property
    def mark_second_moments(self) -> np.ndarray:
        return np.array([z.second_moment for z in self.marks])

    def stability_matrix(self) -> np.ndarray:
        """``beta - sum_i E[Z_i] gamma_i kappa_i^T``."""
        return self.beta - np.einsum("i,ij,ik->jk", self.mark_means, self.gamma, self.kappa)

    def replace(self, **changes) -> "AffineModel":
        fields = {k: getattr(self, k) for k in
                  ("d", "n", "m", "a", "alpha", "b", "beta", "lam", "kappa", "gamma", "x0", "marks")}
        fields.update(changes)
        return AffineModel(**fields)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "n": self.n, "m": self.m,
            "a": self.a.tolist(), "alpha": self.alpha.tolist(), "b": self.b.tolist(),
            "beta": self.beta.tolist(), "lambda": self.lam.tolist(),
            "kappa": self.kappa.tolist(), "gamma": self.gamma.tolist(),
            "x0": self.x0.tolist(), "marks": [z.to_dict() for z in self.marks],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AffineModel":
        missing = [k for k in ("d", "n", "m", "a", "alpha", "b", "beta", "lambda",
                               "kappa", "gamma", "x0", "marks") if k not in raw]
        if missing:
            raise ModelFileError(f"missing keys: {', '.join(missing)}")
        try:
            marks = [mark_from_dict(z) for z in raw["marks"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"bad mark table: {exc}") from exc
        return cls(d=raw["d"], n=raw["n"], m=raw["m"], a=raw["a"], alpha=raw["alpha"],
                   b=raw["b"], beta=raw["beta"], lam=raw["lambda"], kappa=raw["kappa"],
                   gamma=raw["gamma"], x0=raw["x0"], marks=marks)


def load_model(path) -> AffineModel:
    """Read a model from a TOML file.

    Raises
    ------
    ModelFileError
        If the file cannot be read or parsed, with the parser's line context.
    DimensionMismatch
        If the arrays do not have the shapes implied by ``d``, ``n``.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ModelFileError(f"{path}: {exc}") from exc
    return AffineModel.from_dict(raw)


def model_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Tuple[str, str], ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "violations": [{"clause": c, "detail": msg} for c, msg in self.violations]}


def _is_psd(mat: np.ndarray) -> bool:
    return np.allclose(mat, mat.T, atol=1e-12) and np.linalg.eigvalsh((mat + mat.T) / 2).min() >= PSD_FLOOR


def validate(model: AffineModel) -> ValidationReport:
    """Check every admissibility clause and collect all violations."""
    d, m = model.d, model.m
    I, J = slice(0, m), slice(m, d)
    out: List[Tuple[str, str]] = []

    if not _is_psd(model.a):
        out.append(("I(1)", "a is not symmetric positive semi-definite"))
    if np.any(model.a[I, I] != 0):
        out.append(("I(1)", "a restricted to the square-root block is nonzero"))

    for i in range(d):
        al = model.alpha[i]
        if i >= m:
            if np.any(al != 0):
                out.append(("I(2)", f"alpha^{i + 1} must vanish for a Gaussian coordinate"))
            continue
        if not _is_psd(al):
            out.append(("I(2)", f"alpha^{i + 1} is not symmetric positive semi-definite"))
        block = al[I, I].copy()
        block[i, i] = 0.0
        if np.any(block != 0):
            out.append(("I(2)", f"alpha^{i + 1} on the square-root block is not a multiple of e_{i + 1} e_{i + 1}^T"))

    if np.any(model.b[I] < 0):
        out.append(("I(3)", "b is negative on the square-root block"))

    if np.any(model.beta[I, J] != 0):
        out.append(("I(4)", "beta couples the square-root block to Gaussian coordinates"))
    off = model.beta[I, I] - np.diag(np.diag(model.beta[I, I]))
    if np.any(off > 0):
        out.append(("I(4)", "beta has positive off-diagonal entries on the square-root block"))

    if np.any(model.lam < 0):
        out.append(("I(5)", "lambda has negative entries"))
    if np.any(model.kappa[:, J] != 0):
        out.append(("I(5)", "kappa loads on Gaussian coordinates"))

    if np.any(model.gamma[:, I] < 0):
        out.append(("I(6)", "some gamma_i is negative on the square-root block"))

    for i in range(m):
        if not model.alpha[i][i, i] > 0:
            out.append(("II", f"alpha^{i + 1}_{{{i + 1},{i + 1}}} must be positive"))
        if not model.b[i] > 0:
            out.append(("II", f"b_{i + 1} must be positive"))
    base = model.lam + model.kappa[:, I].sum(axis=1)
    for i in np.flatnonzero(~(base > 0)):
        out.append(("II", f"lambda_{i + 1} + sum_j kappa_{i + 1},j must be positive"))

    eig = np.linalg.eigvals(model.stability_matrix())
    if eig.real.min() <= STABILITY_FLOOR:
        out.append(("III", f"stability matrix has eigenvalue with real part {eig.real.min():.6g}"))
    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# ergodic quantities

@dataclass(frozen=True)
class ErgodicQuantities:
    r: float
    sigma2: float
    calA: np.ndarray
    calB: np.ndarray
    calC: np.ndarray

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def to_dict(self) -> dict:
        return {"r": self.r, "sigma2": self.sigma2, "calA": self.calA.tolist(),
                "calB": self.calB.tolist(), "calC": self.calC.tolist()}


def ergodic_quantities(model: AffineModel) -> ErgodicQuantities:
    """Long-run mean rate ``r`` and CLT variance ``sigma2`` of ``V(t)``.

    Uses linear solves with the stability matrix rather than an explicit
    inverse.
    """
    EZ = model.mark_means
    S = model.stability_matrix()
    try:
        # A^T = (sum E[Z] kappa_i^T) S^{-1}  <=>  S^T A = sum E[Z] kappa_i
        A = np.linalg.solve(S.T, model.kappa.T @ EZ)
        B = np.linalg.solve(S, model.b + model.gamma.T @ (model.lam * EZ))
    except np.linalg.LinAlgError as exc:
        raise SingularStabilityMatrix(str(exc)) from exc
    g = 1.0 + model.gamma @ A
    C = g**2 * model.mark_second_moments
    r = float(A @ model.b + np.sum(model.lam * EZ * g))
    quad = np.einsum("i,jik,k->j", A, model.alpha, A)
    sigma2 = float(A @ model.a @ A + C @ model.lam + (quad + C @ model.kappa) @ B)
    return ErgodicQuantities(r, sigma2, A, B, C)


def lattice_span(model: AffineModel) -> Optional[float]:
    """Largest ``b`` such that every mark law lives on ``b N``; None if non-lattice.

    Raises
    ------
    IncommensurableLattices
        If two lattice spans have no common rational divisor.
    """
    return common_span(model.marks)
