"""Inverse-Hessian-vector products: direct Cholesky, conjugate gradient, identity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Union

import numpy as np
from scipy import linalg

MatVec = Callable[[np.ndarray], np.ndarray]
HessianLike = Union[np.ndarray, MatVec]

SOLVER_KINDS = ("direct", "conjugate_gradient", "hessian_free")


class NotPositiveDefiniteError(ArithmeticError):
    pass


class CGConvergenceError(ArithmeticError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"CG failed to converge after {iterations} iterations "
            f"(relative residual {residual:.3g})"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverChoice:
    kind: Literal["direct", "conjugate_gradient", "hessian_free"] = "direct"
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None  # None -> 4 x matrix dimension

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.cg_tol <= 0:
            raise ValueError("cg_tol must be positive")
        if self.cg_max_iter is not None and self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be >= 1")


def _as_matvec(H: HessianLike) -> MatVec:
    if callable(H):
        return H
    H = np.asarray(H, dtype=float)
    return lambda v: H @ v


def conjugate_gradient(
    H: HessianLike,
    V: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> np.ndarray:
    """Solve ``H X = V`` column-by-column with independent CG recurrences.

    ``V`` may be a vector or an ``m x k`` matrix; all ``k`` systems advance
    together through one matrix product per iteration.  Raises
    :class:`CGConvergenceError` if any column misses
    ``||H x - v|| <= tol * ||v||``.
    """
    matvec = _as_matvec(H)
    V = np.asarray(V, dtype=float)
    vector = V.ndim == 1
    B = V[:, None] if vector else V
    m, k = B.shape
    # finite precision loses conjugacy, so allow more than m steps
    max_iter = 4 * m if max_iter is None else max_iter

    X = np.zeros_like(B)
    R = B.copy()
    P = R.copy()
    rr = np.einsum("ij,ij->j", R, R)
    target = (tol * np.sqrt(np.einsum("ij,ij->j", B, B))) ** 2
    active = rr > target

    it = 0
    while it < max_iter and active.any():
        idx = np.flatnonzero(active)
        Pa = P[:, idx]
        HP = matvec(Pa)
        HP = HP[:, None] if HP.ndim == 1 else HP
        pHp = np.einsum("ij,ij->j", Pa, HP)
        if np.any(pHp <= 0):
            raise NotPositiveDefiniteError("non-positive curvature encountered in CG")
        alpha = rr[idx] / pHp
        X[:, idx] += alpha * Pa
        R[:, idx] -= alpha * HP
        rr_new = np.einsum("ij,ij->j", R[:, idx], R[:, idx])
        P[:, idx] = R[:, idx] + (rr_new / rr[idx]) * Pa
        rr[idx] = rr_new
        active[idx] = rr_new > target[idx]
        it += 1

    # the recurrence residual can drift; judge convergence on the true one
    true_res = B - _apply(matvec, X)
    res_norm = np.sqrt(np.einsum("ij,ij->j", true_res, true_res))
    b_norm = np.sqrt(np.einsum("ij,ij->j", B, B))
    bad = res_norm > tol * b_norm
    if bad.any():
        j = int(np.argmax(np.where(bad, res_norm / np.where(b_norm > 0, b_norm, 1), -1)))
        raise CGConvergenceError(float(res_norm[j] / max(b_norm[j], 1e-300)), it)
    return X[:, 0] if vector else X


def _apply(matvec: MatVec, X: np.ndarray) -> np.ndarray:
    out = matvec(X)
    return out[:, None] if out.ndim == 1 else out


def direct_solve(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    if callable(H):
        raise TypeError("direct solver needs an explicit Hessian matrix")
    try:
        factor = linalg.cho_factor(np.asarray(H, dtype=float), lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError("Hessian not positive definite") from None
    return linalg.cho_solve(factor, V)


def ihvp(H: HessianLike, v: np.ndarray, choice: SolverChoice = SolverChoice()) -> np.ndarray:
    """Approximate ``H^{-1} v``; ``v`` may hold several right-hand sides as columns."""
    if choice.kind == "hessian_free":
        return v
    if choice.kind == "direct":
        return direct_solve(H, v)
    return conjugate_gradient(H, v, tol=choice.cg_tol, max_iter=choice.cg_max_iter)
