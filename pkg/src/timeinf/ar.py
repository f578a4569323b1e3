"""Linear AR(m) least-squares model with the loss/gradient/Hessian used for influence.

Loss per instance is the squared one-step residual ``(y - z^T theta)^2``.
Its gradient is ``-2 z r`` and the Hessian of the mean loss plus ridge term is
``2 (M + ridge I)`` with ``M`` the mean covariate outer product.  Keeping the
factor 2 on both sides means ``-H^{-1} psi = (M + ridge I)^{-1} z r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .series import ArInstance, InstanceSet


class DegenerateDesignError(ArithmeticError):
    def __init__(self, condition: float):
        super().__init__(f"degenerate design matrix (condition estimate {condition:.3g})")
        self.condition = condition


class BlockLengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ArConfig:
    block_len: int
    ridge: float = 1e-8
    include_intercept: bool = False

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


@dataclass(frozen=True)
class FittedAr:
    theta: np.ndarray
    gram: np.ndarray
    n_instances: int
    residual_sq_mean: float
    ridge: float  # absolute ridge added to the Gram matrix
    block_len: int
    include_intercept: bool = False

    @property
    def n_params(self) -> int:
        return len(self.theta)

    @property
    def coefficients(self) -> np.ndarray:
        return self.theta[: self.block_len]

    @property
    def intercept(self) -> float:
        return float(self.theta[-1]) if self.include_intercept else 0.0

    def design(self, covariates: np.ndarray) -> np.ndarray:
        """Covariates as the model sees them (constant column appended if needed)."""
        covariates = np.asarray(covariates, dtype=float)
        if covariates.shape[-1] != self.block_len:
            raise BlockLengthMismatch("instance/model block length mismatch")
        if not self.include_intercept:
            return covariates
        ones = np.ones(covariates.shape[:-1] + (1,))
        return np.concatenate([covariates, ones], axis=-1)

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return self.design(covariates) @ self.theta


@dataclass(frozen=True)
class PsiValue:
    gradient: np.ndarray
    residual: float


def design_matrix(instances: InstanceSet, include_intercept: bool) -> np.ndarray:
    X = np.asarray(instances.covariates, dtype=float)
    if include_intercept:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return X


def symmetric_gram(X: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    if weights is None:
        G = X.T @ X
    else:
        G = (X * weights[:, None]).T @ X
    return (G + G.T) / 2


def absolute_ridge(gram: np.ndarray, ridge: float) -> float:
    """Relative ridge ``ridge * trace(M)/q``; falls back to ``ridge`` for an all-zero Gram."""
    scale = np.trace(gram) / gram.shape[0]
    return ridge * scale if scale > 0 else ridge


def solve_normal_equations(gram: np.ndarray, ridge_abs: float, rhs: np.ndarray) -> np.ndarray:
    A = gram + ridge_abs * np.eye(gram.shape[0])
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise DegenerateDesignError(float(np.linalg.cond(A))) from None
    theta = linalg.cho_solve(factor, rhs, check_finite=False)
    if not np.all(np.isfinite(theta)):
        raise DegenerateDesignError(float(np.linalg.cond(A)))
    return theta


def fit_arrays(
    X: np.ndarray,
    y: np.ndarray,
    cfg: ArConfig,
    weights: np.ndarray | None = None,
) -> FittedAr:
    """Fit on raw arrays; ``X`` excludes the intercept column.

    ``weights`` are per-instance masses summing to the normalizer of the mean
    (defaults to uniform ``1/n``).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 1:
        raise ValueError("cannot fit an empty instance set")
    if X.shape[1] != cfg.block_len:
        raise BlockLengthMismatch("instance/model block length mismatch")
    if cfg.include_intercept:
        X = np.hstack([X, np.ones((n, 1))])
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    gram = symmetric_gram(X, w)
    rhs = X.T @ (w * y)
    ridge_abs = absolute_ridge(gram, cfg.ridge)
    theta = solve_normal_equations(gram, ridge_abs, rhs)
    resid = y - X @ theta
    return FittedAr(
        theta=theta,
        gram=gram,
        n_instances=n,
        residual_sq_mean=float(np.mean(resid**2)),
        ridge=float(ridge_abs),
        block_len=cfg.block_len,
        include_intercept=cfg.include_intercept,
    )


def fit(instances: InstanceSet, cfg: ArConfig) -> FittedAr:
    if instances.block_len != cfg.block_len:
        raise BlockLengthMismatch("instance/model block length mismatch")
    return fit_arrays(instances.covariates, instances.targets, cfg)


def residual(model: FittedAr, inst: ArInstance) -> float:
    return float(inst.target - model.predict(inst.covariates))


def loss(model: FittedAr, inst: ArInstance) -> float:
    return residual(model, inst) ** 2


def psi(model: FittedAr, inst: ArInstance) -> PsiValue:
    r = residual(model, inst)
    return PsiValue(gradient=-2.0 * model.design(inst.covariates) * r, residual=r)


def hessian(model: FittedAr) -> np.ndarray:
    H = 2.0 * (model.gram + model.ridge * np.eye(model.n_params))
    return (H + H.T) / 2


def residuals(model: FittedAr, instances: InstanceSet) -> np.ndarray:
    return instances.targets - model.predict(instances.covariates)


def psi_matrix(model: FittedAr, instances: InstanceSet) -> np.ndarray:
    """Row ``j`` is the loss gradient of instance ``j``."""
    r = residuals(model, instances)
    return -2.0 * model.design(instances.covariates) * r[:, None]
