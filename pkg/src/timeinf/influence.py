"""Block influence, TimeInf, self-influence and test influence for a fitted AR model.

Every quantity reduces to ``-psi(test)^T H^{-1} psi(train)``.  The context
precomputes ``H^{-1} psi`` for all training instances once; point scores are
then plain means of dot products over the instances whose span contains the
point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ar
from .ar import FittedAr
from .series import ArInstance, InstanceSet, NotCoveredError, neighborhood
from .solvers import SolverChoice, ihvp


@dataclass(frozen=True)
class ScoreSeries:
    scores: np.ndarray
    coverage: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def covered(self) -> np.ndarray:
        return self.coverage > 0


@dataclass(frozen=True)
class InfluenceContext:
    model: FittedAr
    instances: InstanceSet
    solver: SolverChoice = SolverChoice()
    # row j = H^{-1} psi(instance j); None until populated
    cached_ihvp_grads: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def build(
        cls,
        instances: InstanceSet,
        cfg: ar.ArConfig,
        solver: SolverChoice = SolverChoice(),
        cache: bool = True,
    ) -> "InfluenceContext":
        ctx = cls(ar.fit(instances, cfg), instances, solver)
        return ctx.with_cache() if cache else ctx

    @property
    def hessian(self) -> np.ndarray:
        return ar.hessian(self.model)

    def with_cache(self) -> "InfluenceContext":
        if self.cached_ihvp_grads is not None:
            return self
        grads = ar.psi_matrix(self.model, self.instances)
        solved = np.asarray(ihvp(self.hessian, grads.T, self.solver)).T.copy()
        solved.setflags(write=False)
        return InfluenceContext(self.model, self.instances, self.solver, solved)

    def ihvp_grad(self, j: int) -> np.ndarray:
        if self.cached_ihvp_grads is not None:
            return self.cached_ihvp_grads[j]
        return ihvp(self.hessian, ar.psi(self.model, self.instances[j]).gradient, self.solver)

    def ihvp_grads(self) -> np.ndarray:
        if self.cached_ihvp_grads is not None:
            return self.cached_ihvp_grads
        return self.with_cache().cached_ihvp_grads


def influence_param(ctx: InfluenceContext, inst: ArInstance) -> np.ndarray:
    """Derivative of the fitted parameters under contamination by ``inst``."""
    g = ar.psi(ctx.model, inst).gradient
    return -np.asarray(ihvp(ctx.hessian, g, ctx.solver))


def influence_block(ctx: InfluenceContext, train: ArInstance, test: ArInstance) -> float:
    """Derivative of the test loss under contamination by the training block."""
    g_test = ar.psi(ctx.model, test).gradient
    return float(g_test @ influence_param(ctx, train))


def _point_rows(ctx: InfluenceContext, point: int) -> np.ndarray:
    return neighborhood(point, ctx.instances).member_instances


def timeinf_point(ctx: InfluenceContext, point: int, test: ArInstance) -> float:
    rows = _point_rows(ctx, point)
    g_test = ar.psi(ctx.model, test).gradient
    vals = np.array([-(g_test @ ctx.ihvp_grad(j)) for j in rows])
    return float(np.mean(vals))


def _average_over_neighborhoods(ctx: InfluenceContext, per_instance: np.ndarray, method: str) -> ScoreSeries:
    T = ctx.instances.series_length
    scores = np.full(T, np.nan)
    coverage = np.zeros(T, dtype=int)
    for t in range(T):
        lo, hi = ctx.instances.member_range(t)
        if hi > lo:
            scores[t] = np.mean(per_instance[lo:hi])
            coverage[t] = hi - lo
    meta = {
        "method": method,
        "block_len": ctx.instances.block_len,
        "stride": ctx.instances.stride,
        "solver": ctx.solver.kind,
    }
    return ScoreSeries(scores, coverage, meta)


def self_block_influences(ctx: InfluenceContext) -> np.ndarray:
    """``influence_block(b, b)`` for every training instance ``b``."""
    grads = ar.psi_matrix(ctx.model, ctx.instances)
    return -np.einsum("ij,ij->i", grads, ctx.ihvp_grads())


def self_influence_series(ctx: InfluenceContext) -> ScoreSeries:
    return _average_over_neighborhoods(ctx, self_block_influences(ctx), "self_influence")


def test_influence_series(ctx: InfluenceContext, test_set: InstanceSet) -> ScoreSeries:
    """Per-point influence on the mean loss over ``test_set``.

    Negative scores mark points whose upweighting lowers the test loss.
    """
    if len(test_set) == 0:
        raise ValueError("empty test set")
    if test_set.block_len != ctx.instances.block_len:
        raise ar.BlockLengthMismatch("instance/model block length mismatch")
    g_test = ar.psi_matrix(ctx.model, test_set).mean(axis=0)
    per_instance = -(ctx.ihvp_grads() @ g_test)
    return _average_over_neighborhoods(ctx, per_instance, "test_influence")


def pairwise_influence(ctx: InfluenceContext, val_set: InstanceSet) -> np.ndarray:
    """``n_train x n_val`` matrix of ``influence_block(train_i, val_j)``."""
    g_val = ar.psi_matrix(ctx.model, val_set)
    return -(ctx.ihvp_grads() @ g_val.T)


def block_influence_matrix(
    ctx: InfluenceContext,
    val_set: InstanceSet,
    blocks: Sequence[Sequence[int] | np.ndarray],
) -> np.ndarray:
    """Mean block influence of each group of training rows over the validation set.

    ``blocks[k]`` lists the training-instance rows that make up block ``k``.
    An empty block scores NaN.
    """
    g_val_mean = ar.psi_matrix(ctx.model, val_set).mean(axis=0)
    per_instance = -(ctx.ihvp_grads() @ g_val_mean)
    out = np.full(len(blocks), np.nan)
    for k, rows in enumerate(blocks):
        rows = np.asarray(rows, dtype=int)
        if len(rows):
            out[k] = np.mean(per_instance[rows])
    return out


__all__ = [
    "InfluenceContext",
    "NotCoveredError",
    "ScoreSeries",
    "block_influence_matrix",
    "influence_block",
    "influence_param",
    "pairwise_influence",
    "self_block_influences",
    "self_influence_series",
    "test_influence_series",
    "timeinf_point",
]
