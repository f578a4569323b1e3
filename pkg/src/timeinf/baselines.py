"""Attribution baselines sharing the AR model: Block LOOCV, conditional
influence and subsampling-based nonparametric influence."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import ar
from .ar import ArConfig, DegenerateDesignError
from .influence import InfluenceContext, ScoreSeries, self_block_influences
from .series import ArInstance, InstanceSet, TimeSeries, WindowSpec, make_instances
from .solvers import SolverChoice

Trainer = Callable[[InstanceSet], Any]
Scorer = Callable[[Any, ArInstance], float]


class DegenerateSubsamplingError(RuntimeError):
    pass


def block_loocv_series(
    series: TimeSeries, dim: int, spec: WindowSpec, cfg: ArConfig
) -> ScoreSeries:
    """Refit without every block containing each point.

    ``score[t]`` is the mean loss of the refitted model on the removed
    instances minus the mean loss of the full model on the same instances.
    Refits downdate the full sufficient statistics instead of rebuilding them.
    """
    inst = make_instances(series, dim, spec)
    full = ar.fit(inst, cfg)
    X = ar.design_matrix(inst, cfg.include_intercept)
    y = inst.targets
    n = len(y)
    gram_sum = ar.symmetric_gram(X)
    rhs_sum = X.T @ y
    full_loss = (y - X @ full.theta) ** 2

    T = series.length
    scores = np.full(T, np.nan)
    coverage = np.zeros(T, dtype=int)
    min_keep = max(cfg.block_len, 1)
    for t in range(T):
        lo, hi = inst.member_range(t)
        if hi <= lo or n - (hi - lo) < min_keep:
            continue
        Xs, ys = X[lo:hi], y[lo:hi]
        n_keep = n - (hi - lo)
        gram = (gram_sum - ar.symmetric_gram(Xs)) / n_keep
        rhs = (rhs_sum - Xs.T @ ys) / n_keep
        try:
            theta = ar.solve_normal_equations(gram, ar.absolute_ridge(gram, cfg.ridge), rhs)
        except DegenerateDesignError:
            continue
        refit_loss = (ys - Xs @ theta) ** 2
        scores[t] = refit_loss.mean() - full_loss[lo:hi].mean()
        coverage[t] = hi - lo
    meta = {
        "method": "block_loocv",
        "block_len": spec.block_len,
        "stride": spec.stride,
        "loss_set": "held_out_neighborhood",
        "sign": "refit_loss_minus_full_loss",
    }
    return ScoreSeries(scores, coverage, meta)


def conditional_influence_series(
    series: TimeSeries,
    dim: int,
    spec: WindowSpec,
    cfg: ArConfig,
    solver: SolverChoice = SolverChoice(),
) -> ScoreSeries:
    """Self block influence of the single instance whose target is each point."""
    inst = make_instances(series, dim, spec)
    ctx = InfluenceContext.build(inst, cfg, solver)
    T = series.length
    scores = np.full(T, np.nan)
    coverage = np.zeros(T, dtype=int)
    scores[inst.target_indices] = self_block_influences(ctx)
    coverage[inst.target_indices] = 1
    meta = {
        "method": "conditional_influence",
        "block_len": spec.block_len,
        "stride": spec.stride,
        "solver": solver.kind,
    }
    return ScoreSeries(scores, coverage, meta)


@dataclass(frozen=True)
class SubsampleSpec:
    num_subsets: int
    subset_size: int
    seed: int = 0
    exhaustive: bool = False  # enumerate every subset of subset_size instead

    def __post_init__(self):
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if not self.exhaustive and self.num_subsets < 2:
            raise ValueError("num_subsets must be >= 2")


def draw_subsets(n: int, spec: SubsampleSpec, attempt: int = 0) -> list[np.ndarray]:
    if not 1 <= spec.subset_size < n:
        raise ValueError(f"subset_size must lie in [1, {n})")
    if spec.exhaustive:
        return [np.array(c) for c in itertools.combinations(range(n), spec.subset_size)]
    out = []
    for k in range(spec.num_subsets):
        rng = np.random.Generator(np.random.PCG64([spec.seed, attempt, k]))
        out.append(np.sort(rng.choice(n, size=spec.subset_size, replace=False)))
    return out


def nonparametric_influence(
    trainer: Trainer,
    scorer: Scorer,
    instances: InstanceSet,
    target_block: int | Sequence[int],
    test: ArInstance,
    spec: SubsampleSpec,
    max_redraws: int = 10,
) -> float:
    """Mean test loss over subsets holding the target block minus over subsets without it.

    A subset "holds" a multi-instance block only if it contains every member
    and "lacks" it only if it contains none; partial overlaps are ignored.
    """
    block = np.atleast_1d(np.asarray(target_block, dtype=int))
    n = len(instances)
    attempts = 1 if spec.exhaustive else max_redraws
    for attempt in range(attempts):
        subsets = draw_subsets(n, spec, attempt)
        flags = [np.isin(block, s) for s in subsets]
        inside = [s for s, f in zip(subsets, flags) if f.all()]
        outside = [s for s, f in zip(subsets, flags) if not f.any()]
        if inside and outside:
            break
    else:
        raise DegenerateSubsamplingError(
            "degenerate subsampling: no subset both includes and excludes the block"
        )

    def mean_loss(groups: list[np.ndarray]) -> float:
        losses = [scorer(trainer(instances.subset(s)), test) for s in groups]
        return math.fsum(losses) / len(losses)

    return mean_loss(inside) - mean_loss(outside)


def ar_trainer(cfg: ArConfig) -> Trainer:
    return lambda subset: ar.fit(subset, cfg)


def ar_scorer(model: ar.FittedAr, test: ArInstance) -> float:
    return ar.loss(model, test)
