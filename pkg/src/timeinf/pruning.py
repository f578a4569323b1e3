"""Block-wise data pruning: rank training segments by influence on validation
loss, drop them one at a time and track test R^2 / RMSE of the refit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ar
from .ar import ArConfig, DegenerateDesignError
from .influence import InfluenceContext, block_influence_matrix
from .series import InstanceSet, TimeSeries, WindowSpec, make_instances
from .solvers import SolverChoice

ORDERS = ("descending", "ascending", "random")


class UndefinedR2Error(ValueError):
    pass


@dataclass(frozen=True)
class PruneConfig:
    train_size: int
    val_size: int
    test_size: int
    block_len: int = 100
    prune_block_size: int | None = None  # None -> block_len
    num_steps: int | None = None  # None -> every block
    removal_order: str = "descending"
    seed: int = 0
    ridge: float = 1e-8
    include_intercept: bool = False
    solver: SolverChoice = SolverChoice()

    def __post_init__(self):
        if self.removal_order not in ORDERS:
            raise ValueError(f"unknown removal order {self.removal_order!r}")
        if self.prune_block_size is not None and self.prune_block_size < self.block_len:
            raise ValueError("prune_block_size must be >= block_len")
        for name in ("train_size", "val_size", "test_size"):
            if getattr(self, name) <= self.block_len:
                raise ValueError(f"{name} must exceed block_len")

    @property
    def segment_len(self) -> int:
        return self.prune_block_size or self.block_len

    @property
    def ar_config(self) -> ArConfig:
        return ArConfig(self.block_len, self.ridge, self.include_intercept)


@dataclass(frozen=True)
class PruneRecord:
    step: int
    fraction_removed: float
    r2: float
    rmse: float


@dataclass(frozen=True)
class PruneCurve:
    records: list[PruneRecord]
    block_scores: np.ndarray
    removal_sequence: list[int]
    truncated: bool = False
    meta: dict = field(default_factory=dict)


def r2_rmse(predictions, targets) -> tuple[float, float]:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if len(p) != len(y) or len(y) == 0:
        raise ValueError("predictions and targets must have equal non-zero length")
    sse = float(np.sum((y - p) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    rmse = math.sqrt(sse / len(y))
    if sst == 0:
        raise UndefinedR2Error("R^2 undefined for constant targets")
    return 1.0 - sse / sst, rmse


@dataclass(frozen=True)
class Partitions:
    train: InstanceSet
    val: InstanceSet
    test: InstanceSet
    segments: list[tuple[int, int]]  # half-open train index ranges

    def segment_members(self) -> list[np.ndarray]:
        """Training rows whose target index falls in each segment."""
        t = self.train.target_indices
        return [np.flatnonzero((t >= a) & (t < b)) for a, b in self.segments]

    def surviving_rows(self, removed: list[int]) -> np.ndarray:
        """Rows whose span ``[target - m, target]`` avoids every removed segment."""
        t = self.train.target_indices
        m = self.train.block_len
        keep = np.ones(len(t), dtype=bool)
        for k in removed:
            a, b = self.segments[k]
            keep &= (t < a) | (t - m >= b)
        return np.flatnonzero(keep)


def partition(values: np.ndarray, cfg: PruneConfig) -> Partitions:
    """Sequential train -> validation -> test split; instances stay inside their part."""
    values = np.asarray(values, dtype=float)
    need = cfg.train_size + cfg.val_size + cfg.test_size
    if len(values) < need:
        raise ValueError(f"series too short for the split: need {need}, have {len(values)}")
    a, b = cfg.train_size, cfg.train_size + cfg.val_size
    spec = WindowSpec(cfg.block_len)
    parts = [values[:a], values[a:b], values[b:need]]
    train, val, test = (make_instances(TimeSeries(p), 0, spec) for p in parts)
    L = cfg.segment_len
    segments = [(s, min(s + L, a)) for s in range(0, a, L)]
    return Partitions(train, val, test, segments)


def score_blocks(ctx: InfluenceContext, val_set: InstanceSet, parts: Partitions) -> np.ndarray:
    """Mean influence of each training segment on the validation loss.

    Negative = helpful: upweighting the segment lowers validation loss.
    """
    members = parts.segment_members()
    if len(members) < 2:
        raise ValueError("training partition yields fewer than two prune blocks")
    return block_influence_matrix(ctx, val_set, members)


def removal_sequence(scores: np.ndarray, order: str, seed: int = 0) -> list[int]:
    idx = np.arange(len(scores))
    filled = np.where(np.isnan(scores), 0.0, scores)
    if order == "descending":  # most helpful (most negative) first
        seq = np.lexsort((idx, filled))
    elif order == "ascending":
        seq = np.lexsort((idx, -filled))
    else:
        seq = np.random.Generator(np.random.PCG64(seed)).permutation(len(scores))
    return [int(k) for k in seq]


def _fit_and_score(train: InstanceSet, rows: np.ndarray, test: InstanceSet, cfg: ArConfig):
    model = ar.fit(train.subset(rows), cfg)
    return r2_rmse(model.predict(test.covariates), test.targets)


def run_prune(values: np.ndarray, cfg: PruneConfig) -> PruneCurve:
    parts = partition(values, cfg)
    arcfg = cfg.ar_config
    ctx = InfluenceContext.build(parts.train, arcfg, cfg.solver)
    scores = score_blocks(ctx, parts.val, parts)
    seq = removal_sequence(scores, cfg.removal_order, cfg.seed)
    n_blocks = len(parts.segments)
    steps = n_blocks if cfg.num_steps is None else min(cfg.num_steps, n_blocks)

    min_rows = ctx.model.n_params + 1
    records = []
    truncated = False
    for step in range(steps + 1):
        removed = seq[:step]
        rows = parts.surviving_rows(removed)
        if len(rows) < min_rows:
            truncated = True
            break
        try:
            r2, rmse = _fit_and_score(parts.train, rows, parts.test, arcfg)
        except DegenerateDesignError:
            truncated = True
            break
        records.append(PruneRecord(step, step / n_blocks, r2, rmse))
    meta = {
        "order": cfg.removal_order,
        "seed": cfg.seed,
        "n_blocks": n_blocks,
        "segment_len": cfg.segment_len,
        "block_len": cfg.block_len,
    }
    return PruneCurve(records, scores, seq[:steps], truncated, meta)


def standalone_metrics(values: np.ndarray, cfg: PruneConfig) -> tuple[float, float]:
    """Fit on the whole training partition and evaluate on the test partition."""
    parts = partition(values, cfg)
    rows = np.arange(len(parts.train))
    return _fit_and_score(parts.train, rows, parts.test, cfg.ar_config)
