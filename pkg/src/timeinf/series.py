"""Time-series storage, sliding-window AR instances and point neighborhoods.

Time indices are 0-based.  An instance with target index ``t`` spans the
``m + 1`` observations ``values[t - m .. t]``; its covariates are stored
most-recent-first, ``(x[t-1], x[t-2], ..., x[t-m])``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class SeriesError(ValueError):
    """Raised for malformed series or windowing requests."""


class NotCoveredError(SeriesError):
    """Raised when a time point lies in no instance span."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    dim_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise SeriesError("series must be a non-empty T x p matrix")
        if not np.all(np.isfinite(values)):
            raise SeriesError("series contains non-finite values")
        names = tuple(self.dim_names) or tuple(f"x{j}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise SeriesError(
                f"expected {values.shape[1]} dimension names, got {len(names)}"
            )
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "dim_names", names)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    def column(self, dim: int) -> np.ndarray:
        if not 0 <= dim < self.n_dims:
            raise SeriesError(f"unknown dimension {dim}")
        return self.values[:, dim]


@dataclass(frozen=True)
class WindowSpec:
    block_len: int
    stride: int = 1

    def __post_init__(self):
        if self.block_len < 1:
            raise SeriesError("block_len must be a positive integer")
        if self.stride < 1:
            raise SeriesError("stride must be a positive integer")


@dataclass(frozen=True)
class ArInstance:
    target_index: int
    covariates: np.ndarray
    target: float

    @property
    def block_len(self) -> int:
        return len(self.covariates)


@dataclass(frozen=True)
class InstanceSet:
    """All sliding-window instances of one series column.

    ``covariates`` is an ``n x m`` matrix (row ``j`` belongs to the instance
    with target index ``target_indices[j]``), ``targets`` the matching
    response values.
    """

    covariates: np.ndarray
    targets: np.ndarray
    target_indices: np.ndarray
    block_len: int
    stride: int
    series_length: int
    dimension_id: int = 0

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, j: int) -> ArInstance:
        return ArInstance(
            int(self.target_indices[j]), self.covariates[j], float(self.targets[j])
        )

    def __iter__(self):
        for j in range(len(self)):
            yield self[j]

    def subset(self, rows: Sequence[int] | np.ndarray) -> "InstanceSet":
        """Instances at the given row positions, keeping their original order.

        The result no longer has uniform spacing, so ``stride`` is carried over
        only as metadata.
        """
        rows = np.asarray(rows, dtype=int)
        return InstanceSet(
            _frozen(self.covariates[rows].copy()),
            _frozen(self.targets[rows].copy()),
            _frozen(self.target_indices[rows].copy()),
            self.block_len,
            self.stride,
            self.series_length,
            self.dimension_id,
        )

    def member_range(self, point: int) -> tuple[int, int]:
        """Half-open row range ``[lo, hi)`` of instances whose span holds ``point``.

        Valid for sets produced by :func:`make_instances` (uniform stride).
        """
        m, s = self.block_len, self.stride
        # target m + j*s lies in [point, point + m]
        lo = max(0, -((m - point) // s))  # ceil((point - m) / s)
        hi = min(len(self), (point // s) + 1 if point >= 0 else 0)
        return lo, max(lo, hi)


@dataclass(frozen=True)
class BlockNeighborhood:
    point_index: int
    member_instances: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.member_instances)


def make_instances(series: TimeSeries, dim: int, spec: WindowSpec) -> InstanceSet:
    x = series.column(dim)
    T, m, s = series.length, spec.block_len, spec.stride
    if T <= m:
        raise SeriesError(
            f"series too short for block length (T={T}, block_len={m})"
        )
    targets = np.arange(m, T, s)
    # column j holds lag j+1
    lags = targets[:, None] - 1 - np.arange(m)[None, :]
    return InstanceSet(
        covariates=_frozen(x[lags].copy()),
        targets=_frozen(x[targets].copy()),
        target_indices=_frozen(targets),
        block_len=m,
        stride=s,
        series_length=T,
        dimension_id=dim,
    )


def neighborhood(point: int, instances: InstanceSet) -> BlockNeighborhood:
    if not 0 <= point < instances.series_length:
        raise SeriesError(f"point {point} outside series of length {instances.series_length}")
    lo, hi = instances.member_range(point)
    if hi <= lo:
        raise NotCoveredError(f"point {point} not covered by any block")
    return BlockNeighborhood(point, _frozen(np.arange(lo, hi)))


def coverage_counts(instances: InstanceSet) -> np.ndarray:
    """Number of instance spans containing each time point."""
    counts = np.zeros(instances.series_length, dtype=int)
    for t in range(instances.series_length):
        lo, hi = instances.member_range(t)
        counts[t] = hi - lo
    return counts
