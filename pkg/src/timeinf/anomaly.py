"""Anomaly scores, thresholding and evaluation built on per-dimension influence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .ar import ArConfig
from .baselines import block_loocv_series, conditional_influence_series
from .influence import InfluenceContext, ScoreSeries, self_influence_series
from .series import TimeSeries, WindowSpec, make_instances
from .solvers import SolverChoice

METHODS = ("timeinf", "loocv", "conditional")


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class AnomalyScores:
    scores: np.ndarray
    per_dim_scores: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AnomalyPrediction:
    labels: np.ndarray
    threshold_rule: str
    threshold_value: float
    degenerate: bool = False


@dataclass(frozen=True)
class MetricReport:
    auc: float | None
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    rule: str = ""

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "rule": self.rule,
        }


def _scores_array(scores) -> np.ndarray:
    if isinstance(scores, AnomalyScores):
        scores = scores.scores
    return np.asarray(scores, dtype=float)


def sep_inf(raw_per_dim: np.ndarray, coverage: np.ndarray | None = None) -> AnomalyScores:
    """Absolute value, per-dimension min-max scaling, then mean across dimensions.

    Uncovered entries take the smallest covered magnitude of their dimension.
    A constant dimension contributes zeros.
    """
    raw = np.asarray(raw_per_dim, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.size == 0:
        raise ValueError("empty input")
    cov = np.ones(raw.shape, dtype=bool) if coverage is None else np.asarray(coverage).reshape(raw.shape) > 0
    mag = np.abs(raw)
    scaled = np.zeros_like(mag)
    for j in range(mag.shape[1]):
        col = mag[:, j].copy()
        ok = cov[:, j] & np.isfinite(col)
        if not ok.any():
            continue
        col[~ok] = col[ok].min()
        lo, hi = col.min(), col.max()
        if hi > lo:
            scaled[:, j] = (col - lo) / (hi - lo)
    return AnomalyScores(scaled.mean(axis=1), scaled, {"aggregation": "sep_inf"})


def kmeans_threshold(scores) -> AnomalyPrediction:
    """Two-cluster 1-D k-means; the upper cluster is anomalous.

    The partition is the global optimum of the within-cluster sum of squares,
    found by scanning every cut of the sorted scores.  The threshold is the
    midpoint of the two cluster means.
    """
    s = _scores_array(scores)
    if len(s) < 2:
        raise ValueError("need at least two scores")
    if s.max() == s.min():
        return AnomalyPrediction(np.zeros(len(s), dtype=int), "kmeans", float("inf"), True)

    order = np.sort(s)
    centered = order - order.mean()
    n = len(order)
    k = np.arange(1, n)  # size of the lower cluster
    csum = np.cumsum(centered)[:-1]
    # within-SSE = total - between; between = S_k^2 * n / (k (n - k)) for centered data
    between = csum**2 * n / (k * (n - k))
    # cuts between equal values are not real splits
    valid = order[1:] > order[:-1]
    between[~valid] = -np.inf
    cut = int(np.argmax(between)) + 1
    lower_mean = order[:cut].mean()
    upper_mean = order[cut:].mean()
    threshold = (lower_mean + upper_mean) / 2
    # snap the threshold so labels reproduce the optimal split exactly
    threshold = min(max(threshold, np.nextafter(order[cut - 1], np.inf)), order[cut])
    labels = (s >= threshold).astype(int)
    return AnomalyPrediction(labels, "kmeans", float(threshold))


def topk_threshold(scores, k: int) -> AnomalyPrediction:
    """Label the ``k`` largest scores; boundary ties go to the earlier index."""
    s = _scores_array(scores)
    if not 1 <= k <= len(s):
        raise ValueError(f"k must lie in [1, {len(s)}]")
    order = np.lexsort((np.arange(len(s)), -s))
    labels = np.zeros(len(s), dtype=int)
    labels[order[:k]] = 1
    return AnomalyPrediction(labels, f"topk({k})", float(s[order[k - 1]]))


def auc(scores, labels) -> float:
    """Rank-based ROC AUC; tied scores count one half."""
    s = _scores_array(scores)
    y = np.asarray(labels).astype(int)
    if len(s) != len(y):
        raise ValueError("length mismatch between scores and labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined for single-class labels")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1(prediction, labels, *, auc_value: float | None = None) -> MetricReport:
    pred = np.asarray(
        prediction.labels if isinstance(prediction, AnomalyPrediction) else prediction
    ).astype(int)
    y = np.asarray(labels).astype(int)
    if len(pred) != len(y):
        raise ValueError("length mismatch between prediction and labels")
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    rule = prediction.threshold_rule if isinstance(prediction, AnomalyPrediction) else ""
    return MetricReport(auc_value, f, precision, recall, tp, fp, tn, fn, rule)


def evaluate(scores, labels, *, best_of_topk: bool = False) -> MetricReport:
    """AUC plus F1 of the k-means rule, or the better of k-means and top-k
    (k = true anomaly count) when ``best_of_topk`` is set."""
    s = _scores_array(scores)
    y = np.asarray(labels).astype(int)
    if len(s) != len(y):
        raise ValueError("length mismatch between scores and labels")
    try:
        auc_value = auc(s, y)
    except UndefinedMetricError:
        auc_value = None
    report = f1(kmeans_threshold(s), y, auc_value=auc_value)
    k = int(y.sum())
    if best_of_topk and k > 0:
        alt = f1(topk_threshold(s, k), y, auc_value=auc_value)
        if alt.f1 > report.f1:
            report = alt
    return report


def raw_scores(
    series: TimeSeries,
    method: str,
    spec: WindowSpec,
    cfg: ArConfig,
    solver: SolverChoice = SolverChoice(),
) -> list[ScoreSeries]:
    """Raw per-dimension attribution scores for one detection method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    out = []
    for dim in range(series.n_dims):
        if method == "timeinf":
            ctx = InfluenceContext.build(make_instances(series, dim, spec), cfg, solver)
            out.append(self_influence_series(ctx))
        elif method == "loocv":
            out.append(block_loocv_series(series, dim, spec, cfg))
        else:
            out.append(conditional_influence_series(series, dim, spec, cfg, solver))
    return out


def detect(
    series: TimeSeries,
    method: str = "timeinf",
    spec: WindowSpec = WindowSpec(100),
    cfg: ArConfig | None = None,
    solver: SolverChoice = SolverChoice(),
) -> tuple[AnomalyScores, AnomalyPrediction, np.ndarray]:
    """Score, combine across dimensions and threshold with 2-means.

    Returns the anomaly scores, the k-means prediction and the per-point
    coverage (minimum over dimensions).
    """
    cfg = cfg or ArConfig(spec.block_len)
    per_dim = raw_scores(series, method, spec, cfg, solver)
    raw = np.column_stack([p.scores for p in per_dim])
    cov = np.column_stack([p.coverage for p in per_dim])
    scores = sep_inf(raw, cov)
    scores.meta.update(per_dim[0].meta)
    return scores, kmeans_threshold(scores), cov.min(axis=1)


def label_runs(labels) -> list[tuple[int, int]]:
    """Half-open ``(start, end)`` index ranges of contiguous 1-labels."""
    y = np.asarray(labels).astype(int)
    edges = np.diff(np.concatenate([[0], y, [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def annotation_audit(scores, labels, prediction: AnomalyPrediction | None = None) -> dict:
    """Flag labelled runs the scores disagree with, and unlabelled flagged runs.

    Returns ``{"unsupported_labels": [...], "unlabelled_detections": [...]}``
    with each entry ``(start, end, mean_score)``.
    """
    s = _scores_array(scores)
    y = np.asarray(labels).astype(int)
    pred = (prediction or kmeans_threshold(s)).labels
    unsupported = [
        (a, b, float(s[a:b].mean())) for a, b in label_runs(y) if not pred[a:b].any()
    ]
    unlabelled = [
        (a, b, float(s[a:b].mean())) for a, b in label_runs(pred) if not y[a:b].any()
    ]
    return {"unsupported_labels": unsupported, "unlabelled_detections": unlabelled}
