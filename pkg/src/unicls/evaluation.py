"""Sample-wise, class-wise uniform and uniform accuracies.

A sample with positive metric ``p`` and largest negative metric ``q`` is
uniformly classified at threshold ``t`` iff ``p > t >= q``.  The number of
samples classified at ``t`` only changes at observed values of ``p`` and
``q``; it rises at each ``q`` and falls at each ``p``, so the best threshold
is always one of the ``q`` values and an event sweep over them is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MetricBatch, UniclsError


@dataclass
class SweepResult:
    count: int
    threshold: float


@dataclass
class AccuracyReport:
    a_sw: float
    a_cw: float
    a_uni: float
    t_star: float
    t_star_per_class: np.ndarray
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_star_per_class = np.asarray(self.t_star_per_class, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, AccuracyReport):
            return NotImplemented
        return (self.a_sw == other.a_sw and self.a_cw == other.a_cw and self.a_uni == other.a_uni
                and _same_float(self.t_star, other.t_star)
                and self.t_star_per_class.shape == other.t_star_per_class.shape
                and all(_same_float(a, b) for a, b in zip(self.t_star_per_class, other.t_star_per_class))
                and self.counts == other.counts)


def _same_float(a, b) -> bool:
    return a == b or (np.isnan(a) and np.isnan(b))


@dataclass
class DistributionReport:
    min_pos: float
    max_neg: float
    overlap_interval: tuple[float, float] | None
    overlap_width: float
    per_class_min_pos: np.ndarray
    per_class_max_neg: np.ndarray
    std_min_pos: float
    std_max_neg: float
    bin_edges: np.ndarray
    histogram_pos: np.ndarray
    histogram_neg: np.ndarray
    num_samples: int = 0

    def __post_init__(self):
        self.per_class_min_pos = np.asarray(self.per_class_min_pos, dtype=np.float64)
        self.per_class_max_neg = np.asarray(self.per_class_max_neg, dtype=np.float64)
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        self.histogram_pos = np.asarray(self.histogram_pos, dtype=np.int64)
        self.histogram_neg = np.asarray(self.histogram_neg, dtype=np.int64)
        if self.overlap_interval is not None:
            self.overlap_interval = (float(self.overlap_interval[0]), float(self.overlap_interval[1]))


class EmptyDistributionError(UniclsError):
    """No sample-wise correct samples to build a distribution from."""


def best_threshold(pos, neg) -> SweepResult:
    """Maximize ``#{s : pos[s] > t >= neg[s]}`` over all real ``t``.

    Returns the count and the smallest ``t`` attaining it.  When no sample
    can be classified at all, the threshold is one below every observed
    value.
    """
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.shape != neg.shape:
        raise UniclsError("pos and neg must have equal length")
    ok = pos > neg
    if not np.any(ok):
        floor = float(min(pos.min(), neg.min())) - 1.0 if pos.size else float("nan")
        return SweepResult(0, floor)
    p = np.sort(pos[ok])
    q = np.sort(neg[ok])
    cand = np.unique(q)
    counts = np.searchsorted(q, cand, side="right") - np.searchsorted(p, cand, side="right")
    k = int(np.argmax(counts))
    return SweepResult(int(counts[k]), float(cand[k]))


def count_at(pos, neg, t: float) -> int:
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    return int(np.count_nonzero((pos > t) & (t >= neg)))


def _pct(count: int, total: int) -> float:
    return 100.0 * count / total


def _require_nonempty(batch: MetricBatch) -> None:
    if len(batch) == 0:
        raise UniclsError("accuracy of an empty batch is undefined")


def sample_wise_correct(batch: MetricBatch) -> np.ndarray:
    """Mask of samples whose positive metric strictly beats every negative."""
    return batch.positives() > batch.max_negatives()


def sample_wise_accuracy(batch: MetricBatch):
    """Return ``(percentage, correct_mask)``; ties count as wrong."""
    _require_nonempty(batch)
    mask = sample_wise_correct(batch)
    return _pct(int(mask.sum()), len(batch)), mask


def uniform_accuracy(batch: MetricBatch):
    """Return ``(percentage, t_star)`` for one dataset-wide threshold."""
    _require_nonempty(batch)
    res = best_threshold(batch.positives(), batch.max_negatives())
    return _pct(res.count, len(batch)), res.threshold


def uniform_accuracy_at(batch: MetricBatch, t: float) -> float:
    _require_nonempty(batch)
    return _pct(count_at(batch.positives(), batch.max_negatives(), t), len(batch))


def _per_class(batch: MetricBatch, pos: np.ndarray, neg: np.ndarray):
    thresholds = np.full(batch.num_classes, np.nan)
    total = 0
    for i in range(batch.num_classes):
        idx = batch.labels == i
        if not np.any(idx):
            continue
        res = best_threshold(pos[idx], neg[idx])
        thresholds[i] = res.threshold
        total += res.count
    return total, thresholds


def class_wise_uniform_accuracy(batch: MetricBatch):
    """Return ``(percentage, thresholds)`` with one threshold per class.

    Class ``i`` separates its positives from its own samples' type I
    negatives ``c_j(x), j != i``.  Classes without samples get NaN.
    """
    _require_nonempty(batch)
    total, thresholds = _per_class(batch, batch.positives(), batch.max_negatives())
    return _pct(total, len(batch)), thresholds


def type2_negative_maxima(batch: MetricBatch) -> np.ndarray:
    """Per class i, the largest c_i(x) over samples x of other classes."""
    out = np.full(batch.num_classes, -np.inf)
    for i in range(batch.num_classes):
        other = batch.labels != i
        if np.any(other):
            out[i] = batch.metrics[other, i].max()
    return out


def class_wise_type2_accuracy(batch: MetricBatch):
    """Class-wise accuracy against type II negatives.

    Threshold ``t_i`` must satisfy ``t_i >= c_i(x')`` for every sample ``x'``
    of another class; a class-``i`` sample counts when ``c_i(x) > t_i``.
    Feeding the pairs ``(c_i(x), max type II negative of i)`` through the same
    sweep gives the optimal ``t_i``.
    """
    _require_nonempty(batch)
    qmax = type2_negative_maxima(batch)
    neg = qmax[batch.labels]
    # a class with no foreign samples has no type II constraint
    pos = batch.positives()
    unconstrained = np.isneginf(neg)
    if np.any(unconstrained):
        neg = neg.copy()
        neg[unconstrained] = pos[unconstrained].min() - 1.0
    total, thresholds = _per_class(batch, pos, neg)
    return _pct(total, len(batch)), thresholds


def evaluate(batch: MetricBatch) -> AccuracyReport:
    """All three accuracies plus optimal thresholds.

    Raises ``AssertionError`` if the ordering a_uni <= a_cw <= a_sw fails,
    which would indicate a bug rather than bad data.
    """
    _require_nonempty(batch)
    pos = batch.positives()
    neg = batch.max_negatives()
    n_sw = int(np.count_nonzero(pos > neg))
    uni = best_threshold(pos, neg)
    n_cw, per_class = _per_class(batch, pos, neg)
    n = len(batch)
    if not uni.count <= n_cw <= n_sw:
        raise AssertionError(f"accuracy hierarchy violated: uni={uni.count} cw={n_cw} sw={n_sw}")
    return AccuracyReport(
        a_sw=_pct(n_sw, n), a_cw=_pct(n_cw, n), a_uni=_pct(uni.count, n),
        t_star=uni.threshold, t_star_per_class=per_class,
        counts={"total": n, "sw": n_sw, "cw": n_cw, "uni": uni.count},
    )


@dataclass
class MetricMatrix:
    matrix: np.ndarray
    column_dominant: bool
    global_dominant: bool


def metric_matrix(batch: MetricBatch, sample_ids) -> MetricMatrix:
    """N x N matrix with entry (i, j) = c_i(x^(j)), one sample per class.

    Column dominance: every diagonal entry beats the rest of its column
    (each chosen sample is sample-wise correct).  Global dominance: every
    diagonal entry beats every off-diagonal entry.
    """
    ids = np.asarray(sample_ids, dtype=np.int64)
    n_cls = batch.num_classes
    if ids.shape != (n_cls,):
        raise UniclsError(f"need exactly one sample id per class ({n_cls}), got {ids.size}")
    classes = batch.labels[ids]
    if sorted(classes.tolist()) != list(range(n_cls)):
        missing = sorted(set(range(n_cls)) - set(classes.tolist()))
        raise UniclsError(f"sample ids must cover every class exactly once; missing {missing}")
    order = np.argsort(classes)
    mat = batch.metrics[ids[order]].T.copy()
    diag = np.diag(mat)
    off = ~np.eye(n_cls, dtype=bool)
    col_ok = all(np.all(diag[j] > mat[off[:, j], j]) for j in range(n_cls))
    glob_ok = bool(diag.min() > mat[off].max())
    return MetricMatrix(mat, bool(col_ok), glob_ok)


def distribution_report(batch: MetricBatch, num_bins: int = 50) -> DistributionReport:
    """Positive / negative metric statistics over the sample-wise correct samples."""
    if num_bins < 1:
        raise UniclsError("num_bins must be positive")
    _require_nonempty(batch)
    mask = sample_wise_correct(batch)
    if not np.any(mask):
        raise EmptyDistributionError("no sample-wise correct samples to report on")
    sub = batch.subset(mask)
    pos = sub.positives()
    rows = np.arange(len(sub))
    neg_mat = np.ones_like(sub.metrics, dtype=bool)
    neg_mat[rows, sub.labels] = False
    negs = sub.metrics[neg_mat]
    max_negs = sub.max_negatives()

    min_pos = float(pos.min())
    max_neg = float(negs.max())
    if max_neg > min_pos:
        overlap, width = (min_pos, max_neg), max_neg - min_pos
    else:
        overlap, width = None, 0.0

    n_cls = batch.num_classes
    pc_min = np.full(n_cls, np.nan)
    pc_max = np.full(n_cls, np.nan)
    for i in range(n_cls):
        idx = sub.labels == i
        if np.any(idx):
            pc_min[i] = pos[idx].min()
            pc_max[i] = max_negs[idx].max()
    present = ~np.isnan(pc_min)

    lo = float(sub.metrics.min())
    hi = float(sub.metrics.max())
    edges = np.linspace(lo, hi, num_bins + 1) if hi > lo else np.linspace(lo - 0.5, lo + 0.5, num_bins + 1)
    h_pos, _ = np.histogram(pos, bins=edges)
    h_neg, _ = np.histogram(negs, bins=edges)
    return DistributionReport(
        min_pos=min_pos, max_neg=max_neg, overlap_interval=overlap, overlap_width=float(width),
        per_class_min_pos=pc_min, per_class_max_neg=pc_max,
        std_min_pos=float(np.std(pc_min[present])), std_max_neg=float(np.std(pc_max[present])),
        bin_edges=edges, histogram_pos=h_pos, histogram_neg=h_neg, num_samples=int(len(sub)),
    )
