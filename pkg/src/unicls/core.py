"""Domain types and the classifier-head forward map.

A classifier head turns feature vectors into one classification metric per
class.  Two families are supported:

* ``linear``      c_i(x) = W_i^T x
* ``normalized``  c_i(x) = gamma * cos(W_i, x)

When the bias is folded in, the stored metric is the signed value that the
losses consume: ``W_i^T x + b_i`` for the linear family and
``gamma * cos(W_i, x) - b_i`` for the normalized family.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

BIAS_MODES = ("zero", "diverse", "unified")
FAMILIES = ("linear", "normalized")

# norms at or below this are rejected by the normalized family
NORM_EPS = 1e-12


class UniclsError(ValueError):
    """Base class for structured errors raised by this package."""


class DimensionError(UniclsError):
    pass


class ZeroNormError(UniclsError):
    """A feature vector or weight column is too short to normalize."""

    def __init__(self, kind: str, index: int, norm: float):
        self.kind = kind
        self.index = index
        self.norm = norm
        super().__init__(f"{kind} {index} has norm {norm:.3g} <= {NORM_EPS:g}; "
                         "cannot use the normalized classifier")


def bias_sign(family: str) -> float:
    """Sign with which the bias enters the consumable metric."""
    if family == "linear":
        return 1.0
    if family == "normalized":
        return -1.0
    raise UniclsError(f"unknown classifier family {family!r}; expected one of {FAMILIES}")


@dataclass
class LabeledDataset:
    """Feature matrix (num_samples x M) with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError(
                f"{self.labels.shape[0] if self.labels.ndim else 0} labels for "
                f"{self.features.shape[0]} feature rows")
        if self.features.shape[1] < 1:
            raise DimensionError("feature dimension must be >= 1")
        if self.num_classes < 2:
            raise UniclsError("need at least 2 classes")
        if not np.all(np.isfinite(self.features)):
            raise UniclsError("features contain non-finite entries")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise UniclsError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def empty_classes(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.class_counts() == 0)]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.features[index], self.labels[index], self.num_classes)


@dataclass
class ClassifierHead:
    """Weight matrix (M x N, one column per class) plus bias and scale."""

    weights: np.ndarray
    bias: np.ndarray
    bias_mode: str = "diverse"
    family: str = "linear"
    gamma: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise DimensionError(f"weights must be M x N, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(
                f"bias has shape {self.bias.shape}, expected ({self.weights.shape[1]},)")
        if self.bias_mode not in BIAS_MODES:
            raise UniclsError(f"unknown bias mode {self.bias_mode!r}; expected one of {BIAS_MODES}")
        bias_sign(self.family)
        if self.family == "normalized" and not self.gamma > 0:
            raise UniclsError(f"gamma must be positive, got {self.gamma}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise UniclsError("head parameters contain non-finite entries")
        if self.bias_mode == "zero" and np.any(self.bias != 0):
            raise UniclsError("bias_mode='zero' requires an all-zero bias")
        if self.bias_mode == "unified" and np.any(self.bias != self.bias[0]):
            raise UniclsError("bias_mode='unified' requires all bias entries to be equal")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    def raw_thresholds(self) -> np.ndarray:
        """Per-class threshold on the bias-free metrics implied by the bias.

        A biased metric is positive exactly when the raw metric exceeds this
        value: ``-b`` for the linear family, ``+b`` for the normalized one.
        """
        return -bias_sign(self.family) * self.bias

    def copy(self) -> "ClassifierHead":
        return replace(self, weights=self.weights.copy(), bias=self.bias.copy())


@dataclass
class MetricBatch:
    """Per-sample classification metrics (num_samples x N) with true labels."""

    metrics: np.ndarray
    labels: np.ndarray
    bias_included: bool = False

    def __post_init__(self):
        self.metrics = np.asarray(self.metrics, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.metrics.ndim != 2:
            raise DimensionError(f"metrics must be 2-D, got shape {self.metrics.shape}")
        if self.labels.shape != (self.metrics.shape[0],):
            raise DimensionError("one label per metric row is required")
        if not np.all(np.isfinite(self.metrics)):
            raise UniclsError("metrics contain non-finite entries")
        n_cls = self.metrics.shape[1]
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= n_cls):
            raise UniclsError(f"labels must lie in [0, {n_cls})")

    def __len__(self) -> int:
        return self.metrics.shape[0]

    @property
    def num_classes(self) -> int:
        return self.metrics.shape[1]

    def positives(self) -> np.ndarray:
        """c_label(x) for every sample."""
        return self.metrics[np.arange(len(self)), self.labels]

    def max_negatives(self) -> np.ndarray:
        """max over j != label of c_j(x) (the largest type I negative)."""
        masked = self.metrics.copy()
        masked[np.arange(len(self)), self.labels] = -np.inf
        return masked.max(axis=1)

    def subset(self, index) -> "MetricBatch":
        return MetricBatch(self.metrics[index], self.labels[index], self.bias_included)


def _normalized_columns(weights: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(weights, axis=0)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise ZeroNormError("weight column", int(bad[0]), float(norms[bad[0]]))
    return weights / norms


def _normalized_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise ZeroNormError("feature vector", int(bad[0]), float(norms[bad[0]]))
    return x / norms[:, None]


def head_metrics(head: ClassifierHead, features: np.ndarray, include_bias: bool = True) -> np.ndarray:
    """Metric matrix for a raw feature array; see :func:`compute_metrics`."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != head.dim:
        raise DimensionError(f"feature dimension {features.shape[1]} != head dimension {head.dim}")
    if head.family == "linear":
        out = features @ head.weights
    else:
        out = head.gamma * (_normalized_rows(features) @ _normalized_columns(head.weights))
    if include_bias:
        out = out + bias_sign(head.family) * head.bias
    return out


def compute_metrics(head: ClassifierHead, data: LabeledDataset, include_bias: bool = True) -> MetricBatch:
    """Apply the head to every sample of ``data``."""
    if data.num_classes > head.num_classes:
        raise DimensionError(f"dataset has {data.num_classes} classes, head only {head.num_classes}")
    return MetricBatch(head_metrics(head, data.features, include_bias), data.labels, include_bias)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_transform(batch: MetricBatch) -> MetricBatch:
    """Replace every metric row by its softmax.

    Row order is preserved so sample-wise accuracy is unchanged, while the
    uniform accuracies generally are not.
    """
    if len(batch) == 0:
        raise UniclsError("softmax_transform needs a nonempty batch")
    return MetricBatch(softmax_rows(batch.metrics), batch.labels, batch.bias_included)
