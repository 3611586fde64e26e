"""Loss values and analytic gradients.

Covers the twelve SoftMax/BCE variants (formula x classifier family x bias
mode), the naive loss and the class-wise BCE family in which every class
owns a single threshold shared by its positive and negative terms.

All losses are written in terms of the *signed* metric ``m_j = c_j + s*b_j``
where ``s = +1`` for the linear family and ``s = -1`` for the normalized
family.  With that convention

    softmax:  L = logsumexp(m) - m_y
    bce:      L = softplus(-m_y) + sum_{j != y} softplus(m_j)

and dL/dc_j = dL/dm_j, dL/db_j = s * dL/dm_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    BIAS_MODES,
    FAMILIES,
    ClassifierHead,
    DimensionError,
    LabeledDataset,
    UniclsError,
    _normalized_columns,
    _normalized_rows,
    bias_sign,
)

FORMULAS = ("softmax", "bce", "naive", "bce_classwise")

_MODE_SUFFIX = {"zero": "0", "diverse": "d", "unified": "u"}
_SUFFIX_MODE = {v: k for k, v in _MODE_SUFFIX.items()}
_FORMULA_PREFIX = {"softmax": "soft", "bce": "bce"}

TABLE_LOSS_NAMES = tuple(
    f"{prefix}-{'n' if family == 'normalized' else ''}{_MODE_SUFFIX[mode]}"
    for prefix in ("soft", "bce")
    for family in FAMILIES
    for mode in BIAS_MODES
)
EXTRA_LOSS_NAMES = ("naive", "naive-n", "bce-di", "bce-ndi")


def softplus(z):
    """log(1 + e^z) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logsumexp_rows(z: np.ndarray) -> np.ndarray:
    top = z.max(axis=1)
    return top + np.log(np.exp(z - top[:, None]).sum(axis=1))


@dataclass(frozen=True)
class LossSpec:
    formula: str
    family: str = "linear"
    bias_mode: str = "zero"
    gamma: float = 96.0

    def __post_init__(self):
        if self.formula not in FORMULAS:
            raise UniclsError(f"unknown loss formula {self.formula!r}; expected one of {FORMULAS}")
        if self.family not in FAMILIES:
            raise UniclsError(f"unknown classifier family {self.family!r}")
        if self.bias_mode not in BIAS_MODES:
            raise UniclsError(f"unknown bias mode {self.bias_mode!r}")
        if self.formula == "bce_classwise" and self.bias_mode != "diverse":
            raise UniclsError("the class-wise BCE loss needs one bias per class (bias_mode='diverse')")
        if self.family == "normalized" and not self.gamma > 0:
            raise UniclsError(f"gamma must be positive, got {self.gamma}")

    @property
    def name(self) -> str:
        n = "n" if self.family == "normalized" else ""
        if self.formula == "naive":
            return "naive-n" if n else "naive"
        if self.formula == "bce_classwise":
            return f"bce-{n}di"
        return f"{_FORMULA_PREFIX[self.formula]}-{n}{_MODE_SUFFIX[self.bias_mode]}"

    @classmethod
    def from_name(cls, name: str, gamma: float = 96.0) -> "LossSpec":
        """Parse ``soft-0`` ... ``bce-nu`` (plus ``naive``, ``naive-n``, ``bce-di``, ``bce-ndi``)."""
        if name in ("naive", "naive-n"):
            return cls("naive", "normalized" if name == "naive-n" else "linear", "zero", gamma)
        if name in ("bce-di", "bce-ndi"):
            return cls("bce_classwise", "normalized" if name == "bce-ndi" else "linear", "diverse", gamma)
        if name not in TABLE_LOSS_NAMES:
            raise UniclsError(
                f"unknown loss {name!r}; valid names: {', '.join(TABLE_LOSS_NAMES)}")
        prefix, rest = name.split("-")
        family = "normalized" if rest.startswith("n") else "linear"
        return cls("softmax" if prefix == "soft" else "bce", family, _SUFFIX_MODE[rest[-1]], gamma)

    @property
    def uses_bias(self) -> bool:
        return self.formula != "naive" and self.bias_mode != "zero"


@dataclass
class LossGradients:
    """Partial derivatives of a single-sample loss."""

    d_metrics: np.ndarray
    d_bias: np.ndarray
    d_weights: np.ndarray
    d_feature: np.ndarray


def _check_bias(spec: LossSpec, bias: np.ndarray, n_cls: int) -> np.ndarray:
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if bias.shape != (n_cls,):
        raise DimensionError(f"bias has length {bias.size}, expected {n_cls}")
    if spec.formula == "naive":
        return bias
    if spec.bias_mode == "zero" and np.any(bias != 0):
        raise UniclsError(f"{spec.name} takes no bias but a nonzero bias was given")
    if spec.bias_mode == "unified" and np.any(bias != bias[0]):
        raise UniclsError(f"{spec.name} needs one shared bias value")
    return bias


def _check_labels(labels: np.ndarray, n_cls: int) -> None:
    if n_cls < 2:
        raise UniclsError("losses need N >= 2 classes")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise UniclsError(f"label out of range [0, {n_cls})")


def metric_losses(spec: LossSpec, raw: np.ndarray, labels: np.ndarray, bias):
    """Per-sample losses, dL/dc and dL/db for a matrix of bias-free metrics.

    Returns ``(losses (n,), d_metrics (n, N), d_bias (n, N))``.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, n_cls = raw.shape
    _check_labels(labels, n_cls)
    bias = _check_bias(spec, bias, n_cls)
    rows = np.arange(n)
    s = bias_sign(spec.family)

    if spec.formula == "naive":
        grad = np.full((n, n_cls), 1.0 / (n_cls - 1))
        grad[rows, labels] = -1.0
        # -c_y + sum_{j != y} c_j / (N - 1), summed without re-adding c_y
        neg_sum = raw.sum(axis=1) - raw[rows, labels]
        losses = -raw[rows, labels] + neg_sum / (n_cls - 1)
        return losses, grad, np.zeros((n, n_cls))

    if spec.formula == "bce_classwise":
        # every term of sample y uses the threshold b_y
        m = raw + s * bias[labels][:, None]
    else:
        m = raw + s * bias[None, :]

    if spec.formula == "softmax":
        lse = logsumexp_rows(m)
        losses = lse - m[rows, labels]
        grad = np.exp(m - lse[:, None])
        grad[rows, labels] -= 1.0
    else:
        terms = softplus(m)
        terms[rows, labels] = softplus(-m[rows, labels])
        losses = terms.sum(axis=1)
        grad = sigmoid(m)
        grad[rows, labels] = -sigmoid(-m[rows, labels])

    if spec.formula == "bce_classwise":
        d_bias = np.zeros((n, n_cls))
        d_bias[rows, labels] = s * grad.sum(axis=1)
    elif spec.bias_mode == "zero":
        d_bias = np.zeros((n, n_cls))
    elif spec.bias_mode == "unified":
        d_bias = np.repeat(s * grad.sum(axis=1, keepdims=True), n_cls, axis=1)
    else:
        d_bias = s * grad
    return losses, grad, d_bias


def loss_value(spec: LossSpec, raw_metrics, label: int, bias=None) -> float:
    """Loss of one sample given its bias-free metrics."""
    raw = np.asarray(raw_metrics, dtype=np.float64).reshape(1, -1)
    if bias is None:
        bias = np.zeros(raw.shape[1])
    losses, _, _ = metric_losses(spec, raw, np.array([label]), bias)
    return float(losses[0])


def _check_head(spec: LossSpec, head: ClassifierHead) -> None:
    if head.family != spec.family:
        raise UniclsError(f"loss {spec.name} expects a {spec.family} head, got {head.family}")
    if spec.formula != "naive" and head.bias_mode != spec.bias_mode:
        raise UniclsError(f"loss {spec.name} expects bias mode {spec.bias_mode}, head has {head.bias_mode}")
    if spec.family == "normalized" and head.gamma != spec.gamma:
        raise UniclsError(f"loss gamma {spec.gamma} != head gamma {head.gamma}")


def _forward(head: ClassifierHead, x: np.ndarray):
    if head.family == "linear":
        return x @ head.weights, None
    xn = np.linalg.norm(x, axis=1)
    wn = np.linalg.norm(head.weights, axis=0)
    xh = _normalized_rows(x)
    u = _normalized_columns(head.weights)
    cos = xh @ u
    return head.gamma * cos, (xh, u, cos, xn, wn)


def _backward(head: ClassifierHead, x: np.ndarray, grad: np.ndarray, cache):
    """Chain dL/dc (n x N) into dL/dW (M x N) and dL/dx (n x M)."""
    if head.family == "linear":
        return x.T @ grad, grad @ head.weights.T
    xh, u, cos, xn, wn = cache
    g = head.gamma * grad
    gc = g * cos
    d_w = (xh.T @ g - u * gc.sum(axis=0)) / wn
    d_x = (g @ u.T - xh * gc.sum(axis=1)[:, None]) / xn[:, None]
    return d_w, d_x


def head_loss_and_gradients(spec: LossSpec, head: ClassifierHead, features, labels):
    """Mean loss over a batch and its gradients w.r.t. W, b and the features.

    Returns ``(mean_loss, d_weights, d_bias, d_features)``; ``d_bias`` for the
    unified mode holds the shared-parameter derivative in every entry.
    """
    _check_head(spec, head)
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if x.shape[1] != head.dim:
        raise DimensionError(f"feature dimension {x.shape[1]} != head dimension {head.dim}")
    n = x.shape[0]
    raw, cache = _forward(head, x)
    losses, grad, d_bias = metric_losses(spec, raw, labels, head.bias)
    grad = grad / n
    d_w, d_x = _backward(head, x, grad, cache)
    return math.fsum(losses) / n, d_w, d_bias.sum(axis=0) / n, d_x


def loss_gradients(spec: LossSpec, feature, head: ClassifierHead, label: int) -> LossGradients:
    """Exact partial derivatives of one sample's loss."""
    x = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    _check_head(spec, head)
    if x.shape[1] != head.dim:
        raise DimensionError(f"feature dimension {x.shape[1]} != head dimension {head.dim}")
    raw, cache = _forward(head, x)
    _, grad, d_bias = metric_losses(spec, raw, np.array([label]), head.bias)
    d_w, d_x = _backward(head, x, grad, cache)
    return LossGradients(grad[0], d_bias[0], d_w, d_x[0])


def batch_loss(spec: LossSpec, head: ClassifierHead, data: LabeledDataset) -> float:
    """Mean loss over a dataset; exactly rounded sum, so order does not matter."""
    if len(data) == 0:
        raise UniclsError("batch_loss needs a nonempty dataset")
    _check_head(spec, head)
    raw, _ = _forward(head, data.features)
    losses, _, _ = metric_losses(spec, raw, data.labels, head.bias)
    return math.fsum(losses) / len(data)
