"""Small deterministic trainer: MLP feature extractor + classifier head.

Training is plain mini-batch SGD with momentum and a per-epoch cosine
learning-rate schedule.  Every random draw comes from one
``numpy.random.Generator`` seeded from ``TrainConfig.seed``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import ClassifierHead, LabeledDataset, MetricBatch, UniclsError, head_metrics
from .evaluation import AccuracyReport, evaluate, uniform_accuracy_at
from .losses import LossSpec, head_loss_and_gradients
from .theory import BoundedMetricModel, corollary_condition

log = logging.getLogger(__name__)

NUM_BIAS_MODES = 8


class TrainingDiverged(UniclsError):
    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")


@dataclass
class TrainConfig:
    loss: LossSpec
    epochs: int = 50
    batch_size: int = 64
    lr0: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    hidden_dims: list[int] = field(default_factory=list)
    bias_init_mode: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise UniclsError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr0 > 0:
            raise UniclsError("lr0 must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise UniclsError("momentum must lie in [0, 1)")
        if not 0 <= self.bias_init_mode < NUM_BIAS_MODES:
            raise UniclsError(f"bias_init_mode must be in 0..{NUM_BIAS_MODES - 1}")
        self.hidden_dims = [int(h) for h in self.hidden_dims]

    @property
    def gamma(self) -> float:
        return self.loss.gamma

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = {"name": self.loss.name, **asdict(self.loss)}
        return d


def init_bias(mode: int, num_classes: int, gamma: float = 96.0, seed=0) -> np.ndarray:
    """Initial per-class bias for one of the eight initialization modes.

    Mode 0 draws from U[-0.01, 0.01]; modes 1-7 are deterministic functions
    of the 1-based class index i.  Modes 6/7 use ``floor`` for N/4, N/2 and
    3N/4 with inclusive ends.  ``gamma`` is accepted for interface symmetry;
    the fixed constants 64 and 96 do not depend on it.
    """
    n = int(num_classes)
    if n < 2:
        raise UniclsError("need N >= 2")
    i = np.arange(1, n + 1, dtype=np.float64)
    if mode == 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return rng.uniform(-0.01, 0.01, size=n)
    if mode == 1:
        return i
    if mode == 2:
        return 64.0 * i / n
    if mode == 3:
        return 64.0 * (n - i) / n
    if mode == 4:
        return np.log(96.0 * i)
    if mode == 5:
        return np.log(96.0 * (n + 1 - i))
    if mode in (6, 7):
        q1, q2, q3 = n // 4, n // 2, (3 * n) // 4
        in_set = ((i >= 1) & (i <= q1)) | ((i >= q2) & (i <= q3))
        if mode == 7:
            in_set = ~in_set
        return np.where(in_set, math.log(96.0 * n), 0.0)
    raise UniclsError(f"unknown bias initialization mode {mode}")


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    if not 0 <= epoch <= total_epochs:
        raise UniclsError(f"epoch {epoch} outside [0, {total_epochs}]")
    if total_epochs == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class Model:
    """Affine+ReLU layers followed by a classifier head.

    With a normalized head, a sample whose rectified features are all zero
    has no direction; metrics then raise ``ZeroNormError``.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    head: ClassifierHead

    def features(self, x: np.ndarray) -> np.ndarray:
        return _extract(self.layers, np.asarray(x, dtype=np.float64))[-1]

    def metrics(self, data: LabeledDataset, include_bias: bool = True) -> MetricBatch:
        return MetricBatch(head_metrics(self.head, self.features(data.features), include_bias),
                           data.labels, include_bias)

    def copy(self) -> "Model":
        return Model([(w.copy(), b.copy()) for w, b in self.layers], self.head.copy())


def init_model(config: TrainConfig, dim: int, num_classes: int, rng: np.random.Generator) -> Model:
    layers = []
    fan_in = dim
    for width in config.hidden_dims:
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, width))
        layers.append((w, np.zeros(width)))
        fan_in = width
    spec = config.loss
    weights = rng.normal(0.0, math.sqrt(1.0 / fan_in), size=(fan_in, num_classes))
    mode = "zero" if spec.formula == "naive" else spec.bias_mode
    if mode == "zero":
        bias = np.zeros(num_classes)
    else:
        bias = init_bias(config.bias_init_mode, num_classes, spec.gamma, rng)
        if mode == "unified":
            bias = np.full(num_classes, bias[0])
    head = ClassifierHead(weights, bias, mode, spec.family, spec.gamma)
    return Model(layers, head)


@dataclass
class TrainRun:
    config: TrainConfig
    final_model: Model
    loss_curve: list[float]
    eval_history: list[AccuracyReport]
    learned_bias_trace: list[np.ndarray]

    @property
    def final_head(self) -> ClassifierHead:
        return self.final_model.head

    @property
    def final_extractor_params(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self.final_model.layers


def _extract(layers, x):
    """Activations [x, h1, ..., hK] of the extractor."""
    acts = [x]
    for w, b in layers:
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    return acts


def _backprop_layers(layers, acts, d_h, wd):
    """Gradients of the extractor given dL/d(output features)."""
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        d_pre = d_h * (acts[k + 1] > 0)
        grads.append((acts[k].T @ d_pre + wd * w, d_pre.sum(axis=0)))
        d_h = d_pre @ w.T
    return grads[::-1]


def train(config: TrainConfig, data: LabeledDataset, eval_data: LabeledDataset | None = None,
          model: Model | None = None) -> TrainRun:
    """Mini-batch SGD with momentum; one evaluation on ``eval_data`` per epoch."""
    eval_data = data if eval_data is None else eval_data
    if eval_data.dim != data.dim:
        raise UniclsError("train and eval data have different feature dimensions")
    n_cls = max(data.num_classes, eval_data.num_classes)
    spec = config.loss
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = init_model(config, data.dim, n_cls, rng)
    else:
        model = model.copy()
    head = model.head
    if spec.formula != "naive" and head.bias_mode != spec.bias_mode:
        raise UniclsError(f"model head bias mode {head.bias_mode} does not match loss {spec.name}")
    train_bias = head.bias_mode != "zero"

    vel_layers = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.layers]
    vel_w = np.zeros_like(head.weights)
    vel_b = np.zeros_like(head.bias)
    loss_curve: list[float] = []
    history: list[AccuracyReport] = []
    trace: list[np.ndarray] = []
    n = len(data)
    mu = config.momentum
    wd = config.weight_decay

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0)
        order = rng.permutation(n)
        epoch_losses = []
        for bidx, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            acts = _extract(model.layers, data.features[idx])
            h = acts[-1]
            loss, d_w, d_b, d_feat = head_loss_and_gradients(spec, head, h, data.labels[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, bidx, loss)
            epoch_losses.append(loss * len(idx))
            layer_grads = _backprop_layers(model.layers, acts, d_feat, wd)

            vel_w = mu * vel_w + d_w + wd * head.weights
            head.weights = head.weights - lr * vel_w
            if train_bias:
                if head.bias_mode == "unified":
                    # shared parameter: d_b already holds the summed derivative in every slot
                    d_b = np.full_like(d_b, d_b[0])
                vel_b = mu * vel_b + d_b
                head.bias = head.bias - lr * vel_b
            for k, ((w, b), (gw, gb)) in enumerate(zip(model.layers, layer_grads)):
                vw, vb = vel_layers[k]
                vw = mu * vw + gw
                vb = mu * vb + gb
                vel_layers[k] = (vw, vb)
                model.layers[k] = (w - lr * vw, b - lr * vb)
            if not (np.all(np.isfinite(head.weights)) and np.all(np.isfinite(head.bias))):
                raise TrainingDiverged(epoch, bidx, float("nan"))

        loss_curve.append(math.fsum(epoch_losses) / n)
        metrics = head_metrics(head, model.features(eval_data.features))
        if not np.all(np.isfinite(metrics)):
            raise TrainingDiverged(epoch, bidx, float("nan"))
        history.append(evaluate(MetricBatch(metrics, eval_data.labels, True)))
        trace.append(head.bias.copy())
        log.debug("epoch %d lr %.4g loss %.6g a_sw %.2f a_uni %.2f", epoch, lr, loss_curve[-1],
                  history[-1].a_sw, history[-1].a_uni)

    return TrainRun(config, model, loss_curve, history, trace)


def learned_threshold_accuracy(run: TrainRun, data: LabeledDataset) -> tuple[float, float]:
    """A_Uni at the threshold implied by the learned unified bias, and at t*.

    Evaluated on bias-free metrics where the learned bias maps to the raw
    threshold ``-b`` (linear) or ``+b`` (normalized).
    """
    head = run.final_head
    if head.bias_mode != "unified":
        raise UniclsError("learned threshold needs a unified-bias head")
    raw = run.final_model.metrics(data, include_bias=False)
    t_learned = float(head.raw_thresholds()[0])
    return uniform_accuracy_at(raw, t_learned), evaluate(raw).a_uni


@dataclass
class SweepRow:
    value: float | int
    report: AccuracyReport
    t_star: float
    learned_bias: np.ndarray
    condition: bool | None = None
    final_loss: float = float("nan")


def _run_grid(configs, data, eval_data, workers):
    if workers <= 1:
        return [train(c, data, eval_data) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: train(c, data, eval_data), configs))


def sweep_gamma(config: TrainConfig, gammas, data: LabeledDataset,
                eval_data: LabeledDataset | None = None, workers: int = 1) -> list[SweepRow]:
    """Train once per scale factor; rows carry the feasibility verdict."""
    if config.loss.family != "normalized":
        raise UniclsError("sweep_gamma needs a normalized-family loss")
    configs = [replace(config, loss=replace(config.loss, gamma=float(g))) for g in gammas]
    runs = _run_grid(configs, data, eval_data, workers)
    n_cls = max(data.num_classes, (eval_data or data).num_classes)
    rows = []
    for g, run in zip(gammas, runs):
        rep = run.eval_history[-1] if run.eval_history else evaluate(run.final_model.metrics(eval_data or data))
        cond = corollary_condition(BoundedMetricModel.normalized(float(g), n_cls))
        rows.append(SweepRow(float(g), rep, rep.t_star, run.final_head.bias.copy(), cond,
                             run.loss_curve[-1] if run.loss_curve else float("nan")))
    return rows


def sweep_bias_init(config: TrainConfig, modes, data: LabeledDataset,
                    eval_data: LabeledDataset | None = None, workers: int = 1) -> list[SweepRow]:
    """Train once per bias-initialization mode."""
    configs = [replace(config, bias_init_mode=int(m)) for m in modes]
    runs = _run_grid(configs, data, eval_data, workers)
    rows = []
    for m, run in zip(modes, runs):
        rep = run.eval_history[-1] if run.eval_history else evaluate(run.final_model.metrics(eval_data or data))
        rows.append(SweepRow(int(m), rep, rep.t_star, run.final_head.bias.copy(), None,
                             run.loss_curve[-1] if run.loss_curve else float("nan")))
    return rows
