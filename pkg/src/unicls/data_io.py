"""Synthetic data, feature CSV ingestion and report persistence.

Reports are JSON documents with sorted keys and two-space indentation.
Floats are written with Python's shortest round-trip ``repr`` so every value
reloads bit-for-bit; NaN is written as the bare token ``NaN``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ClassifierHead, LabeledDataset, UniclsError
from .evaluation import AccuracyReport, DistributionReport
from .losses import LossSpec
from .trainer import Model, TrainConfig, TrainRun

FORMAT_VERSION = 1


class ParseError(UniclsError):
    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


class ReportIOError(UniclsError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    dim: int
    samples_per_class: int
    center_scale: float = 10.0
    noise_sigma: float = 1.0
    seed: int = 0
    # added to every coordinate; a positive shift mimics rectified features
    center_offset: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2 or self.dim < 1 or self.samples_per_class < 1:
            raise UniclsError("num_classes >= 2, dim >= 1 and samples_per_class >= 1 are required")
        if not self.center_scale > 0 or self.noise_sigma < 0:
            raise UniclsError("center_scale must be positive and noise_sigma nonnegative")
        if not math.isfinite(self.center_offset):
            raise UniclsError("center_offset must be finite")


def synthetic_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Seeded directions on the unit sphere scaled to ``center_scale``."""
    centers = np.empty((spec.num_classes, spec.dim))
    for i in range(spec.num_classes):
        while True:
            v = rng.standard_normal(spec.dim)
            norm = np.linalg.norm(v)
            if norm <= 1e-12:
                continue
            c = spec.center_scale * v / norm
            if i == 0 or np.min(np.linalg.norm(centers[:i] - c, axis=1)) > 1e-9:
                centers[i] = c
                break
    return centers


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Isotropic Gaussian clusters, ``samples_per_class`` per class, class-major order."""
    rng = np.random.default_rng(spec.seed)
    centers = synthetic_centers(spec, rng)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.standard_normal((labels.size, spec.dim)) * spec.noise_sigma
    return LabeledDataset(centers[labels] + noise + spec.center_offset, labels, spec.num_classes)


def split_dataset(data: LabeledDataset, test_fraction: float, seed: int = 0):
    """Stratified split into (train, test) with a seeded permutation per class."""
    if not 0.0 < test_fraction < 1.0:
        raise UniclsError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for i in range(data.num_classes):
        idx = np.flatnonzero(data.labels == i)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(idx.size * test_fraction))
        test_idx.append(np.sort(idx[:k]))
        train_idx.append(np.sort(idx[k:]))
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return data.subset(np.sort(tr)), data.subset(np.sort(te))


def load_features_csv(path) -> LabeledDataset:
    """Read ``id,label,f0,...,f{M-1}``; N is inferred as max label + 1.

    Classes with no rows are listed in ``dataset.warnings``.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ParseError(path, None, f"cannot open: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "label"]:
            raise ParseError(path, 1, "missing header 'id,label,f0,...'")
        feat_cols = [h.strip() for h in header[2:]]
        if not feat_cols:
            raise ParseError(path, 1, "header declares no feature columns")
        expected = [f"f{k}" for k in range(len(feat_cols))]
        if feat_cols != expected:
            raise ParseError(path, 1, f"feature columns must be named f0..f{len(feat_cols) - 1}")
        width = len(header)
        feats, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(path, line, f"expected {width} cells, found {len(row)}")
            try:
                lab = int(row[1])
            except ValueError:
                raise ParseError(path, line, f"label {row[1]!r} is not an integer") from None
            if lab < 0:
                raise ParseError(path, line, f"label {lab} is negative")
            try:
                vals = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise ParseError(path, line, f"non-numeric cell: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, line, "NaN/Inf cells are not allowed")
            feats.append(vals)
            labels.append(lab)
    if not feats:
        raise ParseError(path, None, "no samples")
    n_cls = max(max(labels) + 1, 2)
    data = LabeledDataset(np.array(feats), np.array(labels), n_cls)
    data.warnings.extend(f"class {i} has no samples" for i in data.empty_classes())
    return data


def save_features_csv(data: LabeledDataset, path) -> None:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label"] + [f"f{k}" for k in range(data.dim)])
    for i, (x, y) in enumerate(zip(data.features, data.labels)):
        w.writerow([i, int(y)] + [repr(float(v)) for v in x])
    _write_text(path, buf.getvalue())


# -- report tree ---------------------------------------------------------

def _arr(a) -> list:
    return np.asarray(a).tolist()


def _head_to_tree(head: ClassifierHead) -> dict:
    return {"weights": _arr(head.weights), "bias": _arr(head.bias), "bias_mode": head.bias_mode,
            "family": head.family, "gamma": float(head.gamma)}


def _head_from_tree(t: dict) -> ClassifierHead:
    return ClassifierHead(np.array(t["weights"], dtype=np.float64), np.array(t["bias"], dtype=np.float64),
                          t["bias_mode"], t["family"], float(t["gamma"]))


def _acc_to_tree(r: AccuracyReport) -> dict:
    return {"a_sw": r.a_sw, "a_cw": r.a_cw, "a_uni": r.a_uni, "t_star": r.t_star,
            "t_star_per_class": _arr(r.t_star_per_class), "counts": dict(r.counts)}


def _acc_from_tree(t: dict) -> AccuracyReport:
    return AccuracyReport(t["a_sw"], t["a_cw"], t["a_uni"], t["t_star"],
                          np.array(t["t_star_per_class"], dtype=np.float64), dict(t["counts"]))


def _dist_to_tree(r: DistributionReport) -> dict:
    return {"min_pos": r.min_pos, "max_neg": r.max_neg,
            "overlap_interval": list(r.overlap_interval) if r.overlap_interval else None,
            "overlap_width": r.overlap_width,
            "per_class_min_pos": _arr(r.per_class_min_pos), "per_class_max_neg": _arr(r.per_class_max_neg),
            "std_min_pos": r.std_min_pos, "std_max_neg": r.std_max_neg,
            "bin_edges": _arr(r.bin_edges), "histogram_pos": _arr(r.histogram_pos),
            "histogram_neg": _arr(r.histogram_neg), "num_samples": r.num_samples}


def _dist_from_tree(t: dict) -> DistributionReport:
    return DistributionReport(
        t["min_pos"], t["max_neg"], tuple(t["overlap_interval"]) if t["overlap_interval"] else None,
        t["overlap_width"], t["per_class_min_pos"], t["per_class_max_neg"], t["std_min_pos"],
        t["std_max_neg"], t["bin_edges"], t["histogram_pos"], t["histogram_neg"], t["num_samples"])


def _config_from_tree(t: dict) -> TrainConfig:
    t = dict(t)
    loss = t.pop("loss")
    loss.pop("name", None)
    return TrainConfig(loss=LossSpec(**loss), **t)


def _run_to_tree(r: TrainRun) -> dict:
    return {"config": r.config.to_dict(),
            "final_head": _head_to_tree(r.final_head),
            "final_extractor_params": [{"weights": _arr(w), "bias": _arr(b)} for w, b in r.final_model.layers],
            "loss_curve": list(r.loss_curve),
            "eval_history": [_acc_to_tree(a) for a in r.eval_history],
            "learned_bias_trace": [_arr(b) for b in r.learned_bias_trace]}


def _run_from_tree(t: dict) -> TrainRun:
    layers = [(np.array(p["weights"], dtype=np.float64).reshape(len(p["weights"]), -1),
               np.array(p["bias"], dtype=np.float64)) for p in t["final_extractor_params"]]
    model = Model(layers, _head_from_tree(t["final_head"]))
    return TrainRun(_config_from_tree(t["config"]), model, list(t["loss_curve"]),
                    [_acc_from_tree(a) for a in t["eval_history"]],
                    [np.array(b, dtype=np.float64) for b in t["learned_bias_trace"]])


_ENCODERS = {
    AccuracyReport: ("AccuracyReport", _acc_to_tree),
    DistributionReport: ("DistributionReport", _dist_to_tree),
    TrainRun: ("TrainRun", _run_to_tree),
    ClassifierHead: ("ClassifierHead", _head_to_tree),
}
_DECODERS = {
    "AccuracyReport": _acc_from_tree,
    "DistributionReport": _dist_from_tree,
    "TrainRun": _run_from_tree,
    "ClassifierHead": _head_from_tree,
}


def _plain(obj):
    """Convert numpy scalars/arrays nested in dicts and lists to JSON types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps_tree(tree: dict) -> str:
    return json.dumps(_plain(tree), sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(f"{path}: cannot write: {exc}") from exc


def report_to_tree(report, extra: dict | None = None) -> dict:
    try:
        kind, enc = _ENCODERS[type(report)]
    except KeyError:
        raise ReportIOError(f"cannot serialize {type(report).__name__}") from None
    tree = {"kind": kind, "version": FORMAT_VERSION, "data": enc(report)}
    if extra:
        tree["extra"] = extra
    return tree


def save_report(report, path, extra: dict | None = None) -> None:
    """Write a report (accuracy, distribution, training run or head) as a JSON tree.

    ``extra`` is stored verbatim under the ``extra`` key, e.g. a config echo.
    """
    _write_text(Path(path), dumps_tree(report_to_tree(report, extra)))


def load_report(path):
    path = Path(path)
    try:
        tree = json.loads(path.read_text())
    except OSError as exc:
        raise ReportIOError(f"{path}: cannot read: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReportIOError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    kind = tree.get("kind") if isinstance(tree, dict) else None
    if kind not in _DECODERS:
        raise ReportIOError(f"{path}: unknown report kind {kind!r}")
    return _DECODERS[kind](tree["data"])


def load_head(path) -> ClassifierHead:
    """Load a head from a report tree or from a bare head object."""
    path = Path(path)
    try:
        tree = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportIOError(f"{path}: cannot read head: {exc}") from exc
    if isinstance(tree, dict) and tree.get("kind") == "ClassifierHead":
        tree = tree["data"]
    elif isinstance(tree, dict) and tree.get("kind") == "TrainRun":
        tree = tree["data"]["final_head"]
    try:
        return _head_from_tree(tree)
    except (KeyError, TypeError) as exc:
        raise ReportIOError(f"{path}: malformed head: {exc}") from exc


def histogram_csv(report: DistributionReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "pos_count", "neg_count"])
    e = report.bin_edges
    for k in range(len(report.histogram_pos)):
        w.writerow([repr(float(e[k])), repr(float(e[k + 1])), int(report.histogram_pos[k]),
                    int(report.histogram_neg[k])])
    return buf.getvalue()


def save_histogram_csv(report: DistributionReport, path) -> None:
    _write_text(Path(path), histogram_csv(report))
