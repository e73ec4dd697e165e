"""Evaluation: top-k error, confusion matrices, precision/recall/F1, latents."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..activations import nll_loss
from ..data import Dataset, one_hot
from ..network import NetworkGraph, run_inference


@dataclass
class EvalResult:
    topk_error: dict[int, float]
    accuracy: float
    loss: float
    confusion: np.ndarray
    count: int

    @property
    def error(self) -> float:
        return self.topk_error[1]


def rank_classes(probs: np.ndarray) -> np.ndarray:
    """Class indices by descending score; equal scores keep the lower index first."""
    return np.argsort(-probs, axis=1, kind="stable")


def confusion_matrix(labels, predicted, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return cm


def _chunk_stats(net, x, labels, num_classes, ks):
    probs = run_inference(net, x).output
    ranked = rank_classes(probs)
    hits = {k: int(np.sum(np.any(ranked[:, :k] == labels[:, None], axis=1))) for k in ks}
    loss_sum = nll_loss(probs, one_hot(labels, num_classes)) * len(labels)
    return hits, loss_sum, confusion_matrix(labels, ranked[:, 0], num_classes)


def evaluate(net: NetworkGraph, ds: Dataset, k_list=(1,), batch_size: int = 1000,
             workers: int = 1) -> EvalResult:
    """Top-k errors, accuracy, mean NLL and confusion matrix over ``ds``.

    Chunks may be spread over ``workers`` threads; the merge is an ordered
    integer sum, so the result does not depend on the worker count.
    """
    Y = ds.num_classes
    ks = sorted(set(int(k) for k in k_list) | {1})
    if ks[-1] > Y:
        raise ValueError(f"top-{ks[-1]} requested but only {Y} classes exist")
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    starts = range(0, len(ds), batch_size)
    job = lambda s: _chunk_stats(net, ds.features[s:s + batch_size],
                                 ds.labels[s:s + batch_size], Y, ks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    n = len(ds)
    hits = {k: sum(p[0][k] for p in parts) for k in ks}
    loss = float(sum(p[1] for p in parts) / n)
    cm = sum(p[2] for p in parts)
    topk = {k: 1.0 - hits[k] / n for k in ks}
    return EvalResult(topk, hits[1] / n, loss, cm, n)


@dataclass
class ConfusionReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    undefined: np.ndarray  # per class: a zero denominator forced some metric to 0
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    accuracy: float

    def table(self) -> str:
        rows = ["class  precision  recall     f1"]
        for c in range(len(self.precision)):
            flag = " *" if self.undefined[c] else ""
            rows.append(f"{c:5d}  {self.precision[c]:9.4f}  {self.recall[c]:6.4f}  "
                        f"{self.f1[c]:6.4f}{flag}")
        rows.append(f"macro  {self.macro_precision:9.4f}  {self.macro_recall:6.4f}  "
                    f"{self.macro_f1:6.4f}")
        rows.append(f"micro  {self.micro_precision:9.4f}  {self.micro_recall:6.4f}  "
                    f"{self.micro_f1:6.4f}")
        return "\n".join(rows)


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def confusion_metrics(cm) -> ConfusionReport:
    """Per-class and averaged precision/recall/F1. Rows are true classes."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise ValueError(f"confusion matrix must be square and nonempty, got {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix entries must be nonnegative")
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = _safe_ratio(tp, predicted)
    recall = _safe_ratio(tp, actual)
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    undefined = (predicted == 0) | (actual == 0) | (precision + recall == 0)
    total = cm.sum()
    micro = float(tp.sum() / total) if total else 0.0
    return ConfusionReport(
        precision, recall, f1, undefined,
        float(precision.mean()), float(recall.mean()), float(f1.mean()),
        micro, micro, micro, micro,
    )


def export_latents(net: NetworkGraph, ds: Dataset, layer_index: int, path,
                   batch_size: int = 1000) -> Path:
    """Write ``z_layer`` for every sample plus its label as CSV.

    Layer 0 is the input itself.
    """
    if not 0 <= layer_index <= net.num_layers:
        raise ValueError(f"layer index must lie in 0..{net.num_layers}, got {layer_index}")
    path = Path(path)
    width = net.widths[layer_index]
    header = ",".join([f"z{k}" for k in range(width)] + ["label"])
    with path.open("w") as fh:
        fh.write(header + "\n")
        for s in range(0, len(ds), batch_size):
            z = run_inference(net, ds.features[s:s + batch_size]).z[layer_index]
            labels = ds.labels[s:s + batch_size]
            for row, label in zip(z, labels):
                fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")
    return path
