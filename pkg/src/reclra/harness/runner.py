"""The training loop behind ``reclra train``."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..activations import nll_loss
from ..checkpoint import load_checkpoint, save_checkpoint
from ..credit import RecLRAConfig, backprop_updates, reclra_updates, total_discrepancy
from ..data import Dataset, Preprocessor, batches, load_directory, split
from ..errors import ConfigError, TrainingDiverged
from ..network import LayerSpec, NetworkGraph, build, chain_wiring, run_inference, skip_wiring
from ..optimize import Optimizer
from ..tensor import RngStream
from .config import ExperimentConfig
from .metrics import EvalResult, confusion_metrics, evaluate

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "train_loss", "train_err", "val_err", "discrepancy", "wall_ms")


@dataclass
class DataSplits:
    train: Dataset
    val: Dataset
    test: Optional[Dataset] = None
    preprocessor: Preprocessor = field(default_factory=Preprocessor)


@dataclass
class RunResult:
    out_dir: Path
    metrics_csv: Path
    best_checkpoint: Path
    best_epoch: int
    history: list[dict]
    test: Optional[EvalResult] = None


def prepare_data(config: ExperimentConfig) -> DataSplits:
    """Load, subsample, split and preprocess the configured dataset."""
    if not config.data_dir:
        raise ConfigError("data_dir is not set")
    full = load_directory(config.data_dir, "train")
    test = load_directory(config.data_dir, "test")
    if config.train_subset:
        if config.train_subset > len(full):
            raise ConfigError(f"train_subset {config.train_subset} exceeds {len(full)} samples")
        pick = RngStream(config.seed).spawn(1).permutation(len(full))[:config.train_subset]
        full = full.subset(np.sort(pick))
    train, val = split(full, config.n_val, config.seed)
    return preprocess(config, train, val, test)


def preprocess(config: ExperimentConfig, train: Dataset, val: Dataset,
               test: Optional[Dataset] = None) -> DataSplits:
    pre = Preprocessor.fit(train, config.gcn, config.zca, config.zca_eps,
                           config.zca_max_samples, config.seed)
    return DataSplits(pre.apply(train), pre.apply(val),
                      pre.apply(test) if test is not None else None, pre)


def network_for(config: ExperimentConfig, input_shape, num_classes: int) -> NetworkGraph:
    specs = config.hidden_specs() + [LayerSpec.dense(num_classes, "softmax")]
    L = len(specs)
    wiring = chain_wiring(L) if config.wiring == "chain" else skip_wiring(L, config.gap)
    return build(specs, wiring, config.init_sigma, RngStream(config.seed), input_shape,
                 gap=config.gap, noise_sigma=config.noise_sigma)


def optimizer_for(config: ExperimentConfig) -> Optimizer:
    return Optimizer(config.optimizer, config.lr, config.adam_beta1, config.adam_beta2,
                     config.adam_eps, config.radius)


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0])


def train_epoch(net: NetworkGraph, opt: Optimizer, ds: Dataset, config: ExperimentConfig,
                epoch: int) -> tuple[float, float]:
    """One pass of seeded mini-batches. Returns (mean NLL, mean discrepancy)."""
    lra = RecLRAConfig(config.beta, config.gamma, config.kappa, config.p, config.q)
    loss_sum = disc_sum = 0.0
    seen = 0
    for batch in batches(ds, config.batch_size, epoch_seed(config.seed, epoch)):
        trace = run_inference(net, batch.x)
        loss = nll_loss(trace.output, batch.y)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} after {seen} samples")
        if config.engine == "reclra":
            errs, updates = reclra_updates(net, trace, batch.y, lra, config.workers)
            disc = total_discrepancy(trace, errs.targets, lra.kappa, lra.p, lra.q)
        else:
            updates = backprop_updates(net, trace, batch.y)
            L = net.num_layers
            disc = total_discrepancy(trace, {L: batch.y}, lra.kappa, lra.p, lra.q)
        opt.step(net, updates)
        n = len(batch.labels)
        loss_sum += loss * n
        disc_sum += disc * n
        seen += n
    return loss_sum / seen, disc_sum / seen


EpochHook = Callable[[int, NetworkGraph, dict], bool]


def train(config: ExperimentConfig, data: Optional[DataSplits] = None,
          on_epoch: Optional[EpochHook] = None) -> RunResult:
    """Run an experiment and write its artifacts to ``config.out_dir``.

    Artifacts: ``config.txt``, ``metrics.csv`` (one row per epoch),
    ``best.ckpt`` (lowest validation error, earliest epoch on ties),
    ``final.ckpt`` and ``summary.json``. ``on_epoch`` may return True to stop
    early.
    """
    config.validate()
    if data is None:
        data = prepare_data(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    ks = [k for k in config.k_list() if k <= data.train.num_classes]

    net = network_for(config, data.train.input_shape, data.train.num_classes)
    opt = optimizer_for(config)
    pre_meta, pre_arrays = data.preprocessor.to_records()
    meta = {"num_classes": data.train.num_classes,
            "image_shape": list(data.train.image_shape), **pre_meta}

    def save(path: Path) -> None:
        save_checkpoint(net, path, pre_arrays, meta)

    best_path = out / "best.ckpt"
    csv_path = out / "metrics.csv"
    save(best_path)
    best_err, best_epoch = math.inf, 0
    history: list[dict] = []
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        fh.flush()
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            loss, disc = train_epoch(net, opt, data.train, config, epoch)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            train_err = evaluate(net, data.train).error if config.eval_train else math.nan
            val_err = evaluate(net, data.val).error if len(data.val) else math.nan
            row = {"epoch": epoch, "train_loss": loss, "train_err": train_err,
                   "val_err": val_err, "discrepancy": disc, "wall_ms": wall_ms}
            history.append(row)
            writer.writerow([epoch] + [repr(float(row[c])) for c in CSV_COLUMNS[1:]])
            fh.flush()
            log.info("epoch %d loss %.4f train_err %.4f val_err %.4f disc %.4f (%.0f ms)",
                     epoch, loss, train_err, val_err, disc, wall_ms)
            score = val_err if not math.isnan(val_err) else train_err
            if score < best_err:
                best_err, best_epoch = score, epoch
                save(best_path)
            if on_epoch is not None and on_epoch(epoch, net, row):
                break
    save(out / "final.ckpt")

    test_result = None
    summary = {"best_epoch": best_epoch, "best_val_err": None if math.isinf(best_err) else best_err,
               "epochs_run": len(history)}
    if data.test is not None:
        best_net = load_checkpoint(best_path).net
        test_result = evaluate(best_net, data.test, ks, workers=config.workers)
        report = confusion_metrics(test_result.confusion)
        summary["test"] = {
            "topk_error": {str(k): v for k, v in test_result.topk_error.items()},
            "accuracy": test_result.accuracy,
            "loss": test_result.loss,
            "macro_precision": report.macro_precision,
            "macro_recall": report.macro_recall,
            "macro_f1": report.macro_f1,
            "micro_f1": report.micro_f1,
            "confusion": test_result.confusion.tolist(),
        }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(out, csv_path, best_path, best_epoch, history, test_result)
