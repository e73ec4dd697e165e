import csv
import json

import numpy as np
import pytest

from reclra.checkpoint import load_checkpoint
from reclra.data import Dataset
from reclra.errors import ConfigError
from reclra.harness import cli
from reclra.harness.config import ExperimentConfig, load_config, parse_layers, read_pairs
from reclra.harness.metrics import (
    confusion_metrics,
    evaluate,
    export_latents,
    rank_classes,
)
from reclra.harness.runner import CSV_COLUMNS, DataSplits, train

from conftest import dense_net, synthetic_dataset


def small_config(tmp_path, **kw):
    base = dict(layers="2*dense:16:tanh", epochs=2, batch_size=16, lr=5e-3, init_sigma=0.1,
                n_val=50, topk="1,3", out_dir=str(tmp_path / "run"))
    base.update(kw)
    return ExperimentConfig(**base)


def small_data(n=200):
    full = synthetic_dataset(n, seed=5)
    return DataSplits(full.subset(np.arange(150)), full.subset(np.arange(150, n)))


# config

def test_layer_parsing():
    specs = parse_layers("2*dense:8:lrelu, residual:8:elu(0.5), perturb:4:6:identity", 0.2)
    assert [s.kind for s in specs] == ["dense", "dense", "residual", "perturbative"]
    assert specs[0].activation.param == 0.2
    assert specs[2].activation.param == 0.5
    assert (specs[3].width, specs[3].masks) == (4, 6)


@pytest.mark.parametrize("text", ["dense:8", "conv:3:tanh", "x*dense:4:tanh",
                                  "dense:8:softmax", "dense:8:swish"])
def test_bad_layer_tokens(text):
    with pytest.raises(ConfigError):
        parse_layers(text)


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# comment\nlayers = dense:5:sign\nlr = 1e-3  # inline\nzca = yes\nepochs=3\n")
    cfg = load_config(p, {"epochs": "7"})
    assert (cfg.layers, cfg.lr, cfg.zca, cfg.epochs) == ("dense:5:sign", 1e-3, True, 7)
    again = load_config(_write(tmp_path / "round.cfg", cfg.to_text()))
    assert again == cfg


def _write(path, text):
    path.write_text(text)
    return path


@pytest.mark.parametrize("pairs", [{"engine": "sgd"}, {"lr": "0"}, {"unknown": "1"},
                                   {"epochs": "two"}, {"beta": "-1"}, {"topk": "0"},
                                   {"engine": "backprop", "layers": "dense:4:sign"}])
def test_config_validation(pairs, tmp_path):
    text = "\n".join(f"{k} = {v}" for k, v in pairs.items())
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path / "bad.cfg", text))


def test_read_pairs_rejects_garbage():
    with pytest.raises(ConfigError):
        read_pairs("no equals sign here")


# metrics

def test_perfect_predictor():
    ds = Dataset(np.eye(4), np.arange(4), 4, (1, 1, 4))
    net = dense_net([4, 4], out="softmax")
    net.params["W1"][...] = 50 * np.eye(4)
    res = evaluate(net, ds, (1, 2))
    assert res.topk_error[1] == 0.0 and res.accuracy == 1.0
    assert np.array_equal(res.confusion, np.eye(4, dtype=int))


def test_uniform_output_gives_ninety_percent_error():
    ds = synthetic_dataset(100, seed=1)
    net = dense_net([36, 10])
    for k in net.params:
        net.params[k][...] = 0.0
    res = evaluate(net, ds, (1, 5))
    assert res.topk_error[1] == 0.9
    assert res.topk_error[5] == 0.5
    assert np.all(res.confusion[:, 0] == 10)


def test_rank_ties_go_to_lowest_index():
    assert rank_classes(np.array([[0.2, 0.4, 0.4, 0.0]])).tolist() == [[1, 2, 0, 3]]


def test_topk_monotone_and_worker_invariant():
    ds = synthetic_dataset(250, seed=2)
    net = dense_net([36, 12, 10], seed=3)
    a = evaluate(net, ds, (1, 5), batch_size=40)
    b = evaluate(net, ds, (1, 5), batch_size=40, workers=3)
    assert a.topk_error[5] <= a.topk_error[1]
    assert a.topk_error == b.topk_error and a.loss == b.loss
    assert np.array_equal(a.confusion, b.confusion)
    with pytest.raises(ValueError):
        evaluate(net, ds, (11,))


def test_binary_confusion_metrics():
    rep = confusion_metrics([[8, 2], [3, 7]])
    p0, r0 = 8 / 11, 8 / 10
    assert abs(rep.precision[0] - p0) < 1e-15
    assert abs(rep.recall[0] - r0) < 1e-15
    assert abs(rep.f1[0] - 2 * p0 * r0 / (p0 + r0)) < 1e-15
    assert abs(rep.micro_f1 - 0.75) < 1e-15


def test_diagonal_confusion_scores_one():
    rep = confusion_metrics(np.diag([3, 5, 2]))
    assert rep.macro_f1 == rep.macro_precision == rep.macro_recall == 1.0
    assert not rep.undefined.any()


def test_macro_f1_against_loop_oracle():
    g = np.random.default_rng(0)
    for _ in range(20):
        cm = g.integers(0, 20, (5, 5))
        cm[g.integers(0, 5)] = 0  # an absent class
        f1s = []
        for c in range(5):
            tp = cm[c, c]
            col, row = cm[:, c].sum(), cm[c, :].sum()
            p = tp / col if col else 0.0
            r = tp / row if row else 0.0
            f1s.append(2 * p * r / (p + r) if p + r else 0.0)
        rep = confusion_metrics(cm)
        assert abs(rep.macro_f1 - sum(f1s) / 5) < 1e-12
        assert rep.undefined.any()
    assert "macro" in rep.table()


def test_confusion_metrics_rejects_bad_input():
    with pytest.raises(ValueError):
        confusion_metrics(np.zeros((2, 3)))


def test_export_latents(tmp_path):
    ds = synthetic_dataset(30, seed=4)
    net = dense_net([36, 36], out="identity")
    net.params["W1"][...] = np.eye(36)
    path = export_latents(net, ds, 1, tmp_path / "z.csv", batch_size=7)
    rows = list(csv.reader(path.open()))
    assert rows[0][-1] == "label" and len(rows) == 31
    z = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
    assert np.array_equal(z, ds.features)
    assert [int(r[-1]) for r in rows[1:]] == ds.labels.tolist()
    again = export_latents(net, ds, 1, tmp_path / "z2.csv")
    assert again.read_bytes() == path.read_bytes()
    with pytest.raises(ValueError):
        export_latents(net, ds, 2, tmp_path / "bad.csv")


# runner

def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_zero_epochs_writes_header_and_checkpoint(tmp_path):
    res = train(small_config(tmp_path, epochs=0), small_data())
    assert read_csv(res.metrics_csv) == [list(CSV_COLUMNS)]
    assert load_checkpoint(res.best_checkpoint).net.num_layers == 3


def drop_wall(rows):
    return [r[:-1] for r in rows]


@pytest.mark.parametrize("engine", ["reclra", "backprop"])
def test_training_is_deterministic_per_seed(tmp_path, engine):
    a = train(small_config(tmp_path / "a", engine=engine), small_data())
    b = train(small_config(tmp_path / "b", engine=engine), small_data())
    c = train(small_config(tmp_path / "c", engine=engine, seed=99), small_data())
    assert drop_wall(read_csv(a.metrics_csv)) == drop_wall(read_csv(b.metrics_csv))
    assert drop_wall(read_csv(a.metrics_csv)) != drop_wall(read_csv(c.metrics_csv))
    na, nb = load_checkpoint(a.out_dir / "final.ckpt").net, load_checkpoint(b.out_dir / "final.ckpt").net
    assert all(np.array_equal(na.params[k], nb.params[k]) for k in na.params)


def test_training_reduces_error_on_separable_blobs(tmp_path):
    res = train(small_config(tmp_path, epochs=6), small_data())
    errs = [row["val_err"] for row in res.history]
    assert errs[-1] < 0.5 and errs[-1] < errs[0] + 1e-12
    assert read_csv(res.metrics_csv)[0] == list(CSV_COLUMNS)


def test_best_checkpoint_tracks_lowest_validation_error(tmp_path):
    res = train(small_config(tmp_path, epochs=4), small_data())
    best = min(range(len(res.history)), key=lambda i: (res.history[i]["val_err"], i)) + 1
    assert res.best_epoch == best
    net = load_checkpoint(res.best_checkpoint).net
    data = small_data()
    assert evaluate(net, data.val).error == res.history[best - 1]["val_err"]


def test_engine_swap_shares_evaluation_path(tmp_path):
    res = train(small_config(tmp_path, epochs=1), small_data())
    ckpt = load_checkpoint(res.best_checkpoint)
    ds = small_data().val
    from reclra.harness.runner import network_for
    other = small_config(tmp_path, engine="backprop")
    fresh = network_for(other, ds.input_shape, ds.num_classes)
    fresh.params.update({k: v.copy() for k, v in ckpt.net.params.items()})
    a, b = evaluate(ckpt.net, ds, (1, 3)), evaluate(fresh, ds, (1, 3))
    assert a.topk_error == b.topk_error and a.loss == b.loss


def test_sign_network_trains_under_reclra(tmp_path):
    res = train(small_config(tmp_path, layers="2*dense:32:sign", epochs=3, beta=0.1), small_data())
    assert all(np.isfinite(r["train_loss"]) for r in res.history)


def test_perturbative_network_trains(tmp_path):
    cfg = small_config(tmp_path, layers="perturb:2:3:identity,perturb:2:3:tanh", epochs=2)
    res = train(cfg, small_data())
    assert len(res.history) == 2
    assert "w1" in load_checkpoint(res.best_checkpoint).net.params


# CLI

def write_cfg(tmp_path, idx_dir, **extra):
    lines = {"data_dir": str(idx_dir), "layers": "dense:16:tanh", "epochs": "2",
             "n_val": "50", "lr": "5e-3", "init_sigma": "0.1", "topk": "1,5", **extra}
    return _write(tmp_path / "exp.cfg", "\n".join(f"{k} = {v}" for k, v in lines.items()))


def test_cli_round_trip(tmp_path, idx_dir, capsys):
    cfg = write_cfg(tmp_path, idx_dir)
    out = tmp_path / "out"
    assert cli.main(["train", str(cfg), "--seed", "3", "--out-dir", str(out)]) == 0
    assert "test top-1 error" in capsys.readouterr().out
    assert (out / "metrics.csv").exists() and (out / "summary.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["test"]["topk_error"]) == {"1", "5"}

    assert cli.main(["eval", str(out / "best.ckpt"), str(idx_dir), "--out-dir",
                     str(tmp_path / "ev")]) == 0
    printed = capsys.readouterr().out
    assert "macro" in printed
    ev = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert ev["samples"] == 100
    assert abs(ev["topk_error"]["1"] - summary["test"]["topk_error"]["1"]) < 1e-15

    target = tmp_path / "lat.csv"
    assert cli.main(["export-latents", str(out / "best.ckpt"), str(idx_dir), "--layer", "1",
                     "-o", str(target)]) == 0
    assert len(target.read_text().splitlines()) == 101

    assert cli.main(["inspect", str(out / "best.ckpt")]) == 0
    assert "error wiring: 2->1" in capsys.readouterr().out


def test_cli_engine_flag_and_errors(tmp_path, idx_dir, capsys):
    cfg = write_cfg(tmp_path, idx_dir, epochs="1")
    out = tmp_path / "bp"
    assert cli.main(["train", str(cfg), "--engine", "backprop", "--out-dir", str(out)]) == 0
    assert "engine = backprop" in (out / "config.txt").read_text()
    assert cli.main(["inspect", str(tmp_path / "missing.ckpt")]) == 2
    assert cli.main(["train", str(cfg), "--set", "lr=-1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_eval_deterministic_across_workers(tmp_path, idx_dir, capsys):
    cfg = write_cfg(tmp_path, idx_dir, epochs="1")
    out = tmp_path / "o"
    cli.main(["train", str(cfg), "--out-dir", str(out)])
    capsys.readouterr()
    cli.main(["eval", str(out / "final.ckpt"), str(idx_dir), "--workers", "1"])
    one = capsys.readouterr().out
    cli.main(["eval", str(out / "final.ckpt"), str(idx_dir), "--workers", "3"])
    assert capsys.readouterr().out == one
