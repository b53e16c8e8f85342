import json

import numpy as np
import pytest

from decennt.checkpoint import load_checkpoint, read_csv, save_checkpoint
from decennt.cli import main, read_config_file
from decennt.data import Dataset, Sample, load_dataset, save_dataset, synth_keyword_dataset
from decennt.errors import ConfigurationError
from decennt.model import ModelConfig, ModelParams


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    path = root / "toy.dcnt"
    assert run("synth", "keyword", "--samples", 16, "--n", 4, "--T", 8, "--K", 3, "--seed", 1,
               "--out", path) == 0
    return path


@pytest.fixture(scope="module")
def trained(toy_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run("train", "--data", toy_data, "--out", out, "--folds", 2, "--trials", 2,
               "--max-epochs", 2, "--hidden", 3, "--attention-dim", 3, "--batch-size", 8,
               "--seed", 0)
    assert code == 0
    return out


def test_synth_keyword_counts_and_manifest(tmp_path):
    out = tmp_path / "kw.dcnt"
    assert run("synth", "keyword", "--samples", 20, "--n", 8, "--T", 16, "--K", 4, "--seed", 7,
               "--out", out) == 0
    ds = load_dataset(out)
    assert len(ds) == 20 and ds.class_counts() == {0: 10, 1: 10}
    manifest = json.loads((tmp_path / "kw.dcnt.json").read_text())
    assert manifest["seed"] == 7 and manifest["spec"]["K"] == 4
    assert len(manifest["config_hash"]) == 16


def test_synth_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "svar", "--samples", 8, "--T", 20, "--seed", 3,
                   "--out", tmp_path / f"{name}.dcnt") == 0
    assert (tmp_path / "a.dcnt").read_bytes() == (tmp_path / "b.dcnt").read_bytes()
    assert (tmp_path / "a.dcnt.json").read_text() == (tmp_path / "b.dcnt.json").read_text()


def test_synth_svar_truth_in_manifest(tmp_path):
    assert run("synth", "svar", "--samples", 4, "--T", 12, "--out", tmp_path / "s.dcnt") == 0
    truth = json.loads((tmp_path / "s.dcnt.json").read_text())["truth"]
    assert np.array(truth["1"]).shape == (12, 6, 6)


def test_missing_flag_is_usage_error(tmp_path, capsys):
    assert run("synth", "keyword", "--out", tmp_path / "x.dcnt") == 1
    assert "usage error" in capsys.readouterr().err
    assert run("frobnicate") == 1


def test_synth_keyword_too_long(tmp_path):
    out = tmp_path / "bad.dcnt"
    assert run("synth", "keyword", "--samples", 4, "--T", 8, "--K", 8, "--out", out) == 2
    assert not out.exists()


def test_train_outputs(trained):
    ckpts = sorted(p.name for p in trained.glob("*.ckpt"))
    assert ckpts == [f"fold{f}_trial{t}.ckpt" for f in (0, 1) for t in (0, 1)]
    metrics = json.loads((trained / "metrics.json").read_text())
    assert {"task", "config_hash", "seed", "per_fold", "aggregate"} <= set(metrics)
    assert len(metrics["per_fold"]) == 2
    history = [json.loads(line) for line in (trained / "history.jsonl").read_text().splitlines()]
    assert len(history) == 8 and {"fold", "trial", "epoch", "val_loss"} <= set(history[0])
    params, meta = load_checkpoint(trained / "fold1_trial0.ckpt")
    assert (params.config.n, params.config.T) == (4, 8) and meta["fold"] == 1
    assert not list(trained.glob(".*tmp*"))


def test_train_rerun_bitwise(trained, toy_data, tmp_path):
    assert run("train", "--data", toy_data, "--out", tmp_path, "--folds", 2, "--trials", 2,
               "--max-epochs", 2, "--hidden", 3, "--attention-dim", 3, "--batch-size", 8,
               "--seed", 0) == 0
    for name in ("metrics.json", "history.jsonl", "fold0_trial1.ckpt", "fold1_trial1.ckpt.json"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_train_config_file_and_shape_mismatch(toy_data, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy\nn = 5\nT = 8\nfolds = 2\n")
    out = tmp_path / "out"
    assert run("train", "--config", cfg, "--data", toy_data, "--out", out) == 2
    assert not out.exists()
    cfg.write_text("learning_rate = 1\n")
    assert run("train", "--config", cfg, "--data", toy_data, "--out", out) == 2


def test_train_single_class_rejected(tmp_path):
    ds = Dataset([Sample(np.random.default_rng(i).normal(size=(2, 4)), 0) for i in range(6)])
    save_dataset(ds, tmp_path / "one.dcnt")
    out = tmp_path / "out"
    assert run("train", "--data", tmp_path / "one.dcnt", "--out", out, "--folds", 2) == 2
    assert not out.exists()


def test_truncated_dataset_rejected(toy_data, tmp_path):
    bad = tmp_path / "cut.dcnt"
    bad.write_bytes(toy_data.read_bytes()[:-10])
    out = tmp_path / "out"
    assert run("baseline", "pcc", "--data", bad, "--out", out) == 2
    assert not out.exists()


def test_config_file_parser(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("lr = 0.01  # fast\n\nbatch-size=4\n")
    assert read_config_file(cfg) == {"lr": "0.01", "batch_size": "4"}
    cfg.write_text("just words\n")
    with pytest.raises(ConfigurationError):
        read_config_file(cfg)


def test_eval_and_explain(trained, toy_data, tmp_path):
    ckpt = trained / "fold0_trial0.ckpt"
    assert run("eval", "--checkpoint", ckpt, "--data", toy_data, "--out", tmp_path / "e") == 0
    report = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert 0 <= report["aggregate"]["auc"] <= 1
    assert run("explain", "--checkpoint", ckpt, "--data", toy_data, "--out", tmp_path / "x",
               "--top-percent", 25, "--edges-percent", 50) == 0
    summary = json.loads((tmp_path / "x" / "explain.json").read_text())
    assert summary["timepoints_selected"] == 2 and summary["edge_count"] == 6
    assert set(summary["ablation"]) == {"top", "bottom", "full"}
    assert "localization" in summary
    header, rows = read_csv(tmp_path / "x" / "alpha.csv")
    assert len(rows) == 16 and len(header) == 9
    assert (tmp_path / "x" / "graphs_first_sample.csv.json").exists()


def test_explain_counting_oracles(tmp_path):
    """n=53 at 10% gives 276 edges; T=157 at 5% gives 8 timepoints."""
    cfg = ModelConfig(n=53, T=157, hidden=2, attention_dim=2, gamma=0.02, head_hidden=4)
    save_checkpoint(tmp_path / "m.ckpt", ModelParams.init(cfg, 0), {"seed": 0})
    ds = synth_keyword_dataset(0, 4, n=53, T=157, keyword_len=20)
    save_dataset(ds, tmp_path / "d.dcnt")
    assert run("explain", "--checkpoint", tmp_path / "m.ckpt", "--data", tmp_path / "d.dcnt",
               "--out", tmp_path / "x", "--top-percent", 5, "--edges-percent", 10) == 0
    summary = json.loads((tmp_path / "x" / "explain.json").read_text())
    assert summary["edge_count"] == 276 and summary["timepoints_selected"] == 8


def test_explain_errors(trained, toy_data, tmp_path):
    assert run("explain", "--checkpoint", tmp_path / "none.ckpt", "--data", toy_data,
               "--out", tmp_path / "x") == 3
    other = tmp_path / "other.dcnt"
    save_dataset(synth_keyword_dataset(0, 4, n=5, T=8, keyword_len=2), other)
    assert run("explain", "--checkpoint", trained / "fold0_trial0.ckpt", "--data", other,
               "--out", tmp_path / "y") == 2
    assert not (tmp_path / "x").exists() and not (tmp_path / "y").exists()


def test_baselines(tmp_path):
    rng = np.random.default_rng(0)
    samples = []
    for i in range(40):
        x = rng.normal(size=(3, 10))
        x[1] = x[0]
        x[2, 0] += 4.0 * (i % 2)
        samples.append(Sample(x, i % 2))
    save_dataset(Dataset(samples), tmp_path / "b.dcnt")
    assert run("baseline", "pcc", "--data", tmp_path / "b.dcnt", "--out", tmp_path / "p") == 0
    _, rows = read_csv(tmp_path / "p" / "pcc_fnc.csv")
    assert float(rows[0][1]) == 1.0
    assert json.loads((tmp_path / "p" / "baseline.json").read_text())["asymmetry"] == 0.0
    assert run("baseline", "lr", "--data", tmp_path / "b.dcnt", "--out", tmp_path / "l") == 0
    assert json.loads((tmp_path / "l" / "baseline.json").read_text())["auc"] >= 0.95


def test_constant_component_baseline(tmp_path):
    samples = [Sample(np.c_[np.ones(5), np.arange(5.0)].T, i % 2) for i in range(4)]
    save_dataset(Dataset(samples), tmp_path / "c.dcnt")
    out = tmp_path / "p"
    assert run("baseline", "pcc", "--data", tmp_path / "c.dcnt", "--out", out) == 2
    assert not out.exists()
