"""Command-line entry point: ``synth``, ``train``, ``eval``, ``explain``, ``baseline``.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .checkpoint import (load_checkpoint, save_checkpoint, write_alpha_csv, write_edges_csv,
                         write_graph_csv, write_json, write_matrix_csv)
from .data import (Dataset, atomic_write_bytes, SwitchingVarSpec, default_svar_spec, load_dataset, save_dataset,
                   split_folds, split_indices, synth_keyword_dataset, synth_svar_dataset)
from .errors import ConfigurationError, UsageError, ValidationError
from .model import ModelParams, forward
from .temporal import attention_threshold, top_count
from .training import TrainConfig, config_hash, cross_validate, positive_scores, predict

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("decennt")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


# options that map one-to-one onto TrainConfig fields
_TRAIN_FLAGS = {
    "lr": float, "lam": float, "batch_size": int, "max_epochs": int, "folds": int,
    "trials": int, "gamma": float, "hidden": int, "attention_dim": int,
    "early_stop_patience": int, "plateau_patience": int,
}


def build_train_config(args) -> tuple[TrainConfig, dict]:
    """Merge config file values with command-line overrides.

    Keys ``n`` and ``T`` in the file are expectations about the dataset shape
    and are returned separately.
    """
    values = read_config_file(args.config) if args.config else {}
    expected = {k: int(values.pop(k)) for k in ("n", "T") if k in values}
    for name in _TRAIN_FLAGS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if args.seed is not None:
        values["seed"] = args.seed
    if args.alpha_mode is not None:
        values["alpha_mode"] = args.alpha_mode
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")
    return TrainConfig.from_dict(values), expected


def provenance(task: str, payload: dict, seed) -> dict:
    return {"config_hash": config_hash({"task": task, **payload}), "seed": seed}


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    if args.kind == "keyword":
        ds = synth_keyword_dataset(args.seed, args.samples, args.n, args.T, args.K, args.snr)
        spec = {"kind": "keyword", "samples": args.samples, "n": args.n, "T": args.T,
                "K": args.K, "snr": args.snr}
    else:
        if args.spec:
            with open(args.spec) as fh:
                svar = SwitchingVarSpec.from_dict(json.load(fh))
        else:
            svar = default_svar_spec(args.seed, args.n, args.T, args.edges)
        if args.samples % 2:
            raise ValidationError("svar sample count must be even")
        ds = synth_svar_dataset(svar, args.seed, args.samples // 2)
        spec = {"kind": "svar", "samples": args.samples, "spec": svar.to_dict()}
    out = Path(args.out)
    save_dataset(ds, out)
    manifest = {**provenance("synth", spec, args.seed), "spec": spec,
                "class_counts": ds.class_counts(), "data_digest": file_digest(out)}
    if ds.truth is not None:
        manifest["truth"] = {str(c): a.tolist() for c, a in ds.truth.items()}
    write_json(out.with_name(out.name + ".json"), manifest)
    return EXIT_OK


def _checked_dataset(path: str, expected: dict | None = None) -> Dataset:
    ds = load_dataset(path)
    for key, value in (expected or {}).items():
        actual = getattr(ds, key)
        if actual != value:
            raise ValidationError(f"config expects {key}={value}, dataset has {key}={actual}")
    return ds


def cmd_train(args) -> int:
    config, expected = build_train_config(args)
    ds = _checked_dataset(args.data, expected)
    # fail on impossible folds before any training starts
    split_folds(ds, config.folds, config.seed)
    out = _out_dir(args.out)
    prov = provenance("train", {"train": config.to_dict(), "data": file_digest(args.data)},
                      config.seed)
    result = cross_validate(config, ds, jobs=args.jobs)
    params = None
    for trial in result.trials:
        params = params or ModelParams.init(result.model_config, 0)
        params.load_state_dict(trial.state)
        save_checkpoint(out / f"fold{trial.fold}_trial{trial.trial}.ckpt", params,
                        {**prov, "fold": trial.fold, "trial": trial.trial,
                         "trial_seed": trial.seed, "train_config": config.to_dict()})
    # one JSON object per epoch, tagged with its fold and trial
    lines = [json.dumps({**prov, "fold": t.fold, "trial": t.trial, "best_epoch": t.best_epoch,
                         **vars(e)}, sort_keys=True)
             for t in result.trials for e in t.history]
    atomic_write_bytes(out / "history.jsonl", ("\n".join(lines) + "\n").encode())
    write_json(out / "metrics.json", {**prov, "task": "train", "train_config": config.to_dict(),
                                      "per_fold": result.per_fold(),
                                      "aggregate": result.aggregate()})
    return EXIT_OK


def _compatible(params, ds: Dataset) -> None:
    cfg = params.config
    if (cfg.n, cfg.T) != (ds.n, ds.T):
        raise ValidationError(f"checkpoint expects n={cfg.n}, T={cfg.T}; dataset has n={ds.n}, T={ds.T}")


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    _compatible(params, ds)
    out = _out_dir(args.out)
    scores = positive_scores(predict(params, ds.X))
    report = ev.classification_report(scores, ds.labels)
    prov = provenance("eval", {"checkpoint": file_digest(args.checkpoint),
                               "data": file_digest(args.data)}, meta.get("seed"))
    write_json(out / "metrics.json", {**prov, "task": "eval", "per_fold": [],
                                      "aggregate": report.to_dict()})
    return EXIT_OK


def cmd_explain(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    _compatible(params, ds)
    fraction = args.top_percent / 100.0
    count = top_count(fraction, ds.T)
    # probe trained on one stratified half, scored on the other
    folds = split_folds(ds, 2, meta.get("seed") or 0)
    out = _out_dir(args.out)
    prov = provenance("explain", {"checkpoint": file_digest(args.checkpoint),
                                  "data": file_digest(args.data), "top_percent": args.top_percent,
                                  "edges_percent": args.edges_percent}, meta.get("seed"))
    trace = ev.trace_attention(params, ds.X)
    enc = ev.mean_enc(params, ds.X, args.edges_percent)
    write_alpha_csv(out / "alpha.csv", ds.ids, trace.alpha, prov)
    write_matrix_csv(out / "final_graph.csv", enc.mean, prov)
    write_edges_csv(out / "edges.csv", enc.edges, prov)
    first = forward(params, ds.X[0]).graphs.data
    write_graph_csv(out / "graphs_first_sample.csv", first, prov)
    summary = {**prov, "task": "explain", "timepoints_selected": count,
               "edge_count": len(enc.edges), "alpha_mode": params.config.alpha_mode}
    masks = ds.masks
    positive = ds.labels == 1
    if masks is not None and positive.any():
        attended = attention_threshold(trace.alpha[positive], trace.scores[positive],
                                       params.config.alpha_mode)
        summary["localization"] = ev.localization_stats(attended, masks[positive]).to_dict()
    train, test = ds.subset(np.flatnonzero(folds == 0)), ds.subset(np.flatnonzero(folds == 1))
    top, bottom, full = ev.ablation_aucs(params, train, test,
                                         [(fraction, "top"), (fraction, "bottom"), (1.0, "top")])
    summary["ablation"] = {"top": top, "bottom": bottom, "full": full}
    write_json(out / "explain.json", summary)
    return EXIT_OK


def cmd_baseline(args) -> int:
    ds = load_dataset(args.data)
    seed = args.seed if args.seed is not None else 0
    prov = provenance("baseline", {"kind": args.kind, "data": file_digest(args.data)}, seed)
    if args.kind == "pcc":
        fnc = ev.pcc_fnc(ds.X)
        out = _out_dir(args.out)
        write_matrix_csv(out / "pcc_fnc.csv", fnc, prov)
        write_json(out / "baseline.json", {**prov, "task": "baseline-pcc",
                                           "asymmetry": ev.asymmetry(fnc)})
    else:
        n_train = int(round(0.6 * len(ds)))
        n_test = len(ds) - n_train - int(round(0.2 * len(ds)))
        train_idx, test_idx = split_indices(ds, (n_train, n_test), seed)
        auc = ev.raw_lr_baseline(ds.subset(train_idx), ds.subset(test_idx))
        write_json(_out_dir(args.out) / "baseline.json",
                   {**prov, "task": "baseline-lr", "auc": auc, "features": ds.n * ds.T,
                    "train": n_train, "test": n_test})
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decennt", description="Directed dynamic connectivity classifier.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def shared(p, data=True, out=True):
        p.add_argument("--config")
        if data:
            p.add_argument("--data", required=True)
        if out:
            p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--alpha-mode", choices=("softmax", "relu-raw", "mean"))

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("kind", choices=("keyword", "svar"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--T", type=int, default=64)
    p.add_argument("--K", type=int, default=16)
    p.add_argument("--snr", type=float, default=3.0)
    p.add_argument("--edges", type=int, default=5)
    p.add_argument("--spec", help="JSON switching-VAR spec (svar only)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="cross-validated training")
    shared(p)
    for name, kind in _TRAIN_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    shared(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="attention traces, final graph, edges, ablation")
    shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-percent", type=float, default=5.0)
    p.add_argument("--edges-percent", type=float, default=10.0)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("baseline", help="PCC connectivity or raw-series logistic regression")
    p.add_argument("kind", choices=("pcc", "lr"))
    shared(p)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "n", 0) is None:
            args.n = 32 if args.kind == "keyword" else 6
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
