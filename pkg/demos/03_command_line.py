"""
The command-line workflow
=========================

Every stage is also a ``decennt`` subcommand.  This script drives them
in-process on a tiny keyword set so it finishes in seconds; the shell
equivalents are printed as it goes.
"""

import json
import tempfile
from pathlib import Path

from decennt.cli import main


def run(*argv):
    print("$ decennt", " ".join(map(str, argv)))
    code = main([str(a) for a in argv])
    print("  exit", code)
    return code


work = Path(tempfile.mkdtemp(prefix="decennt-demo-"))
data = work / "kw.dcnt"
run("synth", "keyword", "--samples", 40, "--n", 8, "--T", 16, "--K", 4, "--seed", 7, "--out", data)

cfg = work / "toy.cfg"
cfg.write_text("# flat key = value, TrainConfig names\nn = 8\nT = 16\nfolds = 2\ntrials = 2\n"
               "max_epochs = 3\nhidden = 4\nattention_dim = 4\nlr = 0.01\n")
run("train", "--config", cfg, "--data", data, "--out", work / "run", "--seed", 0)
metrics = json.loads((work / "run" / "metrics.json").read_text())
print("  mean AUC over folds x trials:", round(metrics["aggregate"]["auc"]["mean"], 3))
print("  artifacts:", sorted(p.name for p in (work / "run").iterdir()))

ckpt = work / "run" / "fold0_trial0.ckpt"
run("eval", "--checkpoint", ckpt, "--data", data, "--out", work / "eval")
run("explain", "--checkpoint", ckpt, "--data", data, "--out", work / "explain",
    "--top-percent", 25, "--edges-percent", 10)
summary = json.loads((work / "explain" / "explain.json").read_text())
print("  timepoints kept:", summary["timepoints_selected"], " edges listed:", summary["edge_count"])

run("baseline", "pcc", "--data", data, "--out", work / "pcc")
run("baseline", "lr", "--data", data, "--out", work / "lr")

# Errors map to stable exit codes: 1 usage, 2 validation, 3 I/O.
run("synth", "keyword", "--out", work / "x.dcnt")
run("train", "--data", work / "missing.dcnt", "--out", work / "nope")
print("outputs in", work)
