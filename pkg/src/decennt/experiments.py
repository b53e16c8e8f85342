"""Desk-scale benchmark protocols shared by the demos and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import evaluation as ev
from .data import default_svar_spec, split_indices, synth_keyword_dataset, synth_svar_dataset
from .model import ModelParams
from .temporal import attention_threshold
from .training import TrainConfig, fit, positive_scores, predict

# Small enough to train a keyword model in well under a minute on one core.
KEYWORD_TRAIN = TrainConfig(lr=1e-2, max_epochs=5, hidden=16, attention_dim=16, gamma=0.05,
                            trials=1)
SVAR_TRAIN = TrainConfig(lr=3e-3, max_epochs=12, hidden=8, attention_dim=8, gamma=0.25,
                         trials=1)


@dataclass(frozen=True)
class KeywordSetup:
    samples: int = 1000
    n: int = 32
    T: int = 64
    keyword_len: int = 16
    snr: float = 3.0
    split: tuple[int, int, int] = (600, 200, 200)
    train: TrainConfig = KEYWORD_TRAIN
    top_fraction: float = 0.05


@dataclass
class KeywordRun:
    seed: int
    auc: float
    localization: ev.MetricsReport
    top_auc: float
    bottom_auc: float
    lr_auc: float
    best_epoch: int
    seconds: float
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "auc": self.auc, "localization": self.localization.to_dict(),
                "top_auc": self.top_auc, "bottom_auc": self.bottom_auc, "lr_auc": self.lr_auc,
                "best_epoch": self.best_epoch, "seconds": self.seconds}


def keyword_run(seed: int, setup: KeywordSetup = KeywordSetup()) -> KeywordRun:
    """Train on a fresh keyword corpus and score detection, localization and ablation.

    Localization pools the attended-timepoint masks of every class-1 test
    sample against the keyword masks.
    """
    start = time.perf_counter()
    ds = synth_keyword_dataset(seed, setup.samples, setup.n, setup.T, setup.keyword_len, setup.snr)
    train, val, test = (ds.subset(i) for i in split_indices(ds, setup.split, seed))
    rng = np.random.default_rng(seed)
    config = TrainConfig.from_dict({**setup.train.to_dict(), "seed": seed})
    params = ModelParams.init(config.model_config(ds.n, ds.T), rng)
    result = fit(params, config, train, val, rng)
    auc = ev.auc_roc(positive_scores(predict(params, test.X)), test.labels)

    positive = test.labels == 1
    trace = ev.trace_attention(params, test.X[positive])
    attended = attention_threshold(trace.alpha, trace.scores, trace.mode)
    loc = ev.localization_stats(attended, test.masks[positive])

    frac = setup.top_fraction
    top, bottom = ev.ablation_aucs(params, train, test, [(frac, "top"), (frac, "bottom")])
    lr_auc = ev.raw_lr_baseline(train, test)
    return KeywordRun(seed, auc, loc, top, bottom, lr_auc, result.best_epoch,
                      time.perf_counter() - start, result.history)


@dataclass(frozen=True)
class SvarSetup:
    n: int = 6
    T: int = 64
    edges: int = 5
    per_class: int = 300
    split: tuple[int, int, int] = (360, 120, 120)
    train: TrainConfig = SVAR_TRAIN


@dataclass
class SvarRun:
    seed: int
    auc: float
    edge_auc: dict[int, float]
    pcc_asymmetry: float
    enc: dict[int, np.ndarray] = field(repr=False)

    @property
    def mean_edge_auc(self) -> float:
        return float(np.mean(list(self.edge_auc.values())))


def svar_run(seed: int, setup: SvarSetup = SvarSetup()) -> SvarRun:
    """Train on direction-reversed switching-VAR classes and score learned edges.

    Each class's mean final graph over its test samples is ranked against the
    union of that class's true directed edges.
    """
    spec = default_svar_spec(seed, setup.n, setup.T, setup.edges)
    ds = synth_svar_dataset(spec, seed, setup.per_class)
    train, val, test = (ds.subset(i) for i in split_indices(ds, setup.split, seed))
    rng = np.random.default_rng(seed)
    config = TrainConfig.from_dict({**setup.train.to_dict(), "seed": seed})
    params = ModelParams.init(config.model_config(ds.n, ds.T), rng)
    fit(params, config, train, val, rng)
    auc = ev.auc_roc(positive_scores(predict(params, test.X)), test.labels)
    enc, edge_auc = {}, {}
    for c in (0, 1):
        cohort = test.X[test.labels == c]
        enc[c] = ev.mean_enc(params, cohort).mean
        edge_auc[c] = ev.edge_ranking_auc(enc[c], ds.truth[c])
    return SvarRun(seed, auc, edge_auc, ev.asymmetry(ev.pcc_fnc(test.X)), enc)
