"""Metrics, attention localization, learned-graph summaries and baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import diffcore as dc
from .errors import CorrelationError, InputError, MetricError, ParameterError
from .model import ModelParams, forward
from .temporal import top_count, top_fraction_timepoints


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve as a Mann-Whitney rank statistic.

    Tied scores get midranks, which counts every tied positive/negative
    pair as one half.

    Examples
    --------
    >>> auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    0.75
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise InputError(f"{scores.size} scores for {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


@dataclass
class MetricsReport:
    """Confusion counts plus derived rates; ``precision`` is ``None`` when nothing is predicted positive."""

    tp: int
    fp: int
    tn: int
    fn: int
    auc: float | None = None

    @property
    def precision(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fn)

    sensitivity = recall

    @property
    def specificity(self) -> float | None:
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def accuracy(self) -> float | None:
        return _ratio(self.tp + self.tn, self.tp + self.fp + self.tn + self.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"auc": self.auc, "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "specificity": self.specificity,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(predicted, truth) -> MetricsReport:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise InputError(f"mask shapes differ: {predicted.shape} vs {truth.shape}")
    return MetricsReport(tp=int(np.sum(predicted & truth)), fp=int(np.sum(predicted & ~truth)),
                         tn=int(np.sum(~predicted & ~truth)), fn=int(np.sum(~predicted & truth)))


def classification_report(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """AUC plus confusion counts at ``threshold`` on the positive-class score."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    report = confusion(scores >= threshold, labels == 1)
    report.auc = auc_roc(scores, labels)
    return report


def localization_stats(attended, truth) -> MetricsReport:
    """Per-timepoint confusion counts of attended timepoints against the event mask.

    Both masks must have the same shape; a stack of masks pools the counts.
    """
    return confusion(attended, truth)


SUMMARY_METRICS = ("auc", "accuracy", "precision", "recall", "specificity")


def summarize_reports(reports: list[MetricsReport]) -> dict:
    """Mean and population standard deviation of each metric, skipping undefined values."""
    out = {}
    for name in SUMMARY_METRICS:
        values = [v for v in (getattr(r, name) for r in reports) if v is not None]
        if values:
            out[name] = {"mean": float(np.mean(values)), "std": float(np.std(values)),
                         "count": len(values)}
        else:
            out[name] = {"mean": None, "std": None, "count": 0}
    return out


# ---------------------------------------------------------------------------
# correlation baseline


def pcc_fnc(cohort) -> np.ndarray:
    """Cohort-mean Pearson correlation between components, mapped to ``[0, 1]``.

    ``cohort`` is a ``(S, n, T)`` array (or a single ``(n, T)`` sample).
    The output is exactly symmetric with a unit diagonal.
    """
    X = np.asarray(cohort, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[0] == 0:
        raise InputError(f"expected a non-empty (S, n, T) cohort, got {X.shape}")
    centered = X - X.mean(axis=2, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=2))
    flat = norms <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=2))
    if flat.any():
        s, c = map(int, np.argwhere(flat)[0])
        raise CorrelationError(f"component {c} of sample {s} is constant")
    z = centered / norms[..., None]
    corr = np.einsum("sit,sjt->sij", z, z).mean(axis=0)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return (corr + 1.0) / 2.0


def asymmetry(matrix) -> float:
    """Largest ``|M - M^T|`` entry; zero for any undirected connectivity estimate."""
    m = np.asarray(matrix, dtype=float)
    return float(np.abs(m - m.T).max())


# ---------------------------------------------------------------------------
# learned-graph summaries


def edge_count(percent: float, n: int) -> int:
    """Number of directed edges in the top ``percent`` % of the ``n^2 - n`` off-diagonal ones."""
    return top_count(percent / 100.0, n * n - n)


def top_edges(matrix, percent: float) -> list[tuple[int, int, float]]:
    """Strongest off-diagonal entries as ``(source, target, weight)``, descending.

    Entry ``[i, j]`` is the edge from sender ``j`` to receiver ``i``.
    """
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    k = edge_count(percent, n)
    targets, sources = np.nonzero(~np.eye(n, dtype=bool))
    weights = m[targets, sources]
    order = np.argsort(-weights, kind="stable")[:k]
    return [(int(sources[i]), int(targets[i]), float(weights[i])) for i in order]


@dataclass
class AttentionTrace:
    """Temporal-attention outputs for a batch of samples."""

    scores: np.ndarray
    alpha: np.ndarray
    final: np.ndarray
    mode: str


def trace_attention(params: ModelParams, X, batch_size: int = 64) -> AttentionTrace:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    scores, alpha, final = [], [], []
    with dc.no_grad():
        for start in range(0, len(X), batch_size):
            att = forward(params, X[start:start + batch_size]).attention
            scores.append(att.scores.data)
            alpha.append(att.alpha.data)
            final.append(att.final.data)
    return AttentionTrace(np.concatenate(scores), np.concatenate(alpha), np.concatenate(final),
                          params.config.alpha_mode)


@dataclass
class EncSummary:
    mean: np.ndarray
    edges: list[tuple[int, int, float]]
    percent: float
    count: int
    normalization: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "percent": self.percent, "count": self.count,
                "edges": [{"source": s, "target": t, "weight": w} for s, t, w in self.edges],
                "normalization": self.normalization}


def mean_enc(models, cohort, percent: float = 10.0) -> EncSummary:
    """Average final graph over every sample of ``cohort`` and every model.

    ``models`` is one :class:`ModelParams` or a list of them (one per trial).
    """
    if isinstance(models, ModelParams):
        models = [models]
    X = np.asarray(cohort, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or len(X) == 0 or not models:
        raise InputError("mean_enc needs at least one model and one sample")
    total = None
    for params in models:
        f = trace_attention(params, X).final.sum(axis=0)
        total = f if total is None else total + f
    mean = total / (len(X) * len(models))
    return EncSummary(mean, top_edges(mean, percent), percent, len(X) * len(models))


def edge_ranking_auc(matrix, support) -> float:
    """AUC of off-diagonal weights for separating true edges from non-edges.

    ``support`` is an ``(n, n)`` adjacency or a ``(T, n, n)`` stack, whose
    union over time is used.
    """
    m = np.asarray(matrix, dtype=float)
    s = np.asarray(support) != 0
    if s.ndim == 3:
        s = s.any(axis=0)
    off = ~np.eye(m.shape[0], dtype=bool)
    return auc_roc(m[off], s[off].astype(int))


# ---------------------------------------------------------------------------
# logistic-regression probe


@dataclass
class LogisticProbe:
    """L2-regularized logistic regression fitted by full-batch gradient descent.

    Features are standardized with train statistics; the step size is the
    inverse of the loss's Lipschitz constant, so no tuning is needed.
    """

    l2: float = 1e-4
    steps: int = 500
    weights: np.ndarray | None = None
    bias: float = 0.0
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def _standardize(self, F: np.ndarray) -> np.ndarray:
        return (F - self.center) / self.scale

    def fit(self, F, y) -> "LogisticProbe":
        F = np.asarray(F, dtype=float).reshape(len(F), -1)
        y = np.asarray(y, dtype=float)
        self.center = F.mean(axis=0)
        std = F.std(axis=0)
        self.scale = np.where(std > 1e-12, std, 1.0)
        Z = self._standardize(F)
        N = len(Z)
        lipschitz = 0.25 * (np.linalg.norm(Z, 2) ** 2 + N) / N + self.l2
        lr = 1.0 / lipschitz
        w = np.zeros(Z.shape[1])
        b = 0.0
        for _ in range(self.steps):
            r = expit(Z @ w + b) - y
            w -= lr * (Z.T @ r / N + self.l2 * w)
            b -= lr * r.mean()
        self.weights, self.bias = w, b
        return self

    def decision(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float).reshape(len(F), -1)
        return self._standardize(F) @ self.weights + self.bias

    def predict_proba(self, F) -> np.ndarray:
        return expit(self.decision(F))


def restricted_finals(params: ModelParams, X, selections, batch_size: int = 64) -> list[np.ndarray]:
    """Final graphs rebuilt from only the top or bottom fraction of timepoints.

    ``selections`` is a list of ``(fraction, side)`` pairs, all served by one
    forward pass.  The selected weights are renormalized to sum to one unless
    the model uses raw (``relu-raw``) weights.
    """
    X = np.asarray(X, dtype=float)
    mode = params.config.alpha_mode
    out = [[] for _ in selections]
    with dc.no_grad():
        for start in range(0, len(X), batch_size):
            res = forward(params, X[start:start + batch_size])
            graphs, alpha = res.graphs.data, res.attention.alpha.data
            for k, (fraction, side) in enumerate(selections):
                for W, a in zip(graphs, alpha):
                    idx = top_fraction_timepoints(a, fraction, side)
                    weights = a[idx]
                    if mode != "relu-raw":
                        total = weights.sum()
                        weights = weights / total if total > 0 else np.full(len(idx), 1.0 / len(idx))
                    out[k].append(np.tensordot(weights, W[idx], axes=1))
    return [np.stack(f) for f in out]


def restricted_final(params: ModelParams, X, fraction: float, side: str = "top",
                     batch_size: int = 64) -> np.ndarray:
    return restricted_finals(params, X, [(fraction, side)], batch_size)[0]


def probe_auc(train_features, train_labels, test_features, test_labels, l2: float = 1e-4,
              steps: int = 500) -> float:
    probe = LogisticProbe(l2=l2, steps=steps).fit(train_features, train_labels)
    return auc_roc(probe.decision(test_features), test_labels)


def _check_fraction(fraction: float, T: int) -> None:
    if not 0 < fraction <= 1:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    if math.ceil(round(fraction * T, 9)) < 1:
        raise ParameterError("fraction selects no timepoints")


def ablation_aucs(params: ModelParams, train, test, selections) -> list[float]:
    """Probe test AUC for every ``(fraction, side)`` selection."""
    for fraction, _ in selections:
        _check_fraction(fraction, params.config.T)
    F_train = restricted_finals(params, train.X, selections)
    F_test = restricted_finals(params, test.X, selections)
    return [probe_auc(a, train.labels, b, test.labels) for a, b in zip(F_train, F_test)]


def ablation_topk(params: ModelParams, train, test, fraction: float, side: str = "top") -> float:
    """Test AUC of a logistic probe on final graphs restricted to selected timepoints.

    ``train`` and ``test`` are datasets (anything with ``X`` and ``labels``);
    the probe is fitted on ``train``.
    """
    return ablation_aucs(params, train, test, [(fraction, side)])[0]


def raw_lr_baseline(train, test, l2: float = 1e-4, steps: int = 500) -> float:
    """Logistic regression on the flattened raw series; returns test AUC."""
    return probe_auc(train.X, train.labels, test.X, test.labels, l2, steps)
