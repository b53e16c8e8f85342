"""Optimization: Adam, plateau schedule with early stopping, fitting and cross-validation."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import diffcore as dc
from .data import Dataset, split_folds
from .errors import ConfigurationError, InputError, UsageError
from .evaluation import MetricsReport, auc_roc, classification_report, summarize_reports
from .model import ModelConfig, ModelParams, forward, loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    Defaults follow the published settings (L1 weight 1e-6, learning rate
    1e-4, halving on plateau, early-stopping patience 15, batch size 32,
    10 trials per fold).  ``max_epochs`` bounds runs that never plateau.
    """

    lam: float = 1e-6
    lr: float = 1e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-6
    early_stop_patience: int = 15
    batch_size: int = 32
    max_epochs: int = 200
    folds: int = 4
    trials: int = 10
    seed: int = 0
    alpha_mode: str = "softmax"
    gamma: float = 0.25
    hidden: int = 64
    attention_dim: int = 64
    scaled_scores: bool = False

    def __post_init__(self):
        positive = ("lr", "plateau_factor", "plateau_patience", "early_stop_patience",
                    "batch_size", "max_epochs", "trials", "gamma", "hidden", "attention_dim")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lam < 0 or self.min_lr < 0:
            raise ConfigurationError("lam and min_lr must be non-negative")
        if self.folds < 2:
            raise ConfigurationError(f"folds must be at least 2, got {self.folds}")

    def model_config(self, n: int, T: int) -> ModelConfig:
        return ModelConfig(n=n, T=T, hidden=self.hidden, attention_dim=self.attention_dim,
                           gamma=self.gamma, alpha_mode=self.alpha_mode,
                           scaled_scores=self.scaled_scores)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        """Build from a mapping, converting strings (config-file values) to field types."""
        defaults = cls()
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        parsed = {}
        for name, raw in values.items():
            kind = type(getattr(defaults, name))
            try:
                parsed[name] = _coerce(raw, kind)
            except ValueError:
                raise ConfigurationError(f"{name}: cannot interpret {raw!r} as {kind.__name__}") from None
        return replace(defaults, **parsed)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _coerce(raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    text = raw.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)
    return kind(text)


def config_hash(values: dict) -> str:
    blob = json.dumps(values, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Adam:
    """Bias-corrected Adam over a fixed list of tensors."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def step(self) -> None:
        if not any(p._has_grad for p in self.params):
            raise UsageError("Adam.step() called before backward()")
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.steps
        c2 = 1.0 - b2 ** self.steps
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


class PlateauSchedule:
    """Learning-rate halving on plateau plus early stopping, driven by val loss.

    An epoch improves when its loss is strictly below the best so far.
    After ``plateau_patience`` epochs without improvement the rate is
    multiplied by ``factor`` (floored at ``min_lr``) and the plateau counter
    restarts; after ``stop_patience`` such epochs training stops.
    """

    def __init__(self, lr: float, factor: float = 0.5, plateau_patience: int = 5,
                 stop_patience: int = 15, min_lr: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.plateau_patience = plateau_patience
        self.stop_patience = stop_patience
        self.min_lr = min_lr
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0
        self.plateau_epochs = 0
        self.cuts: list[int] = []

    def update(self, val_loss: float) -> bool:
        """Record one epoch; return ``True`` when training should stop."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            self.plateau_epochs = 0
            return False
        self.bad_epochs += 1
        self.plateau_epochs += 1
        if self.plateau_epochs >= self.plateau_patience:
            self.lr = max(self.min_lr, self.lr * self.factor)
            self.cuts.append(self.epoch)
            self.plateau_epochs = 0
        return self.bad_epochs >= self.stop_patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    val_auc: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class FitResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    stopped_early: bool


def predict(params: ModelParams, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Logits ``(count, 2)`` in inference mode."""
    out = []
    with dc.no_grad():
        for start in range(0, len(X), batch_size):
            out.append(forward(params, X[start:start + batch_size]).logits.data)
    return np.concatenate(out, axis=0)


def positive_scores(logits: np.ndarray) -> np.ndarray:
    """Probability of class 1 from two-class logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e[:, 1] / e.sum(axis=1)


def evaluate_loss(params: ModelParams, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    logits = predict(params, X)
    with dc.no_grad():
        value = float(dc.cross_entropy_logits(logits, y).data)
    return value, positive_scores(logits)


def fit(params: ModelParams, config: TrainConfig, train: Dataset, val: Dataset,
        rng: np.random.Generator | int | None = None) -> FitResult:
    """Train with shuffled minibatches and keep the best-validation snapshot.

    The validation loss is the mean cross-entropy on ``val``.  Parameters and
    batch-norm statistics of the epoch with the lowest validation loss are
    restored into ``params`` before returning.
    """
    if len(train) == 0 or len(val) == 0:
        raise InputError("train and validation splits must be non-empty")
    if set(train.ids) & set(val.ids):
        raise InputError("train and validation splits overlap")
    rng = np.random.default_rng(config.seed if rng is None else rng)
    X, y = train.X, train.labels
    Xv, yv = val.X, val.labels
    opt = Adam(params.parameters(), lr=config.lr)
    sched = PlateauSchedule(config.lr, config.plateau_factor, config.plateau_patience,
                            config.early_stop_patience, config.min_lr)
    best_state = params.state_dict()
    history = []
    stopped = False
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(X))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            out = forward(params, X[idx], training=True)
            objective = loss(out.logits, y[idx], params, config.lam)
            dc.backward(objective)
            opt.step()
            total += float(objective.data) * len(idx)
            seen += len(idx)
        val_loss, val_scores = evaluate_loss(params, Xv, yv)
        try:
            val_auc = auc_roc(val_scores, yv)
        except ValueError:
            val_auc = float("nan")
        record = EpochRecord(epoch, total / seen, val_loss, opt.lr, val_auc)
        history.append(record)
        log.debug("epoch %d train %.4f val %.4f auc %.3f lr %.2e", epoch, record.train_loss,
                  val_loss, val_auc, opt.lr)
        stop = sched.update(val_loss)
        if sched.improved:
            best_state = params.state_dict()
        opt.lr = sched.lr
        if stop:
            stopped = True
            break
    params.load_state_dict(best_state)
    return FitResult(params, history, sched.best_epoch, stopped)


def trial_seed(seed: int, fold: int, trial: int) -> int:
    """Independent, reproducible seed for one (fold, trial) pair."""
    return int(np.random.SeedSequence([seed, fold, trial]).generate_state(1)[0])


@dataclass
class TrialResult:
    fold: int
    trial: int
    seed: int
    report: MetricsReport
    history: list[EpochRecord]
    best_epoch: int
    state: dict[str, np.ndarray] = field(repr=False)


@dataclass
class CrossValidationResult:
    config: TrainConfig
    model_config: ModelConfig
    trials: list[TrialResult]

    def aggregate(self) -> dict:
        return summarize_reports([t.report for t in self.trials])

    def per_fold(self) -> list[dict]:
        out = []
        for fold in sorted({t.fold for t in self.trials}):
            items = [t for t in self.trials if t.fold == fold]
            out.append({"fold": fold,
                        "trials": [{"trial": t.trial, "seed": t.seed, "best_epoch": t.best_epoch,
                                    **t.report.to_dict()} for t in items],
                        "summary": summarize_reports([t.report for t in items])})
        return out


def fold_splits(folds: np.ndarray, k: int, fold: int,
                labels: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train/val/test indices: test is ``fold``, val the next fold, train the rest.

    With ``k == 2`` there is no "rest", so the non-test fold is split into
    alternating train/val halves within each class (``labels`` required for
    the stratification; without them the split alternates over all indices).
    """
    test = np.flatnonzero(folds == fold)
    if k == 2:
        other = np.flatnonzero(folds != fold)
        groups = [other] if labels is None else [other[labels[other] == c]
                                                 for c in np.unique(labels[other])]
        val = np.sort(np.concatenate([g[1::2] for g in groups]))
        train = np.sort(np.concatenate([g[0::2] for g in groups]))
        return train, val, test
    val_fold = (fold + 1) % k
    val = np.flatnonzero(folds == val_fold)
    train = np.flatnonzero((folds != fold) & (folds != val_fold))
    return train, val, test


def run_trial(config: TrainConfig, dataset: Dataset, folds: np.ndarray, fold: int,
              trial: int) -> TrialResult:
    train_idx, val_idx, test_idx = fold_splits(folds, config.folds, fold, dataset.labels)
    if len(train_idx) == 0:
        raise InputError(f"fold {fold} leaves no training samples")
    seed = trial_seed(config.seed, fold, trial)
    rng = np.random.default_rng(seed)
    params = ModelParams.init(config.model_config(dataset.n, dataset.T), rng)
    result = fit(params, config, dataset.subset(train_idx), dataset.subset(val_idx), rng)
    test = dataset.subset(test_idx)
    scores = positive_scores(predict(params, test.X))
    report = classification_report(scores, test.labels)
    return TrialResult(fold, trial, seed, report, result.history, result.best_epoch,
                       params.state_dict())


def _run_trial_args(args):
    return run_trial(*args)


def cross_validate(config: TrainConfig, dataset: Dataset, jobs: int = 1) -> CrossValidationResult:
    """Stratified k-fold cross-validation with ``config.trials`` seeds per fold.

    Trials may run in ``jobs`` worker processes; results are always ordered by
    (fold, trial) so the report does not depend on scheduling.
    """
    if len(dataset) < 2 * config.folds:
        raise InputError(f"need at least {2 * config.folds} samples for {config.folds} folds")
    folds = split_folds(dataset, config.folds, config.seed)
    tasks = [(config, dataset, folds, f, t) for f in range(config.folds) for t in range(config.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial_args, tasks))
    else:
        results = [run_trial(*task) for task in tasks]
    results.sort(key=lambda r: (r.fold, r.trial))
    return CrossValidationResult(config, config.model_config(dataset.n, dataset.T), results)
