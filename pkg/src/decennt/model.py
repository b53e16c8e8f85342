"""The full network: encoder, per-timepoint attention graphs, temporal pooling, head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import diffcore as dc
from .connectivity import AttentionParams, attend_sequence
from .diffcore import Tensor
from .encoder import BiLstmEncoder, bilstm_encode, glorot
from .errors import ConfigurationError, DimensionError
from .temporal import ALPHA_MODES, GtaParams, TemporalAttention, aggregate


@dataclass(frozen=True)
class ModelConfig:
    n: int
    T: int
    hidden: int = 64
    attention_dim: int = 64
    gamma: float = 0.25
    alpha_mode: str = "softmax"
    scaled_scores: bool = False
    head_hidden: int = 64

    def __post_init__(self):
        if self.n < 1 or self.T < 1 or self.hidden < 1 or self.attention_dim < 1:
            raise ConfigurationError(f"invalid model sizes: {self}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigurationError(f"alpha_mode must be one of {ALPHA_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Head:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, n: int, hidden: int = 64) -> "Head":
        def t(a, name):
            return Tensor(a, requires_grad=True, name=f"head.{name}")
        return cls(t(glorot(rng, n * n, hidden, (n * n, hidden)), "W_c1"), t(np.zeros(hidden), "b_c1"),
                   t(glorot(rng, hidden, 2, (hidden, 2)), "W_c2"), t(np.zeros(2), "b_c2"))

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, final: Tensor) -> Tensor:
        flat = dc.flatten(final, final.ndim - 2)
        return dc.relu(flat @ self.w1 + self.b1) @ self.w2 + self.b2


@dataclass
class ModelParams:
    """All learnable tensors plus the batch-norm running statistics."""

    config: ModelConfig
    encoder: BiLstmEncoder
    attention: AttentionParams
    gta: GtaParams
    head: Head

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator | int = 0) -> "ModelParams":
        rng = np.random.default_rng(rng)
        return cls(
            config,
            BiLstmEncoder.init(rng, config.hidden),
            AttentionParams.init(rng, 2 * config.hidden, config.attention_dim, config.scaled_scores),
            GtaParams.init(rng, config.n, config.gamma),
            Head.init(rng, config.n, config.head_hidden),
        )

    def parameters(self) -> list[Tensor]:
        return (self.encoder.parameters() + self.attention.parameters()
                + self.gta.parameters() + self.head.parameters())

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and running statistic, keyed by name."""
        state = {name: p.data.copy() for name, p in self.named_parameters().items()}
        state["gta.bn.running_mean"] = self.gta.bn_state.running_mean.copy()
        state["gta.bn.running_var"] = self.gta.bn_state.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        expected = set(named) | {"gta.bn.running_mean", "gta.bn.running_var"}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise DimensionError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in named.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data[...] = value
        self.gta.bn_state.running_mean = np.array(state["gta.bn.running_mean"], dtype=np.float64)
        self.gta.bn_state.running_var = np.array(state["gta.bn.running_var"], dtype=np.float64)


@dataclass
class ForwardOutput:
    logits: Tensor
    graphs: Tensor
    attention: TemporalAttention
    embeddings: Tensor = field(repr=False)


def forward(params: ModelParams, x, training: bool = False,
            embedding_hook: Callable[[Tensor], Tensor] | None = None) -> ForwardOutput:
    """Run the network on ``(n, T)`` or ``(B, n, T)`` input.

    The classifier only sees the pooled graph; the attention-updated
    embeddings are returned (optionally passed through ``embedding_hook``)
    but never reach the head.
    """
    cfg = params.config
    x = dc._as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (cfg.n, cfg.T):
        raise DimensionError(f"model expects (B, {cfg.n}, {cfg.T}) input, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise DimensionError("input contains NaN or Inf")
    emb = bilstm_encode(params.encoder, x)
    graphs, updated = attend_sequence(params.attention, emb)
    if embedding_hook is not None:
        updated = embedding_hook(updated)
    att = aggregate(params.gta, graphs, cfg.alpha_mode, training)
    logits = params.head(att.final)
    if single:
        T, n = cfg.T, cfg.n
        logits = logits.reshape(2)
        graphs = graphs.reshape(T, n, n)
        att = TemporalAttention(att.scores.reshape(T), att.alpha.reshape(T),
                                att.final.reshape(n, n), att.mode)
    return ForwardOutput(logits, graphs, att, updated)


def loss(logits: Tensor, labels, params: ModelParams, lam: float = 1e-6) -> Tensor:
    """Mean cross-entropy plus ``lam`` times the L1 norm of every parameter."""
    data = dc.cross_entropy_logits(logits, labels)
    if lam == 0:
        return data
    return data + lam * dc.l1_norm(params.parameters())
