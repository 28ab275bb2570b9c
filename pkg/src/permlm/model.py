"""Transformer encoder with two-stream self-attention.

The content stream ``h`` carries token identity and may look at its own
position; the query stream ``g`` starts from a shared learned vector plus the
position embedding and only ever sees content from positions strictly earlier
in the sampled factorization order.  Predicting token ``x[z[t]]`` from
``g[z[t]]`` therefore conditions on ``x[z[:t]]`` and nothing else.

Positions are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, fields

import numpy as np

from . import numerics as nx
from .errors import DataError, ParameterError, ShapeError
from .numerics import Tensor

N_CLASSES = 5
MASK_NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    vocab_size: int = 128
    max_len: int = 128
    dropout: float = 0.1
    predict_fraction: float = 1 / 6
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ParameterError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.vocab_size < 5:
            raise ParameterError(f"vocab_size must be at least 5, got {self.vocab_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 < self.predict_fraction <= 1.0:
            raise ParameterError(f"predict_fraction must lie in (0, 1], got {self.predict_fraction}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                kwargs[f.name] = type(f.default)(d[f.name])
        return cls(**kwargs)


def _layer_param_shapes(cfg: ModelConfig) -> dict:
    d, f = cfg.d_model, cfg.d_ff
    return {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "ln1_g": (d,), "ln1_b": (d,),
        "ff_w1": (d, f), "ff_b1": (f,), "ff_w2": (f, d), "ff_b2": (d,),
        "ln2_g": (d,), "ln2_b": (d,),
    }  # fmt: skip


def param_shapes(cfg: ModelConfig) -> dict:
    """Ordered name -> shape map for every learnable tensor."""
    shapes = {
        "tok_emb": (cfg.vocab_size, cfg.d_model),
        "pos_emb": (cfg.max_len, cfg.d_model),
        "query_seed": (cfg.d_model,),
    }
    for layer in range(cfg.n_layers):
        for name, shape in _layer_param_shapes(cfg).items():
            shapes[f"layer{layer}.{name}"] = shape
    shapes["cls_w"] = (cfg.d_model, N_CLASSES)
    shapes["cls_b"] = (N_CLASSES,)
    return shapes


class TransformerWeights:
    """All learnable tensors plus the config they were built for.

    The LM output projection is tied to ``tok_emb``.
    """

    def __init__(self, config: ModelConfig, params: dict):
        expected = param_shapes(config)
        if list(params) != list(expected):
            missing = set(expected) ^ set(params)
            raise ShapeError(f"parameter names do not match config: {sorted(missing) or 'order differs'}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name} has shape {params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(params[name].data)):
                raise DataError(f"{name} contains non-finite values")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, emb_std: float = 0.1) -> "TransformerWeights":
        """Glorot-normal projections, N(0, emb_std) embeddings, unit LN gains, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_shapes(config).items():
            short = name.rsplit(".", 1)[-1]
            if short.endswith("_g"):
                data = np.ones(shape)
            elif short.endswith("_b") or short.startswith("ff_b"):
                data = np.zeros(shape)
            elif short in ("tok_emb", "pos_emb", "query_seed"):
                data = rng.normal(0.0, emb_std, size=shape)
            else:
                data = rng.normal(0.0, math.sqrt(2.0 / sum(shape)), size=shape)
            params[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def layer(self, i: int) -> dict:
        prefix = f"layer{i}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def copy(self) -> "TransformerWeights":
        return TransformerWeights(
            self.config, {k: Tensor(v.data, requires_grad=v.requires_grad, name=k) for k, v in self.params.items()}
        )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def equals(self, other: "TransformerWeights") -> bool:
        return (
            self.config == other.config
            and list(self.params) == list(other.params)
            and all(np.array_equal(self.params[k].data, other.params[k].data) for k in self.params)
        )


# --------------------------------------------------------------------------
# factorization orders
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PermutationOrder:
    z: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.z) != list(range(len(self.z))):
            raise ParameterError(f"{self.z} is not a permutation of 0..{len(self.z) - 1}")

    @property
    def rank(self) -> tuple[int, ...]:
        rank = [0] * len(self.z)
        for t, pos in enumerate(self.z):
            rank[pos] = t
        return tuple(rank)

    def __len__(self):
        return len(self.z)

    @classmethod
    def identity(cls, T: int) -> "PermutationOrder":
        return cls(tuple(range(T)))


def sample_permutation(T: int, rng: np.random.Generator) -> PermutationOrder:
    """Uniform permutation of ``0..T-1`` by Fisher-Yates."""
    if T < 1:
        raise ParameterError(f"sequence length must be at least 1, got {T}")
    z = list(range(T))
    for i in range(T - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        z[i], z[j] = z[j], z[i]
    return PermutationOrder(tuple(z))


def all_permutations(T: int):
    for z in itertools.permutations(range(T)):
        yield PermutationOrder(z)


@dataclass(frozen=True)
class AttentionMasks:
    content_mask: np.ndarray  # [i, j]: position i may attend to j
    query_mask: np.ndarray


def build_masks(order: PermutationOrder) -> AttentionMasks:
    rank = np.asarray(order.rank)
    content = rank[None, :] <= rank[:, None]
    query = rank[None, :] < rank[:, None]
    content.setflags(write=False)
    query.setflags(write=False)
    return AttentionMasks(content, query)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, T, d = x.shape
    return x.reshape(*lead, T, n_heads, d // n_heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, H, T, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, T, H * dh)


def attention(query_in, kv_in, visible, lw, cfg: ModelConfig, *, training=False, rng=None) -> Tensor:
    """Multi-head attention; ``visible`` broadcasts against ``[..., T_q, T_k]``.

    Masked logits get an additive ``-1e9``.  Rows with no visible key at all
    output zeros instead of a uniform mix, so such a row carries no content.
    """
    visible = np.asarray(visible, dtype=bool)
    q = _split_heads(query_in @ lw["wq"], cfg.n_heads)
    k = _split_heads(kv_in @ lw["wk"], cfg.n_heads)
    v = _split_heads(kv_in @ lw["wv"], cfg.n_heads)
    bias = np.where(visible, 0.0, MASK_NEG)[..., None, :, :]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(cfg.head_dim)) + Tensor(bias)
    probs = nx.stable_softmax(scores, axis=-1)
    has_any = visible.any(axis=-1, keepdims=True)
    if not has_any.all():
        probs = probs * Tensor(has_any[..., None, :, :].astype(np.float64))
    probs = nx.dropout(probs, cfg.dropout, rng, training)
    return _merge_heads(probs @ v) @ lw["wo"]


def _post_attention(x: Tensor, attn: Tensor, lw, cfg: ModelConfig, *, training=False, rng=None) -> Tensor:
    x = nx.layer_norm(x + attn, lw["ln1_g"], lw["ln1_b"], cfg.ln_eps)
    ff = nx.gelu(x @ lw["ff_w1"] + lw["ff_b1"])
    ff = nx.dropout(ff, cfg.dropout, rng, training)
    ff = ff @ lw["ff_w2"] + lw["ff_b2"]
    return nx.layer_norm(x + ff, lw["ln2_g"], lw["ln2_b"], cfg.ln_eps)


def content_layer(h: Tensor, visible, lw, cfg: ModelConfig, *, training=False, rng=None) -> Tensor:
    attn = attention(h, h, visible, lw, cfg, training=training, rng=rng)
    return _post_attention(h, attn, lw, cfg, training=training, rng=rng)


def two_stream_layer(h: Tensor, g: Tensor, masks: AttentionMasks, lw, cfg: ModelConfig, *, training=False, rng=None):
    """One layer of both streams with shared weights; returns ``(h', g')``."""
    T = h.shape[-2]
    if h.shape != g.shape or h.shape[-1] != cfg.d_model:
        raise ShapeError(f"stream shapes {h.shape} and {g.shape} do not fit d_model={cfg.d_model}")
    if masks.content_mask.shape != (T, T) or masks.query_mask.shape != (T, T):
        raise ShapeError(f"masks must be {T}x{T}, got {masks.content_mask.shape}")
    h_new = content_layer(h, masks.content_mask, lw, cfg, training=training, rng=rng)
    g_attn = attention(g, h, masks.query_mask, lw, cfg, training=training, rng=rng)
    g_new = _post_attention(g, g_attn, lw, cfg, training=training, rng=rng)
    return h_new, g_new


# --------------------------------------------------------------------------
# heads
# --------------------------------------------------------------------------


def n_predicted(T: int, fraction: float) -> int:
    return max(1, math.ceil(fraction * T - 1e-12))


def encode_streams(ids, order: PermutationOrder, weights: TransformerWeights, *, training=False, rng=None):
    cfg = weights.config
    ids = np.asarray(ids, dtype=np.int64)
    T = ids.shape[0]
    if T > cfg.max_len:
        raise ParameterError(f"sequence length {T} exceeds max_len={cfg.max_len}")
    if T < 1 or len(order) != T:
        raise ParameterError(f"permutation of length {len(order)} for a sequence of length {T}")
    masks = build_masks(order)
    pos = nx.embedding(weights["pos_emb"], np.arange(T))
    h = nx.embedding(weights["tok_emb"], ids) + pos
    g = weights["query_seed"] + pos
    for layer in range(cfg.n_layers):
        h, g = two_stream_layer(h, g, masks, weights.layer(layer), cfg, training=training, rng=rng)
    return h, g


def forward_permlm(ids, order: PermutationOrder, weights: TransformerWeights, *, training=False, rng=None):
    """Vocabulary logits for the last ``ceil(predict_fraction * T)`` positions in order.

    Returns ``(logits, positions)``; row ``t`` of ``logits`` predicts
    ``ids[positions[t]]``.
    """
    cfg = weights.config
    ids = np.asarray(ids, dtype=np.int64)
    _, g = encode_streams(ids, order, weights, training=training, rng=rng)
    k = n_predicted(len(ids), cfg.predict_fraction)
    positions = np.asarray(order.z[len(ids) - k :], dtype=np.int64)
    logits = nx.embedding(g, positions) @ weights["tok_emb"].swapaxes(0, 1)
    return logits, positions


def permlm_loss(ids, order: PermutationOrder, weights: TransformerWeights, *, training=False, rng=None) -> Tensor:
    """Mean negative log-likelihood of the predicted tokens under ``order``."""
    ids = np.asarray(ids, dtype=np.int64)
    logits, positions = forward_permlm(ids, order, weights, training=training, rng=rng)
    return nx.cross_entropy(logits, ids[positions])


def expected_permlm_loss(ids, weights: TransformerWeights, max_T: int = 7) -> float:
    """Exact average of :func:`permlm_loss` over every factorization order."""
    T = len(ids)
    if T > max_T:
        raise ParameterError(f"enumerating {T}! orders is too expensive (max_T={max_T})")
    losses = [permlm_loss(ids, order, weights).item() for order in all_permutations(T)]
    return math.fsum(losses) / len(losses)


def forward_classifier(ids, pad_mask, weights: TransformerWeights, *, pooling="cls", training=False, rng=None) -> Tensor:
    """Class logits ``[B, 5]`` from a single fully bidirectional content stream.

    PAD positions are hidden as keys.  ``pooling="cls"`` reads the last real
    position (where the tokenizer puts CLS); ``"mean"`` averages real positions.
    """
    cfg = weights.config
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    pad_mask = np.atleast_2d(np.asarray(pad_mask, dtype=bool))
    if ids.shape != pad_mask.shape:
        raise ShapeError(f"ids {ids.shape} and pad mask {pad_mask.shape} differ")
    B, L = ids.shape
    if L > cfg.max_len:
        raise ParameterError(f"sequence length {L} exceeds max_len={cfg.max_len}")
    lengths = pad_mask.sum(axis=1)
    if (lengths == 0).any():
        raise DataError(f"row {int(np.argmin(lengths))} of the batch has no real tokens")
    h = nx.embedding(weights["tok_emb"], ids) + nx.embedding(weights["pos_emb"], np.arange(L))
    visible = np.broadcast_to(pad_mask[:, None, :], (B, L, L))
    for layer in range(cfg.n_layers):
        h = content_layer(h, visible, weights.layer(layer), cfg, training=training, rng=rng)
    if pooling == "cls":
        select = np.zeros((B, 1, L))
        select[np.arange(B), 0, lengths - 1] = 1.0
    elif pooling == "mean":
        select = (pad_mask / lengths[:, None])[:, None, :].astype(np.float64)
    else:
        raise ParameterError(f"unknown pooling {pooling!r}")
    pooled = (Tensor(select) @ h).reshape(B, cfg.d_model)
    return pooled @ weights["cls_w"] + weights["cls_b"]


def predict_classes(ids, pad_mask, weights: TransformerWeights, pooling="cls") -> np.ndarray:
    logits = forward_classifier(ids, pad_mask, weights, pooling=pooling)
    return np.argmax(logits.data, axis=1)

