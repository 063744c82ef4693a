"""Small pre-norm transformer encoder with a token-tagging head.

One encoder is shared by titles and descriptions; sentences are embedded by
mean-pooling the unmasked token vectors. Inference (`predict_tags`) takes
title tokens only, so predictions cannot depend on descriptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ContractError, DataError, DimensionError
from .tensor import Tensor

PAD_TAG_ID = 0

# Additive attention bias for masked keys. Finite (tensors must stay NaN/Inf
# free) but large enough that exp() underflows to exactly zero weight.
MASK_BIAS = -1e30


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int
    d_model: int
    n_heads: int
    n_layers: int
    d_ff: int
    n_tags: int

    def __post_init__(self):
        for name in ("vocab_size", "max_len", "d_model", "n_heads", "n_layers", "d_ff", "n_tags"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise DataError(f"encoder config field {name} must be a positive int, got {v!r}")
        if self.d_model % self.n_heads != 0:
            raise DataError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )

    @property
    def d_head(self):
        return self.d_model // self.n_heads


@dataclass
class TokenBatch:
    """Integer token ids [batch, seq] with a 0/1 mask (1 = real token)."""

    ids: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.float64)
        if self.ids.ndim != 2 or self.mask.shape != self.ids.shape:
            raise ContractError(
                f"token batch needs matching 2-d ids/mask, got {self.ids.shape}/{self.mask.shape}"
            )
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ContractError("token batch mask must be 0/1")
        if (self.mask.sum(axis=1) == 0).any():
            raise ContractError("every batch row needs at least one unmasked token")
        if self.ids.min() < 0:
            raise ContractError("token ids must be non-negative")

    @property
    def batch_size(self):
        return self.ids.shape[0]

    @property
    def seq_len(self):
        return self.ids.shape[1]


class Parameters:
    """All trainable tensors of one encoder, keyed by stable names.

    Every tensor requires grad; nothing is ever frozen. Iteration order is
    the construction order, which the optimizer and checkpoint code rely on.
    """

    def __init__(self, config: EncoderConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def n_params(self):
        return sum(t.size for t in self.tensors.values())


def expected_shapes(config: EncoderConfig):
    """Name -> shape map, derivable from the config alone."""
    d, ff, k = config.d_model, config.d_ff, config.n_tags
    shapes = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes[p + "ln_attn.gain"] = (d,)
        shapes[p + "ln_attn.bias"] = (d,)
        for m in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + m] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + b] = (d,)
        shapes[p + "ln_ffn.gain"] = (d,)
        shapes[p + "ln_ffn.bias"] = (d,)
        shapes[p + "ffn.w1"] = (d, ff)
        shapes[p + "ffn.b1"] = (ff,)
        shapes[p + "ffn.w2"] = (ff, d)
        shapes[p + "ffn.b2"] = (d,)
    shapes["ln_out.gain"] = (d,)
    shapes["ln_out.bias"] = (d,)
    shapes["tag_head.w"] = (d, k)
    shapes["tag_head.b"] = (k,)
    return shapes


def init_params(config: EncoderConfig, seed: int) -> Parameters:
    """Seeded init: weights uniform in +-1/sqrt(d_model), gains 1, biases 0."""
    rng = np.random.default_rng(np.random.SeedSequence([0x7A66E5, seed]))
    scale = 1.0 / math.sqrt(config.d_model)
    tensors = {}
    for name, shape in expected_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            data = np.ones(shape)
        elif leaf == "bias" or leaf.startswith("b"):
            data = np.zeros(shape)
        else:
            data = rng.uniform(-scale, scale, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return Parameters(config, tensors)


def encode(params: Parameters, batch: TokenBatch, attn_sink=None) -> Tensor:
    """Run the encoder stack; returns token vectors [batch, seq, d_model].

    Masked keys get a large negative attention bias, so padding content
    never reaches unmasked positions. `attn_sink`, when given a list,
    collects the raw attention weight arrays of every layer.
    """
    cfg = params.config
    b, s = batch.ids.shape
    if s > cfg.max_len:
        raise DimensionError(f"sequence length {s} exceeds max_len {cfg.max_len}")
    if batch.ids.max() >= cfg.vocab_size:
        raise ContractError("token id out of vocabulary range")

    h = cfg.n_heads
    dk = cfg.d_head
    d = cfg.d_model
    inv_sqrt_dk = 1.0 / math.sqrt(dk)
    key_bias = Tensor((1.0 - batch.mask[:, None, None, :]) * MASK_BIAS)

    x = tt.embedding(params["tok_emb"], batch.ids) + tt.embedding(
        params["pos_emb"], np.arange(s, dtype=np.int64)
    )

    def linear(t2d, prefix, w, bias):
        return tt.matmul(t2d, params[f"{prefix}.{w}"]) + params[f"{prefix}.{bias}"]

    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        normed = tt.layer_norm(x, params[f"{p}.ln_attn.gain"], params[f"{p}.ln_attn.bias"])
        flat = normed.reshape(b * s, d)
        q = linear(flat, f"{p}.attn", "wq", "bq").reshape(b, s, h, dk).swapaxes(1, 2)
        k = linear(flat, f"{p}.attn", "wk", "bk").reshape(b, s, h, dk).swapaxes(1, 2)
        v = linear(flat, f"{p}.attn", "wv", "bv").reshape(b, s, h, dk).swapaxes(1, 2)
        scores = tt.matmul(q, k.swapaxes(2, 3)) * inv_sqrt_dk + key_bias
        attn = tt.softmax_rows(scores)
        if attn_sink is not None:
            attn_sink.append(attn.data)
        ctx = tt.matmul(attn, v).swapaxes(1, 2).reshape(b * s, d)
        x = x + linear(ctx, f"{p}.attn", "wo", "bo").reshape(b, s, d)

        normed = tt.layer_norm(x, params[f"{p}.ln_ffn.gain"], params[f"{p}.ln_ffn.bias"])
        inner = tt.gelu(linear(normed.reshape(b * s, d), f"{p}.ffn", "w1", "b1"))
        x = x + linear(inner, f"{p}.ffn", "w2", "b2").reshape(b, s, d)

    return tt.layer_norm(x, params["ln_out.gain"], params["ln_out.bias"])


def pool_sentence(encoded: Tensor, mask: np.ndarray) -> Tensor:
    """Sentence embedding: mean of token vectors over unmasked positions."""
    return tt.masked_mean(encoded, mask)


def tag_logits(params: Parameters, encoded: Tensor) -> Tensor:
    """Affine map of each token vector to tag-space logits."""
    b, s, d = encoded.shape
    flat = encoded.reshape(b * s, d)
    out = tt.matmul(flat, params["tag_head.w"]) + params["tag_head.b"]
    return out.reshape(b, s, params.config.n_tags)


def predict_tags(params: Parameters, title_batch: TokenBatch) -> np.ndarray:
    """Argmax tag ids per unmasked title token; ties pick the lowest id.

    Takes title tokens only by construction; masked positions emit PAD.
    """
    with tt.no_grad():
        logits = tag_logits(params, encode(params, title_batch))
    best = np.argmax(logits.data, axis=2)
    return np.where(title_batch.mask > 0, best, PAD_TAG_ID).astype(np.int64)
