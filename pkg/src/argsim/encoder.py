"""Miniature transformer encoder with masked mean pooling.

One shared parameter set encodes both sides of a sentence pair (siamese
scoring happens in objectives/evalkit). Post-norm stack: token + position
embeddings, then L x [self-attention -> add&norm -> feed-forward -> add&norm],
with key-side padding masks so pad content never reaches real positions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import numcore as nc
from .errors import ConfigError, InputError
from .numcore import Tensor
from .seeding import make_rng
from .textproc import TokenSeq, Vocab, batch_arrays, encode


@dataclass(frozen=True)
class EncoderConfig:
    """Dimensions and switches of the encoder; desk-scale defaults."""

    vocab_size: int
    num_layers: int = 2
    hidden_size: int = 32
    num_heads: int = 4
    ff_size: int = 64
    max_len: int = 64
    dropout: float = 0.1
    pooling: str = "mean"     # "mean" or "cls"
    pos_kind: str = "learned"

    def __post_init__(self):
        if min(self.vocab_size, self.num_layers, self.hidden_size,
               self.num_heads, self.ff_size, self.max_len) < 1:
            raise ConfigError("encoder sizes must all be >= 1")
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.pooling not in ("mean", "cls"):
            raise ConfigError(f"pooling must be 'mean' or 'cls', got {self.pooling!r}")
        if self.pos_kind != "learned":
            raise ConfigError(f"only learned positional embeddings supported, got {self.pos_kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def _param_shapes(config: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = config.hidden_size, config.ff_size
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (config.vocab_size, d)),
        ("pos_emb", (config.max_len, d)),
    ]
    for i in range(config.num_layers):
        shapes += [
            (f"layer{i}.attn.wq", (d, d)),
            (f"layer{i}.attn.wk", (d, d)),
            (f"layer{i}.attn.wv", (d, d)),
            (f"layer{i}.attn.wo", (d, d)),
            (f"layer{i}.ln1.gain", (d,)),
            (f"layer{i}.ln1.bias", (d,)),
            (f"layer{i}.ff.w1", (d, f)),
            (f"layer{i}.ff.b1", (f,)),
            (f"layer{i}.ff.w2", (f, d)),
            (f"layer{i}.ff.b2", (d,)),
            (f"layer{i}.ln2.gain", (d,)),
            (f"layer{i}.ln2.bias", (d,)),
        ]
    shapes.append(("out_bias", (config.vocab_size,)))  # tied MLM head bias
    return shapes


def param_count(config: EncoderConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in _param_shapes(config))


class EncoderParams:
    """Named, ordered parameter tensors. The MLM output projection is the
    token embedding transposed (tied), so only its bias appears here."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    @classmethod
    def init(cls, config: EncoderConfig, seed: int, dtype=np.float64) -> "EncoderParams":
        """normal(0, 0.02) weights, zero biases, unit layer-norm gains."""
        rng = make_rng(seed, "encoder-init")
        tensors: dict[str, Tensor] = {}
        for name, shape in _param_shapes(config):
            if name.endswith(".gain"):
                data = np.ones(shape)
            elif name.endswith((".bias", ".b1", ".b2")) or name == "out_bias":
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, 0.02, size=shape)
            tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
        return cls(tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def names(self) -> list[str]:
        return list(self._tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)

    def copy(self) -> "EncoderParams":
        return EncoderParams({
            name: Tensor(t.data.copy(), requires_grad=True)
            for name, t in self._tensors.items()
        })

    def zero_grads(self) -> None:
        nc.zero_grads(self)

    def count(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def allclose(self, other: "EncoderParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[n].data, other[n].data) for n in self.names()
        )


def encode_tokens(
    params: EncoderParams,
    config: EncoderConfig,
    ids: np.ndarray,
    attention_mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the stack over a (B, T) id batch; returns token states (B, T, d)."""
    ids = np.asarray(ids)
    attention_mask = np.asarray(attention_mask)
    if ids.ndim != 2 or attention_mask.shape != ids.shape:
        raise InputError(f"encode_tokens: ids {ids.shape} vs mask {attention_mask.shape}")
    batch, seq_len = ids.shape
    if seq_len > config.max_len:
        raise InputError(f"encode_tokens: sequence length {seq_len} > max_len {config.max_len}")
    if ids.max() >= config.vocab_size or ids.min() < 0:
        raise InputError(f"encode_tokens: id out of range [0, {config.vocab_size})")

    d, heads = config.hidden_size, config.num_heads
    dh = d // heads
    x = nc.add(
        nc.embedding(params["tok_emb"], ids),
        nc.embedding(params["pos_emb"], np.arange(seq_len)),
    )
    key_mask = attention_mask[:, None, None, :]  # broadcast over heads and queries

    for i in range(config.num_layers):
        p = f"layer{i}"

        def split_heads(t: Tensor) -> Tensor:
            return nc.transpose(nc.reshape(t, (batch, seq_len, heads, dh)), (0, 2, 1, 3))

        q = split_heads(nc.matmul(x, params[f"{p}.attn.wq"]))
        k = split_heads(nc.matmul(x, params[f"{p}.attn.wk"]))
        v = split_heads(nc.matmul(x, params[f"{p}.attn.wv"]))
        scores = nc.scale(nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        probs = nc.softmax(scores, mask=key_mask)
        probs = nc.dropout(probs, config.dropout, rng, training)
        ctx = nc.reshape(nc.transpose(nc.matmul(probs, v), (0, 2, 1, 3)), (batch, seq_len, d))
        attn_out = nc.matmul(ctx, params[f"{p}.attn.wo"])
        x = nc.layer_norm(nc.add(x, attn_out), params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])

        hidden = nc.gelu(nc.add(nc.matmul(x, params[f"{p}.ff.w1"]), params[f"{p}.ff.b1"]))
        ff_out = nc.add(nc.matmul(hidden, params[f"{p}.ff.w2"]), params[f"{p}.ff.b2"])
        ff_out = nc.dropout(ff_out, config.dropout, rng, training)
        x = nc.layer_norm(nc.add(x, ff_out), params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
    return x


def pool_mean(states: Tensor, attention_mask: np.ndarray) -> Tensor:
    """Mean of token states over mask==1 positions, per sentence."""
    return nc.masked_mean(states, attention_mask)


def pool_sentences(states: Tensor, attention_mask: np.ndarray, config: EncoderConfig) -> Tensor:
    if config.pooling == "mean":
        return pool_mean(states, attention_mask)
    batch, seq_len, d = states.shape
    flat = nc.reshape(states, (batch * seq_len, d))
    return nc.embedding(flat, np.arange(batch) * seq_len)  # [CLS] rows


def encode_pooled(
    params: EncoderParams,
    config: EncoderConfig,
    seqs: list[TokenSeq],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """TokenSeq batch -> sentence embeddings (B, d)."""
    ids, mask = batch_arrays(seqs)
    states = encode_tokens(params, config, ids, mask, training=training, rng=rng)
    return pool_sentences(states, mask, config)


def embed_sentence(
    params: EncoderParams, config: EncoderConfig, vocab: Vocab, text: str
) -> np.ndarray:
    """Deterministic inference-mode embedding of one sentence, shape (d,)."""
    seq = encode(text, vocab, config.max_len)
    pooled = encode_pooled(params, config, [seq], training=False)
    return pooled.data[0].copy()
