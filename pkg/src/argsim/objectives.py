"""Training losses: masked-token cross-entropy, cosine-regression for scored
sentence pairs, and a premise/hypothesis classification control."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoder import EncoderConfig, EncoderParams, encode_pooled, encode_tokens
from .errors import ContractError, InputError, NumericError
from .numcore import Tensor
from .textproc import MaskedBatch, Vocab, encode

SCORE_MAX = 5.0  # pair gold scores live on [0, 5]
NLI_LABELS = ("entailment", "neutral", "contradiction")


@dataclass(frozen=True)
class StsExample:
    """A scored sentence pair; gold_score on the 0-5 scale."""

    sentence_a: str
    sentence_b: str
    gold_score: float

    def __post_init__(self):
        if not 0.0 <= self.gold_score <= SCORE_MAX:
            raise InputError(f"gold_score {self.gold_score} outside [0, {SCORE_MAX}]")
        if not self.sentence_a or not self.sentence_b:
            raise InputError("empty sentence in pair")


@dataclass(frozen=True)
class NliExample:
    premise: str
    hypothesis: str
    label: int  # 0 entailment, 1 neutral, 2 contradiction

    def __post_init__(self):
        if self.label not in (0, 1, 2):
            raise InputError(f"nli label {self.label} not in 0/1/2")


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """dot(u, v) / (|u||v|); raises on a zero-norm vector."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine_similarity: zero-norm vector")
    return float(u @ v / (nu * nv))


def mlm_loss(
    params: EncoderParams,
    config: EncoderConfig,
    masked: MaskedBatch,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean cross-entropy at the masked positions, logits tied to tok_emb."""
    if masked.n_targets == 0:
        raise ContractError("mlm_loss: batch has no target positions")
    states = encode_tokens(
        params, config, masked.input_ids, masked.attention_mask, training=training, rng=rng
    )
    batch, seq_len, d = states.shape
    flat = nc.reshape(states, (batch * seq_len, d))
    picked = nc.embedding(flat, masked.rows * seq_len + masked.cols)  # (N, d)
    logits = nc.add(
        nc.matmul(picked, nc.transpose(params["tok_emb"], (1, 0))), params["out_bias"]
    )
    return nc.cross_entropy(logits, masked.target_ids)


def mlm_accuracy(params: EncoderParams, config: EncoderConfig, masked: MaskedBatch) -> float:
    """Fraction of masked positions whose argmax logit recovers the original id."""
    if masked.n_targets == 0:
        raise ContractError("mlm_accuracy: batch has no target positions")
    states = encode_tokens(params, config, masked.input_ids, masked.attention_mask)
    batch, seq_len, d = states.shape
    flat = states.data.reshape(batch * seq_len, d)
    logits = flat[masked.rows * seq_len + masked.cols] @ params["tok_emb"].data.T
    logits += params["out_bias"].data
    return float((logits.argmax(axis=1) == masked.target_ids).mean())


def _paired_embeddings(
    params: EncoderParams,
    config: EncoderConfig,
    vocab: Vocab,
    texts_a: list[str],
    texts_b: list[str],
    training: bool,
    rng: np.random.Generator | None,
) -> tuple[Tensor, Tensor]:
    seqs_a = [encode(t, vocab, config.max_len) for t in texts_a]
    seqs_b = [encode(t, vocab, config.max_len) for t in texts_b]
    u = encode_pooled(params, config, seqs_a, training=training, rng=rng)
    v = encode_pooled(params, config, seqs_b, training=training, rng=rng)
    return u, v


def _cosine_rows(u: Tensor, v: Tensor) -> Tensor:
    """Per-row cosine of two (B, d) embedding batches, on the graph."""
    dots = nc.sum_last(nc.mul(u, v))
    nu = nc.sqrt(nc.sum_last(nc.mul(u, u)))
    nv = nc.sqrt(nc.sum_last(nc.mul(v, v)))
    if np.any(nu.data == 0.0) or np.any(nv.data == 0.0):
        raise NumericError("cosine: zero-norm sentence embedding (broken model state)")
    return nc.div(dots, nc.mul(nu, nv))


def sts_loss(
    params: EncoderParams,
    config: EncoderConfig,
    vocab: Vocab,
    batch: list[StsExample],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """MSE between pair cosine and gold_score / 5, both sides one shared tower."""
    if not batch:
        raise ContractError("sts_loss: empty batch")
    u, v = _paired_embeddings(
        params, config, vocab,
        [ex.sentence_a for ex in batch], [ex.sentence_b for ex in batch],
        training, rng,
    )
    cos = _cosine_rows(u, v)
    target = Tensor(np.array([ex.gold_score / SCORE_MAX for ex in batch]), dtype=cos.dtype)
    resid = nc.sub(cos, target)
    return nc.mean_all(nc.mul(resid, resid))


def nli_loss(
    params: EncoderParams,
    config: EncoderConfig,
    vocab: Vocab,
    classifier_weights: Tensor,
    batch: list[NliExample],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Softmax cross-entropy of a linear head over [u; v; |u - v|]."""
    if not batch:
        raise ContractError("nli_loss: empty batch")
    d3 = 3 * config.hidden_size
    if classifier_weights.shape != (3, d3):
        raise ContractError(
            f"nli_loss: classifier weights must be (3, {d3}), got {classifier_weights.shape}"
        )
    u, v = _paired_embeddings(
        params, config, vocab,
        [ex.premise for ex in batch], [ex.hypothesis for ex in batch],
        training, rng,
    )
    feats = nc.concat([u, v, nc.abs_diff(u, v)], axis=-1)
    logits = nc.matmul(feats, nc.transpose(classifier_weights, (1, 0)))
    labels = np.array([ex.label for ex in batch], dtype=np.int64)
    return nc.cross_entropy(logits, labels)


def init_nli_classifier(config: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> Tensor:
    return Tensor(
        rng.normal(0.0, 0.02, size=(3, 3 * config.hidden_size)).astype(dtype),
        requires_grad=True,
    )
