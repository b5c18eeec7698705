"""Vocabulary construction, sentence encoding, and MLM mask sampling."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, InputError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

# Lowercased alphanumeric runs; punctuation acts as a boundary and is dropped.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bijective token<->id map with the five specials pinned to ids 0-4."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:5]) != SPECIALS:
            raise InputError(f"vocab must start with the specials {SPECIALS}")
        self.id_to_token = tokens
        self.token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            dupes = [t for t, c in Counter(tokens).items() if c > 1]
            raise InputError(f"duplicate vocab tokens: {dupes}")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def sha256(self) -> str:
        return hashlib.sha256(self._file_bytes()).hexdigest()

    def _file_bytes(self) -> bytes:
        return ("\n".join(self.id_to_token) + "\n").encode("utf-8")

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self._file_bytes())

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "rb") as f:
            lines = f.read().decode("utf-8").splitlines()
        return cls(lines)


def build_vocab(corpus: Iterable[str], min_freq: int = 1, max_size: int = 30000) -> Vocab:
    """Frequency-filtered vocab: most frequent first, ties lexicographic.

    Keeps at most max_size - 5 corpus tokens after the specials.
    """
    counts: Counter[str] = Counter()
    n_sentences = 0
    for sentence in corpus:
        n_sentences += 1
        counts.update(tokenize(sentence))
    if n_sentences == 0:
        raise InputError("build_vocab: empty corpus")
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocab(list(SPECIALS) + kept[: max(0, max_size - 5)])


@dataclass
class TokenSeq:
    """One encoded sentence: fixed-length ids with a parallel attention mask.

    n_tokens counts the non-pad prefix ([CLS] + content + [SEP]).
    """

    ids: np.ndarray
    attention_mask: np.ndarray
    n_tokens: int


def encode(text: str, vocab: Vocab, max_len: int = 64) -> TokenSeq:
    """Lowercase, split, map OOV to [UNK], wrap in [CLS]/[SEP], pad to max_len.

    Content beyond max_len - 2 tokens is truncated (first tokens kept).
    """
    if max_len < 3:
        raise ContractError(f"encode: max_len must be >= 3, got {max_len}")
    content = [vocab.lookup(tok) for tok in tokenize(text)][: max_len - 2]
    ids = [CLS_ID] + content + [SEP_ID]
    n = len(ids)
    ids = ids + [PAD_ID] * (max_len - n)
    mask = [1] * n + [0] * (max_len - n)
    return TokenSeq(np.array(ids, dtype=np.int64), np.array(mask, dtype=np.int64), n)


def batch_arrays(seqs: Sequence[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (B, T) id and attention-mask arrays."""
    ids = np.stack([s.ids for s in seqs])
    mask = np.stack([s.attention_mask for s in seqs])
    return ids, mask


@dataclass
class MaskedBatch:
    """A batch after MLM masking: corrupted ids plus the recovery targets."""

    input_ids: np.ndarray       # (B, T) ids with selected positions replaced
    attention_mask: np.ndarray  # (B, T)
    rows: np.ndarray            # (N,) sequence index per target
    cols: np.ndarray            # (N,) position per target
    target_ids: np.ndarray      # (N,) pre-mask ids at the target positions
    n_skipped: int = 0          # sequences with no eligible position

    @property
    def n_targets(self) -> int:
        return int(self.target_ids.size)


def apply_mlm_mask(
    seqs: Sequence[TokenSeq],
    rate: float = 0.15,
    rng: np.random.Generator | None = None,
    scheme: str = "mask",
    vocab_size: int | None = None,
) -> MaskedBatch:
    """Select eligible positions independently at `rate` and corrupt them.

    Eligible means non-pad and not [CLS]/[SEP]. A sequence with eligible
    positions but no selection gets one forced pick so it contributes loss;
    sequences with no eligible positions are skipped and counted.

    scheme "mask" replaces every selected position with [MASK]; "bert8010"
    uses the 80/10/10 mask/random/keep split and requires vocab_size for the
    random-replacement draw.
    """
    if not 0.0 < rate < 1.0:
        raise ContractError(f"apply_mlm_mask: rate must be in (0, 1), got {rate}")
    if scheme not in ("mask", "bert8010"):
        raise ContractError(f"apply_mlm_mask: unknown scheme {scheme!r}")
    if scheme == "bert8010" and (vocab_size is None or vocab_size <= len(SPECIALS)):
        raise ContractError("apply_mlm_mask: bert8010 needs vocab_size > 5")
    if rng is None:
        rng = np.random.default_rng()
    ids, mask = batch_arrays(seqs)
    eligible = (mask == 1) & (ids != CLS_ID) & (ids != SEP_ID) & (ids != PAD_ID)

    selected = (rng.random(ids.shape) < rate) & eligible
    n_skipped = 0
    for b in range(ids.shape[0]):
        if not eligible[b].any():
            n_skipped += 1
        elif not selected[b].any():
            choices = np.flatnonzero(eligible[b])
            selected[b, choices[rng.integers(choices.size)]] = True

    rows, cols = np.nonzero(selected)
    targets = ids[rows, cols].copy()
    out = ids.copy()
    if scheme == "mask":
        out[rows, cols] = MASK_ID
    else:
        u = rng.random(rows.size)
        for k in range(rows.size):
            if u[k] < 0.8:
                out[rows[k], cols[k]] = MASK_ID
            elif u[k] < 0.9:
                out[rows[k], cols[k]] = rng.integers(len(SPECIALS), vocab_size)
            # else: keep the original token
    return MaskedBatch(out, mask, rows, cols, targets, n_skipped)
