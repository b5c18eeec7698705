"""File loaders for scored pairs and raw-sentence corpora, plus a synthetic
generator that plants a lexical-overlap similarity signal under domain shift."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ValidationError
from .objectives import NLI_LABELS, SCORE_MAX, NliExample, StsExample
from .seeding import make_rng
from .textproc import tokenize

log = logging.getLogger(__name__)


@dataclass
class PairDataset:
    records: list[StsExample]
    source: str = "unknown"

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class SentenceCorpus:
    sentences: list[str]
    source: str = "unknown"

    def __len__(self) -> int:
        return len(self.sentences)


def load_pairs(path, source: str = "file") -> PairDataset:
    """Parse a 3-column TSV (sentence_a, sentence_b, score); LF or CRLF.

    Malformed lines and out-of-range scores raise with the 1-based line number.
    """
    records: list[StsExample] = []
    with open(path, "r", encoding="utf-8", newline=None) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            a, b, raw_score = cols
            try:
                score = float(raw_score)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: score {raw_score!r} is not a number") from None
            if not 0.0 <= score <= SCORE_MAX:
                raise ValidationError(f"{path}:{lineno}: score {score} outside [0, {SCORE_MAX}]")
            if not a.strip() or not b.strip():
                raise ValidationError(f"{path}:{lineno}: empty sentence")
            records.append(StsExample(a, b, score))
    return PairDataset(records, source=source)


def save_pairs(path, dataset: PairDataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in dataset.records:
            f.write(f"{ex.sentence_a}\t{ex.sentence_b}\t{ex.gold_score}\n")


def load_corpus(path, source: str = "file") -> SentenceCorpus:
    """One sentence per line; blank lines dropped, order preserved."""
    with open(path, "r", encoding="utf-8", newline=None) as f:
        sentences = [line.rstrip("\r\n") for line in f]
    sentences = [s for s in sentences if s.strip()]
    if not sentences:
        log.warning("corpus %s is empty", path)
    return SentenceCorpus(sentences, source=source)


def save_corpus(path, corpus: SentenceCorpus) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in corpus.sentences:
            f.write(s + "\n")


def load_nli(path, source: str = "file") -> list[NliExample]:
    """3-column TSV: premise, hypothesis, label (name or 0/1/2)."""
    label_ids = {name: i for i, name in enumerate(NLI_LABELS)}
    records: list[NliExample] = []
    with open(path, "r", encoding="utf-8", newline=None) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            premise, hypothesis, raw_label = cols
            if raw_label in label_ids:
                label = label_ids[raw_label]
            elif raw_label in ("0", "1", "2"):
                label = int(raw_label)
            else:
                raise ValidationError(f"{path}:{lineno}: unknown label {raw_label!r}")
            records.append(NliExample(premise, hypothesis, label))
    return records


# -----------------------------------------------------------------------------
# Synthetic data with planted similarity structure
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the synthetic generator.

    Tokens come from two disjoint pools (domain-general g###, domain-specific
    d###). Target-side text skews to the specific pool, source-side to the
    general pool, so adapting to target text is a real distribution shift.
    Pair gold = 5 x multiset-Jaccard overlap + N(0, sigma), clamped to [0, 5].
    """

    n_general: int = 80
    n_specific: int = 80
    n_sentences: int = 1000
    n_pairs: int = 2000
    min_sent_len: int = 6
    max_sent_len: int = 14
    specific_ratio_target: float = 0.75
    specific_ratio_source: float = 0.05
    specific_ratio_domain: float = 0.5
    mutate_prob: float = 0.85
    noise_sigma: float = 0.3
    seed: int = 42

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be >= 0")
        if not 1 <= self.min_sent_len <= self.max_sent_len:
            raise InputError("bad sentence length range")
        # sentences draw without replacement inside each pool
        if self.max_sent_len > min(self.n_general, self.n_specific):
            raise InputError(
                f"token pool too small for sentence length {self.max_sent_len} "
                f"(pools: {self.n_general} general, {self.n_specific} specific)"
            )

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def overlap_score(sentence_a: str, sentence_b: str) -> float:
    """5 x Jaccard overlap of the token multisets (the noise-free gold)."""
    ca, cb = Counter(tokenize(sentence_a)), Counter(tokenize(sentence_b))
    union = sum((ca | cb).values())
    if union == 0:
        return 0.0
    return SCORE_MAX * sum((ca & cb).values()) / union


def _pools(spec: SynthSpec) -> tuple[list[str], list[str]]:
    general = [f"g{i:03d}" for i in range(spec.n_general)]
    specific = [f"d{i:03d}" for i in range(spec.n_specific)]
    return general, specific


def _sample_sentence(rng: np.random.Generator, spec: SynthSpec, specific_ratio: float) -> str:
    general, specific = _pools(spec)
    length = int(rng.integers(spec.min_sent_len, spec.max_sent_len + 1))
    n_specific = int(round(length * specific_ratio))
    words = list(rng.choice(specific, size=n_specific, replace=False))
    words += list(rng.choice(general, size=length - n_specific, replace=False))
    rng.shuffle(words)
    return " ".join(words)


def _mutate(rng: np.random.Generator, spec: SynthSpec, sentence: str, specific_ratio: float) -> str:
    words = sentence.split()
    n_replace = int(rng.integers(0, len(words) + 1))
    if n_replace:
        general, specific = _pools(spec)
        idx = rng.choice(len(words), size=n_replace, replace=False)
        for j in idx:
            pool = specific if rng.random() < specific_ratio else general
            words[j] = str(rng.choice(pool))
    rng.shuffle(words)
    return " ".join(words)


def _make_pairs(
    rng: np.random.Generator, spec: SynthSpec, pool: list[str], specific_ratio: float, source: str
) -> PairDataset:
    records = []
    for _ in range(spec.n_pairs):
        a = pool[int(rng.integers(len(pool)))]
        if rng.random() < spec.mutate_prob:
            b = _mutate(rng, spec, a, specific_ratio)
        else:
            b = pool[int(rng.integers(len(pool)))]
        gold = overlap_score(a, b)
        if spec.noise_sigma > 0:
            gold += rng.normal(0.0, spec.noise_sigma)
        records.append(StsExample(a, b, float(np.clip(gold, 0.0, SCORE_MAX))))
    return PairDataset(records, source=source)


def synth_generate(
    spec: SynthSpec,
) -> tuple[SentenceCorpus, SentenceCorpus, PairDataset, PairDataset]:
    """Returns (domain corpus, target corpus, source pairs, target pairs).

    The target corpus holds the sentences appearing in the target pairs (in
    first-use order, deduplicated), mirroring target-side adaptation text.
    Fully determined by spec.seed.
    """
    target_pool = [
        _sample_sentence(make_rng(spec.seed, "target-pool", i), spec, spec.specific_ratio_target)
        for i in range(spec.n_sentences)
    ]
    source_pool = [
        _sample_sentence(make_rng(spec.seed, "source-pool", i), spec, spec.specific_ratio_source)
        for i in range(spec.n_sentences)
    ]
    domain = SentenceCorpus(
        [
            _sample_sentence(make_rng(spec.seed, "domain", i), spec, spec.specific_ratio_domain)
            for i in range(spec.n_sentences)
        ],
        source="synthetic-domain",
    )
    target_pairs = _make_pairs(
        make_rng(spec.seed, "target-pairs"), spec, target_pool, spec.specific_ratio_target,
        source="synthetic-target",
    )
    source_pairs = _make_pairs(
        make_rng(spec.seed, "source-pairs"), spec, source_pool, spec.specific_ratio_source,
        source="synthetic-source",
    )
    seen: dict[str, None] = {}
    for ex in target_pairs.records:
        seen.setdefault(ex.sentence_a)
        seen.setdefault(ex.sentence_b)
    target_corpus = SentenceCorpus(list(seen), source="synthetic-target-sentences")
    return domain, target_corpus, source_pairs, target_pairs
