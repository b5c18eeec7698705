import numpy as np
import pytest

from argsim.datasets import SynthSpec, synth_generate
from argsim.encoder import EncoderConfig, EncoderParams
from argsim.textproc import build_vocab

TINY_CORPUS = [
    "the gun law helps people",
    "the death penalty is wrong",
    "marriage is a human right",
    "people argue about gun laws",
]


@pytest.fixture(scope="session")
def tiny_vocab():
    return build_vocab(TINY_CORPUS)


@pytest.fixture(scope="session")
def tiny_config(tiny_vocab):
    return EncoderConfig(
        vocab_size=len(tiny_vocab),
        num_layers=1,
        hidden_size=8,
        num_heads=2,
        ff_size=12,
        max_len=10,
        dropout=0.0,
    )


@pytest.fixture()
def tiny_params(tiny_config):
    return EncoderParams.init(tiny_config, seed=42)


@pytest.fixture(scope="session")
def small_synth():
    """Small planted-structure dataset shared by training-flavored tests."""
    spec = SynthSpec(
        n_general=40, n_specific=40, n_sentences=120, n_pairs=160,
        min_sent_len=4, max_sent_len=8, seed=7,
    )
    domain, target_corpus, source_pairs, target_pairs = synth_generate(spec)
    corpus = (
        domain.sentences
        + target_corpus.sentences
        + [s for ex in source_pairs.records for s in (ex.sentence_a, ex.sentence_b)]
    )
    vocab = build_vocab(corpus)
    config = EncoderConfig(vocab_size=len(vocab), hidden_size=16, num_heads=2,
                           ff_size=32, max_len=12)
    datasets = {
        "domain_corpus": domain,
        "target_corpus": target_corpus,
        "source_pairs": source_pairs,
        "target_pairs": target_pairs,
    }
    return {"spec": spec, "vocab": vocab, "config": config, "datasets": datasets,
            "pairs": target_pairs.records}
