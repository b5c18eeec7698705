import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from argsim import numcore as nc
from argsim.encoder import EncoderConfig, EncoderParams, embed_sentence, encode_pooled
from argsim.errors import ContractError, InputError, NumericError
from argsim.numcore import Graph, Tensor, backward, finite_diff_check
from argsim.objectives import (
    NliExample,
    StsExample,
    cosine_similarity,
    init_nli_classifier,
    mlm_accuracy,
    mlm_loss,
    nli_loss,
    sts_loss,
)
from argsim.seeding import make_rng
from argsim.textproc import apply_mlm_mask, build_vocab, encode

CORPUS = [
    "the gun law helps people",
    "the death penalty is wrong",
    "marriage is a human right",
    "people argue about gun laws",
]


@pytest.fixture(scope="module")
def setup():
    vocab = build_vocab(CORPUS)
    cfg = EncoderConfig(vocab_size=len(vocab), num_layers=1, hidden_size=8,
                        num_heads=2, ff_size=12, max_len=10, dropout=0.0)
    params = EncoderParams.init(cfg, seed=42)
    return vocab, cfg, params


def masked_batch(vocab, cfg, texts, seed=1, rate=0.3):
    seqs = [encode(t, vocab, cfg.max_len) for t in texts]
    return apply_mlm_mask(seqs, rate=rate, rng=np.random.default_rng(seed))


# -----------------------------------------------------------------------------
# cosine_similarity
# -----------------------------------------------------------------------------


def test_cosine_self_is_one():
    v = np.array([0.3, -1.2, 4.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal_is_zero():
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_analytic_value():
    assert cosine_similarity([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2), rel=1e-12)


def test_cosine_rejects_zero_vector():
    with pytest.raises(NumericError):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=8),
    st.floats(0.01, 100.0),
    st.floats(0.01, 100.0),
)
def test_cosine_bounded_and_scale_invariant(values, alpha, beta):
    u = np.array(values)
    v = u[::-1].copy() + 0.5
    if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
        return  # well-scaled vectors only; underflow voids the 1e-12 bound
    c = cosine_similarity(u, v)
    assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12
    assert cosine_similarity(alpha * u, beta * v) == pytest.approx(c, abs=1e-12)


# -----------------------------------------------------------------------------
# mlm_loss
# -----------------------------------------------------------------------------


def test_mlm_uniform_logits_give_log_vocab(setup):
    vocab, cfg, _ = setup
    # all-zero parameters produce all-zero logits -> uniform over the vocab
    zero = EncoderParams(
        {name: Tensor(np.zeros_like(t.data), requires_grad=True)
         for name, t in EncoderParams.init(cfg, 0).items()}
    )
    masked = masked_batch(vocab, cfg, CORPUS[:2])
    loss = mlm_loss(zero, cfg, masked)
    assert loss.item() == pytest.approx(math.log(cfg.vocab_size), rel=1e-12)


def test_mlm_untrained_near_log_vocab(setup):
    vocab, cfg, params = setup
    masked = masked_batch(vocab, cfg, CORPUS)
    loss = mlm_loss(params, cfg, masked)
    assert abs(loss.item() - math.log(cfg.vocab_size)) / math.log(cfg.vocab_size) < 0.05


def test_mlm_confident_model_loss_near_zero(setup):
    vocab, cfg, _ = setup
    masked = masked_batch(vocab, cfg, CORPUS[:1], rate=0.4)
    params = EncoderParams.init(cfg, 3)

    # drive the logit of each true target very high through the output bias of
    # that token: with zeroed encoder the bias dominates the softmax
    for name, t in params.items():
        t.data[:] = 0.0
    bias = params["out_bias"].data
    for tid in masked.target_ids:
        bias[tid] = 50.0
    loss = mlm_loss(params, cfg, masked)
    if len(set(masked.target_ids.tolist())) == 1:
        assert loss.item() < 1e-6
    else:
        assert loss.item() < 1.0  # split mass between the boosted ids


def test_mlm_matches_loop_cross_entropy_oracle(setup):
    vocab, cfg, params = setup
    masked = masked_batch(vocab, cfg, CORPUS, seed=9)
    loss = mlm_loss(params, cfg, masked)

    # independent recomputation: raw logits from the forward pieces, then a
    # scalar log-softmax cross-entropy per target position
    from argsim.encoder import encode_tokens

    states = encode_tokens(params, cfg, masked.input_ids, masked.attention_mask)
    total = 0.0
    for b, t, tid in zip(masked.rows, masked.cols, masked.target_ids):
        logits = states.data[b, t] @ params["tok_emb"].data.T + params["out_bias"].data
        m = logits.max()
        total += math.log(np.exp(logits - m).sum()) + m - logits[tid]
    np.testing.assert_allclose(loss.item(), total / masked.n_targets, rtol=1e-12)


def test_mlm_rejects_zero_targets(setup):
    vocab, cfg, params = setup
    seqs = [encode("", vocab, cfg.max_len)]
    masked = apply_mlm_mask(seqs, rng=np.random.default_rng(0))
    with pytest.raises(ContractError):
        mlm_loss(params, cfg, masked)


def test_mlm_gradients_match_finite_differences(setup):
    vocab, cfg, params = setup
    masked = masked_batch(vocab, cfg, CORPUS[:2])
    report = finite_diff_check(lambda: mlm_loss(params, cfg, masked), params)
    assert report.ok, report.violations[:3]
    assert report.max_rel_error < 1e-4


def test_mlm_accuracy_counts_argmax_hits(setup):
    vocab, cfg, _ = setup
    masked = masked_batch(vocab, cfg, CORPUS[:1], rate=0.4)
    params = EncoderParams.init(cfg, 3)
    for name, t in params.items():
        t.data[:] = 0.0
    params["out_bias"].data[masked.target_ids[0]] = 50.0
    acc = mlm_accuracy(params, cfg, masked)
    expected = float(np.mean(masked.target_ids == masked.target_ids[0]))
    assert acc == pytest.approx(expected)


# -----------------------------------------------------------------------------
# sts_loss
# -----------------------------------------------------------------------------


def test_sts_self_pair_gold5_contributes_zero(setup):
    vocab, cfg, params = setup
    batch = [StsExample(CORPUS[0], CORPUS[0], 5.0)]
    loss = sts_loss(params, cfg, vocab, batch)
    assert loss.item() == pytest.approx(0.0, abs=1e-20)


def test_sts_orthogonal_prediction_against_gold5():
    # direct check of the per-pair form: (cos - gold/5)^2 with cos = 0
    # exercised through the op pipeline on crafted embeddings
    u = Tensor(np.array([[1.0, 0.0]]))
    v = Tensor(np.array([[0.0, 1.0]]))
    from argsim.objectives import _cosine_rows

    cos = _cosine_rows(u, v)
    target = Tensor(np.array([1.0]))
    resid = nc.sub(cos, target)
    loss = nc.mean_all(nc.mul(resid, resid))
    assert loss.item() == pytest.approx(1.0, rel=1e-15)


def test_sts_matches_composition_oracle(setup):
    vocab, cfg, params = setup
    batch = [
        StsExample(CORPUS[0], CORPUS[1], 2.0),
        StsExample(CORPUS[2], CORPUS[3], 1.0),
        StsExample(CORPUS[0], CORPUS[0], 5.0),
    ]
    loss = sts_loss(params, cfg, vocab, batch)
    total = 0.0
    for ex in batch:
        u = embed_sentence(params, cfg, vocab, ex.sentence_a)
        v = embed_sentence(params, cfg, vocab, ex.sentence_b)
        total += (cosine_similarity(u, v) - ex.gold_score / 5.0) ** 2
    np.testing.assert_allclose(loss.item(), total / len(batch), rtol=1e-12)


def test_sts_loss_nonnegative_property(setup):
    vocab, cfg, params = setup
    rng = np.random.default_rng(0)
    words = [w for s in CORPUS for w in s.split()]
    for _ in range(5):
        batch = [
            StsExample(
                " ".join(rng.choice(words, 3)),
                " ".join(rng.choice(words, 4)),
                float(rng.uniform(0, 5)),
            )
        ]
        assert sts_loss(params, cfg, vocab, batch).item() >= 0.0


def test_sts_rejects_empty_batch(setup):
    vocab, cfg, params = setup
    with pytest.raises(ContractError):
        sts_loss(params, cfg, vocab, [])


def test_sts_gradients_match_finite_differences(setup):
    vocab, cfg, params = setup
    batch = [StsExample(CORPUS[0], CORPUS[1], 2.0), StsExample(CORPUS[2], CORPUS[2], 5.0)]
    report = finite_diff_check(lambda: sts_loss(params, cfg, vocab, batch), params)
    assert report.ok, report.violations[:3]


def test_sts_example_validates_score_range():
    with pytest.raises(InputError):
        StsExample("a", "b", 5.5)
    with pytest.raises(InputError):
        StsExample("", "b", 1.0)


# -----------------------------------------------------------------------------
# nli_loss
# -----------------------------------------------------------------------------


def test_nli_zero_classifier_gives_log3(setup):
    vocab, cfg, params = setup
    clf = Tensor(np.zeros((3, 3 * cfg.hidden_size)), requires_grad=True)
    batch = [NliExample(CORPUS[0], CORPUS[1], 0), NliExample(CORPUS[2], CORPUS[3], 2)]
    loss = nli_loss(params, cfg, vocab, clf, batch)
    assert loss.item() == pytest.approx(math.log(3), rel=1e-12)


def test_nli_confident_classifier_loss_near_zero(setup):
    vocab, cfg, params = setup
    batch = [NliExample(CORPUS[0], CORPUS[1], 1)]
    u = encode_pooled(params, cfg, [encode(CORPUS[0], vocab, cfg.max_len)]).data[0]
    v = encode_pooled(params, cfg, [encode(CORPUS[1], vocab, cfg.max_len)]).data[0]
    feat = np.concatenate([u, v, np.abs(u - v)])
    clf = np.zeros((3, 3 * cfg.hidden_size))
    clf[1] = 1000.0 * feat / (feat @ feat)  # huge margin for the true class
    loss = nli_loss(params, cfg, vocab, Tensor(clf, requires_grad=True), batch)
    assert loss.item() < 1e-6


def test_nli_matches_feature_construction_oracle(setup):
    vocab, cfg, params = setup
    rng = make_rng(0, "clf")
    clf = init_nli_classifier(cfg, rng)
    batch = [
        NliExample(CORPUS[0], CORPUS[1], 0),
        NliExample(CORPUS[2], CORPUS[3], 1),
        NliExample(CORPUS[1], CORPUS[2], 2),
    ]
    loss = nli_loss(params, cfg, vocab, clf, batch)

    total = 0.0
    for ex in batch:
        u = embed_sentence(params, cfg, vocab, ex.premise)
        v = embed_sentence(params, cfg, vocab, ex.hypothesis)
        feat = np.concatenate([u, v, np.abs(u - v)])
        logits = clf.data @ feat
        m = logits.max()
        total += math.log(np.exp(logits - m).sum()) + m - logits[ex.label]
    np.testing.assert_allclose(loss.item(), total / len(batch), rtol=1e-12)


def test_nli_rejects_bad_classifier_shape(setup):
    vocab, cfg, params = setup
    with pytest.raises(ContractError):
        nli_loss(params, cfg, vocab, Tensor(np.zeros((3, 5))), [NliExample("a", "b", 0)])


def test_nli_gradients_match_finite_differences(setup):
    vocab, cfg, params = setup
    clf = init_nli_classifier(cfg, make_rng(3, "clf"))
    batch = [NliExample(CORPUS[0], CORPUS[1], 0), NliExample(CORPUS[2], CORPUS[3], 2)]
    trainable = dict(params.items())
    trainable["nli_head"] = clf
    report = finite_diff_check(
        lambda: nli_loss(params, cfg, vocab, clf, batch), trainable
    )
    assert report.ok, report.violations[:3]


def test_nli_example_validates_label():
    with pytest.raises(InputError):
        NliExample("a", "b", 3)
