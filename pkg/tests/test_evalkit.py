import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from argsim.curriculum import CurriculumPlan, plan_of
from argsim.encoder import EncoderParams, embed_sentence
from argsim.errors import ContractError, UndefinedCorrelationError, ValidationError
from argsim.evalkit import (
    DEFAULT_RATIOS,
    EvalReport,
    average_ranks,
    kfold_eval,
    make_folds,
    pearson,
    sample_efficiency_sweep,
    score_pairs,
    spearman,
)
from argsim.objectives import StsExample, cosine_similarity


# -----------------------------------------------------------------------------
# Brute-force oracles
# -----------------------------------------------------------------------------


def pearson_textbook(x, y):
    """n*Sxy - Sx*Sy over the product of root second-moment terms."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = len(x)
    num = n * (x * y).sum() - x.sum() * y.sum()
    den = math.sqrt(n * (x * x).sum() - x.sum() ** 2) * math.sqrt(
        n * (y * y).sum() - y.sum() ** 2
    )
    return num / den


def ranks_by_enumeration(x):
    """Average rank by explicit counting: smaller values and tie spans."""
    x = np.asarray(x, float)
    out = np.empty(len(x))
    for i, v in enumerate(x):
        smaller = float(np.sum(x < v))
        ties = float(np.sum(x == v))
        out[i] = smaller + (ties + 1) / 2.0
    return out


def spearman_bruteforce(x, y):
    return pearson_textbook(ranks_by_enumeration(x), ranks_by_enumeration(y))


# -----------------------------------------------------------------------------
# pearson / spearman
# -----------------------------------------------------------------------------


def test_pearson_identity_is_one():
    x = [1.0, 2.0, 5.0, 7.0]
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)


def test_pearson_perfect_negative():
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_matches_textbook_oracle_on_random_data():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(5, 200))
        x = rng.normal(size=n)
        y = 0.3 * x + rng.normal(size=n)
        assert abs(pearson(x, y) - pearson_textbook(x, y)) < 1e-12


def test_pearson_rejects_constant_input():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_pearson_rejects_short_or_mismatched():
    with pytest.raises(ContractError):
        pearson([1.0], [2.0])
    with pytest.raises(ContractError):
        pearson([1.0, 2.0], [1.0, 2.0, 3.0])


def test_spearman_monotone_is_one():
    x = np.array([0.1, 1.0, 2.0, 9.0])
    assert spearman(x, np.exp(x)) == pytest.approx(1.0, abs=1e-12)


def test_spearman_reversed_is_minus_one():
    x = np.array([4.0, 1.0, 3.0, 2.0])
    assert spearman(x, -x) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_tie_handling_matches_enumeration_oracle():
    x = [1.0, 2.0, 2.0, 3.0]
    y = [1.0, 2.0, 3.0, 4.0]
    np.testing.assert_allclose(average_ranks(x), ranks_by_enumeration(x))
    assert abs(spearman(x, y) - spearman_bruteforce(x, y)) < 1e-12


def test_spearman_matches_bruteforce_with_random_ties():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(5, 200))
        x = rng.integers(0, 8, size=n).astype(float)  # many ties
        y = rng.integers(0, 8, size=n).astype(float)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert abs(spearman(x, y) - spearman_bruteforce(x, y)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-500, 500), min_size=3, max_size=30, unique=True))
def test_metric_symmetry_and_invariance(xs):
    # integer grid: exp(x/50) stays strictly monotone in floats
    rng = np.random.default_rng(len(xs))
    x = np.array(xs, dtype=float) * 0.1
    y = x * 0.5 + rng.normal(size=len(x))
    if len(set(y)) < 2:
        return
    assert pearson(x, y) == pytest.approx(pearson(y, x), abs=1e-12)
    assert spearman(x, y) == pytest.approx(spearman(y, x), abs=1e-12)
    # positive affine map leaves pearson unchanged
    assert pearson(3.0 * x + 7.0, y) == pytest.approx(pearson(x, y), abs=1e-12)
    # strictly monotone map leaves spearman unchanged exactly (rank identity)
    assert spearman(np.exp(x / 50.0), y) == spearman(x, y)


# -----------------------------------------------------------------------------
# score_pairs / make_folds
# -----------------------------------------------------------------------------


def test_score_pairs_self_pair_is_one(small_synth):
    cfg, vocab = small_synth["config"], small_synth["vocab"]
    params = EncoderParams.init(cfg, 0)
    s = small_synth["pairs"][0].sentence_a
    preds = score_pairs(params, cfg, vocab, [StsExample(s, s, 5.0)])
    assert preds[0] == pytest.approx(1.0, abs=1e-12)


def test_score_pairs_matches_composition_oracle(small_synth):
    cfg, vocab = small_synth["config"], small_synth["vocab"]
    params = EncoderParams.init(cfg, 0)
    pairs = small_synth["pairs"][:8]
    preds = score_pairs(params, cfg, vocab, pairs)
    assert preds.shape == (8,)
    for ex, pred in zip(pairs, preds):
        u = embed_sentence(params, cfg, vocab, ex.sentence_a)
        v = embed_sentence(params, cfg, vocab, ex.sentence_b)
        assert pred == cosine_similarity(u, v)


def test_make_folds_partition_properties():
    folds = make_folds(6000, 10, seed=42)
    assert [len(f) for f in folds] == [600] * 10
    joined = np.concatenate(folds)
    assert len(np.unique(joined)) == 6000  # disjoint and complete


def test_make_folds_uneven_sizes_differ_by_at_most_one():
    folds = make_folds(103, 10, seed=0)
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == 103


def test_make_folds_requires_enough_items():
    with pytest.raises(ContractError):
        make_folds(5, 10, seed=0)


# -----------------------------------------------------------------------------
# kfold_eval
# -----------------------------------------------------------------------------


def test_kfold_unsupervised_report_shape(small_synth):
    cfg, vocab, datasets = small_synth["config"], small_synth["vocab"], small_synth["datasets"]
    report = kfold_eval(small_synth["pairs"], plan_of([]), cfg, vocab, datasets, k=10, seed=42)
    assert len(report.per_fold) + len(report.excluded) == 10
    assert report.n_pairs == len(small_synth["pairs"])
    assert report.plan == "identity"
    # means equal the average of the per-fold entries
    assert report.pearson_r == pytest.approx(np.mean([f.pearson_r for f in report.per_fold]))
    assert report.spearman_rho == pytest.approx(np.mean([f.spearman_rho for f in report.per_fold]))
    for f in report.per_fold:
        assert abs(f.pearson_r) <= 1.0 and abs(f.spearman_rho) <= 1.0


def test_kfold_reproducible_end_to_end(small_synth):
    cfg, vocab, datasets = small_synth["config"], small_synth["vocab"], small_synth["datasets"]
    plan = plan_of(["STS_tgt"], epochs=1, lr=1e-3)
    r1 = kfold_eval(small_synth["pairs"], plan, cfg, vocab, datasets, k=5, supervised=True, seed=42)
    r2 = kfold_eval(small_synth["pairs"], plan, cfg, vocab, datasets, k=5, supervised=True, seed=42)
    assert r1.to_json() == r2.to_json()


def test_kfold_supervised_requires_final_target_stage(small_synth):
    cfg, vocab, datasets = small_synth["config"], small_synth["vocab"], small_synth["datasets"]
    with pytest.raises(ValidationError, match="STS_tgt"):
        kfold_eval(small_synth["pairs"], plan_of(["MLM_tgt"], epochs=1), cfg, vocab, datasets,
                   supervised=True)


def test_kfold_unsupervised_rejects_target_stage(small_synth):
    cfg, vocab, datasets = small_synth["config"], small_synth["vocab"], small_synth["datasets"]
    with pytest.raises(ValidationError, match="STS_tgt"):
        kfold_eval(small_synth["pairs"], plan_of(["STS_tgt"]), cfg, vocab, datasets,
                   supervised=False)


def test_kfold_constant_gold_folds_are_excluded(small_synth):
    cfg, vocab, datasets = small_synth["config"], small_synth["vocab"], small_synth["datasets"]
    sentences = [ex.sentence_a for ex in small_synth["pairs"][:30]]
    self_pairs = [StsExample(s, s, 5.0) for s in sentences]
    report = kfold_eval(self_pairs, plan_of([]), cfg, vocab, datasets, k=10, seed=42)
    assert report.per_fold == []
    assert len(report.excluded) == 10
    assert report.pearson_r is None and report.spearman_rho is None


def test_kfold_planted_structure_recovery(small_synth):
    # gold equals the lexical-overlap oracle exactly (zero noise); a single
    # supervised stage must push mean rank correlation past 0.8
    from argsim.datasets import SynthSpec, synth_generate
    from argsim.textproc import build_vocab
    from argsim.encoder import EncoderConfig

    spec = SynthSpec(n_general=50, n_specific=50, n_sentences=100, n_pairs=200,
                     min_sent_len=5, max_sent_len=10, noise_sigma=0.0, seed=13)
    _, target_corpus, _, target_pairs = synth_generate(spec)
    vocab = build_vocab(target_corpus.sentences)
    cfg = EncoderConfig(vocab_size=len(vocab), max_len=12)
    plan = plan_of(["STS_tgt"], epochs=10, lr=1e-3)
    report = kfold_eval(target_pairs.records, plan, cfg, vocab,
                        {"target_pairs": target_pairs}, k=10, supervised=True, seed=42)
    assert report.spearman_rho is not None and report.spearman_rho > 0.8


# -----------------------------------------------------------------------------
# sample_efficiency_sweep
# -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_setup(request):
    from argsim.datasets import SynthSpec, synth_generate
    from argsim.textproc import build_vocab
    from argsim.encoder import EncoderConfig

    spec = SynthSpec(n_general=40, n_specific=40, n_sentences=80, n_pairs=120,
                     min_sent_len=4, max_sent_len=8, seed=21)
    _, target_corpus, _, target_pairs = synth_generate(spec)
    vocab = build_vocab(target_corpus.sentences)
    cfg = EncoderConfig(vocab_size=len(vocab), hidden_size=16, num_heads=2,
                        ff_size=32, max_len=10)
    return cfg, vocab, target_pairs


def test_sweep_grid_and_monotone_endpoint(sweep_setup):
    cfg, vocab, target_pairs = sweep_setup
    plan = plan_of(["STS_tgt"], epochs=2, lr=1e-3)
    result = sample_efficiency_sweep(
        target_pairs.records, plan, cfg, vocab, {"target_pairs": target_pairs},
        k=10, seed=42,
    )
    assert [p.ratio for p in result.points] == list(DEFAULT_RATIOS)
    assert len(result.points) == 10
    # more labeled data helps on planted structure
    assert result.points[-1].spearman_rho >= result.points[0].spearman_rho


def test_sweep_full_ratio_point_equals_plain_kfold(sweep_setup):
    cfg, vocab, target_pairs = sweep_setup
    plan = plan_of(["STS_tgt"], epochs=1, lr=1e-3)
    result = sample_efficiency_sweep(
        target_pairs.records, plan, cfg, vocab, {"target_pairs": target_pairs},
        ratios=(0.5, 1.0), k=5, seed=42,
    )
    report = kfold_eval(target_pairs.records, plan, cfg, vocab,
                        {"target_pairs": target_pairs}, k=5, supervised=True, seed=42)
    last = result.points[-1]
    assert last.ratio == 1.0
    assert last.pearson_r == report.pearson_r  # bit-exact
    assert last.spearman_rho == report.spearman_rho


def test_sweep_rejects_bad_ratio_grid(sweep_setup):
    cfg, vocab, target_pairs = sweep_setup
    plan = plan_of(["STS_tgt"], epochs=1)
    with pytest.raises(ContractError):
        sample_efficiency_sweep(target_pairs.records, plan, cfg, vocab,
                                {"target_pairs": target_pairs}, ratios=(0.5, 0.2))
    with pytest.raises(ContractError):
        sample_efficiency_sweep(target_pairs.records, plan, cfg, vocab,
                                {"target_pairs": target_pairs}, ratios=(0.1, 1.5))


def test_sweep_csv_round_trips_to_json_values(sweep_setup):
    cfg, vocab, target_pairs = sweep_setup
    plan = plan_of(["STS_tgt"], epochs=1, lr=1e-3)
    result = sample_efficiency_sweep(
        target_pairs.records, plan, cfg, vocab, {"target_pairs": target_pairs},
        ratios=(0.5, 1.0), k=5, seed=42,
    )
    lines = result.to_csv().strip().splitlines()
    assert lines[0] == "ratio,pearson,spearman"
    parsed = [tuple(float(v) for v in line.split(",")) for line in lines[1:]]
    from_json = json.loads(result.to_json())["points"]
    assert parsed == [(p["ratio"], p["pearson_r"], p["spearman_rho"]) for p in from_json]


# -----------------------------------------------------------------------------
# report serialization
# -----------------------------------------------------------------------------


def test_eval_report_json_round_trip(small_synth):
    cfg, vocab, datasets = small_synth["config"], small_synth["vocab"], small_synth["datasets"]
    report = kfold_eval(small_synth["pairs"], plan_of([]), cfg, vocab, datasets, k=5, seed=7)
    again = EvalReport.from_dict(json.loads(report.to_json()))
    assert again.to_json() == report.to_json()
