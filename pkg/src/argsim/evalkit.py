"""Correlation metrics, pairwise scoring, 10-fold cross-validation, and the
labeled-data-ratio sweep."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .curriculum import CurriculumPlan, run_curriculum, validate_plan
from .datasets import PairDataset
from .encoder import EncoderConfig, EncoderParams, embed_sentence
from .errors import ContractError, UndefinedCorrelationError, ValidationError
from .objectives import StsExample, cosine_similarity
from .seeding import derive_seed, make_rng
from .textproc import Vocab

log = logging.getLogger(__name__)

DEFAULT_RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 11))


# -----------------------------------------------------------------------------
# Correlation metrics
# -----------------------------------------------------------------------------


def _as_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ContractError(f"correlation: need equal-length 1-d inputs, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ContractError("correlation: need at least 2 observations")
    return x, y


def pearson(x, y) -> float:
    """Sample linear correlation, two-pass (means first, then centered products)."""
    x, y = _as_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("pearson: constant input")
    return float((xc * yc).sum() / (sx * sy))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; ties get the mean of their rank span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation: pearson of average ranks."""
    x, y = _as_pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


# -----------------------------------------------------------------------------
# Scoring and fold construction
# -----------------------------------------------------------------------------


def score_pairs(
    params: EncoderParams, config: EncoderConfig, vocab: Vocab, pairs: list[StsExample]
) -> np.ndarray:
    """Inference-mode cosine of the pooled embeddings, one value per pair."""
    preds = np.empty(len(pairs), dtype=np.float64)
    for i, ex in enumerate(pairs):
        u = embed_sentence(params, config, vocab, ex.sentence_a)
        v = embed_sentence(params, config, vocab, ex.sentence_b)
        preds[i] = cosine_similarity(u, v)
    return preds


def make_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous split into k folds (sizes differ by <= 1)."""
    if n < k:
        raise ContractError(f"make_folds: need at least k={k} items, got {n}")
    perm = make_rng(seed, "cv-shuffle").permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(perm[start:start + size])
        start += size
    return folds


# -----------------------------------------------------------------------------
# Reports
# -----------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    n_pairs: int
    pearson_r: float
    spearman_rho: float


@dataclass
class EvalReport:
    """Cross-validated correlations; means are over the non-excluded folds."""

    pearson_r: float | None
    spearman_rho: float | None
    per_fold: list[FoldResult]
    excluded: list[tuple[int, str]]
    n_pairs: int
    k: int
    plan: str
    supervised: bool
    seed: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pearson_r": self.pearson_r,
            "spearman_rho": self.spearman_rho,
            "per_fold": [
                {"fold": f.fold, "n_pairs": f.n_pairs,
                 "pearson_r": f.pearson_r, "spearman_rho": f.spearman_rho}
                for f in self.per_fold
            ],
            "excluded": [{"fold": i, "reason": why} for i, why in self.excluded],
            "n_pairs": self.n_pairs,
            "k": self.k,
            "plan": self.plan,
            "supervised": self.supervised,
            "seed": self.seed,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            pearson_r=d["pearson_r"],
            spearman_rho=d["spearman_rho"],
            per_fold=[FoldResult(f["fold"], f["n_pairs"], f["pearson_r"], f["spearman_rho"])
                      for f in d["per_fold"]],
            excluded=[(e["fold"], e["reason"]) for e in d["excluded"]],
            n_pairs=d["n_pairs"],
            k=d["k"],
            plan=d["plan"],
            supervised=d["supervised"],
            seed=d["seed"],
            meta=d.get("meta", {}),
        )


@dataclass
class SweepPoint:
    ratio: float
    pearson_r: float | None
    spearman_rho: float | None


@dataclass
class SweepResult:
    points: list[SweepPoint]
    baseline_rho: float | None
    plan: str
    k: int
    seed: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "points": [
                {"ratio": p.ratio, "pearson_r": p.pearson_r, "spearman_rho": p.spearman_rho}
                for p in self.points
            ],
            "baseline_rho": self.baseline_rho,
            "plan": self.plan,
            "k": self.k,
            "seed": self.seed,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["ratio,pearson,spearman"]
        for p in self.points:
            lines.append(f"{p.ratio!r},{p.pearson_r!r},{p.spearman_rho!r}")
        return "\n".join(lines) + "\n"


# -----------------------------------------------------------------------------
# Cross-validated evaluation
# -----------------------------------------------------------------------------


def _split_plan(plan: CurriculumPlan, supervised: bool):
    violation = validate_plan(plan)
    if violation:
        raise ValidationError(f"invalid plan: {violation}")
    names = [s.name for s in plan.stages]
    if supervised:
        if not names or names[-1] != "STS_tgt":
            raise ValidationError("supervised evaluation needs STS_tgt as the final stage")
        return CurriculumPlan(plan.stages[:-1], plan.base_seed), plan.stages[-1]
    if "STS_tgt" in names:
        raise ValidationError("unsupervised evaluation must not include STS_tgt")
    return plan, None


def kfold_eval(
    pairs: list[StsExample],
    plan: CurriculumPlan,
    config: EncoderConfig,
    vocab: Vocab,
    datasets: dict,
    k: int = 10,
    supervised: bool = False,
    seed: int = 42,
    params: EncoderParams | None = None,
    train_ratio: float = 1.0,
) -> EvalReport:
    """Cross-validated correlation of pair predictions against gold scores.

    The adaptation stages are fold-independent, so they run once; in the
    supervised setting the final STS_tgt stage is then fine-tuned per fold on
    the other k-1 folds (optionally only the first floor(train_ratio * n)
    pairs of the shuffled training split) and scored on the held-out fold.
    Folds whose golds or predictions are constant are excluded from the means
    and listed in the report.
    """
    if len(pairs) < k:
        raise ContractError(f"kfold_eval: need at least k={k} pairs, got {len(pairs)}")
    if not 0.0 < train_ratio <= 1.0:
        raise ContractError(f"kfold_eval: train_ratio must be in (0, 1], got {train_ratio}")
    shared_plan, ft_stage = _split_plan(plan, supervised)

    base = params.copy() if params is not None else EncoderParams.init(config, seed)
    trained, _ = run_curriculum(shared_plan, base, config, vocab, datasets)

    folds = make_folds(len(pairs), k, seed)
    all_idx = np.concatenate(folds)
    assert len(np.unique(all_idx)) == len(pairs) == all_idx.size, "folds must partition the pairs"

    per_fold: list[FoldResult] = []
    excluded: list[tuple[int, str]] = []
    for i, fold in enumerate(folds):
        if supervised:
            train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
            n_keep = int(np.floor(train_ratio * train_idx.size))
            if n_keep < 1:
                raise ContractError(f"kfold_eval: train_ratio {train_ratio} keeps no pairs")
            train_records = [pairs[j] for j in train_idx[:n_keep]]
            fold_params = trained.copy()
            fold_plan = CurriculumPlan([ft_stage], base_seed=derive_seed(seed, "fold", i))
            run_curriculum(
                fold_plan, fold_params, config, vocab,
                {**datasets, ft_stage.dataset: PairDataset(train_records, source="cv-train")},
                stage_offset=len(shared_plan.stages),
            )
        else:
            fold_params = trained
        held_out = [pairs[j] for j in fold]
        preds = score_pairs(fold_params, config, vocab, held_out)
        golds = np.array([ex.gold_score for ex in held_out])
        try:
            r = pearson(golds, preds)
            rho = spearman(golds, preds)
        except UndefinedCorrelationError as err:
            excluded.append((i, str(err)))
            continue
        per_fold.append(FoldResult(i, len(held_out), r, rho))

    if per_fold:
        mean_r = float(np.mean([f.pearson_r for f in per_fold]))
        mean_rho = float(np.mean([f.spearman_rho for f in per_fold]))
    else:
        mean_r = mean_rho = None
    return EvalReport(
        pearson_r=mean_r,
        spearman_rho=mean_rho,
        per_fold=per_fold,
        excluded=excluded,
        n_pairs=len(pairs),
        k=k,
        plan=plan.describe(),
        supervised=supervised,
        seed=seed,
    )


def sample_efficiency_sweep(
    pairs: list[StsExample],
    plan: CurriculumPlan,
    config: EncoderConfig,
    vocab: Vocab,
    datasets: dict,
    ratios: tuple[float, ...] = DEFAULT_RATIOS,
    k: int = 10,
    seed: int = 42,
    params: EncoderParams | None = None,
    baseline_rho: float | None = None,
) -> SweepResult:
    """Supervised k-fold evaluation at growing labeled-data ratios.

    Subsets nest across ratios (prefixes of one seeded shuffle), so the curve
    isolates data quantity. The ratio-1.0 point is exactly plain supervised
    kfold_eval.
    """
    ratios = tuple(float(r) for r in ratios)
    if list(ratios) != sorted(set(ratios)) or not ratios:
        raise ContractError("sweep: ratios must be ascending and distinct")
    if ratios[0] <= 0.0 or ratios[-1] > 1.0:
        raise ContractError("sweep: ratios must lie in (0, 1]")
    points: list[SweepPoint] = []
    for ratio in ratios:
        min_train = len(pairs) - max(len(f) for f in make_folds(len(pairs), k, seed))
        if int(np.floor(ratio * min_train)) < 1:
            log.warning("sweep: ratio %.2f keeps no training pairs, skipping", ratio)
            continue
        report = kfold_eval(
            pairs, plan, config, vocab, datasets,
            k=k, supervised=True, seed=seed, params=params, train_ratio=ratio,
        )
        points.append(SweepPoint(ratio, report.pearson_r, report.spearman_rho))
    return SweepResult(
        points=points,
        baseline_rho=baseline_rho,
        plan=plan.describe(),
        k=k,
        seed=seed,
    )
