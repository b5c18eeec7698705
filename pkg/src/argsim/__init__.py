"""Siamese mini-transformer pipeline for sentential-argument similarity:
masked-LM domain adaptation, similarity-regression transfer, curriculum
training, and rank-correlation evaluation."""

__version__ = "0.1.0"

from .curriculum import (
    CurriculumPlan,
    Stage,
    StageLog,
    enumerate_paper_plans,
    plan_of,
    run_curriculum,
    validate_plan,
)
from .datasets import (
    PairDataset,
    SentenceCorpus,
    SynthSpec,
    load_corpus,
    load_nli,
    load_pairs,
    overlap_score,
    synth_generate,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    embed_sentence,
    encode_pooled,
    encode_tokens,
    param_count,
    pool_mean,
)
from .evalkit import (
    EvalReport,
    SweepResult,
    kfold_eval,
    make_folds,
    pearson,
    sample_efficiency_sweep,
    score_pairs,
    spearman,
)
from .numcore import (
    AdamState,
    FiniteDiffReport,
    Graph,
    Tensor,
    adam_step,
    backward,
    clip_gradients,
    finite_diff_check,
    global_grad_norm,
    primitive_forward,
)
from .objectives import (
    NliExample,
    StsExample,
    cosine_similarity,
    mlm_accuracy,
    mlm_loss,
    nli_loss,
    sts_loss,
)
from .textproc import (
    MaskedBatch,
    TokenSeq,
    Vocab,
    apply_mlm_mask,
    build_vocab,
    encode,
    tokenize,
)

__all__ = [
    "AdamState",
    "CurriculumPlan",
    "EncoderConfig",
    "EncoderParams",
    "EvalReport",
    "FiniteDiffReport",
    "Graph",
    "MaskedBatch",
    "NliExample",
    "PairDataset",
    "SentenceCorpus",
    "Stage",
    "StageLog",
    "StsExample",
    "SweepResult",
    "SynthSpec",
    "Tensor",
    "TokenSeq",
    "Vocab",
    "adam_step",
    "apply_mlm_mask",
    "backward",
    "build_vocab",
    "clip_gradients",
    "cosine_similarity",
    "embed_sentence",
    "encode",
    "encode_pooled",
    "encode_tokens",
    "enumerate_paper_plans",
    "finite_diff_check",
    "global_grad_norm",
    "kfold_eval",
    "load_corpus",
    "load_nli",
    "load_pairs",
    "make_folds",
    "mlm_accuracy",
    "mlm_loss",
    "nli_loss",
    "overlap_score",
    "param_count",
    "pearson",
    "plan_of",
    "pool_mean",
    "primitive_forward",
    "run_curriculum",
    "sample_efficiency_sweep",
    "score_pairs",
    "spearman",
    "sts_loss",
    "synth_generate",
    "tokenize",
    "validate_plan",
]
