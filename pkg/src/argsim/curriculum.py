"""Training stages, plan validation, and sequential plan execution.

A plan is an ordered stage list applied to one parameter set: each stage
fine-tunes the params the previous stage produced, with a fresh optimizer and
its own seed-derived shuffle/mask/dropout streams. Domain-corpus masked-LM
adaptation, when present, must come first; target-pair fine-tuning, when
present, must come last.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .datasets import PairDataset, SentenceCorpus
from .encoder import EncoderConfig, EncoderParams
from .errors import ConfigError, ValidationError
from .numcore import AdamState, Graph, Tensor, adam_step, backward, clip_gradients
from .objectives import NliExample, init_nli_classifier, mlm_loss, nli_loss, sts_loss
from .seeding import make_rng
from .textproc import Vocab, apply_mlm_mask, encode

STAGE_NAMES = ("MLM_domain", "MLM_tgt", "STS_src", "STS_tgt", "NLI_src", "MLM_src")

_DEFAULT_EPOCHS = {
    "MLM_tgt": 10,
    "MLM_domain": 5,
    "STS_src": 5,
    "STS_tgt": 5,
    "NLI_src": 3,
    "MLM_src": 5,
}
_DEFAULT_DATASET = {
    "MLM_domain": "domain_corpus",
    "MLM_tgt": "target_corpus",
    "STS_src": "source_pairs",
    "STS_tgt": "target_pairs",
    "NLI_src": "nli_pairs",
    "MLM_src": "source_corpus",
}

MAX_GRAD_NORM = 1.0
MLM_MASK_RATE = 0.15


@dataclass(frozen=True)
class Stage:
    """One training stage; objective kind follows from the name prefix."""

    name: str
    dataset: str = ""
    epochs: int = 0
    batch_size: int = 16
    lr: float = 2e-5
    mask_scheme: str = "mask"  # masked-LM stages only; "bert8010" enables 80/10/10

    def __post_init__(self):
        if self.name not in STAGE_NAMES:
            raise ValidationError(f"unknown stage name {self.name!r}; expected one of {STAGE_NAMES}")
        if not self.dataset:
            object.__setattr__(self, "dataset", _DEFAULT_DATASET[self.name])
        if self.epochs == 0:
            object.__setattr__(self, "epochs", _DEFAULT_EPOCHS[self.name])
        if self.epochs < 1:
            raise ValidationError(f"stage {self.name}: epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError(f"stage {self.name}: batch_size must be >= 1")
        if self.lr <= 0:
            raise ValidationError(f"stage {self.name}: lr must be > 0")

    @property
    def objective(self) -> str:
        return self.name.split("_")[0].lower()  # mlm | sts | nli

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "mask_scheme": self.mask_scheme,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Stage":
        return cls(
            name=d["name"],
            dataset=d.get("dataset", ""),
            epochs=d.get("epochs", 0),
            batch_size=d.get("batch_size", 16),
            lr=d.get("lr", 2e-5),
            mask_scheme=d.get("mask_scheme", "mask"),
        )


@dataclass(frozen=True)
class CurriculumPlan:
    stages: tuple[Stage, ...]
    base_seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def describe(self) -> str:
        return "->".join(s.name for s in self.stages) if self.stages else "identity"

    def to_json(self) -> str:
        return json.dumps([s.to_dict() for s in self.stages], indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, base_seed: int = 42) -> "CurriculumPlan":
        records = json.loads(text)
        if not isinstance(records, list):
            raise ValidationError("plan file must be a JSON list of stage records")
        return cls([Stage.from_dict(r) for r in records], base_seed=base_seed)


def plan_of(names, base_seed: int = 42, **stage_kwargs) -> CurriculumPlan:
    """Build a plan from stage names with shared hyperparameter overrides."""
    return CurriculumPlan([Stage(name=n, **stage_kwargs) for n in names], base_seed=base_seed)


def validate_plan(plan: CurriculumPlan) -> str | None:
    """None when the plan is well-formed, else a message naming the violated rule."""
    names = [s.name for s in plan.stages]
    if "MLM_domain" in names and names.index("MLM_domain") != 0:
        return "MLM_domain must be the first stage"
    if "STS_tgt" in names and names.index("STS_tgt") != len(names) - 1:
        return "STS_tgt must be the last stage"
    return None


@dataclass
class StageLog:
    stage: str
    epoch_mean_loss: list[float]
    wall_time_s: float
    final_grad_norm: float
    steps: int = 0
    skipped_sequences: int = 0

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "epoch_mean_loss": self.epoch_mean_loss,
            "wall_time_s": self.wall_time_s,
            "final_grad_norm": self.final_grad_norm,
            "steps": self.steps,
            "skipped_sequences": self.skipped_sequences,
        }


def _resolve_dataset(stage: Stage, datasets: dict):
    if stage.dataset not in datasets or datasets[stage.dataset] is None:
        raise ConfigError(f"stage {stage.name}: dataset {stage.dataset!r} not loaded")
    data = datasets[stage.dataset]
    if stage.objective == "mlm" and not isinstance(data, SentenceCorpus):
        raise ConfigError(f"stage {stage.name}: expected a sentence corpus for {stage.dataset!r}")
    if stage.objective == "sts" and not isinstance(data, PairDataset):
        raise ConfigError(f"stage {stage.name}: expected a pair dataset for {stage.dataset!r}")
    if stage.objective == "nli" and not (
        isinstance(data, list) and all(isinstance(x, NliExample) for x in data)
    ):
        raise ConfigError(f"stage {stage.name}: expected NLI examples for {stage.dataset!r}")
    return data


def _run_stage(
    stage: Stage,
    stage_index: int,
    base_seed: int,
    params: EncoderParams,
    config: EncoderConfig,
    vocab: Vocab,
    data,
) -> StageLog:
    shuffle_rng = make_rng(base_seed, stage_index, "shuffle")
    mask_rng = make_rng(base_seed, stage_index, "mask")
    dropout_rng = make_rng(base_seed, stage_index, "dropout")

    if stage.objective == "mlm":
        examples = [encode(s, vocab, config.max_len) for s in data.sentences]
    elif stage.objective == "sts":
        examples = list(data.records)
    else:
        examples = list(data)
        classifier = init_nli_classifier(config, make_rng(base_seed, stage_index, "init"))

    if not examples:
        raise ConfigError(f"stage {stage.name}: dataset {stage.dataset!r} is empty")

    if stage.objective == "nli":
        trainable: dict[str, Tensor] = dict(params.items())
        trainable["nli_head"] = classifier
    else:
        trainable = dict(params.items())

    state = AdamState.for_params(trainable, lr=stage.lr)
    t0 = time.monotonic()
    epoch_losses: list[float] = []
    final_norm = 0.0
    steps = 0
    skipped = 0
    n = len(examples)
    for _ in range(stage.epochs):
        order = shuffle_rng.permutation(n)
        losses: list[float] = []
        for start in range(0, n, stage.batch_size):
            batch = [examples[i] for i in order[start:start + stage.batch_size]]
            if stage.objective == "mlm":
                masked = apply_mlm_mask(
                    batch, rate=MLM_MASK_RATE, rng=mask_rng,
                    scheme=stage.mask_scheme, vocab_size=config.vocab_size,
                )
                skipped += masked.n_skipped
                if masked.n_targets == 0:
                    continue
            nc.zero_grads(trainable)
            with Graph() as g:
                if stage.objective == "mlm":
                    loss = mlm_loss(params, config, masked, training=True, rng=dropout_rng)
                elif stage.objective == "sts":
                    loss = sts_loss(params, config, vocab, batch, training=True, rng=dropout_rng)
                else:
                    loss = nli_loss(
                        params, config, vocab, classifier, batch, training=True, rng=dropout_rng
                    )
            backward(g, loss)
            final_norm = nc.global_grad_norm(trainable)
            scale = clip_gradients(trainable, MAX_GRAD_NORM)
            assert scale <= 1.0
            adam_step(trainable, state)
            steps += 1
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
    assert state.t == steps, "optimizer state leaked across stages"
    return StageLog(
        stage=stage.name,
        epoch_mean_loss=epoch_losses,
        wall_time_s=time.monotonic() - t0,
        final_grad_norm=final_norm,
        steps=steps,
        skipped_sequences=skipped,
    )


def run_curriculum(
    plan: CurriculumPlan,
    params: EncoderParams,
    config: EncoderConfig,
    vocab: Vocab,
    datasets: dict,
    stage_offset: int = 0,
    on_stage_end=None,
) -> tuple[EncoderParams, list[StageLog]]:
    """Execute a valid plan in order, mutating and returning `params`.

    Each stage gets a fresh AdamState and streams derived from
    (plan.base_seed, stage_offset + position, purpose), so a suffix resumed
    with the right offset reproduces the full run bit-exactly.
    on_stage_end(index, stage, params, log) fires after each stage.
    """
    violation = validate_plan(plan)
    if violation:
        raise ValidationError(f"invalid plan: {violation}")
    resolved = [_resolve_dataset(stage, datasets) for stage in plan.stages]

    logs: list[StageLog] = []
    for pos, (stage, data) in enumerate(zip(plan.stages, resolved)):
        log = _run_stage(stage, stage_offset + pos, plan.base_seed, params, config, vocab, data)
        logs.append(log)
        if on_stage_end is not None:
            on_stage_end(pos, stage, params, log)
    return params, logs


def enumerate_paper_plans(setting: str, base_seed: int = 42, **stage_kwargs) -> list[CurriculumPlan]:
    """The evaluated stage combinations for a setting, in report order.

    Unsupervised: the nine adaptation orderings (no target fine-tuning).
    Supervised: bare target fine-tuning plus the seven adaptation prefixes
    that were run with target fine-tuning appended.
    """
    unsupervised = [
        ["MLM_tgt"],
        ["STS_src"],
        ["STS_src", "MLM_tgt"],
        ["MLM_domain"],
        ["MLM_tgt", "STS_src"],
        ["MLM_domain", "MLM_tgt"],
        ["MLM_domain", "STS_src"],
        ["MLM_domain", "STS_src", "MLM_tgt"],
        ["MLM_domain", "MLM_tgt", "STS_src"],
    ]
    supervised_prefixes = [
        [],
        ["MLM_tgt"],
        ["STS_src"],
        ["MLM_tgt", "STS_src"],
        ["MLM_domain", "STS_src"],
        ["MLM_domain"],
        ["MLM_domain", "STS_src", "MLM_tgt"],
        ["MLM_domain", "MLM_tgt"],
    ]
    if setting == "unsupervised":
        name_lists = unsupervised
    elif setting == "supervised":
        name_lists = [prefix + ["STS_tgt"] for prefix in supervised_prefixes]
    else:
        raise ValidationError(f"setting must be 'unsupervised' or 'supervised', got {setting!r}")
    return [plan_of(names, base_seed=base_seed, **stage_kwargs) for names in name_lists]
