"""Command-line entry point: vocab building, curriculum training, k-fold
evaluation, labeled-ratio sweeps, pair scoring, and synthetic data generation.

Every artifact embeds the effective config hash, seed, and plan so a run can
be reconstructed from its outputs; reruns with the same config and seed write
byte-identical checkpoints and reports.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .curriculum import CurriculumPlan, Stage, run_curriculum, validate_plan
from .datasets import (
    SynthSpec,
    load_corpus,
    load_nli,
    load_pairs,
    save_corpus,
    save_pairs,
    synth_generate,
)
from .encoder import EncoderConfig, EncoderParams, embed_sentence
from .errors import (
    ArgsimError,
    ConfigError,
    IntegrityError,
    NumericError,
    ValidationError,
)
from .evalkit import DEFAULT_RATIOS, kfold_eval, sample_efficiency_sweep
from .objectives import SCORE_MAX, cosine_similarity
from .textproc import Vocab, build_vocab

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_INTEGRITY = 4
EXIT_IO = 5

OUT_DIR_ENV = "ARGSIM_OUT_DIR"

DATA_KEYS = ("domain_corpus", "target_corpus", "source_corpus",
             "target_pairs", "source_pairs", "nli_pairs")


@dataclass
class RunConfig:
    """Effective run configuration: encoder dims, paths, seed, precision."""

    encoder: dict = field(default_factory=dict)  # EncoderConfig fields minus vocab_size
    data: dict = field(default_factory=dict)     # DATA_KEYS -> file path
    vocab_path: str | None = None
    seed: int = 42
    out_dir: str = "runs"
    precision: str = "float64"

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "data": self.data,
            "vocab_path": self.vocab_path,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "precision": self.precision,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def dtype(self):
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        return np.float64 if self.precision == "float64" else np.float32

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, **self.encoder)


def load_run_config(path, args: argparse.Namespace) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    unknown = set(raw) - {"encoder", "data", "vocab_path", "seed", "out_dir", "precision"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    bad_data = set(raw.get("data", {})) - set(DATA_KEYS)
    if bad_data:
        raise ConfigError(f"unknown data keys: {sorted(bad_data)} (expected {DATA_KEYS})")
    cfg = RunConfig(
        encoder=raw.get("encoder", {}),
        data=raw.get("data", {}),
        vocab_path=raw.get("vocab_path"),
        seed=raw.get("seed", 42),
        out_dir=raw.get("out_dir", "runs"),
        precision=raw.get("precision", "float64"),
    )
    # flags win over file values; the env var wins over the file but not flags
    if os.environ.get(OUT_DIR_ENV):
        cfg.out_dir = os.environ[OUT_DIR_ENV]
    for flag in ("seed", "out_dir", "precision", "vocab_path"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, flag, value)
    return cfg


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_vocab(cfg: RunConfig) -> Vocab:
    if not cfg.vocab_path:
        raise ConfigError("no vocab_path configured; run `argsim vocab` first")
    return Vocab.load(cfg.vocab_path)


def _load_datasets(cfg: RunConfig, needed: set[str] | None = None) -> dict:
    datasets: dict = {}
    for key, path in cfg.data.items():
        if needed is not None and key not in needed:
            continue
        if path is None:
            continue
        if key.endswith("_corpus"):
            datasets[key] = load_corpus(path, source=key)
        elif key == "nli_pairs":
            datasets[key] = load_nli(path, source=key)
        else:
            datasets[key] = load_pairs(path, source=key)
    return datasets


def _corpus_sentences(cfg: RunConfig) -> list[str]:
    """Union of all configured text sources, in config order."""
    sentences: list[str] = []
    for key, path in cfg.data.items():
        if path is None:
            continue
        if key.endswith("_corpus"):
            sentences.extend(load_corpus(path, source=key).sentences)
        elif key == "nli_pairs":
            for ex in load_nli(path):
                sentences.extend((ex.premise, ex.hypothesis))
        else:
            for ex in load_pairs(path).records:
                sentences.extend((ex.sentence_a, ex.sentence_b))
    return sentences


def _load_plan(path, seed: int) -> CurriculumPlan:
    with open(path, "r", encoding="utf-8") as f:
        return CurriculumPlan.from_json(f.read(), base_seed=seed)


def _plan_prefix_hash(cfg_hash: str, seed: int, stages: list[Stage]) -> str:
    blob = json.dumps(
        {"config": cfg_hash, "seed": seed, "stages": [s.to_dict() for s in stages]},
        sort_keys=True,
    ).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _run_meta(cfg: RunConfig, plan: CurriculumPlan | None, extra: dict | None = None) -> dict:
    meta = {
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "plan": [s.to_dict() for s in plan.stages] if plan is not None else None,
        "format_version": 1,
        "version": __version__,
    }
    if extra:
        meta.update(extra)
    return meta


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------


def cmd_vocab(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args)
    sentences = _corpus_sentences(cfg)
    if not sentences:
        raise ConfigError("no corpus configured: set data paths in the config file")
    vocab = build_vocab(sentences, min_freq=args.min_freq, max_size=args.max_size)
    out = Path(args.out or cfg.vocab_path or Path(cfg.out_dir) / "vocab.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    print(f"wrote {out} ({len(vocab)} tokens, sha256 {vocab.sha256()[:16]})")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as f:
            spec = SynthSpec.from_dict(json.load(f))
    else:
        spec = SynthSpec()
    domain, target_corpus, source_pairs, target_pairs = synth_generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(out / "domain_corpus.txt", domain)
    save_corpus(out / "target_corpus.txt", target_corpus)
    save_pairs(out / "source_pairs.tsv", source_pairs)
    save_pairs(out / "target_pairs.tsv", target_pairs)
    _atomic_write(
        out / "synth_spec.json",
        (json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n").encode(),
    )
    print(
        f"wrote {out}: {len(domain)} domain sentences, {len(target_corpus)} target "
        f"sentences, {len(source_pairs)} source pairs, {len(target_pairs)} target pairs"
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args)
    plan = _load_plan(args.plan, cfg.seed)
    violation = validate_plan(plan)
    if violation:
        raise ValidationError(f"invalid plan: {violation}")
    vocab = _load_vocab(cfg)
    encoder_cfg = cfg.encoder_config(len(vocab))
    datasets = _load_datasets(cfg, needed={s.dataset for s in plan.stages})
    for stage in plan.stages:  # fail before any training
        if stage.dataset not in datasets:
            raise ConfigError(f"stage {stage.name}: dataset {stage.dataset!r} not configured")

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.hash()
    params = EncoderParams.init(encoder_cfg, cfg.seed, dtype=cfg.dtype)

    # Stage checkpoints are content-addressed by (config, seed, plan prefix),
    # so plans sharing a prefix reuse each other's results.
    start = 0
    if not args.no_reuse:
        for i in range(len(plan.stages), 0, -1):
            ck = out / f"stage-{_plan_prefix_hash(cfg_hash, cfg.seed, list(plan.stages[:i]))}.ckpt"
            if ck.exists():
                params, loaded_cfg, vocab_hash, _ = load_checkpoint(ck)
                if vocab_hash != vocab.sha256():
                    raise IntegrityError(f"{ck}: vocab hash mismatch with {cfg.vocab_path}")
                if loaded_cfg != encoder_cfg:
                    raise IntegrityError(f"{ck}: encoder config mismatch")
                start = i
                print(f"reusing {ck.name} (stages 1..{i} of {len(plan.stages)})")
                break

    log_path = out / "stage_logs.jsonl"
    log_lines: list[str] = []

    def on_stage_end(pos: int, stage: Stage, p: EncoderParams, log) -> None:
        n_done = start + pos + 1
        prefix = list(plan.stages[:n_done])
        ck = out / f"stage-{_plan_prefix_hash(cfg_hash, cfg.seed, prefix)}.ckpt"
        save_checkpoint(
            ck, p, encoder_cfg, vocab.sha256(),
            meta=_run_meta(cfg, CurriculumPlan(prefix, cfg.seed)),
        )
        log_lines.append(json.dumps({"stage_index": n_done - 1, **log.to_dict()}, sort_keys=True))
        print(f"stage {stage.name}: epochs={stage.epochs} steps={log.steps} "
              f"mean_loss={log.epoch_mean_loss[-1]:.4f} -> {ck.name}")

    remaining = CurriculumPlan(plan.stages[start:], base_seed=plan.base_seed)
    params, _ = run_curriculum(
        remaining, params, encoder_cfg, vocab, datasets,
        stage_offset=start, on_stage_end=on_stage_end,
    )
    if log_lines:
        with open(log_path, "a", encoding="utf-8") as f:
            f.write("\n".join(log_lines) + "\n")
    final = out / (args.final_name or "final.ckpt")
    save_checkpoint(final, params, encoder_cfg, vocab.sha256(), meta=_run_meta(cfg, plan))
    print(f"wrote {final}")
    return EXIT_OK


def _checkpoint_for_eval(cfg: RunConfig, vocab: Vocab, path) -> tuple[EncoderParams, EncoderConfig]:
    params, encoder_cfg, vocab_hash, _ = load_checkpoint(path)
    if vocab_hash != vocab.sha256():
        raise IntegrityError(
            f"{path}: checkpoint vocab hash {vocab_hash[:16]} does not match "
            f"{cfg.vocab_path} ({vocab.sha256()[:16]})"
        )
    return params, encoder_cfg


def _ft_stage(args: argparse.Namespace) -> Stage:
    return Stage(
        "STS_tgt", epochs=args.ft_epochs, batch_size=args.ft_batch_size, lr=args.ft_lr
    )


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args)
    vocab = _load_vocab(cfg)
    params, encoder_cfg = _checkpoint_for_eval(cfg, vocab, args.checkpoint)
    pairs = load_pairs(args.pairs).records
    plan = CurriculumPlan([_ft_stage(args)] if args.supervised else [], base_seed=cfg.seed)
    report = kfold_eval(
        pairs, plan, encoder_cfg, vocab, {}, k=args.k,
        supervised=args.supervised, seed=cfg.seed, params=params,
    )
    report.meta = _run_meta(cfg, plan, {"checkpoint": str(args.checkpoint), "pairs": str(args.pairs)})
    out = Path(args.out or Path(cfg.out_dir) / "eval_report.json")
    _atomic_write(out, (report.to_json() + "\n").encode())
    r = "n/a" if report.pearson_r is None else f"{report.pearson_r:.4f}"
    rho = "n/a" if report.spearman_rho is None else f"{report.spearman_rho:.4f}"
    print(f"pearson r = {r}  spearman rho = {rho}  "
          f"({len(report.per_fold)}/{report.k} folds, {len(report.excluded)} excluded)")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args)
    vocab = _load_vocab(cfg)
    params, encoder_cfg = _checkpoint_for_eval(cfg, vocab, args.checkpoint)
    pairs = load_pairs(args.pairs).records
    plan = CurriculumPlan([_ft_stage(args)], base_seed=cfg.seed)

    baseline_rho = None
    if args.baseline_checkpoint:
        base_params, base_cfg = _checkpoint_for_eval(cfg, vocab, args.baseline_checkpoint)
        baseline = kfold_eval(
            pairs, plan, base_cfg, vocab, {}, k=args.k,
            supervised=True, seed=cfg.seed, params=base_params,
        )
        baseline_rho = baseline.spearman_rho

    result = sample_efficiency_sweep(
        pairs, plan, encoder_cfg, vocab, {},
        ratios=DEFAULT_RATIOS, k=args.k, seed=cfg.seed, params=params,
        baseline_rho=baseline_rho,
    )
    result.meta = _run_meta(cfg, plan, {"checkpoint": str(args.checkpoint), "pairs": str(args.pairs)})
    out_json = Path(args.out or Path(cfg.out_dir) / "sweep.json")
    _atomic_write(out_json, (result.to_json() + "\n").encode())
    out_csv = out_json.with_suffix(".csv")
    _atomic_write(out_csv, result.to_csv().encode())
    print(f"wrote {out_json} and {out_csv} ({len(result.points)} points)")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args)
    vocab = _load_vocab(cfg)
    params, encoder_cfg = _checkpoint_for_eval(cfg, vocab, args.checkpoint)
    u = embed_sentence(params, encoder_cfg, vocab, args.sentence_a)
    v = embed_sentence(params, encoder_cfg, vocab, args.sentence_b)
    cos = cosine_similarity(u, v)
    # display score clamps negative cosine to 0 before the 0-5 scale
    print(f"cosine = {cos:.6f}")
    print(f"score  = {SCORE_MAX * max(cos, 0.0):.6f}")
    return EXIT_OK


# -----------------------------------------------------------------------------
# Parser and entry point
# -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="argsim",
        description="Train and evaluate a siamese mini-transformer for argument similarity.",
    )
    parser.add_argument("--version", action="version", version=f"argsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out-dir", dest="out_dir", default=None, help="override output dir")
        p.add_argument("--precision", choices=("float64", "float32"), default=None)
        p.add_argument("--vocab", dest="vocab_path", default=None, help="override vocab path")

    p = sub.add_parser("vocab", help="build the vocabulary over all configured corpora")
    common(p)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--max-size", type=int, default=30000)
    p.add_argument("--out", default=None, help="vocab file (default: config vocab_path)")
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("synth", help="generate the synthetic corpora and pair files")
    p.add_argument("--spec", default=None, help="SynthSpec JSON (defaults when omitted)")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run a curriculum plan and write checkpoints")
    common(p)
    p.add_argument("--plan", required=True, help="plan JSON (list of stage records)")
    p.add_argument("--no-reuse", action="store_true", help="ignore existing stage checkpoints")
    p.add_argument("--final-name", default=None, help="final checkpoint filename")
    p.set_defaults(func=cmd_train)

    def eval_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--pairs", required=True, help="pair TSV to evaluate on")
        p.add_argument("--k", type=int, default=10)
        p.add_argument("--ft-epochs", type=int, default=5)
        p.add_argument("--ft-batch-size", type=int, default=16)
        p.add_argument("--ft-lr", type=float, default=2e-5)
        p.add_argument("--out", default=None)

    p = sub.add_parser("eval", help="k-fold cross-validated correlation report")
    common(p)
    eval_flags(p)
    p.add_argument("--supervised", action="store_true",
                   help="fine-tune on the training folds before scoring each held-out fold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="labeled-data-ratio sweep (supervised)")
    common(p)
    eval_flags(p)
    p.add_argument("--baseline-checkpoint", default=None,
                   help="checkpoint whose supervised rho becomes the reference line")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="score one sentence pair")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("sentence_a")
    p.add_argument("sentence_b")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except IntegrityError as err:
        print(f"integrity error: {err}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ValidationError, ConfigError, NumericError, ArgsimError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
