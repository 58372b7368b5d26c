"""Command-line entry point for the full pipeline.

Exit codes: 0 success, 1 I/O or data errors, 2 usage/config errors,
3 training divergence.  Every command is deterministic given its config,
seed and checkpoint.  The MELSTYLE_OUTPUT_ROOT environment variable
re-roots relative output paths.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config
from .corpus import Corpus, load_manifest, train_test_split
from .errors import ConfigError, DataError, DivergenceError, MelstyleError
from .acoustic import compute_feature_stats
from .evaluation import (dump_attention, evaluate_corpus, plot_attention,
                         plot_losses, plot_pitch_contour, sample_attention_keys)
from .nn import load_checkpoint
from .nn.checkpoint import CheckpointError
from .pipeline import Pipeline, load_pipeline
from .synthetic import generate_synthetic_corpus
from .tensorfile import TensorFileError, read_tensor, write_tensor
from .training import CHECKPOINT_DIR, LOG_NAME, Adam, Trainer

STAGE1_FINAL = "stage1_subword"


def resolve_out(path: str | Path) -> Path:
    path = Path(path)
    root = os.environ.get("MELSTYLE_OUTPUT_ROOT")
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _load_corpus_for(cfg: RunConfig, run_dir: Path) -> tuple[Corpus, Path]:
    if cfg.corpus.manifest:
        manifest = Path(cfg.corpus.manifest)
        return load_manifest(manifest), manifest
    if cfg.corpus.synth is None:
        raise ConfigError("corpus section needs either a manifest path or a synth block")
    manifest = generate_synthetic_corpus(cfg.corpus.synth, cfg.seed,
                                         run_dir / "corpus")
    return load_manifest(manifest), manifest


def _build_pipeline(cfg: RunConfig, corpus: Corpus) -> Pipeline:
    train_keys, _ = train_test_split(corpus, cfg.corpus.holdout_per_document)
    stats = compute_feature_stats(corpus, train_keys)
    return Pipeline(model_cfg=cfg.model, provider_cfg=cfg.provider,
                    mel_bins=corpus.feature_config.mel_bins, stats=stats,
                    phoneme_inventory=corpus.phoneme_inventory(),
                    subword_inventory=corpus.subword_inventory(),
                    mode=cfg.mode, seed=cfg.seed)


def _parse_utterance(spec: str) -> tuple[str, int]:
    if ":" not in spec:
        raise ConfigError(f"utterance must look like DOC:INDEX, got {spec!r}")
    doc, _, idx = spec.rpartition(":")
    try:
        return doc, int(idx)
    except ValueError as exc:
        raise ConfigError(f"bad sentence index in {spec!r}") from exc


# -- commands -----------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.corpus.synth is None:
        raise ConfigError("gen-corpus needs a corpus.synth section in the config")
    seed = cfg.seed if args.seed is None else args.seed
    out_dir = resolve_out(args.out)
    manifest = generate_synthetic_corpus(cfg.corpus.synth, seed, out_dir)
    corpus = load_manifest(manifest)
    print(f"manifest: {manifest}")
    print(f"documents: {len(corpus.document_ids)}  utterances: {len(corpus)}  "
          f"mel_bins: {corpus.feature_config.mel_bins}")
    return 0


def _resume_trainer(trainer: Trainer, resume_dir: Path, stage: int) -> tuple[int, Adam]:
    pipeline, meta, extras = load_pipeline(resume_dir)
    state = meta.get("train_state")
    if not state or int(state["stage"]) != stage:
        raise ConfigError(f"checkpoint {resume_dir} is not a stage-{stage} state")
    load_checkpoint(resume_dir, trainer.pipeline)
    optimizer = Adam(trainer.pipeline.named_params(), trainer.cfg.beta1,
                     trainer.cfg.beta2, trainer.cfg.epsilon)
    optimizer.load_state(extras, meta.get("adam_t", {}))
    return int(state["step"]), optimizer


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    run_dir = resolve_out(args.out if args.out else cfg.output_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    corpus, _ = _load_corpus_for(cfg, run_dir)
    pipeline = _build_pipeline(cfg, corpus)
    trainer = Trainer(pipeline, corpus, cfg.train, run_dir,
                      holdout_per_document=cfg.corpus.holdout_per_document)

    def require(name: str) -> Path:
        path = trainer.ckpt_path(name)
        if not (path / "meta.json").exists():
            raise ConfigError(f"stage prerequisite missing: no checkpoint at {path}")
        return path

    stage = args.stage
    resume = Path(args.resume) if args.resume else None
    if stage == "all":
        if resume:
            raise ConfigError("--resume is only valid with a single --stage")
        trainer.run_all()
    elif stage == "1":
        if resume:
            start, optimizer = _resume_trainer(trainer, resume, 1)
            trainer.run_stage1(start_step=start, optimizer=optimizer)
        else:
            trainer.run_stage1()
    elif stage == "2":
        if resume:
            start, optimizer = _resume_trainer(trainer, resume, 2)
            trainer.run_stage2(start_step=start, optimizer=optimizer)
        else:
            load_checkpoint(require(STAGE1_FINAL), pipeline)
            trainer.run_stage2()
    elif stage == "3":
        if resume:
            start, optimizer = _resume_trainer(trainer, resume, 3)
            trainer.run_stage3(start_step=start, optimizer=optimizer)
        else:
            require(STAGE1_FINAL)
            load_checkpoint(require("stage2"), pipeline)
            trainer.run_stage3()
    print(f"training log: {trainer.run_dir / LOG_NAME}")
    print(f"checkpoints under: {trainer.run_dir / CHECKPOINT_DIR}")
    return 0


def cmd_synthesize(args) -> int:
    pipeline, _, _ = load_pipeline(Path(args.ckpt))
    corpus = load_manifest(Path(args.corpus))
    doc, idx = _parse_utterance(args.utterance)
    utt = corpus.utterance(doc, idx)
    if args.use_extractor:
        styles = pipeline.extract_styles(corpus, doc, idx)
    else:
        styles = pipeline.predict_styles(corpus, doc, idx)
    mel_pred, _ = pipeline.acoustic.synthesize(pipeline.phoneme_sequence(utt),
                                               styles, targets=None)
    out_dir = resolve_out(args.out)
    out_path = Path(out_dir) / f"{doc}_{idx:04d}_mel.msst"
    write_tensor(out_path, np.array(mel_pred.mel.data))
    print(f"mel: {out_path}  frames: {mel_pred.frames}")
    return 0


def cmd_synthesize_paragraph(args) -> int:
    pipeline, _, _ = load_pipeline(Path(args.ckpt))
    corpus = load_manifest(Path(args.corpus))
    sentences = corpus.sentences(args.document)
    if pipeline.mode != "ar":
        print("warning: checkpoint is hierarchical; falling back to per-sentence "
              "windowed prediction", file=sys.stderr)
    paragraph = pipeline.predict_paragraph(corpus, args.document)
    out_dir = resolve_out(args.out)
    mels = []
    for utt, styles in zip(sentences, paragraph.sentences):
        mel_pred, _ = pipeline.acoustic.synthesize(pipeline.phoneme_sequence(utt),
                                                   styles, targets=None)
        mel = np.array(mel_pred.mel.data)
        mels.append(mel)
        write_tensor(Path(out_dir) / f"{args.document}_{utt.sentence_index:04d}_mel.msst",
                     mel)
    combined = np.concatenate(mels, axis=0)
    combined_path = Path(out_dir) / f"{args.document}_paragraph_mel.msst"
    write_tensor(combined_path, combined)
    print(f"paragraph mel: {combined_path}  sentences: {len(mels)}  "
          f"frames: {combined.shape[0]}")
    return 0


def cmd_evaluate(args) -> int:
    corpus = load_manifest(Path(args.corpus))
    train_keys, test_keys = train_test_split(corpus, args.holdout)
    keys = {"train": train_keys, "test": test_keys,
            "all": train_keys + test_keys}[args.split]
    if args.copy:
        pipeline = None
        mode = "copy"
    else:
        if not args.ckpt:
            raise ConfigError("evaluate needs --ckpt unless --copy is given")
        pipeline, _, _ = load_pipeline(Path(args.ckpt))
        mode = args.mode
    report = evaluate_corpus(pipeline, corpus, keys, mode=mode,
                             n_coeffs=args.mcd_coeffs)
    out_path = resolve_out(args.out)
    report.save(out_path)
    print(report.summary())
    print(f"report: {out_path}")
    return 0


def cmd_export_styles(args) -> int:
    pipeline, _, _ = load_pipeline(Path(args.ckpt))
    corpus = load_manifest(Path(args.corpus))
    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for utt in corpus:
        if args.source == "extractor":
            styles = pipeline.extract_styles(corpus, *utt.key).to_arrays()
        else:
            styles = pipeline.predict_styles(corpus, *utt.key).to_arrays()
        base = f"{utt.document_id}_{utt.sentence_index:04d}"
        names = {}
        for level, array in zip(("global", "sentence", "subword"), styles):
            name = f"{base}_{level}.msst"
            write_tensor(out_dir / name, array)
            names[level] = name
        index[f"{utt.document_id}:{utt.sentence_index}"] = names
    with open(out_dir / "index.json", "w") as fh:
        json.dump({"d_style": pipeline.model_cfg.d_style, "source": args.source,
                   "entries": index}, fh, indent=1, sort_keys=True)
    print(f"styles exported: {out_dir} ({len(index)} utterances)")
    return 0


def cmd_inspect_attention(args) -> int:
    pipeline, _, _ = load_pipeline(Path(args.ckpt))
    corpus = load_manifest(Path(args.corpus))
    window_size = 2 * pipeline.model_cfg.L + 1
    keys = sample_attention_keys(corpus, pipeline.model_cfg.L, args.samples,
                                 seed=args.seed)
    matrix = dump_attention(pipeline, corpus, keys, window_size)
    out_path = resolve_out(args.out)
    write_tensor(out_path, matrix)
    print(f"attention matrix: {out_path}  shape: {matrix.shape}  "
          f"row sums: [{matrix.sum(axis=1).min():.6f}, {matrix.sum(axis=1).max():.6f}]")
    return 0


def cmd_plot(args) -> int:
    out_path = resolve_out(args.out)
    if args.kind == "losses":
        if not args.log:
            raise ConfigError("plot losses needs --log")
        if not Path(args.log).exists():
            raise DataError(f"training log not found: {args.log}")
        path = plot_losses(Path(args.log), out_path)
    elif args.kind == "attention":
        if not args.matrix:
            raise ConfigError("plot attention needs --matrix")
        matrix = read_tensor(Path(args.matrix))
        path = plot_attention(matrix, out_path)
    else:  # pitch-contour
        if not (args.corpus and args.utterance and args.ckpt):
            raise ConfigError("plot pitch-contour needs --corpus, --utterance and --ckpt")
        corpus = load_manifest(Path(args.corpus))
        doc, idx = _parse_utterance(args.utterance)
        utt = corpus.utterance(doc, idx)
        pipeline, _, _ = load_pipeline(Path(args.ckpt))
        styles = pipeline.predict_styles(corpus, doc, idx)
        mel_pred, variances = pipeline.acoustic.synthesize(
            pipeline.phoneme_sequence(utt), styles, targets=None)
        synth_pitch = np.repeat(variances.pitch, mel_pred.durations_rounded)
        path = plot_pitch_contour(utt.pitch_frame, synth_pitch, out_path)
    print(f"figure: {path}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="melstyle",
        description="multi-scale speaking-style modeling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="run the staged training schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", choices=["1", "2", "3", "all"], default="all")
    p.add_argument("--resume", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="synthesize one sentence")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--utterance", required=True, metavar="DOC:IDX")
    p.add_argument("--use-extractor", action="store_true")
    p.add_argument("--out", default="synth")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("synthesize-paragraph", help="synthesize a whole document")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--document", required=True)
    p.add_argument("--out", default="synth")
    p.set_defaults(func=cmd_synthesize_paragraph)

    p = sub.add_parser("evaluate", help="objective metrics over a split")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["predictor", "extractor"], default="predictor")
    p.add_argument("--copy", action="store_true",
                   help="score ground truth against itself")
    p.add_argument("--holdout", type=int, default=2)
    p.add_argument("--mcd-coeffs", type=int, default=13)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-styles", help="write per-utterance style tensors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source", choices=["extractor", "predictor"],
                   default="extractor")
    p.set_defaults(func=cmd_export_styles)

    p = sub.add_parser("inspect-attention", help="dump inter-sentence attention")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("plot", help="render figures from logged data")
    p.add_argument("kind", choices=["pitch-contour", "attention", "losses"])
    p.add_argument("--log", default=None)
    p.add_argument("--matrix", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--utterance", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (DataError, TensorFileError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MelstyleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
