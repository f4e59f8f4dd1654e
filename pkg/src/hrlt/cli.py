"""Command-line surface: pretrain, finetune, eval, predict.

Every run writes a manifest naming its config snapshot, seed, corpus
fingerprints, and artifacts, so results can be reproduced byte for byte.
Dotted config overrides ride alongside regular flags:

    hrlt pretrain --train-corpus train.jsonl --dev-corpus dev.jsonl \
        --out-dir run1 --train.pretrain_epochs 10 --model.d_h 64

Exit codes: 0 success, 2 config or I/O problems, 3 checkpoint problems,
4 numeric failures. HRLT_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from typing import Optional, Sequence

from .config import (
    ConfigError,
    ModelConfig,
    TrainConfig,
    apply_overrides,
    load_config,
    model_config_hash,
    serialize_config,
)
from .data import ParseError, PosProvider, load_corpus, read_jsonl, sentence_to_dict
from .encoder import CacheError, MissingEncodingError
from .env import MODE_GREEDY, run_episode
from .metrics import partitioned_report
from .numerics import CheckpointError, NumericError
from .trainer import dump_traces_for, evaluate, load_model, train

log = logging.getLogger("hrlt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_NUMERIC = 4


def _setup_logging() -> None:
    level = os.environ.get("HRLT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _extract_overrides(argv: list[str]) -> tuple[list[str], dict[str, str]]:
    """Pull --model.* / --train.* pairs out of argv before argparse sees them."""
    rest: list[str] = []
    overrides: dict[str, str] = {}
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg.startswith("--model.") or arg.startswith("--train."):
            key = arg[2:]
            if "=" in key:
                key, _, value = key.partition("=")
                overrides[key] = value
            else:
                if i + 1 >= len(argv):
                    raise ConfigError(f"override {arg} needs a value")
                overrides[key] = argv[i + 1]
                i += 1
        else:
            rest.append(arg)
        i += 1
    return rest, overrides


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _resolve_configs(args, overrides: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    if getattr(args, "config", None):
        mcfg, tcfg = load_config(args.config)
    else:
        mcfg, tcfg = ModelConfig(), TrainConfig()
    if getattr(args, "seed", None) is not None:
        overrides = {**overrides, "train.seed": str(args.seed)}
    if getattr(args, "encoder", None):
        overrides = {**overrides, "model.encoder": args.encoder}
    if overrides:
        mcfg, tcfg = apply_overrides(mcfg, tcfg, overrides)
    return mcfg, tcfg


def _load_split(path: str, pos_file: Optional[str]) -> list:
    if not os.path.exists(path):
        raise FileNotFoundError(f"corpus path does not exist: {path}")
    provider = PosProvider.sidecar(pos_file) if pos_file else None
    return load_corpus(path, provider)


def _write_manifest(out_dir: str, payload: dict) -> None:
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_training(args, overrides: dict[str, str], phase: str) -> int:
    mcfg, tcfg = _resolve_configs(args, overrides)
    if phase == "pretrain":
        tcfg = dataclasses.replace(tcfg, finetune_epochs=0)
    train_set = _load_split(args.train_corpus, args.pos_file)
    dev_set = _load_split(args.dev_corpus, args.pos_file)

    init_params = None
    init_vocab = None
    skip_pretrain = False
    if getattr(args, "init", None):
        from .encoder import Vocab
        from .numerics import load_checkpoint

        params, _, confhash = load_checkpoint(args.init)
        if confhash != model_config_hash(mcfg):
            raise CheckpointError(
                f"checkpoint {args.init} was trained under a different model config"
            )
        init_params = params
        if "enc.word" in params:
            vocab_path = os.path.join(os.path.dirname(args.init) or ".", "vocab.json")
            init_vocab = Vocab.load(vocab_path)
        skip_pretrain = True

    os.makedirs(args.out_dir, exist_ok=True)
    snapshot = serialize_config(mcfg, tcfg)
    with open(os.path.join(args.out_dir, "config.lock"), "w", encoding="utf-8") as fh:
        fh.write(snapshot)

    result = train(
        train_set,
        dev_set,
        mcfg,
        tcfg,
        args.out_dir,
        no_rl=getattr(args, "no_rl", False),
        init_params=init_params,
        init_vocab=init_vocab,
        skip_pretrain=skip_pretrain,
        jobs=args.jobs,
    )
    _write_manifest(
        args.out_dir,
        {
            "phase": phase,
            "seed": tcfg.seed,
            "encoder_mode": mcfg.encoder,
            "config": snapshot,
            "corpora": {
                args.train_corpus: _sha256_file(args.train_corpus),
                args.dev_corpus: _sha256_file(args.dev_corpus),
            },
            "checkpoints": {
                "best": result.best_checkpoint,
                "pretrain_best": result.pretrain_checkpoint,
            },
            "metrics": result.metrics_path,
            "vocab": os.path.join(args.out_dir, "vocab.json"),
        },
    )
    print(f"best dev F1: {result.best_dev_f1:.4f}")
    print(f"best checkpoint: {result.best_checkpoint}")
    return EXIT_OK


def _load_eval_configs(args, overrides: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    config_path = getattr(args, "config", None)
    if not config_path:
        sibling = os.path.join(os.path.dirname(args.checkpoint) or ".", "config.lock")
        if os.path.exists(sibling):
            config_path = sibling
    if config_path:
        mcfg, tcfg = load_config(config_path)
    else:
        mcfg, tcfg = ModelConfig(), TrainConfig()
    if getattr(args, "encoder", None):
        overrides = {**overrides, "model.encoder": args.encoder}
    if overrides:
        mcfg, tcfg = apply_overrides(mcfg, tcfg, overrides)
    return mcfg, tcfg


def _cmd_eval(args, overrides: dict[str, str]) -> int:
    mcfg, _ = _load_eval_configs(args, overrides)
    model, _, confhash = load_model(args.checkpoint, mcfg, vocab_path=args.vocab)
    if confhash != model_config_hash(mcfg):
        raise CheckpointError("checkpoint/config fingerprint mismatch; refusing to evaluate")
    sentences = _load_split(args.corpus, args.pos_file)
    score, traces = evaluate(sentences, model, jobs=args.jobs)
    if args.trace_dump:
        dump_traces_for(args.trace_dump, sentences, traces)
    print(f"P={score.precision:.4f} R={score.recall:.4f} F1={score.f1:.4f} "
          f"(tp={score.tp} fp={score.fp} fn={score.fn})")
    if args.partition:
        report = partitioned_report(sentences, [t.predicted for t in traces])
        print(report.to_text())
    return EXIT_OK


def _cmd_predict(args, overrides: dict[str, str]) -> int:
    mcfg, _ = _load_eval_configs(args, overrides)
    model, _, confhash = load_model(args.checkpoint, mcfg, vocab_path=args.vocab)
    if confhash != model_config_hash(mcfg):
        raise CheckpointError("checkpoint/config fingerprint mismatch; refusing to predict")
    sentences = read_jsonl(args.input) if os.path.exists(args.input) else None
    if sentences is None:
        raise FileNotFoundError(f"corpus path does not exist: {args.input}")
    with open(args.output, "w", encoding="utf-8") as fh:
        for sentence in sentences:
            trace = run_episode(
                sentence, model.pp, model.encoder, mode=MODE_GREEDY, use_gold=False
            ).trace
            record = sentence_to_dict(sentence, trace.predicted)
            record["option_positions"] = [
                {"t": t, "sentiment": opt.value}
                for t, opt, _ in trace.options
                if opt.value != "none"
            ]
            fh.write(json.dumps(record, ensure_ascii=False))
            fh.write("\n")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrlt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common_train(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="config file (hrlt-config v1)")
        p.add_argument("--train-corpus", required=True)
        p.add_argument("--dev-corpus", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--pos-file", help="sidecar POS tags, one line per sentence")
        p.add_argument("--seed", type=int)
        p.add_argument("--encoder", help="trainable | cache:<path>")
        p.add_argument("--jobs", type=int, default=1, help="evaluation parallelism")

    p_pre = sub.add_parser("pretrain", help="teacher-forced pre-training phase")
    common_train(p_pre)

    p_fine = sub.add_parser("finetune", help="full schedule, or fine-tuning from --init")
    common_train(p_fine)
    p_fine.add_argument("--init", help="checkpoint to resume from (skips pre-training)")
    p_fine.add_argument("--no-rl", action="store_true",
                        help="replace the RL phase with more supervised epochs")

    p_eval = sub.add_parser("eval", help="greedy-decode a corpus and score it")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--config")
    p_eval.add_argument("--vocab")
    p_eval.add_argument("--pos-file")
    p_eval.add_argument("--encoder")
    p_eval.add_argument("--partition", action="store_true")
    p_eval.add_argument("--jobs", type=int, default=1)
    p_eval.add_argument("--trace-dump")

    p_pred = sub.add_parser("predict", help="write predicted triplets as JSON lines")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", required=True)
    p_pred.add_argument("--output", required=True)
    p_pred.add_argument("--config")
    p_pred.add_argument("--vocab")
    p_pred.add_argument("--encoder")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _extract_overrides(argv)
        args = _build_parser().parse_args(rest)
        if args.command == "pretrain":
            return _run_training(args, overrides, "pretrain")
        if args.command == "finetune":
            return _run_training(args, overrides, "finetune")
        if args.command == "eval":
            return _cmd_eval(args, overrides)
        if args.command == "predict":
            return _cmd_predict(args, overrides)
        raise ConfigError(f"unknown command {args.command!r}")
    except (CheckpointError, CacheError, MissingEncodingError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericError as exc:
        log.error("%s", exc)
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError, FileNotFoundError, OSError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
