"""
SET-LSTM - Command Line
=======================
Training, evaluation, experiments, parameter accounting and gradient checks.

stdout carries only machine-readable key=value lines (or JSON with --json);
logs and the resolved config go to stderr.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 verification failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import InitMode, ModelVariant, TrainConfig, get_settings
from .config_loader import resolve_config
from .data import (
    EncodedDataset,
    Vocabulary,
    build_vocab,
    encode_corpus,
    load_corpus,
    split,
)
from .errors import ConfigError, DataIOError, SetLstmError
from .experiments import (
    fixed_topology_model,
    run_fixed_topology_experiment,
    run_similarity_experiment,
    run_sweep,
    trials_frame,
)
from .gradcheck import parse_sizes, run_gradcheck, verify
from .neural import SetLstmModel, param_count
from .topology import degree_stats
from .trainer import (
    TrainingState,
    dims_of,
    evaluate,
    train,
    write_metrics_csv,
    write_metrics_json,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
USAGE_ERROR = 1


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def setup_logging(level: Optional[str] = None) -> None:
    level = (level or get_settings().SETLSTM_LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


# ===========================================
# Output helpers
# ===========================================


def emit(key: str, value: Any, out: Optional[TextIO] = None) -> None:
    if isinstance(value, float):
        value = f"{value:.6f}"
    print(f"{key}={value}", file=out or sys.stdout)


def emit_json(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def echo_config(config: TrainConfig) -> None:
    """Resolved config on stderr, one key=value line each"""
    for line in config.to_lines():
        print(f"config: {line}", file=sys.stderr)


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(out, str(e)) from e
    return out


def _write_csv(frame, path: Path, header: bool = True) -> None:
    try:
        frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n", header=header)
    except OSError as e:
        raise DataIOError(path, str(e)) from e


def _write_matrix(matrix: np.ndarray, path: Path) -> None:
    try:
        np.savetxt(path, matrix, fmt="%.6f", delimiter=",")
    except OSError as e:
        raise DataIOError(path, str(e)) from e


def _jobs(args: argparse.Namespace) -> int:
    return args.jobs if args.jobs is not None else get_settings().SETLSTM_JOBS


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from e
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


# ===========================================
# Data preparation
# ===========================================


def prepare_data(
    config: TrainConfig, data: str, vocab: Optional[Vocabulary] = None
) -> Tuple[EncodedDataset, EncodedDataset, Vocabulary, List[str]]:
    """
    Load, split and encode a corpus.

    The split follows config.seed and split_ratio; the vocabulary is built on
    the training portion unless one is given.
    """
    corpus = load_corpus(data)
    if len(corpus.class_names) > config.n_classes:
        raise ConfigError(
            f"corpus has {len(corpus.class_names)} classes, config allows {config.n_classes}",
            field="n_classes",
        )
    train_corpus, test_corpus = split(corpus, config.split_ratio, config.seed)
    if vocab is None:
        vocab = build_vocab(train_corpus, config.vocab_size)
    train_set = encode_corpus(train_corpus, vocab, config.seq_len)
    test_set = encode_corpus(test_corpus, vocab, config.seq_len)
    logger.info(f"Split {len(corpus)} examples into {len(train_set)} train / {len(test_set)} test")
    return train_set, test_set, vocab, list(corpus.class_names)


def _config_from_args(args: argparse.Namespace, **overrides: Any) -> TrainConfig:
    config = resolve_config(args.config, seed=getattr(args, "seed", None), **overrides)
    echo_config(config)
    return config


# ===========================================
# Subcommands
# ===========================================


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out = _out_dir(args.out)

    resume_state: Optional[TrainingState] = None
    vocab = None
    if args.resume:
        resumed = load_checkpoint(args.resume)
        resume_state, vocab = resumed.state, resumed.vocab
    train_set, test_set, vocab, class_names = prepare_data(config, args.data, vocab)

    initial_model: Optional[SetLstmModel] = None
    if config.fixed_topology and resume_state is None:
        source = load_checkpoint(config.fixed_topology)
        if source.state.config.model_variant != config.model_variant or dims_of(
            source.state.config
        ) != dims_of(config):
            raise ConfigError(
                "fixed topology checkpoint does not match the config dimensions",
                field="fixed_topology",
            )
        initial_model = fixed_topology_model(source.state, config.init_mode, config.seed)

    def save_epoch(state: TrainingState) -> None:
        if args.save_every and state.epoch % args.save_every == 0:
            save_checkpoint(
                Checkpoint(state, vocab, class_names), out / f"epoch_{state.epoch:03d}.ckpt"
            )

    state = train(
        config,
        train_set,
        test_set,
        resume=resume_state,
        initial_model=initial_model,
        on_epoch_end=save_epoch,
    )
    write_metrics_csv(state.history, out / "metrics.csv")
    write_metrics_json(state, out / "metrics.json")
    save_checkpoint(Checkpoint(state, vocab, class_names), out / "final.ckpt")

    emit("epochs", state.epoch)
    emit("best_epoch", state.best.epoch if state.best else 0)
    emit("best_test_acc", state.best_test_acc)
    emit("test_acc", state.final_test_acc)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    echo_config(config)
    if checkpoint.vocab is None:
        raise ConfigError("checkpoint carries no vocabulary; cannot encode raw text")

    if args.split == "test":
        _, dataset, _, _ = prepare_data(config, args.data, checkpoint.vocab)
    else:
        corpus = load_corpus(args.data)
        dataset = encode_corpus(corpus, checkpoint.vocab, config.seq_len)
    model = checkpoint.state.model
    accuracy = evaluate(model, dataset)
    degrees = {name: degree_stats(c).summary() for name, c in model.topology().items()}

    if args.json:
        emit_json(
            {
                "accuracy": accuracy,
                "n_examples": len(dataset),
                "split": args.split,
                "degrees": degrees,
            }
        )
    else:
        emit("n_examples", len(dataset))
        emit("accuracy", accuracy)
        for name, stats in degrees.items():
            emit(f"{name}.row_cv", stats["row_cv"])
            emit(f"{name}.col_cv", stats["col_cv"])
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out = _out_dir(args.out)
    train_set, test_set, _, _ = prepare_data(config, args.data)
    result = run_sweep(
        config, train_set, test_set, args.axis, args.values, args.trials, _jobs(args)
    )
    _write_csv(result.summary, out / f"sweep_{args.axis}.csv")
    _write_csv(result.trials, out / f"sweep_{args.axis}_trials.csv")

    if args.json:
        emit_json({"axis": args.axis, "rows": result.summary.to_dict(orient="records")})
    else:
        for row in result.summary.itertuples(index=False):
            value, mean, std = row[0], row[1], row[2]
            emit(f"{args.axis}_{value:g}.mean_test_acc", float(mean))
            emit(f"{args.axis}_{value:g}.std_test_acc", float(std))
    return 0


def cmd_similarity(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if args.trials < 2:
        raise ConfigError("similarity needs at least two trials", field="trials")
    out = _out_dir(args.out)
    train_set, test_set, _, _ = prepare_data(config, args.data)
    result = run_similarity_experiment(
        config, train_set, test_set, args.trials, same_seed=args.same_seed, jobs=_jobs(args)
    )
    _write_matrix(result.cells, out / "cells_similarity.csv")
    _write_matrix(result.embedding, out / "embedding_similarity.csv")
    _write_csv(trials_frame(result.trials), out / "trials.csv")
    try:
        (out / "baseline.txt").write_text(
            f"cells={result.cell_baseline:.6f}\nembedding={result.embedding_baseline:.6f}\n",
            encoding="utf-8",
        )
    except OSError as e:
        raise DataIOError(out / "baseline.txt", str(e)) from e

    if args.json:
        emit_json(
            {
                "cells": result.cells.tolist(),
                "embedding": result.embedding.tolist(),
                "cells_mean": result.cells_mean,
                "embedding_mean": result.embedding_mean,
                "cells_baseline": result.cell_baseline,
                "embedding_baseline": result.embedding_baseline,
            }
        )
    else:
        emit("cells_mean", result.cells_mean)
        emit("cells_baseline", result.cell_baseline)
        emit("embedding_mean", result.embedding_mean)
        emit("embedding_baseline", result.embedding_baseline)
    return 0


def cmd_fixed_topology(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    echo_config(config)
    out = _out_dir(args.out)
    train_set, test_set, _, _ = prepare_data(config, args.data, checkpoint.vocab)
    result = run_fixed_topology_experiment(
        checkpoint.state,
        InitMode(args.mode),
        train_set,
        test_set,
        n_seeds=args.seeds,
        epochs=args.epochs,
        jobs=_jobs(args),
    )
    _write_csv(result.to_frame(), out / "fixed_topology.csv")

    if args.json:
        emit_json(
            {
                "mode": result.mode.value,
                "seeds": result.seeds,
                "accuracies": result.accuracies,
                "mean": result.mean,
                "std": result.std,
                "checkpoint_best_acc": result.checkpoint_best_acc,
            }
        )
    else:
        emit("mode", result.mode.value)
        emit("mean_test_acc", result.mean)
        emit("std_test_acc", result.std)
        emit("checkpoint_best_acc", result.checkpoint_best_acc)
    return 0


def cmd_count_params(args: argparse.Namespace) -> int:
    config = _config_from_args(
        args, epsilon=args.epsilon, model_variant=args.model_variant
    )
    rng = np.random.Generator(np.random.PCG64(config.seed))
    model = SetLstmModel.initialize(dims_of(config), config.epsilon, rng, config.model_variant)
    counts = param_count(model)

    if args.json:
        emit_json(counts.to_dict())
        return 0
    for name, n in counts.layers.items():
        emit(name, n)
    emit("total", counts.total)
    emit("total_excluding_output", counts.total_excluding_output)
    emit("dense_baseline", counts.dense_baseline)
    emit("sparsity", counts.sparsity)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    sizes = parse_sizes(args.sizes)
    print(
        f"gradcheck: seed={args.seed} instances={args.instances} "
        + ",".join(f"{k}={v}" for k, v in sizes.items()),
        file=sys.stderr,
    )
    report = run_gradcheck(
        seed=args.seed, sizes=sizes, instances=args.instances, corrupt=args.corrupt_gradient
    )
    if args.json:
        emit_json(report.to_dict())
    else:
        for line in report.to_lines():
            print(line)
    verify(report)
    return 0


# ===========================================
# Parser
# ===========================================


def build_parser() -> CliParser:
    parser = CliParser(
        prog="setlstm",
        description="SET-LSTM sparse training engine",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Train on the bundled desk corpus
  %(prog)s train --config configs/desk.cfg --data data/desk.tsv --out runs/desk

  # Parameter accounting at full scale
  %(prog)s count-params --config configs/full_scale.cfg --epsilon 2

  # Verify analytic gradients
  %(prog)s gradcheck --seed 0
        """,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    common = CliParser(add_help=False)
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level (default: SETLSTM_LOG_LEVEL or INFO)",
    )

    def add_jobs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--jobs", type=int, help="Parallel trials (default: SETLSTM_JOBS or 1)")

    p = sub.add_parser("train", parents=[common], help="Train one model")
    p.add_argument("--config", required=True, help="Config file (key=value or YAML)")
    p.add_argument("--data", required=True, help="Corpus TSV '<label>\\t<text>'")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--resume", help="Checkpoint to continue from")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--save-every", type=int, default=0, help="Checkpoint every N epochs")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument(
        "--split",
        choices=["all", "test"],
        default="all",
        help="Evaluate every example, or only the checkpoint's test split",
    )
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="Sweep zeta or epsilon")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True, choices=["zeta", "epsilon"])
    p.add_argument("--values", required=True, type=_float_list, help="e.g. 0,0.2,0.5")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true")
    add_jobs(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("similarity", parents=[common], help="Best-topology similarity")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--same-seed", action="store_true", help="Use one seed for every trial")
    p.add_argument("--json", action="store_true")
    add_jobs(p)
    p.set_defaults(handler=cmd_similarity)

    p = sub.add_parser(
        "fixed-topology", parents=[common], help="Retrain on a checkpoint's best topology"
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", required=True, choices=[m.value for m in InitMode])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, help="Default: the checkpoint's epochs")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    add_jobs(p)
    p.set_defaults(handler=cmd_fixed_topology)

    p = sub.add_parser("count-params", parents=[common], help="Parameter accounting")
    p.add_argument("--config", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--model-variant", choices=[v.value for v in ModelVariant])
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_count_params)

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="B=6,T=6,D=6,H=6,V=8,C=4")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--json", action="store_true")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_gradcheck)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except SetLstmError as e:
        logger.error(str(e))
        return e.exit_code
