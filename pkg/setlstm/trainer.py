# ===========================================
# SET-LSTM - Trainer
# Epoch loop: Adam over batches, per-epoch rewiring, evaluation, best snapshot
# ===========================================

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .config import TrainConfig
from .data import EncodedDataset, batches
from .errors import ConfigError, DataIOError, ShapeMismatchError, VersionMismatchError
from .neural import ModelDims, SetLstmModel, loss_and_grads, param_count, predict
from .optim import AdamState, adam_step, migrate_state
from .sparse import SparseMatrix
from .topology import RewireReport, rewire

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "train_loss", "train_acc", "test_acc", "nnz_total", "sparsity"]

# Config fields a resumed run may change
RESUMABLE_FIELDS = frozenset({"epochs"})

EVAL_BATCH = 256


@dataclass
class MetricsRecord:
    """One epoch of training; sparsity is recomputed from the live model"""

    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    nnz: Dict[str, int]
    nnz_total: int
    sparsity: float
    removed: int = 0
    added: int = 0

    def to_row(self) -> Dict[str, Any]:
        return {col: getattr(self, col) for col in METRICS_COLUMNS}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "test_acc": self.test_acc,
            "nnz": dict(self.nnz),
            "nnz_total": self.nnz_total,
            "sparsity": self.sparsity,
            "removed": self.removed,
            "added": self.added,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MetricsRecord":
        return cls(
            epoch=int(d["epoch"]),
            train_loss=float(d["train_loss"]),
            train_acc=float(d["train_acc"]),
            test_acc=float(d["test_acc"]),
            nnz={k: int(v) for k, v in d["nnz"].items()},
            nnz_total=int(d["nnz_total"]),
            sparsity=float(d["sparsity"]),
            removed=int(d.get("removed", 0)),
            added=int(d.get("added", 0)),
        )


@dataclass
class BestSnapshot:
    """Topology at the best test accuracy, with each connection's birth value"""

    epoch: int
    test_acc: float
    birth: Dict[str, SparseMatrix]

    def topology(self):
        return {name: w.mask() for name, w in self.birth.items()}


@dataclass
class TrainingState:
    """Everything a checkpoint persists; resuming from it is bit-identical"""

    config: TrainConfig
    model: SetLstmModel
    adam: AdamState
    rng: np.random.Generator
    epoch: int = 0
    history: List[MetricsRecord] = field(default_factory=list)
    initial: Optional[SetLstmModel] = None
    initial_test_acc: float = 0.0
    birth: Dict[str, SparseMatrix] = field(default_factory=dict)
    best: Optional[BestSnapshot] = None
    last_reports: List[RewireReport] = field(default_factory=list)

    @property
    def best_test_acc(self) -> float:
        return self.best.test_acc if self.best is not None else self.initial_test_acc

    @property
    def final_test_acc(self) -> float:
        return self.history[-1].test_acc if self.history else self.initial_test_acc


EpochCallback = Callable[[TrainingState], None]


def dims_of(config: TrainConfig) -> ModelDims:
    return ModelDims(
        vocab_size=config.vocab_size,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        seq_len=config.seq_len,
        n_classes=config.n_classes,
    )


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ===========================================
# Evaluation
# ===========================================


def _check_dataset(dataset: EncodedDataset, dims: ModelDims, name: str) -> None:
    if len(dataset) == 0:
        raise ShapeMismatchError(f"{name} set is empty")
    if dataset.seq_len != dims.seq_len:
        raise ShapeMismatchError(
            f"{name} set sequence length differs from the model",
            expected=dims.seq_len,
            actual=dataset.seq_len,
        )
    if dataset.labels.min() < 0 or dataset.labels.max() >= dims.n_classes:
        raise ConfigError(
            f"{name} set has labels outside {dims.n_classes} classes",
            field="n_classes",
        )


def evaluate(model: SetLstmModel, dataset: EncodedDataset) -> float:
    """Fraction of argmax predictions matching the labels"""
    _check_dataset(dataset, model.dims, "evaluation")
    correct = 0
    for start in range(0, len(dataset), EVAL_BATCH):
        tokens = dataset.tokens[start : start + EVAL_BATCH]
        labels = dataset.labels[start : start + EVAL_BATCH]
        correct += int((predict(model, tokens) == labels).sum())
    return correct / len(dataset)


# ===========================================
# Training
# ===========================================


def _record(
    model: SetLstmModel,
    epoch: int,
    train_loss: float,
    train_acc: float,
    test_acc: float,
    reports: List[RewireReport],
) -> MetricsRecord:
    nnz = {name: w.nnz() for name, w in model.sparse_layers().items()}
    return MetricsRecord(
        epoch=epoch,
        train_loss=train_loss,
        train_acc=train_acc,
        test_acc=test_acc,
        nnz=nnz,
        nnz_total=sum(nnz.values()),
        sparsity=param_count(model).sparsity,
        removed=sum(r.n_removed for r in reports),
        added=sum(len(r.added) for r in reports),
    )


def _update_birth(
    birth: SparseMatrix, new_w: SparseMatrix, report: RewireReport
) -> SparseMatrix:
    """Survivors keep their birth value, regrown positions are born now"""
    keep = ~np.isin(birth.keys, report.removed_keys(), assume_unique=True)
    added_idx = np.searchsorted(new_w.keys, report.added.keys)
    keys = np.concatenate([birth.keys[keep], report.added.keys])
    values = np.concatenate([birth.values[keep], new_w.values[added_idx]])
    order = np.argsort(keys, kind="stable")
    return SparseMatrix(birth.n_rows, birth.n_cols, keys[order], values[order])


def _check_resume(config: TrainConfig, state: TrainingState) -> None:
    ours, theirs = config.to_dict(), state.config.to_dict()
    differing = sorted(
        k for k in ours if ours[k] != theirs.get(k) and k not in RESUMABLE_FIELDS
    )
    if differing:
        raise VersionMismatchError(
            f"cannot resume: config differs from the checkpoint in {', '.join(differing)}",
            details={"fields": differing},
        )
    # the final epoch prunes without regrowth, so its count is fixed once reached
    finished = state.epoch > 0 and state.epoch >= state.config.epochs
    if finished and config.epochs > state.epoch:
        raise VersionMismatchError(
            f"cannot extend a finished run: epoch {state.epoch} pruned without regrowth",
            details={"fields": ["epochs"]},
        )
    if not finished and 0 < config.epochs <= state.epoch:
        raise VersionMismatchError(
            f"cannot stop at epoch {config.epochs}: epoch {state.epoch} already regrew",
            details={"fields": ["epochs"]},
        )


def start_state(
    config: TrainConfig,
    test_set: EncodedDataset,
    initial_model: Optional[SetLstmModel] = None,
) -> TrainingState:
    """Epoch-0 state: initialized model, zero moments, snapshot, initial accuracy"""
    dims = dims_of(config)
    rng = make_rng(config.seed)
    if initial_model is None:
        model = SetLstmModel.initialize(dims, config.epsilon, rng, config.model_variant)
    else:
        if initial_model.dims != dims:
            raise ShapeMismatchError(
                "initial model dims differ from the config",
                expected=list(dims.as_tuple()),
                actual=list(initial_model.dims.as_tuple()),
            )
        model = initial_model.copy()
    initial_acc = evaluate(model, test_set)
    return TrainingState(
        config=config,
        model=model,
        adam=AdamState.for_model(model, config.lr),
        rng=rng,
        initial=model.copy(),
        initial_test_acc=initial_acc,
        birth={name: w.copy() for name, w in model.sparse_layers().items()},
    )


def train(
    config: TrainConfig,
    train_set: EncodedDataset,
    test_set: EncodedDataset,
    *,
    resume: Optional[TrainingState] = None,
    initial_model: Optional[SetLstmModel] = None,
    on_epoch_end: Optional[EpochCallback] = None,
) -> TrainingState:
    """
    Train a SET-LSTM model.

    Each epoch runs a full pass of shuffled batches with Adam, then rewires
    the rewirable sparse layers (no regrowth on the final epoch), migrates the
    optimizer state and evaluates on the test set. The best snapshot follows
    the strictly highest test accuracy.

    Args:
        config: run configuration; its seed drives init, shuffling and rewiring
        train_set: encoded training examples
        test_set: encoded test examples
        resume: continue from this state; only `epochs` may differ
        initial_model: start from these parameters instead of a fresh init
        on_epoch_end: called with the state after every epoch

    Returns:
        The final TrainingState (model, history, best snapshot)
    """
    dims = dims_of(config)
    _check_dataset(train_set, dims, "training")
    _check_dataset(test_set, dims, "test")

    if resume is not None:
        if initial_model is not None:
            raise ConfigError("resume and initial_model are mutually exclusive")
        _check_resume(config, resume)
        state = resume
        state.config = config
        logger.info(f"Resuming at epoch {state.epoch} of {config.epochs}")
    else:
        state = start_state(config, test_set, initial_model)
        counts = param_count(state.model)
        logger.info(
            f"[OK] {config.model_variant.value} initialized: "
            f"{counts.total_excluding_output} params, sparsity {counts.sparsity:.4%}, "
            f"initial test_acc={state.initial_test_acc:.4f}"
        )

    rewiring = config.rewire_enabled and not config.fixed_topology
    model = state.model
    while state.epoch < config.epochs:
        epoch = state.epoch + 1
        shuffle_seed = int(state.rng.integers(2**63))
        loss_sum, correct, seen = 0.0, 0, 0
        for tokens, labels in batches(train_set, config.batch_size, shuffle_seed):
            loss, n_correct, grads = loss_and_grads(model, tokens, labels)
            adam_step(model, grads, state.adam)
            loss_sum += loss * labels.size
            correct += n_correct
            seen += labels.size

        reports: List[RewireReport] = []
        if rewiring:
            regrow = epoch != config.epochs
            for name in model.rewirable_layers():
                new_w, report = rewire(
                    model.get_sparse(name), config.zeta, regrow, state.rng, layer=name
                )
                model.set_sparse(name, new_w)
                state.adam = migrate_state(state.adam, report)
                state.birth[name] = _update_birth(state.birth[name], new_w, report)
                reports.append(report)
        state.adam.check_closure(model)

        test_acc = evaluate(model, test_set)
        record = _record(model, epoch, loss_sum / seen, correct / seen, test_acc, reports)
        state.history.append(record)
        state.last_reports = reports
        state.epoch = epoch
        if state.best is None or test_acc > state.best.test_acc:
            state.best = BestSnapshot(
                epoch=epoch,
                test_acc=test_acc,
                birth={name: w.copy() for name, w in state.birth.items()},
            )

        logger.info(
            f"epoch {epoch}/{config.epochs} loss={record.train_loss:.4f} "
            f"train_acc={record.train_acc:.4f} test_acc={test_acc:.4f} "
            f"nnz={record.nnz_total} sparsity={record.sparsity:.4%} "
            f"removed={record.removed} added={record.added}"
        )
        if on_epoch_end is not None:
            on_epoch_end(state)

    return state


# ===========================================
# Metrics files
# ===========================================


def metrics_frame(history: List[MetricsRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in history], columns=METRICS_COLUMNS)


def write_metrics_csv(history: List[MetricsRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        metrics_frame(history).to_csv(
            path, index=False, float_format="%.6f", lineterminator="\n"
        )
    except OSError as e:
        raise DataIOError(path, str(e)) from e
    return path


def write_metrics_json(state: TrainingState, path: Union[str, Path]) -> Path:
    """Full history with per-layer nnz, rewire counts and the best epoch"""
    path = Path(path)
    payload = {
        "config": state.config.to_dict(),
        "initial_test_acc": state.initial_test_acc,
        "best_epoch": state.best.epoch if state.best else 0,
        "best_test_acc": state.best_test_acc,
        "history": [r.to_dict() for r in state.history],
    }
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise DataIOError(path, str(e)) from e
    return path
