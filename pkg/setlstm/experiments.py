# ===========================================
# SET-LSTM - Experiments
# Topology similarity, fixed-topology initialization, hyperparameter sweeps
# ===========================================

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .config import InitMode, TrainConfig
from .data import EncodedDataset
from .errors import ConfigError, MissingInitialSnapshotError
from .neural import BIASES, CELL_WEIGHTS, EMBEDDING, X_WEIGHTS, SetLstmModel
from .sparse import ConnectionSet
from .topology import (
    chance_similarity,
    er_connection_count,
    glorot_limit,
    init_values,
    similarity_matrix,
)
from .trainer import TrainingState, evaluate, train

logger = logging.getLogger(__name__)

SWEEP_AXES = ("zeta", "epsilon")

# Stream index for drawing fresh values on a fixed topology
_FRESH_STREAM = 1


def trial_seed(seed: int, index: int) -> int:
    """Independent per-trial seed derived from (base seed, trial index)"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class TrialResult:
    index: int
    seed: int
    best_test_acc: float
    final_test_acc: float
    best_epoch: int
    topology: Dict[str, ConnectionSet] = field(default_factory=dict)


def _run_trial(
    config: TrainConfig,
    train_set: EncodedDataset,
    test_set: EncodedDataset,
    index: int,
    seed: int,
    initial_model: Optional[SetLstmModel] = None,
) -> TrialResult:
    state = train(config.replace(seed=seed), train_set, test_set, initial_model=initial_model)
    best_epoch = state.best.epoch if state.best else 0
    topology = state.best.topology() if state.best else state.model.topology()
    logger.info(
        f"trial {index} seed={seed} best_test_acc={state.best_test_acc:.4f} "
        f"(epoch {best_epoch})"
    )
    return TrialResult(
        index=index,
        seed=seed,
        best_test_acc=state.best_test_acc,
        final_test_acc=state.final_test_acc,
        best_epoch=best_epoch,
        topology=topology,
    )


def run_trials(
    config: TrainConfig,
    train_set: EncodedDataset,
    test_set: EncodedDataset,
    seeds: Sequence[int],
    jobs: int = 1,
    initial_models: Optional[Sequence[SetLstmModel]] = None,
) -> List[TrialResult]:
    """Train one model per seed, in parallel when jobs > 1; ordered by index"""
    models = list(initial_models) if initial_models is not None else [None] * len(seeds)
    calls = [
        (config, train_set, test_set, i, s, m)
        for i, (s, m) in enumerate(zip(seeds, models))
    ]
    if jobs == 1:
        results = [_run_trial(*call) for call in calls]
    else:
        results = Parallel(n_jobs=jobs)(delayed(_run_trial)(*call) for call in calls)
    return sorted(results, key=lambda r: r.index)


def trials_frame(trials: Sequence[TrialResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "trial": t.index,
                "seed": t.seed,
                "best_epoch": t.best_epoch,
                "best_test_acc": t.best_test_acc,
                "final_test_acc": t.final_test_acc,
            }
            for t in trials
        ],
        columns=["trial", "seed", "best_epoch", "best_test_acc", "final_test_acc"],
    )


# ===========================================
# Topology similarity
# ===========================================


@dataclass
class SimilarityResult:
    cells: np.ndarray
    embedding: np.ndarray
    cell_baseline: float
    embedding_baseline: float
    trials: List[TrialResult]

    @staticmethod
    def _off_diagonal_mean(m: np.ndarray) -> float:
        n = m.shape[0]
        return float((m.sum() - np.trace(m)) / (n * (n - 1)))

    @property
    def cells_mean(self) -> float:
        return self._off_diagonal_mean(self.cells)

    @property
    def embedding_mean(self) -> float:
        return self._off_diagonal_mean(self.embedding)


def chance_baselines(config: TrainConfig) -> Dict[str, float]:
    """Expected similarity of two independent topologies, per layer group"""
    d, h, v = config.embed_dim, config.hidden_dim, config.vocab_size
    gates = []
    for name in CELL_WEIGHTS:
        n_in = d if name in X_WEIGHTS else h
        if config.sparse_cell:
            gates.append(chance_similarity(n_in, h, er_connection_count(n_in, h, config.epsilon)))
        else:
            gates.append(1.0)
    if config.sparse_embedding:
        emb = chance_similarity(v, d, er_connection_count(v, d, config.epsilon))
    else:
        emb = 1.0
    return {"cells": float(np.mean(gates)), "embedding": emb}


def run_similarity_experiment(
    config: TrainConfig,
    train_set: EncodedDataset,
    test_set: EncodedDataset,
    n_trials: int,
    same_seed: bool = False,
    jobs: int = 1,
) -> SimilarityResult:
    """
    Train n_trials models and compare their best topologies.

    The cell matrix is the mean of the eight per-gate similarity matrices;
    the embedding matrix compares embedding masks directly.
    """
    if n_trials < 2:
        raise ConfigError("similarity needs at least two trials", field="trials")
    if same_seed:
        seeds = [config.seed] * n_trials
    else:
        seeds = [trial_seed(config.seed, i) for i in range(n_trials)]
    trials = run_trials(config, train_set, test_set, seeds, jobs)

    per_gate = [
        similarity_matrix([t.topology[name] for t in trials]) for name in CELL_WEIGHTS
    ]
    cells = np.mean(per_gate, axis=0)
    embedding = similarity_matrix([t.topology[EMBEDDING] for t in trials])
    baselines = chance_baselines(config)
    result = SimilarityResult(
        cells=cells,
        embedding=embedding,
        cell_baseline=baselines["cells"],
        embedding_baseline=baselines["embedding"],
        trials=trials,
    )
    logger.info(
        f"[OK] similarity over {n_trials} trials: cells {result.cells_mean:.4f} "
        f"(chance {result.cell_baseline:.4f}), embedding {result.embedding_mean:.4f} "
        f"(chance {result.embedding_baseline:.4f})"
    )
    return result


# ===========================================
# Fixed topology
# ===========================================


@dataclass
class FixedTopologyResult:
    mode: InitMode
    seeds: List[int]
    accuracies: List[float]
    checkpoint_best_acc: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "seed": self.seeds,
                "mode": [self.mode.value] * len(self.seeds),
                "test_acc": self.accuracies,
            }
        )


def fixed_topology_model(state: TrainingState, mode: InitMode, seed: int) -> SetLstmModel:
    """
    Model on the best topology of a finished run.

    same-as-checkpoint restores every connection's birth value and the
    epoch-0 dense parameters; fresh draws new values from the init laws.

    Raises:
        MissingInitialSnapshotError: same-as-checkpoint without epoch-0 values
    """
    mode = InitMode(mode)
    if state.best is not None:
        birth = state.best.birth
    else:
        birth = state.birth
    if mode == InitMode.same_as_checkpoint:
        if state.initial is None or not birth:
            raise MissingInitialSnapshotError()
        model = state.initial.copy()
        for name, w in birth.items():
            model.set_sparse(name, w.copy())
        return model

    base = state.initial if state.initial is not None else state.model
    model = base.copy()
    rng = np.random.default_rng([seed, _FRESH_STREAM])
    topology = {name: w.mask() for name, w in birth.items()} or model.topology()
    for name, mask in topology.items():
        model.set_sparse(name, init_values(mask, rng))
    for name in BIASES:
        model.set_dense(name, np.zeros(model.dims.hidden_dim))
    h, c = model.dims.hidden_dim, model.dims.n_classes
    limit = glorot_limit(h, c)
    model.set_dense("w_out", rng.uniform(-limit, limit, size=(h, c)))
    model.set_dense("b_out", np.zeros(c))
    return model


def run_fixed_topology_experiment(
    state: TrainingState,
    mode: InitMode,
    train_set: EncodedDataset,
    test_set: EncodedDataset,
    n_seeds: int = 5,
    epochs: Optional[int] = None,
    jobs: int = 1,
) -> FixedTopologyResult:
    """
    Retrain on a checkpoint's best topology with rewiring disabled.

    Seeds are derived from the checkpoint's seed so fresh and same runs pair
    up. With epochs=0 the reconstructed model is evaluated directly; in
    same-as-checkpoint mode that model is the best topology carrying each
    connection's birth value, so it reproduces the initial accuracy only when
    the run never rewired.
    """
    mode = InitMode(mode)
    if n_seeds < 1:
        raise ConfigError("need at least one seed", field="seeds")
    if epochs is not None and epochs < 0:
        raise ConfigError("epochs must be non-negative", field="epochs")
    base = state.config
    seeds = [trial_seed(base.seed, i) for i in range(n_seeds)]
    models = [fixed_topology_model(state, mode, s) for s in seeds]

    if epochs == 0:
        accuracies = [evaluate(m, test_set) for m in models]
    else:
        config = base.replace(
            rewire_enabled=False,
            init_mode=mode.value,
            epochs=base.epochs if epochs is None else epochs,
        )
        trials = run_trials(config, train_set, test_set, seeds, jobs, initial_models=models)
        accuracies = [t.best_test_acc for t in trials]

    result = FixedTopologyResult(
        mode=mode,
        seeds=seeds,
        accuracies=accuracies,
        checkpoint_best_acc=state.best_test_acc,
    )
    logger.info(
        f"[OK] fixed topology ({mode.value}): mean {result.mean:.4f} std {result.std:.4f} "
        f"over {n_seeds} seeds; checkpoint best {result.checkpoint_best_acc:.4f}"
    )
    return result


# ===========================================
# Sweeps
# ===========================================


@dataclass
class SweepResult:
    axis: str
    summary: pd.DataFrame
    trials: pd.DataFrame


def run_sweep(
    config: TrainConfig,
    train_set: EncodedDataset,
    test_set: EncodedDataset,
    axis: str,
    values: Sequence[float],
    trials: int = 1,
    jobs: int = 1,
) -> SweepResult:
    """
    Train `trials` models per value of zeta or epsilon.

    Trial seeds are shared across values so rows are paired. The summary
    has one row per value: value, mean and population std of the best test
    accuracy, trial count.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}", field="axis")
    if not values:
        raise ConfigError("sweep needs at least one value", field="values")
    if trials < 1:
        raise ConfigError("sweep needs at least one trial", field="trials")

    seeds = [trial_seed(config.seed, i) for i in range(trials)]
    summary_rows, trial_rows = [], []
    for value in values:
        point = config.replace(**{axis: value})
        results = run_trials(point, train_set, test_set, seeds, jobs)
        accs = [r.best_test_acc for r in results]
        summary_rows.append(
            {
                axis: float(value),
                "mean_test_acc": float(np.mean(accs)),
                "std_test_acc": float(np.std(accs)),
                "trials": len(accs),
            }
        )
        table = trials_frame(results)
        table.insert(0, axis, float(value))
        trial_rows.append(table)
        logger.info(
            f"[OK] {axis}={value}: mean {np.mean(accs):.4f} std {np.std(accs):.4f}"
        )

    summary = pd.DataFrame(
        summary_rows, columns=[axis, "mean_test_acc", "std_test_acc", "trials"]
    )
    trial_table = pd.concat(trial_rows, ignore_index=True)
    return SweepResult(axis=axis, summary=summary, trials=trial_table)
