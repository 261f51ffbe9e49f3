# ===========================================
# SET-LSTM - Desk-Scale Acceptance Runs
# Run with: pytest -m slow
# ===========================================

import math
from pathlib import Path

import numpy as np
import pytest

from setlstm import topology, trainer
from setlstm.config import InitMode
from setlstm.config_loader import resolve_config
from setlstm.data import build_vocab, encode_corpus, split
from setlstm.experiments import (
    run_fixed_topology_experiment,
    run_similarity_experiment,
    run_sweep,
)
from setlstm.gradcheck import run_gradcheck
from setlstm.synthetic import generate_sentiment_corpus
from setlstm.trainer import train

from .oracle import rewire_oracle

pytestmark = pytest.mark.slow

DESK_CONFIG = Path(__file__).parent.parent / "configs" / "desk.cfg"


@pytest.fixture(scope="module")
def desk_config():
    return resolve_config(DESK_CONFIG)


@pytest.fixture(scope="module")
def desk_data(desk_config):
    corpus = generate_sentiment_corpus(n_examples=2000, n_classes=2, seed=0)
    train_c, test_c = split(corpus, desk_config.split_ratio, desk_config.seed)
    vocab = build_vocab(train_c, desk_config.vocab_size)
    return (
        encode_corpus(train_c, vocab, desk_config.seq_len),
        encode_corpus(test_c, vocab, desk_config.seq_len),
    )


@pytest.fixture(scope="module")
def desk_run(desk_config, desk_data):
    return train(desk_config, *desk_data)


def test_gradcheck_suite():
    report = run_gradcheck(seed=0, instances=20)
    assert report.passed, report.failing()


def test_trainable_at_high_sparsity(desk_run):
    assert desk_run.best_test_acc >= 0.90
    assert desk_run.history[0].train_loss < math.log(2)


def test_trainable_across_densities(desk_config, desk_data):
    result = run_sweep(desk_config, *desk_data, "epsilon", [2.0, 10.0], trials=1)
    assert (result.summary["mean_test_acc"] >= 0.85).all()


def test_rewiring_keeps_layer_budgets(desk_config, desk_data, monkeypatch):
    """Every prune step matches the sorting oracle; budgets hold until the last epoch"""
    config = desk_config.replace(zeta=0.4)
    checked = []

    def checked_rewire(w, zeta, regrow, rng, layer=""):
        new_w, report = topology.rewire(w, zeta, regrow, rng, layer=layer)
        removed = {(int(k) // w.n_cols, int(k) % w.n_cols) for k in report.removed_keys()}
        assert removed == rewire_oracle(w.entries(), zeta)
        checked.append(layer)
        return new_w, report

    monkeypatch.setattr(trainer, "rewire", checked_rewire)
    state = train(config, *desk_data, on_epoch_end=lambda s: s.adam.check_closure(s.model))
    initial = {n: w.nnz() for n, w in state.initial.sparse_layers().items()}
    assert len(checked) == config.epochs * len(initial)
    for record in state.history[:-1]:
        assert record.nnz == initial
        assert record.removed == record.added


def test_independent_topologies_near_chance(desk_config, desk_data):
    result = run_similarity_experiment(desk_config, *desk_data, n_trials=5)
    assert result.cells_mean == pytest.approx(result.cell_baseline, rel=0.5)
    assert result.embedding_mean == pytest.approx(result.embedding_baseline, rel=0.5)


def test_same_initialization_helps(desk_run, desk_data):
    same = run_fixed_topology_experiment(
        desk_run, InitMode.same_as_checkpoint, *desk_data, n_seeds=5
    )
    fresh = run_fixed_topology_experiment(desk_run, InitMode.fresh, *desk_data, n_seeds=5)
    assert same.mean >= fresh.mean
    assert np.std(fresh.accuracies) >= np.std(same.accuracies)
