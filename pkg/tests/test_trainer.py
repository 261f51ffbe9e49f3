# ===========================================
# SET-LSTM - Trainer Tests
# ===========================================

import json

import numpy as np
import pandas as pd
import pytest

from setlstm.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint
from setlstm.data import EncodedDataset
from setlstm.errors import ConfigError, ShapeMismatchError, VersionMismatchError
from setlstm.neural import CELL_WEIGHTS, EMBEDDING, SetLstmModel
from setlstm.trainer import (
    METRICS_COLUMNS,
    dims_of,
    evaluate,
    train,
    write_metrics_csv,
    write_metrics_json,
)


def total_nnz(model):
    return sum(w.nnz() for w in model.sparse_layers().values())


class TestRewiringSchedule:
    def test_single_epoch_prunes_without_regrowth(self, tiny_config, tiny_data):
        """The last epoch prunes only"""
        config = tiny_config.replace(epochs=1)
        state = train(config, *tiny_data)
        record = state.history[0]
        assert record.removed > 0
        assert record.added == 0
        assert total_nnz(state.model) == total_nnz(state.initial) - record.removed
        assert record.nnz_total == total_nnz(state.model)

    def test_budget_kept_before_last_epoch(self, tiny_config, tiny_data):
        state = train(tiny_config, *tiny_data)
        initial = total_nnz(state.initial)
        nnz = [r.nnz_total for r in state.history]
        assert nnz[:-1] == [initial] * (len(nnz) - 1)
        assert nnz[-1] < initial
        for r in state.history[:-1]:
            assert r.added == r.removed > 0
            assert r.nnz == {n: w.nnz() for n, w in state.initial.sparse_layers().items()}

    def test_rewiring_disabled(self, tiny_config, tiny_data):
        config = tiny_config.replace(rewire_enabled=False)
        state = train(config, *tiny_data)
        assert state.model.topology() == state.initial.topology()
        assert all(r.removed == r.added == 0 for r in state.history)

    def test_fixed_topology_never_rewires(self, tiny_config, tiny_data):
        config = tiny_config.replace(fixed_topology="runs/base/final.ckpt")
        state = train(config, *tiny_data)
        assert state.model.topology() == state.initial.topology()

    def test_setc_keeps_dense_embedding(self, tiny_config, tiny_data):
        config = tiny_config.replace(model_variant="setc_lstm")
        state = train(config, *tiny_data)
        emb = state.model.get_sparse(EMBEDDING)
        assert emb.nnz() == emb.n_rows * emb.n_cols
        assert state.history[-1].removed > 0

    def test_optimizer_state_tracks_masks(self, tiny_config, tiny_data):
        state = train(tiny_config, *tiny_data)
        state.adam.check_closure(state.model)
        assert state.adam.t == tiny_config.epochs * 6

    def test_zero_rate_equals_static_training(self, tiny_config, tiny_data):
        """zeta 0 consumes no randomness and changes nothing"""
        static = train(tiny_config.replace(rewire_enabled=False), *tiny_data)
        zero = train(tiny_config.replace(zeta=0.0), *tiny_data)
        for name, w in static.model.sparse_layers().items():
            assert zero.model.get_sparse(name).entries() == w.entries()
        assert [r.test_acc for r in zero.history] == [r.test_acc for r in static.history]


class TestDeterminism:
    def test_same_seed_same_run(self, tiny_config, tiny_data):
        a = train(tiny_config, *tiny_data)
        b = train(tiny_config, *tiny_data)
        assert [r.to_dict() for r in a.history] == [r.to_dict() for r in b.history]
        for name, w in a.model.sparse_layers().items():
            assert b.model.get_sparse(name).entries() == w.entries()
        np.testing.assert_array_equal(a.model.output.w_out, b.model.output.w_out)

    def test_different_seed_different_topology(self, tiny_config, tiny_data):
        a = train(tiny_config.replace(epochs=1), *tiny_data)
        b = train(tiny_config.replace(epochs=1, seed=6), *tiny_data)
        assert a.initial.topology() != b.initial.topology()

    def test_resume_matches_uninterrupted_run(self, tiny_config, tiny_data):
        """Stopping after epoch 1 and resuming is bit-identical"""
        saved = {}

        def keep_epoch_one(state):
            if state.epoch == 1:
                saved["bytes"] = encode_checkpoint(Checkpoint(state))

        full = train(tiny_config, *tiny_data, on_epoch_end=keep_epoch_one)
        resumed_state = decode_checkpoint(saved["bytes"]).state
        resumed = train(tiny_config, *tiny_data, resume=resumed_state)

        assert resumed.epoch == full.epoch
        assert [r.to_dict() for r in resumed.history] == [r.to_dict() for r in full.history]
        for name, w in full.model.sparse_layers().items():
            got = resumed.model.get_sparse(name)
            np.testing.assert_array_equal(got.keys, w.keys)
            np.testing.assert_array_equal(got.values, w.values)
        np.testing.assert_array_equal(resumed.model.output.w_out, full.model.output.w_out)
        assert resumed.best.epoch == full.best.epoch

    def test_resume_rejects_changed_config(self, tiny_config, tiny_data):
        state = train(tiny_config.replace(epochs=1), *tiny_data)
        with pytest.raises(VersionMismatchError) as exc:
            train(tiny_config.replace(zeta=0.5), *tiny_data, resume=state)
        assert "zeta" in exc.value.details["fields"]

    def test_finished_run_cannot_be_extended(self, tiny_config, tiny_data):
        """The last epoch already pruned without regrowth"""
        state = train(tiny_config.replace(epochs=1), *tiny_data)
        with pytest.raises(VersionMismatchError) as exc:
            train(tiny_config.replace(epochs=2), *tiny_data, resume=state)
        assert exc.value.details["fields"] == ["epochs"]

    def test_cannot_stop_on_a_regrown_epoch(self, tiny_config, tiny_data):
        saved = {}

        def keep_epoch_two(state):
            if state.epoch == 2:
                saved["bytes"] = encode_checkpoint(Checkpoint(state))

        train(tiny_config, *tiny_data, on_epoch_end=keep_epoch_two)
        with pytest.raises(VersionMismatchError):
            train(tiny_config.replace(epochs=2), *tiny_data, resume=decode_checkpoint(saved["bytes"]).state)

    def test_mid_run_resume_may_extend_epochs(self, tiny_config, tiny_data):
        """Extending before the last epoch keeps every layer's budget until the new last epoch"""
        saved = {}

        def keep_epoch_one(state):
            if state.epoch == 1:
                saved["bytes"] = encode_checkpoint(Checkpoint(state))

        train(tiny_config, *tiny_data, on_epoch_end=keep_epoch_one)
        resumed = decode_checkpoint(saved["bytes"]).state
        extended = train(tiny_config.replace(epochs=4), *tiny_data, resume=resumed)

        assert extended.epoch == 4
        assert len(extended.history) == 4
        budget = {n: w.nnz() for n, w in extended.initial.sparse_layers().items()}
        for record in extended.history[:-1]:
            assert record.nnz == budget
        assert extended.history[-1].added == 0
        assert extended.history[-1].nnz_total < sum(budget.values())

    def test_resume_with_initial_model_rejected(self, tiny_config, tiny_data):
        state = train(tiny_config.replace(epochs=1), *tiny_data)
        with pytest.raises(ConfigError):
            train(tiny_config, *tiny_data, resume=state, initial_model=state.model)


class TestBestSnapshot:
    def test_best_is_first_maximum(self, tiny_config, tiny_data):
        state = train(tiny_config, *tiny_data)
        accs = [r.test_acc for r in state.history]
        assert state.best.test_acc == max(accs)
        assert state.best.epoch == accs.index(max(accs)) + 1
        assert state.best_test_acc == max(accs)
        assert state.final_test_acc == accs[-1]

    def test_birth_values_without_rewiring(self, tiny_config, tiny_data):
        """Static topology keeps every connection's initial value as its birth value"""
        state = train(tiny_config.replace(rewire_enabled=False), *tiny_data)
        for name, w in state.initial.sparse_layers().items():
            assert state.best.birth[name].entries() == w.entries()

    def test_birth_values_follow_regrowth(self, tiny_config, tiny_data):
        state = train(tiny_config.replace(epochs=2), *tiny_data)
        for name in CELL_WEIGHTS:
            birth = state.birth[name]
            live = state.model.get_sparse(name)
            np.testing.assert_array_equal(birth.keys, live.keys)

    def test_initial_model_is_used(self, tiny_config, tiny_data):
        model = SetLstmModel.initialize(dims_of(tiny_config), 1.0, np.random.default_rng(99))
        state = train(tiny_config.replace(epochs=1), *tiny_data, initial_model=model)
        assert state.initial.topology() == model.topology()
        assert state.initial_test_acc == evaluate(model, tiny_data[1])


class TestEvaluate:
    @pytest.fixture
    def flat_model(self, tiny_config):
        model = SetLstmModel.initialize(dims_of(tiny_config), 2.0, np.random.default_rng(0))
        model.set_dense("w_out", np.zeros_like(model.output.w_out))
        return model

    def test_ties_predict_class_zero(self, flat_model, tiny_config):
        tokens = np.zeros((5, tiny_config.seq_len), dtype=np.int64)
        assert evaluate(flat_model, EncodedDataset(tokens, np.zeros(5))) == 1.0
        assert evaluate(flat_model, EncodedDataset(tokens, np.ones(5))) == 0.0

    def test_sequence_length_mismatch(self, flat_model):
        with pytest.raises(ShapeMismatchError):
            evaluate(flat_model, EncodedDataset(np.zeros((2, 3)), np.zeros(2)))

    def test_label_out_of_range(self, flat_model, tiny_config):
        data = EncodedDataset(np.zeros((2, tiny_config.seq_len)), np.array([0, 2]))
        with pytest.raises(ConfigError):
            evaluate(flat_model, data)

    def test_empty_dataset(self, flat_model, tiny_config):
        data = EncodedDataset(np.zeros((0, tiny_config.seq_len)), np.zeros(0))
        with pytest.raises(ShapeMismatchError):
            evaluate(flat_model, data)


class TestMetricsFiles:
    def test_csv(self, tmp_path, tiny_config, tiny_data):
        state = train(tiny_config, *tiny_data)
        path = write_metrics_csv(state.history, tmp_path / "metrics.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == METRICS_COLUMNS
        assert frame["epoch"].tolist() == [1, 2, 3]
        assert frame["nnz_total"].tolist() == [r.nnz_total for r in state.history]
        assert path.read_text(encoding="utf-8").count("\r") == 0

    def test_json(self, tmp_path, tiny_config, tiny_data):
        state = train(tiny_config.replace(epochs=2), *tiny_data)
        path = write_metrics_json(state, tmp_path / "metrics.json")
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["best_epoch"] == state.best.epoch
        assert len(payload["history"]) == 2
        assert set(payload["history"][0]["nnz"]) == set(state.model.sparse_layers())
