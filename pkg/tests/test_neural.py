# ===========================================
# SET-LSTM - Neural Layer Tests
# ===========================================

import numpy as np
import pytest

from setlstm.config import ModelVariant
from setlstm.errors import (
    CacheMismatchError,
    LabelOutOfRangeError,
    ShapeMismatchError,
    TokenOutOfRangeError,
)
from setlstm.gradcheck import check_instance, random_instance
from setlstm.neural import (
    BIASES,
    CELL_WEIGHTS,
    EMBEDDING,
    SPARSE_LAYERS,
    X_WEIGHTS,
    EmbeddingParams,
    LstmCellParams,
    ModelDims,
    OutputParams,
    SetLstmModel,
    dense_baseline_count,
    embedding_backward,
    embedding_forward,
    lstm_backward,
    lstm_sequence_forward,
    loss_and_grads,
    lstm_step,
    model_forward,
    output_forward,
    param_count,
    predict,
    softmax_cross_entropy,
)
from setlstm.sparse import ConnectionSet, SparseMatrix, densify, from_triplets

from .oracle import dense_embedding_grad, dense_forward, dense_loss, dense_step, dense_weights

FULL_SCALE_DIMS = ModelDims(vocab_size=20000, embed_dim=256, hidden_dim=256, seq_len=100, n_classes=2)


def empty_cell(d, h, **biases):
    weights = {
        name: SparseMatrix.zeros_like_mask(ConnectionSet.empty(d if name in X_WEIGHTS else h, h))
        for name in CELL_WEIGHTS
    }
    values = {name: np.zeros(h) for name in BIASES}
    values.update(biases)
    return LstmCellParams(**weights, **values)


class TestEmbedding:
    def test_empty_embedding(self):
        """Empty w_e gives all-zero vectors"""
        e = EmbeddingParams(from_triplets(6, 3, []))
        x = embedding_forward(np.array([[1, 5], [0, 2]]), e)
        assert x.shape == (2, 2, 3)
        assert not x.any()

    def test_single_entry(self):
        """Token 5 picks up the stored entry; token 3 is zero"""
        e = EmbeddingParams(from_triplets(6, 3, [(5, 0, 2.0)]))
        x = embedding_forward(np.array([[5, 3]]), e)
        np.testing.assert_array_equal(x[0, 0], [2.0, 0.0, 0.0])
        np.testing.assert_array_equal(x[0, 1], [0.0, 0.0, 0.0])

    def test_matches_dense_gather(self, rng):
        model, tokens, _ = random_instance({"B": 5, "T": 6, "D": 6, "H": 3, "V": 9, "C": 2}, rng)
        x = embedding_forward(tokens, model.embedding)
        np.testing.assert_array_equal(x, densify(model.embedding.w_e)[tokens])

    def test_token_out_of_range(self):
        e = EmbeddingParams(from_triplets(4, 2, [(0, 0, 1.0)]))
        with pytest.raises(TokenOutOfRangeError):
            embedding_forward(np.array([[0, 4]]), e)
        with pytest.raises(TokenOutOfRangeError):
            embedding_forward(np.array([[-1, 0]]), e)

    def test_backward_scatter(self, rng):
        """Gradient sums occurrences and stays on the mask"""
        mask = ConnectionSet.from_positions(5, 3, [(0, 1), (2, 0), (2, 2), (4, 1)])
        tokens = rng.integers(5, size=(3, 4))
        tokens[0, 0] = tokens[1, 2] = 2
        dx = rng.normal(size=(3, 4, 3))
        grad = embedding_backward(tokens, dx, mask)
        assert grad.mask() == mask
        full = dense_embedding_grad(tokens, dx, 5)
        np.testing.assert_allclose(grad.values, full[mask.rows, mask.cols], atol=1e-12)

    def test_backward_unseen_rows_are_zero(self):
        """Rows of tokens not in the batch get zero gradient"""
        mask = ConnectionSet.from_positions(4, 2, [(1, 0), (3, 1)])
        grad = embedding_backward(np.array([[1, 1]]), np.ones((1, 2, 2)), mask)
        assert grad.entries() == [(1, 0, 2.0), (3, 1, 0.0)]


class TestLstmStep:
    def test_zero_weights(self):
        """sigma(0) = 0.5 everywhere and g = 0"""
        p = empty_cell(3, 2)
        c0 = np.array([[1.0, -2.0]])
        h, c, cache = lstm_step(np.ones((1, 3)), np.zeros((1, 2)), c0, p)
        np.testing.assert_allclose(cache.i, 0.5)
        np.testing.assert_allclose(cache.f, 0.5)
        np.testing.assert_allclose(cache.o, 0.5)
        np.testing.assert_allclose(cache.g, 0.0)
        np.testing.assert_allclose(c, 0.5 * c0)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c0))

    def test_saturated_forget_gate(self):
        """A large forget bias keeps the cell state"""
        p = empty_cell(3, 2, b_f=np.full(2, 100.0), b_i=np.full(2, -100.0))
        c0 = np.array([[0.7, -0.3]])
        _, c, _ = lstm_step(np.ones((1, 3)), np.zeros((1, 2)), c0, p)
        np.testing.assert_allclose(c, c0, atol=1e-12)

    def test_matches_dense_step(self, rng):
        """B=2, D=3, H=2 against the gate-by-gate dense step"""
        model, _, _ = random_instance({"B": 2, "T": 1, "D": 3, "H": 2, "V": 3, "C": 2}, rng)
        d, h = model.dims.embed_dim, model.dims.hidden_dim
        x, h0, c0 = rng.normal(size=(2, d)), rng.normal(size=(2, h)), rng.normal(size=(2, h))
        h1, c1, _ = lstm_step(x, h0, c0, model.cell)
        h_ref, c_ref = dense_step(x, h0, c0, dense_weights(model))
        np.testing.assert_allclose(h1, h_ref, atol=1e-12)
        np.testing.assert_allclose(c1, c_ref, atol=1e-12)

    def test_gate_ranges(self, rng):
        model, tokens, _ = random_instance({"B": 4, "T": 5, "D": 4, "H": 4, "V": 6, "C": 2}, rng)
        x = embedding_forward(tokens, model.embedding)
        h, caches = lstm_sequence_forward(x, model.cell)
        assert np.all(np.abs(h) < 1.0)
        for s in caches:
            for gate in (s.i, s.f, s.o):
                assert np.all((gate > 0) & (gate < 1))
            assert np.all(np.abs(s.g) < 1.0)

    def test_shape_mismatch(self):
        p = empty_cell(3, 2)
        with pytest.raises(ShapeMismatchError):
            lstm_step(np.ones((1, 3)), np.zeros((2, 2)), np.zeros((1, 2)), p)


class TestSequence:
    def test_single_step_equals_step(self, rng):
        model, _, _ = random_instance({"B": 3, "T": 1, "D": 4, "H": 3, "V": 4, "C": 2}, rng)
        x = rng.normal(size=(3, 1, model.dims.embed_dim))
        h_seq, caches = lstm_sequence_forward(x, model.cell)
        h_step, _, _ = lstm_step(x[:, 0], np.zeros((3, 3)), np.zeros((3, 3)), model.cell)
        assert len(caches) == 1
        np.testing.assert_allclose(h_seq, h_step, atol=1e-12)

    def test_zero_fixed_point(self):
        """Zero inputs and zero parameters keep h and c at zero"""
        h, caches = lstm_sequence_forward(np.zeros((2, 7, 3)), empty_cell(3, 4))
        assert not h.any()
        assert all(not s.c.any() for s in caches)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ShapeMismatchError):
            lstm_sequence_forward(np.zeros((2, 0, 3)), empty_cell(3, 4))

    def test_backward_cache_mismatch(self, rng):
        p = empty_cell(3, 4)
        _, caches = lstm_sequence_forward(rng.normal(size=(2, 3, 3)), p)
        with pytest.raises(CacheMismatchError):
            lstm_backward(caches, np.zeros((5, 4)), p)
        with pytest.raises(CacheMismatchError):
            lstm_backward([], np.zeros((2, 4)), p)
        with pytest.raises(CacheMismatchError):
            lstm_backward(caches, np.zeros((2, 5)), empty_cell(3, 5))


class TestModelForward:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_dense_oracle(self, seed):
        """Sparse pipeline equals the densified reference within 1e-12"""
        model, tokens, labels = random_instance(
            {"B": 6, "T": 6, "D": 6, "H": 5, "V": 9, "C": 4}, np.random.default_rng(seed)
        )
        logits, _ = model_forward(model, tokens)
        np.testing.assert_allclose(logits, dense_forward(model, tokens), atol=1e-12)
        loss, _ = softmax_cross_entropy(logits, labels)
        assert loss == pytest.approx(dense_loss(model, tokens, labels), abs=1e-12)

    def test_predict_tie_goes_to_lowest_class(self):
        model = SetLstmModel(
            embedding=EmbeddingParams(from_triplets(3, 2, [])),
            cell=empty_cell(2, 2),
            output=OutputParams(w_out=np.zeros((2, 3)), b_out=np.zeros(3)),
            dims=ModelDims(3, 2, 2, 4, 3),
        )
        assert predict(model, np.zeros((2, 4), dtype=int)).tolist() == [0, 0]

    def test_output_identity_adds_bias(self):
        h = np.array([[0.5, -1.0, 2.0], [0.0, 3.0, -0.25]])
        b = np.array([0.1, -0.2, 0.3])
        logits = output_forward(h, OutputParams(w_out=np.eye(3), b_out=b))
        np.testing.assert_array_equal(logits, h + b)

    def test_output_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            output_forward(np.zeros((2, 3)), OutputParams(np.zeros((2, 2)), np.zeros(2)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        """Equal logits give log C"""
        loss, dlogits = softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
        assert loss == pytest.approx(np.log(4))
        np.testing.assert_allclose(dlogits.sum(axis=1), 0.0, atol=1e-15)

    def test_large_logits_are_stable(self):
        loss, dlogits = softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(dlogits))

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRangeError):
            softmax_cross_entropy(np.zeros((1, 2)), np.array([2]))


class TestGradients:
    def test_finite_differences(self, toy_instance):
        """Every parameter class within 1e-4 relative error"""
        model, tokens, labels = toy_instance
        errors = check_instance(model, tokens, labels)
        assert set(errors) == set(SPARSE_LAYERS) | set(BIASES) | {"w_out", "b_out"}
        assert max(errors.values()) < 1e-4

    def test_corrupted_gradient_is_caught(self, toy_instance):
        model, tokens, labels = toy_instance
        errors = check_instance(model, tokens, labels, corrupt=True)
        assert errors["b_out"] > 1e-4

    def test_gradients_stay_on_masks(self, toy_instance):
        model, tokens, labels = toy_instance
        _, correct, grads = loss_and_grads(model, tokens, labels)
        assert 0 <= correct <= len(labels)
        for name, w in model.sparse_layers().items():
            assert grads.sparse[name].mask() == w.mask()


class TestModel:
    def test_initialize_is_seeded(self):
        dims = ModelDims(30, 6, 5, 4, 2)
        a = SetLstmModel.initialize(dims, 2.0, np.random.default_rng(3))
        b = SetLstmModel.initialize(dims, 2.0, np.random.default_rng(3))
        for name in SPARSE_LAYERS:
            assert a.get_sparse(name).entries() == b.get_sparse(name).entries()
        np.testing.assert_array_equal(a.output.w_out, b.output.w_out)
        assert not any(a.dense_params()[n].any() for n in BIASES)

    def test_masks_are_independent(self):
        """Gates sharing a shape draw different topologies"""
        model = SetLstmModel.initialize(ModelDims(30, 10, 10, 4, 2), 2.0, np.random.default_rng(0))
        masks = [model.get_sparse(n).mask() for n in CELL_WEIGHTS]
        assert any(masks[0] != m for m in masks[1:])

    @pytest.mark.parametrize(
        "variant,rewirable",
        [
            (ModelVariant.set_lstm, SPARSE_LAYERS),
            (ModelVariant.setc_lstm, CELL_WEIGHTS),
            (ModelVariant.dense_lstm, ()),
        ],
    )
    def test_variants(self, variant, rewirable):
        dims = ModelDims(20, 6, 5, 4, 2)
        model = SetLstmModel.initialize(dims, 1.0, np.random.default_rng(0), variant)
        assert model.rewirable_layers() == rewirable
        emb_dense = model.get_sparse(EMBEDDING).nnz() == 20 * 6
        assert emb_dense == (variant != ModelVariant.set_lstm)

    def test_copy_is_deep(self):
        model = SetLstmModel.initialize(ModelDims(20, 4, 4, 3, 2), 2.0, np.random.default_rng(0))
        clone = model.copy()
        clone.get_sparse("w_hi").values[:] = 9.0
        clone.output.b_out[:] = 9.0
        assert not np.any(model.get_sparse("w_hi").values == 9.0)
        assert not np.any(model.output.b_out == 9.0)

    def test_set_sparse_shape_checked(self):
        model = SetLstmModel.initialize(ModelDims(20, 4, 4, 3, 2), 2.0, np.random.default_rng(0))
        with pytest.raises(ShapeMismatchError):
            model.set_sparse("w_xi", from_triplets(3, 4, []))


class TestParamCount:
    def test_dense_baseline(self):
        assert dense_baseline_count(20000, 256, 256) == 5_645_312

    @pytest.mark.parametrize(
        "epsilon,variant,expected,sparsity",
        [
            (10, ModelVariant.set_lstm, 244_544, 0.9567),
            (2, ModelVariant.set_lstm, 49_728, 0.9912),
            (10, ModelVariant.setc_lstm, 5_161_984, 0.0856),
        ],
    )
    def test_full_scale_counts(self, epsilon, variant, expected, sparsity):
        model = SetLstmModel.initialize(FULL_SCALE_DIMS, epsilon, np.random.default_rng(0), variant)
        counts = param_count(model)
        assert counts.total_excluding_output == expected
        assert counts.dense_baseline == 5_645_312
        assert counts.sparsity == pytest.approx(sparsity, abs=5e-5)
        assert counts.layers["biases"] == 1024
        assert counts.layers["output"] == 256 * 2 + 2
        assert counts.total == expected + 514

    def test_dense_variant_has_zero_sparsity(self):
        model = SetLstmModel.initialize(ModelDims(50, 8, 6, 3, 2), 1.0, np.random.default_rng(0), "dense_lstm")
        assert param_count(model).sparsity == pytest.approx(0.0)
