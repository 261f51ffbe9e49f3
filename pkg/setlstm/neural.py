# ===========================================
# SET-LSTM - Neural Layers
# Sparse embedding, sparse-gated LSTM cell with BPTT, dense output, loss
# ===========================================

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as scisp
from scipy.special import expit

from .config import ModelVariant
from .errors import (
    CacheMismatchError,
    LabelOutOfRangeError,
    ShapeMismatchError,
    TokenOutOfRangeError,
)
from .sparse import (
    ConnectionSet,
    DenseMatrix,
    SparseMatrix,
    dense_times_sparse,
    dense_times_sparse_transposed,
    hstack,
    masked_grad,
)
from .topology import er_init, glorot_limit, init_values

logger = logging.getLogger(__name__)

GATES = ("i", "f", "o", "g")
X_WEIGHTS = tuple(f"w_x{g}" for g in GATES)
H_WEIGHTS = tuple(f"w_h{g}" for g in GATES)
CELL_WEIGHTS = X_WEIGHTS + H_WEIGHTS
BIASES = tuple(f"b_{g}" for g in GATES)
EMBEDDING = "embedding"
SPARSE_LAYERS = (EMBEDDING,) + CELL_WEIGHTS
DENSE_PARAMS = BIASES + ("w_out", "b_out")


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    seq_len: int
    n_classes: int

    def as_tuple(self) -> Tuple[int, int, int, int, int]:
        return (
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.seq_len,
            self.n_classes,
        )


# ===========================================
# Parameter containers
# ===========================================


@dataclass
class EmbeddingParams:
    w_e: SparseMatrix

    @property
    def vocab_size(self) -> int:
        return self.w_e.n_rows

    @property
    def embed_dim(self) -> int:
        return self.w_e.n_cols


@dataclass
class LstmCellParams:
    """Eight independently masked gate matrices and four dense biases"""

    w_xi: SparseMatrix
    w_xf: SparseMatrix
    w_xo: SparseMatrix
    w_xg: SparseMatrix
    w_hi: SparseMatrix
    w_hf: SparseMatrix
    w_ho: SparseMatrix
    w_hg: SparseMatrix
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        d, h = self.input_dim, self.hidden_dim
        for name in X_WEIGHTS:
            if getattr(self, name).shape != (d, h):
                raise ShapeMismatchError(
                    f"{name} must be {d}x{h}", actual=list(getattr(self, name).shape)
                )
        for name in H_WEIGHTS:
            if getattr(self, name).shape != (h, h):
                raise ShapeMismatchError(
                    f"{name} must be {h}x{h}", actual=list(getattr(self, name).shape)
                )
        for name in BIASES:
            if np.shape(getattr(self, name)) != (h,):
                raise ShapeMismatchError(
                    f"{name} must have length {h}",
                    actual=list(np.shape(getattr(self, name))),
                )

    @property
    def input_dim(self) -> int:
        return self.w_xi.n_rows

    @property
    def hidden_dim(self) -> int:
        return self.w_xi.n_cols

    def weights(self) -> Dict[str, SparseMatrix]:
        return {name: getattr(self, name) for name in CELL_WEIGHTS}

    def biases(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BIASES}

    def x_fused(self) -> SparseMatrix:
        """[W_xi | W_xf | W_xo | W_xg]; masks stay independent"""
        return hstack([getattr(self, n) for n in X_WEIGHTS])

    def h_fused(self) -> SparseMatrix:
        return hstack([getattr(self, n) for n in H_WEIGHTS])

    def bias_fused(self) -> np.ndarray:
        return np.concatenate([getattr(self, n) for n in BIASES])


@dataclass
class OutputParams:
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        if self.w_out.ndim != 2 or self.w_out.shape[1] < 2:
            raise ShapeMismatchError(
                "output layer needs at least two classes", actual=list(self.w_out.shape)
            )
        if self.b_out.shape != (self.w_out.shape[1],):
            raise ShapeMismatchError(
                "output bias length differs from class count",
                expected=self.w_out.shape[1],
                actual=list(self.b_out.shape),
            )


@dataclass
class StepCache:
    """Activations of one timestep, kept for the backward pass"""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


@dataclass
class SetLstmModel:
    """Sparse embedding + sparse LSTM cell + dense output layer"""

    embedding: EmbeddingParams
    cell: LstmCellParams
    output: OutputParams
    dims: ModelDims
    variant: ModelVariant = ModelVariant.set_lstm

    def __post_init__(self):
        v, d, h, _, c = self.dims.as_tuple()
        if self.embedding.w_e.shape != (v, d):
            raise ShapeMismatchError(
                "embedding shape differs from dims",
                expected=[v, d],
                actual=list(self.embedding.w_e.shape),
            )
        if (self.cell.input_dim, self.cell.hidden_dim) != (d, h):
            raise ShapeMismatchError(
                "cell shape differs from dims",
                expected=[d, h],
                actual=[self.cell.input_dim, self.cell.hidden_dim],
            )
        if self.output.w_out.shape != (h, c):
            raise ShapeMismatchError(
                "output shape differs from dims",
                expected=[h, c],
                actual=list(self.output.w_out.shape),
            )

    @classmethod
    def initialize(
        cls,
        dims: ModelDims,
        epsilon: float,
        rng: np.random.Generator,
        variant: ModelVariant = ModelVariant.set_lstm,
    ) -> "SetLstmModel":
        """
        Build a model with Erdos-Renyi masks on its sparse layers.

        Draw order (fixed for reproducibility): embedding mask and values, then
        each gate matrix mask and values in CELL_WEIGHTS order, then the output
        weights. Biases start at zero.
        """
        v, d, h, _, c = dims.as_tuple()
        variant = ModelVariant(variant)

        def layer(n_in: int, n_out: int, sparse: bool) -> SparseMatrix:
            if sparse:
                mask = er_init(n_in, n_out, epsilon, rng)
            else:
                mask = ConnectionSet.full(n_in, n_out)
            return init_values(mask, rng)

        w_e = layer(v, d, variant == ModelVariant.set_lstm)
        sparse_cell = variant != ModelVariant.dense_lstm
        weights = {}
        for name in CELL_WEIGHTS:
            n_in = d if name in X_WEIGHTS else h
            weights[name] = layer(n_in, h, sparse_cell)
        limit = glorot_limit(h, c)
        w_out = rng.uniform(-limit, limit, size=(h, c))
        cell = LstmCellParams(
            **weights, **{name: np.zeros(h) for name in BIASES}
        )
        return cls(
            embedding=EmbeddingParams(w_e),
            cell=cell,
            output=OutputParams(w_out=w_out, b_out=np.zeros(c)),
            dims=dims,
            variant=variant,
        )

    def sparse_layers(self) -> Dict[str, SparseMatrix]:
        """All sparse matrices: embedding first, then the gates"""
        layers = {EMBEDDING: self.embedding.w_e}
        layers.update(self.cell.weights())
        return layers

    def rewirable_layers(self) -> Tuple[str, ...]:
        if self.variant == ModelVariant.set_lstm:
            return SPARSE_LAYERS
        if self.variant == ModelVariant.setc_lstm:
            return CELL_WEIGHTS
        return ()

    def get_sparse(self, name: str) -> SparseMatrix:
        if name == EMBEDDING:
            return self.embedding.w_e
        return getattr(self.cell, name)

    def set_sparse(self, name: str, w: SparseMatrix) -> None:
        if w.shape != self.get_sparse(name).shape:
            raise ShapeMismatchError(
                f"replacement for {name} has wrong shape",
                expected=list(self.get_sparse(name).shape),
                actual=list(w.shape),
            )
        if name == EMBEDDING:
            self.embedding.w_e = w
        else:
            setattr(self.cell, name, w)

    def dense_params(self) -> Dict[str, np.ndarray]:
        params = self.cell.biases()
        params["w_out"] = self.output.w_out
        params["b_out"] = self.output.b_out
        return params

    def set_dense(self, name: str, value: np.ndarray) -> None:
        current = self.dense_params()[name]
        if value.shape != current.shape:
            raise ShapeMismatchError(
                f"replacement for {name} has wrong shape",
                expected=list(current.shape),
                actual=list(value.shape),
            )
        if name in BIASES:
            setattr(self.cell, name, value)
        else:
            setattr(self.output, name, value)

    def topology(self) -> Dict[str, ConnectionSet]:
        return {name: w.mask() for name, w in self.sparse_layers().items()}

    def copy(self) -> "SetLstmModel":
        cell_weights = {n: w.copy() for n, w in self.cell.weights().items()}
        cell_biases = {n: b.copy() for n, b in self.cell.biases().items()}
        return SetLstmModel(
            embedding=EmbeddingParams(self.embedding.w_e.copy()),
            cell=LstmCellParams(**cell_weights, **cell_biases),
            output=OutputParams(
                w_out=self.output.w_out.copy(), b_out=self.output.b_out.copy()
            ),
            dims=self.dims,
            variant=self.variant,
        )


# ===========================================
# Embedding
# ===========================================


def _check_tokens(tokens: np.ndarray, vocab_size: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise ShapeMismatchError("tokens must be B x T", actual=list(tokens.shape))
    if tokens.size:
        bad = (tokens < 0) | (tokens >= vocab_size)
        if bad.any():
            raise TokenOutOfRangeError(int(tokens[bad][0]), vocab_size)
    return tokens


def embedding_forward(tokens: np.ndarray, e: EmbeddingParams) -> np.ndarray:
    """Row gather of the sparse embedding: B x T ids -> B x T x D vectors"""
    tokens = _check_tokens(tokens, e.vocab_size)
    b, t = tokens.shape
    rows = e.w_e.to_scipy()[tokens.ravel()].toarray()
    return rows.reshape(b, t, e.embed_dim)


def embedding_backward(
    tokens: np.ndarray, dx: np.ndarray, mask: ConnectionSet
) -> SparseMatrix:
    """
    Scatter-add dx into the embedding gradient, only at mask positions.

    grad[(v, d)] = sum of dx[b, t, d] over occurrences tokens[b, t] == v.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    dx = np.asarray(dx, dtype=np.float64)
    if tokens.ndim != 2 or dx.shape[:2] != tokens.shape or dx.ndim != 3:
        raise ShapeMismatchError(
            "dx must be B x T x D matching tokens",
            expected=list(tokens.shape),
            actual=list(dx.shape),
        )
    if dx.shape[2] != mask.n_cols:
        raise ShapeMismatchError(
            "dx width differs from embedding dimension",
            expected=mask.n_cols,
            actual=dx.shape[2],
        )
    n = len(mask)
    if n == 0 or tokens.size == 0:
        return SparseMatrix.zeros_like_mask(mask)

    flat = tokens.ravel()
    words, inverse = np.unique(flat, return_inverse=True)
    inverse = inverse.ravel()
    occurrences = scisp.csr_matrix(
        (np.ones(flat.size), (inverse, np.arange(flat.size))),
        shape=(words.size, flat.size),
    )
    sums = np.asarray(occurrences @ dx.reshape(flat.size, -1))

    rows, cols = mask.rows, mask.cols
    slot = np.searchsorted(words, rows)
    slot_clipped = np.minimum(slot, words.size - 1)
    hit = (slot < words.size) & (words[slot_clipped] == rows)
    values = np.zeros(n)
    values[hit] = sums[slot_clipped[hit], cols[hit]]
    return SparseMatrix.from_mask(mask, values)


# ===========================================
# LSTM cell
# ===========================================


def _cell_update(
    pre: np.ndarray, c_prev: np.ndarray, hidden: int
) -> Tuple[np.ndarray, ...]:
    """Gate nonlinearities and state update from fused pre-activations"""
    i = expit(pre[:, :hidden])
    f = expit(pre[:, hidden : 2 * hidden])
    o = expit(pre[:, 2 * hidden : 3 * hidden])
    g = np.tanh(pre[:, 3 * hidden :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, i, f, o, g, tanh_c


def lstm_step(
    x_t: DenseMatrix,
    h_prev: DenseMatrix,
    c_prev: DenseMatrix,
    p: LstmCellParams,
) -> Tuple[np.ndarray, np.ndarray, StepCache]:
    """One LSTM timestep; h_t = o_t * tanh(c_t)"""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    hidden = p.hidden_dim
    batch = x_t.shape[0] if x_t.ndim == 2 else -1
    if h_prev.shape != (batch, hidden) or c_prev.shape != (batch, hidden):
        raise ShapeMismatchError(
            "h_prev and c_prev must be B x H",
            expected=[batch, hidden],
            actual=[list(h_prev.shape), list(c_prev.shape)],
        )
    pre = (
        dense_times_sparse(x_t, p.x_fused())
        + dense_times_sparse(h_prev, p.h_fused())
        + p.bias_fused()
    )
    h, c, i, f, o, g, tanh_c = _cell_update(pre, c_prev, hidden)
    return h, c, StepCache(x_t, h_prev, c_prev, i, f, o, g, c, tanh_c)


def lstm_sequence_forward(
    x: np.ndarray, p: LstmCellParams
) -> Tuple[np.ndarray, List[StepCache]]:
    """
    Unroll the cell over T steps from h0 = c0 = 0.

    Returns:
        Final hidden state h_T (B x H) and one StepCache per timestep
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] != p.input_dim:
        raise ShapeMismatchError(
            "sequence input must be B x T x D with T >= 1",
            expected=["B", "T", p.input_dim],
            actual=list(x.shape),
        )
    batch, steps, dim = x.shape
    hidden = p.hidden_dim
    x_fused, h_fused, bias = p.x_fused(), p.h_fused(), p.bias_fused()

    # input contributions of every step in one product
    x_pre = dense_times_sparse(x.reshape(batch * steps, dim), x_fused)
    x_pre = x_pre.reshape(batch, steps, 4 * hidden)

    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    caches: List[StepCache] = []
    for t in range(steps):
        pre = x_pre[:, t, :] + dense_times_sparse(h, h_fused) + bias
        h_prev, c_prev = h, c
        h, c, i, f, o, g, tanh_c = _cell_update(pre, c_prev, hidden)
        caches.append(StepCache(x[:, t, :], h_prev, c_prev, i, f, o, g, c, tanh_c))
    return h, caches


@dataclass
class LstmCellGrads:
    weights: Dict[str, SparseMatrix]
    biases: Dict[str, np.ndarray]


def lstm_backward(
    caches: List[StepCache], dh_t: DenseMatrix, p: LstmCellParams
) -> Tuple[LstmCellGrads, np.ndarray]:
    """
    Backpropagation through time for a loss that reads only h_T.

    Returns:
        Gradients of every cell parameter (sparse ones restricted to their
        masks) and dx of shape B x T x D for the embedding backward.
    """
    if not caches:
        raise CacheMismatchError("no timestep caches")
    dh = np.array(dh_t, dtype=np.float64)
    hidden, dim = p.hidden_dim, p.input_dim
    batch = caches[0].h_prev.shape[0]
    if dh.shape != (batch, hidden):
        raise CacheMismatchError(
            f"dh_T has shape {dh.shape}, caches hold batch {batch} x {hidden}"
        )
    for s in caches:
        if s.x.shape != (batch, dim) or s.h_prev.shape != (batch, hidden):
            raise CacheMismatchError("cache shapes do not match the cell parameters")

    steps = len(caches)
    h_fused = p.h_fused()
    d_pre = np.empty((steps, batch, 4 * hidden))
    dc = np.zeros((batch, hidden))
    for t in range(steps - 1, -1, -1):
        s = caches[t]
        do = dh * s.tanh_c
        dc = dc + dh * s.o * (1.0 - s.tanh_c * s.tanh_c)
        di = dc * s.g
        df = dc * s.c_prev
        dg = dc * s.i
        d_pre[t, :, :hidden] = di * s.i * (1.0 - s.i)
        d_pre[t, :, hidden : 2 * hidden] = df * s.f * (1.0 - s.f)
        d_pre[t, :, 2 * hidden : 3 * hidden] = do * s.o * (1.0 - s.o)
        d_pre[t, :, 3 * hidden :] = dg * (1.0 - s.g * s.g)
        dc = dc * s.f
        dh = dense_times_sparse_transposed(d_pre[t], h_fused)

    # stack timesteps: row t * B + b
    xs = np.concatenate([s.x for s in caches], axis=0)
    hs = np.concatenate([s.h_prev for s in caches], axis=0)
    d_all = d_pre.reshape(steps * batch, 4 * hidden)

    weights: Dict[str, SparseMatrix] = {}
    biases: Dict[str, np.ndarray] = {}
    for k, gate in enumerate(GATES):
        cols = slice(k * hidden, (k + 1) * hidden)
        weights[f"w_x{gate}"] = masked_grad(
            xs, d_all[:, cols], getattr(p, f"w_x{gate}").mask()
        )
        weights[f"w_h{gate}"] = masked_grad(
            hs, d_all[:, cols], getattr(p, f"w_h{gate}").mask()
        )
        biases[f"b_{gate}"] = d_all[:, cols].sum(axis=0)

    dx = dense_times_sparse_transposed(d_all, p.x_fused())
    dx = dx.reshape(steps, batch, dim).transpose(1, 0, 2)
    return LstmCellGrads(weights=weights, biases=biases), np.ascontiguousarray(dx)


# ===========================================
# Output layer and loss
# ===========================================


@dataclass
class OutputGrads:
    w_out: np.ndarray
    b_out: np.ndarray


def output_forward(h: DenseMatrix, p: OutputParams) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != p.w_out.shape[0]:
        raise ShapeMismatchError(
            "hidden state width differs from output layer",
            expected=p.w_out.shape[0],
            actual=list(h.shape),
        )
    return h @ p.w_out + p.b_out


def output_backward(
    h: DenseMatrix, dlogits: DenseMatrix, p: OutputParams
) -> Tuple[OutputGrads, np.ndarray]:
    h = np.asarray(h, dtype=np.float64)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (h.shape[0], p.w_out.shape[1]):
        raise ShapeMismatchError(
            "dlogits must be B x C",
            expected=[h.shape[0], p.w_out.shape[1]],
            actual=list(dlogits.shape),
        )
    grads = OutputGrads(w_out=h.T @ dlogits, b_out=dlogits.sum(axis=0))
    return grads, dlogits @ p.w_out.T


def softmax_cross_entropy(
    logits: DenseMatrix, labels: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood of the true class.

    Returns:
        (loss, dlogits) with dlogits = (softmax - onehot) / B
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(
            "logits must be B x C with B labels",
            actual=[list(logits.shape), list(labels.shape)],
        )
    batch, n_classes = logits.shape
    bad = (labels < 0) | (labels >= n_classes)
    if bad.any():
        raise LabelOutOfRangeError(int(labels[bad][0]), n_classes)

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(batch)
    loss = float(-log_probs[rows, labels].mean())
    dlogits = exp / total
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / batch


# ===========================================
# Whole model
# ===========================================


@dataclass
class ForwardCache:
    tokens: np.ndarray
    steps: List[StepCache]
    h_last: np.ndarray


@dataclass
class ModelGrads:
    sparse: Dict[str, SparseMatrix] = field(default_factory=dict)
    dense: Dict[str, np.ndarray] = field(default_factory=dict)


def model_forward(
    model: SetLstmModel, tokens: np.ndarray
) -> Tuple[np.ndarray, ForwardCache]:
    x = embedding_forward(tokens, model.embedding)
    h_last, steps = lstm_sequence_forward(x, model.cell)
    logits = output_forward(h_last, model.output)
    return logits, ForwardCache(np.asarray(tokens, np.int64), steps, h_last)


def model_backward(
    model: SetLstmModel, cache: ForwardCache, dlogits: np.ndarray
) -> ModelGrads:
    out_grads, dh = output_backward(cache.h_last, dlogits, model.output)
    cell_grads, dx = lstm_backward(cache.steps, dh, model.cell)
    grads = ModelGrads()
    grads.sparse[EMBEDDING] = embedding_backward(
        cache.tokens, dx, model.embedding.w_e.mask()
    )
    grads.sparse.update(cell_grads.weights)
    grads.dense.update(cell_grads.biases)
    grads.dense["w_out"] = out_grads.w_out
    grads.dense["b_out"] = out_grads.b_out
    return grads


def loss_and_grads(
    model: SetLstmModel, tokens: np.ndarray, labels: np.ndarray
) -> Tuple[float, int, ModelGrads]:
    """Forward, loss and backward for one batch; also counts correct argmaxes"""
    logits, cache = model_forward(model, tokens)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    correct = int((np.argmax(logits, axis=1) == np.asarray(labels)).sum())
    return loss, correct, model_backward(model, cache, dlogits)


def predict(model: SetLstmModel, tokens: np.ndarray) -> np.ndarray:
    """Class predictions; argmax ties resolve to the lowest class index"""
    logits, _ = model_forward(model, tokens)
    return np.argmax(logits, axis=1)


# ===========================================
# Parameter accounting
# ===========================================


@dataclass(frozen=True)
class ParamCount:
    """
    Per-layer parameter counts and sparsity against the dense LSTM.

    The dense baseline and the sparsity leave the output layer out, which is
    what total_excluding_output compares against.
    """

    layers: Dict[str, int]
    dense_layers: Dict[str, int]
    total: int
    total_excluding_output: int
    dense_baseline: int
    sparsity: float

    def to_dict(self) -> Dict[str, object]:
        return {
            "layers": dict(self.layers),
            "dense_layers": dict(self.dense_layers),
            "total": self.total,
            "total_excluding_output": self.total_excluding_output,
            "dense_baseline": self.dense_baseline,
            "sparsity": self.sparsity,
        }


def dense_baseline_count(vocab_size: int, embed_dim: int, hidden_dim: int) -> int:
    """V*D + 4*(D*H + H*H + H)"""
    d, h = embed_dim, hidden_dim
    return vocab_size * d + 4 * (d * h + h * h + h)


def param_count(model: SetLstmModel) -> ParamCount:
    v, d, h, _, c = model.dims.as_tuple()
    layers: Dict[str, int] = {}
    dense_layers: Dict[str, int] = {}
    for name, w in model.sparse_layers().items():
        layers[name] = w.nnz()
        dense_layers[name] = w.n_rows * w.n_cols
    layers["biases"] = dense_layers["biases"] = 4 * h
    layers["output"] = dense_layers["output"] = h * c + c

    total = sum(layers.values())
    excluding_output = total - layers["output"]
    baseline = dense_baseline_count(v, d, h)
    return ParamCount(
        layers=layers,
        dense_layers=dense_layers,
        total=total,
        total_excluding_output=excluding_output,
        dense_baseline=baseline,
        sparsity=1.0 - excluding_output / baseline,
    )
