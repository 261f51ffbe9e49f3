# ===========================================
# SET-LSTM - Optimizer
# Adam over sparse and dense parameters, state migration on rewiring
# ===========================================

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

from .errors import MaskMismatchError, ShapeMismatchError, StateMismatchError
from .neural import ModelGrads, SetLstmModel
from .topology import RewireReport

logger = logging.getLogger(__name__)


@dataclass
class SparseMoments:
    """Adam moments of one sparse parameter, aligned with its sorted keys"""

    keys: np.ndarray
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, keys: np.ndarray) -> "SparseMoments":
        keys = np.asarray(keys, dtype=np.int64).copy()
        return cls(keys=keys, m=np.zeros(keys.size), v=np.zeros(keys.size))

    def copy(self) -> "SparseMoments":
        return SparseMoments(self.keys.copy(), self.m.copy(), self.v.copy())


@dataclass
class DenseMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape: Tuple[int, ...]) -> "DenseMoments":
        return cls(m=np.zeros(shape), v=np.zeros(shape))

    def copy(self) -> "DenseMoments":
        return DenseMoments(self.m.copy(), self.v.copy())


@dataclass
class AdamState:
    """
    Adam moments for every trainable parameter plus the shared step counter.

    Sparse moments are keyed by connection position and must always hold
    exactly the positions of their parameter; t counts optimizer steps
    globally and survives rewiring.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    sparse: Dict[str, SparseMoments] = field(default_factory=dict)
    dense: Dict[str, DenseMoments] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: SetLstmModel, lr: float, **hyper: float) -> "AdamState":
        return cls(
            lr=lr,
            sparse={
                name: SparseMoments.zeros(w.keys)
                for name, w in model.sparse_layers().items()
            },
            dense={
                name: DenseMoments.zeros(p.shape)
                for name, p in model.dense_params().items()
            },
            **hyper,
        )

    def copy(self) -> "AdamState":
        return replace(
            self,
            sparse={k: s.copy() for k, s in self.sparse.items()},
            dense={k: d.copy() for k, d in self.dense.items()},
        )

    def check_closure(self, model: SetLstmModel) -> None:
        """Raise StateMismatchError unless state keys equal every live mask"""
        layers = model.sparse_layers()
        if set(layers) != set(self.sparse):
            raise StateMismatchError(
                ",".join(sorted(set(layers) ^ set(self.sparse))),
                "layer names differ from the model",
            )
        for name, w in layers.items():
            if not np.array_equal(self.sparse[name].keys, w.keys):
                raise StateMismatchError(name)


def _moment_update(
    theta: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    state: AdamState,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**state.t)
    v_hat = v / (1.0 - state.beta2**state.t)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), m, v


def adam_step(
    model: SetLstmModel, grads: ModelGrads, state: AdamState
) -> Tuple[SetLstmModel, AdamState]:
    """
    Apply one bias-corrected Adam update in place.

    Sparse parameters are updated per stored position only, so their masks
    never change here.

    Raises:
        MaskMismatchError: a gradient carries different positions than its parameter
        StateMismatchError: optimizer state keys differ from the parameter positions
    """
    layers = model.sparse_layers()
    for name, w in layers.items():
        g = grads.sparse.get(name)
        if g is None or not np.array_equal(g.keys, w.keys):
            raise MaskMismatchError(name)
        moments = state.sparse.get(name)
        if moments is None or not np.array_equal(moments.keys, w.keys):
            raise StateMismatchError(name)
    dense = model.dense_params()
    for name, p in dense.items():
        g = grads.dense.get(name)
        if g is None or g.shape != p.shape:
            raise ShapeMismatchError(
                f"gradient of {name} has wrong shape",
                expected=list(p.shape),
                actual=None if g is None else list(g.shape),
            )
        if name not in state.dense or state.dense[name].m.shape != p.shape:
            raise StateMismatchError(name, "dense moments have wrong shape")

    state.t += 1
    for name, w in layers.items():
        moments = state.sparse[name]
        values, moments.m, moments.v = _moment_update(
            w.values, grads.sparse[name].values, moments.m, moments.v, state
        )
        model.set_sparse(name, w.with_values(values))
    for name, p in dense.items():
        moments = state.dense[name]
        values, moments.m, moments.v = _moment_update(
            p, grads.dense[name], moments.m, moments.v, state
        )
        model.set_dense(name, values)
    return model, state


def migrate_state(state: AdamState, report: RewireReport) -> AdamState:
    """
    Carry the moments of one layer across a rewiring step.

    Survivors keep their (m, v), removed positions are dropped, added
    positions start from zero; t is unchanged.

    Raises:
        StateMismatchError: the state does not describe the pre-rewire layer
    """
    moments = state.sparse.get(report.layer)
    if moments is None:
        raise StateMismatchError(report.layer, "no state for this layer")
    if moments.keys.size != report.nnz_before:
        raise StateMismatchError(
            report.layer,
            f"state holds {moments.keys.size} positions, layer had {report.nnz_before}",
        )
    removed = report.removed_keys()
    if removed.size and not np.isin(removed, moments.keys, assume_unique=True).all():
        raise StateMismatchError(report.layer, "removed positions missing from state")

    keep = ~np.isin(moments.keys, removed, assume_unique=True)
    added = report.added.keys
    keys = np.concatenate([moments.keys[keep], added])
    m = np.concatenate([moments.m[keep], np.zeros(added.size)])
    v = np.concatenate([moments.v[keep], np.zeros(added.size)])
    order = np.argsort(keys, kind="stable")

    sparse = dict(state.sparse)
    sparse[report.layer] = SparseMoments(keys[order], m[order], v[order])
    return replace(state, sparse=sparse)
