# ===========================================
# SET-LSTM - Gradient Check
# Central finite differences against the analytic backward pass
# ===========================================

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .config import ModelVariant
from .errors import ConfigError, VerificationError
from .neural import (
    BIASES,
    CELL_WEIGHTS,
    EMBEDDING,
    EmbeddingParams,
    LstmCellParams,
    ModelDims,
    OutputParams,
    SetLstmModel,
    loss_and_grads,
    model_forward,
    softmax_cross_entropy,
)
from .sparse import ConnectionSet, SparseMatrix

logger = logging.getLogger(__name__)

STEP = 1e-5
THRESHOLD = 1e-4
# Denominator floor: gradients smaller than this are compared absolutely
REL_FLOOR = 1e-5
DENSITIES = (0.3, 0.6, 1.0)
VALUE_RANGE = 0.5

PARAM_CLASSES = CELL_WEIGHTS + BIASES + (EMBEDDING, "w_out", "b_out")
SIZE_KEYS = ("B", "T", "D", "H", "V", "C")
DEFAULT_SIZES = {"B": 6, "T": 6, "D": 6, "H": 6, "V": 8, "C": 4}


@dataclass
class GradcheckReport:
    """Worst relative error per parameter class over all instances"""

    seed: int
    instances: int
    worst: Dict[str, float] = field(default_factory=dict)
    threshold: float = THRESHOLD

    @property
    def max_error(self) -> float:
        return max(self.worst.values()) if self.worst else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold

    def failing(self) -> List[str]:
        return [name for name, err in self.worst.items() if err >= self.threshold]

    def to_lines(self) -> List[str]:
        lines = [f"{name}={self.worst[name]:.3e}" for name in PARAM_CLASSES]
        lines.append(f"max_error={self.max_error:.3e}")
        lines.append(f"passed={'true' if self.passed else 'false'}")
        return lines

    def to_dict(self) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "instances": self.instances,
            "threshold": self.threshold,
            "worst": dict(self.worst),
            "max_error": self.max_error,
            "passed": self.passed,
        }


def parse_sizes(spec: str) -> Dict[str, int]:
    """'B=6,T=6,...' -> dict; missing keys keep their defaults"""
    sizes = dict(DEFAULT_SIZES)
    for part in filter(None, (p.strip() for p in spec.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip().upper()
        if not sep or key not in SIZE_KEYS or not value.strip().isdigit():
            raise ConfigError(f"bad size entry '{part}', expected one of {SIZE_KEYS}=N")
        sizes[key] = int(value)
    minimum = {"B": 1, "T": 1, "D": 1, "H": 1, "V": 1, "C": 2}
    for key, low in minimum.items():
        if sizes[key] < low:
            raise ConfigError(f"size {key} must be at least {low}")
    return sizes


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / scale


def _random_sparse(
    n_rows: int, n_cols: int, rng: np.random.Generator
) -> SparseMatrix:
    size = n_rows * n_cols
    density = DENSITIES[int(rng.integers(len(DENSITIES)))]
    n = max(1, int(round(density * size)))
    keys = np.sort(rng.choice(size, size=n, replace=False)).astype(np.int64)
    values = rng.uniform(-VALUE_RANGE, VALUE_RANGE, size=n)
    return SparseMatrix.from_mask(ConnectionSet(n_rows, n_cols, keys), values)


def random_instance(sizes: Dict[str, int], rng: np.random.Generator):
    """A toy model with random dims up to `sizes`, random masks and values, and a batch"""
    b, t, d, h, v = (int(rng.integers(1, sizes[k] + 1)) for k in "BTDHV")
    c = int(rng.integers(2, sizes["C"] + 1))
    dims = ModelDims(vocab_size=v, embed_dim=d, hidden_dim=h, seq_len=t, n_classes=c)
    weights = {
        name: _random_sparse(d if name.startswith("w_x") else h, h, rng)
        for name in CELL_WEIGHTS
    }
    biases = {name: rng.uniform(-VALUE_RANGE, VALUE_RANGE, size=h) for name in BIASES}
    model = SetLstmModel(
        embedding=EmbeddingParams(_random_sparse(v, d, rng)),
        cell=LstmCellParams(**weights, **biases),
        output=OutputParams(
            w_out=rng.uniform(-VALUE_RANGE, VALUE_RANGE, size=(h, c)),
            b_out=rng.uniform(-VALUE_RANGE, VALUE_RANGE, size=c),
        ),
        dims=dims,
        variant=ModelVariant.set_lstm,
    )
    tokens = rng.integers(v, size=(b, t))
    labels = rng.integers(c, size=b)
    return model, tokens, labels


def _loss(model: SetLstmModel, tokens: np.ndarray, labels: np.ndarray) -> float:
    logits, _ = model_forward(model, tokens)
    return softmax_cross_entropy(logits, labels)[0]


def _numeric(values: np.ndarray, loss: Callable[[], float]) -> np.ndarray:
    """Central differences, perturbing `values` in place"""
    flat = values.reshape(-1)
    out = np.empty(flat.size)
    for k in range(flat.size):
        saved = flat[k]
        flat[k] = saved + STEP
        up = loss()
        flat[k] = saved - STEP
        down = loss()
        flat[k] = saved
        out[k] = (up - down) / (2.0 * STEP)
    return out.reshape(values.shape)


def check_instance(
    model: SetLstmModel,
    tokens: np.ndarray,
    labels: np.ndarray,
    corrupt: bool = False,
) -> Dict[str, float]:
    """Worst relative error per parameter class on one instance"""
    _, _, grads = loss_and_grads(model, tokens, labels)
    if corrupt:
        grads.dense["b_out"] = grads.dense["b_out"] + 1.0

    def loss() -> float:
        return _loss(model, tokens, labels)

    errors: Dict[str, float] = {}
    for name, w in model.sparse_layers().items():
        numeric = _numeric(w.values, loss)
        errors[name] = float(relative_error(grads.sparse[name].values, numeric).max())
    for name, p in model.dense_params().items():
        numeric = _numeric(p, loss)
        errors[name] = float(relative_error(grads.dense[name], numeric).max())
    return errors


def run_gradcheck(
    seed: int = 0,
    sizes: Optional[Dict[str, int]] = None,
    instances: int = 20,
    corrupt: bool = False,
) -> GradcheckReport:
    """
    Compare analytic gradients with central finite differences.

    Args:
        seed: base seed; instance k draws from SeedSequence([seed, k])
        sizes: upper bounds for B, T, D, H, V and C
        instances: number of random toy instances
        corrupt: perturb the analytic b_out gradient (negative control)

    Returns:
        GradcheckReport with the worst error per parameter class
    """
    sizes = sizes or dict(DEFAULT_SIZES)
    if instances < 1:
        raise ConfigError("gradcheck needs at least one instance", field="instances")
    report = GradcheckReport(seed=seed, instances=instances)
    report.worst = {name: 0.0 for name in PARAM_CLASSES}
    for k in range(instances):
        rng = np.random.default_rng([seed, k])
        model, tokens, labels = random_instance(sizes, rng)
        for name, err in check_instance(model, tokens, labels, corrupt).items():
            report.worst[name] = max(report.worst[name], err)
    logger.info(
        f"gradcheck: {instances} instances, max relative error {report.max_error:.3e}"
    )
    return report


def verify(report: GradcheckReport) -> GradcheckReport:
    """Raise VerificationError unless every class is under the threshold"""
    if not report.passed:
        raise VerificationError(
            f"gradient check failed for {', '.join(report.failing())}",
            details=report.to_dict(),
        )
    return report
