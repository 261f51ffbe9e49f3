# ===========================================
# SET-LSTM - Checkpoints
# Single-file binary format: header + digest + length-prefixed sections
# ===========================================

"""
Layout (little endian):

    header   magic b"SETL" | u32 format version | 32-byte sha256 of the body
    body     sections, each  u32 name length | name (utf-8) | u64 payload length | payload

Section payloads:

    JSON      meta, config, vocab, classes, rng, metrics (sorted keys, compact)
    sparse    model/<layer>, initial/<layer>, birth/<layer>, best/<layer>:
              u32 rows | u32 cols | u64 nnz | nnz (u32 row, u32 col) pairs | nnz f64 values
    dense     model/<param>, initial/<param>, adam/<param>/m, adam/<param>/v:
              u32 ndim | ndim u64 dims | f64 data (C order)

Sparse moments are stored as dense 1-D arrays aligned with the layer's
positions in the model section.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .config import TrainConfig
from .data import Vocabulary
from .errors import (
    ConfigError,
    CorruptCheckpointError,
    DataIOError,
    SetLstmError,
    VersionMismatchError,
)
from .neural import (
    BIASES,
    CELL_WEIGHTS,
    EmbeddingParams,
    LstmCellParams,
    OutputParams,
    SetLstmModel,
)
from .optim import AdamState, DenseMoments, SparseMoments
from .sparse import SparseMatrix
from .trainer import BestSnapshot, MetricsRecord, TrainingState, dims_of

logger = logging.getLogger(__name__)

MAGIC = b"SETL"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sI32s")
_NAME_LEN = struct.Struct("<I")
_PAYLOAD_LEN = struct.Struct("<Q")
_SPARSE_HEAD = struct.Struct("<IIQ")

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    """Training state plus what is needed to encode raw text for it"""

    state: TrainingState
    vocab: Optional[Vocabulary] = None
    class_names: List[str] = field(default_factory=list)

    @property
    def config(self) -> TrainConfig:
        return self.state.config


class _Corrupt(Exception):
    """Raised inside parsing, converted to CorruptCheckpointError with the path"""


# ===========================================
# Payload codecs
# ===========================================


def _json_bytes(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _sparse_bytes(w: SparseMatrix) -> bytes:
    pairs = np.empty((w.nnz(), 2), dtype="<u4")
    pairs[:, 0] = w.rows
    pairs[:, 1] = w.cols
    return (
        _SPARSE_HEAD.pack(w.n_rows, w.n_cols, w.nnz())
        + pairs.tobytes()
        + w.values.astype("<f8").tobytes()
    )


def _sparse_from(payload: bytes) -> SparseMatrix:
    if len(payload) < _SPARSE_HEAD.size:
        raise _Corrupt("sparse section too short")
    n_rows, n_cols, nnz = _SPARSE_HEAD.unpack_from(payload)
    if len(payload) != _SPARSE_HEAD.size + 16 * nnz:
        raise _Corrupt("sparse section length does not match its entry count")
    offset = _SPARSE_HEAD.size
    pairs = np.frombuffer(payload, dtype="<u4", count=2 * nnz, offset=offset)
    values = np.frombuffer(payload, dtype="<f8", count=nnz, offset=offset + 8 * nnz)
    pairs = pairs.reshape(nnz, 2).astype(np.int64)
    if nnz and ((pairs[:, 0] >= n_rows).any() or (pairs[:, 1] >= n_cols).any()):
        raise _Corrupt("sparse position out of bounds")
    keys = pairs[:, 0] * n_cols + pairs[:, 1]
    if nnz > 1 and not (np.diff(keys) > 0).all():
        raise _Corrupt("sparse positions not in canonical order")
    return SparseMatrix(n_rows, n_cols, keys, values.copy())


def _dense_bytes(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype="<f8")
    head = _NAME_LEN.pack(a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def _dense_from(payload: bytes) -> np.ndarray:
    if len(payload) < _NAME_LEN.size:
        raise _Corrupt("dense section too short")
    (ndim,) = _NAME_LEN.unpack_from(payload)
    offset = _NAME_LEN.size + 8 * ndim
    if len(payload) < offset:
        raise _Corrupt("dense section too short")
    shape = struct.unpack_from(f"<{ndim}Q", payload, _NAME_LEN.size)
    count = int(np.prod(shape)) if ndim else 1
    if len(payload) != offset + 8 * count:
        raise _Corrupt("dense section length does not match its shape")
    data = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)


# ===========================================
# Encoding
# ===========================================


def _model_sections(prefix: str, model: SetLstmModel) -> List[Tuple[str, bytes]]:
    sections = [
        (f"{prefix}/{name}", _sparse_bytes(w)) for name, w in model.sparse_layers().items()
    ]
    sections += [
        (f"{prefix}/{name}", _dense_bytes(p)) for name, p in model.dense_params().items()
    ]
    return sections


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    state = checkpoint.state
    adam = state.adam
    meta = {
        "format_version": FORMAT_VERSION,
        "epoch": state.epoch,
        "initial_test_acc": state.initial_test_acc,
        "has_initial": state.initial is not None,
        "best": None
        if state.best is None
        else {"epoch": state.best.epoch, "test_acc": state.best.test_acc},
        "adam": {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "t": adam.t,
        },
    }
    vocab = None
    if checkpoint.vocab is not None:
        vocab = {"capacity": checkpoint.vocab.capacity, "words": checkpoint.vocab.words()}

    sections: List[Tuple[str, bytes]] = [
        ("meta", _json_bytes(meta)),
        ("config", _json_bytes(state.config.to_dict())),
        ("vocab", _json_bytes(vocab)),
        ("classes", _json_bytes(list(checkpoint.class_names))),
        ("rng", _json_bytes(state.rng.bit_generator.state)),
        ("metrics", _json_bytes([r.to_dict() for r in state.history])),
    ]
    sections += _model_sections("model", state.model)
    if state.initial is not None:
        sections += _model_sections("initial", state.initial)
    sections += [(f"birth/{n}", _sparse_bytes(w)) for n, w in state.birth.items()]
    if state.best is not None:
        sections += [(f"best/{n}", _sparse_bytes(w)) for n, w in state.best.birth.items()]
    for name, moments in adam.sparse.items():
        sections.append((f"adam/{name}/m", _dense_bytes(moments.m)))
        sections.append((f"adam/{name}/v", _dense_bytes(moments.v)))
    for name, moments in adam.dense.items():
        sections.append((f"adam/{name}/m", _dense_bytes(moments.m)))
        sections.append((f"adam/{name}/v", _dense_bytes(moments.v)))

    body = bytearray()
    for name, payload in sections:
        raw_name = name.encode("utf-8")
        body += _NAME_LEN.pack(len(raw_name)) + raw_name
        body += _PAYLOAD_LEN.pack(len(payload)) + payload
    digest = hashlib.sha256(body).digest()
    return _HEADER.pack(MAGIC, FORMAT_VERSION, digest) + bytes(body)


def save_checkpoint(checkpoint: Checkpoint, path: PathLike) -> Path:
    path = Path(path)
    data = encode_checkpoint(checkpoint)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise DataIOError(path, str(e)) from e
    logger.info(f"[OK] Checkpoint saved: {path} (epoch {checkpoint.state.epoch})")
    return path


# ===========================================
# Decoding
# ===========================================


def _split_sections(body: bytes) -> Dict[str, bytes]:
    sections: Dict[str, bytes] = {}
    pos = 0
    while pos < len(body):
        if pos + _NAME_LEN.size > len(body):
            raise _Corrupt("truncated section name")
        (name_len,) = _NAME_LEN.unpack_from(body, pos)
        pos += _NAME_LEN.size
        if pos + name_len + _PAYLOAD_LEN.size > len(body):
            raise _Corrupt("truncated section header")
        name = body[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (size,) = _PAYLOAD_LEN.unpack_from(body, pos)
        pos += _PAYLOAD_LEN.size
        if pos + size > len(body):
            raise _Corrupt(f"truncated section '{name}'")
        if name in sections:
            raise _Corrupt(f"duplicate section '{name}'")
        sections[name] = body[pos : pos + size]
        pos += size
    return sections


def _require(sections: Dict[str, bytes], name: str) -> bytes:
    if name not in sections:
        raise _Corrupt(f"missing section '{name}'")
    return sections[name]


def _json_from(sections: Dict[str, bytes], name: str) -> Any:
    try:
        return json.loads(_require(sections, name).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise _Corrupt(f"section '{name}' is not valid JSON") from e


def _decode_model(
    sections: Dict[str, bytes], prefix: str, config: TrainConfig
) -> SetLstmModel:
    sparse = {
        name: _sparse_from(_require(sections, f"{prefix}/{name}"))
        for name in ("embedding",) + CELL_WEIGHTS
    }
    dense = {
        name: _dense_from(_require(sections, f"{prefix}/{name}"))
        for name in BIASES + ("w_out", "b_out")
    }
    cell_weights = {name: sparse[name] for name in CELL_WEIGHTS}
    cell_biases = {name: dense[name] for name in BIASES}
    return SetLstmModel(
        embedding=EmbeddingParams(sparse["embedding"]),
        cell=LstmCellParams(**cell_weights, **cell_biases),
        output=OutputParams(w_out=dense["w_out"], b_out=dense["b_out"]),
        dims=dims_of(config),
        variant=config.model_variant,
    )


def _prefixed(sections: Dict[str, bytes], prefix: str) -> Dict[str, SparseMatrix]:
    start = f"{prefix}/"
    return {
        name[len(start) :]: _sparse_from(payload)
        for name, payload in sections.items()
        if name.startswith(start)
    }


def decode_checkpoint(data: bytes, path: PathLike = "<bytes>") -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        CorruptCheckpointError: truncated data, bad magic, digest or structure
        VersionMismatchError: written by another format version
    """
    if len(data) < _HEADER.size:
        raise CorruptCheckpointError(path, "file shorter than its header")
    magic, version, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpointError(path, "bad magic")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format version {version}, expected {FORMAT_VERSION}",
            details={"version": version, "expected": FORMAT_VERSION},
        )
    body = data[_HEADER.size :]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(path, "content digest mismatch")

    try:
        sections = _split_sections(body)
        meta = _json_from(sections, "meta")
        config = TrainConfig.from_mapping(_json_from(sections, "config"))
        model = _decode_model(sections, "model", config)
        initial = (
            _decode_model(sections, "initial", config) if meta.get("has_initial") else None
        )

        hyper = meta["adam"]
        adam = AdamState(
            lr=hyper["lr"],
            beta1=hyper["beta1"],
            beta2=hyper["beta2"],
            eps=hyper["eps"],
            t=int(hyper["t"]),
        )
        for name, w in model.sparse_layers().items():
            m = _dense_from(_require(sections, f"adam/{name}/m"))
            v = _dense_from(_require(sections, f"adam/{name}/v"))
            if m.shape != (w.nnz(),) or v.shape != (w.nnz(),):
                raise _Corrupt(f"optimizer state of '{name}' does not match its layer")
            adam.sparse[name] = SparseMoments(w.keys.copy(), m, v)
        for name, p in model.dense_params().items():
            m = _dense_from(_require(sections, f"adam/{name}/m"))
            v = _dense_from(_require(sections, f"adam/{name}/v"))
            if m.shape != p.shape or v.shape != p.shape:
                raise _Corrupt(f"optimizer state of '{name}' does not match its parameter")
            adam.dense[name] = DenseMoments(m, v)

        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = _json_from(sections, "rng")

        best = None
        if meta.get("best") is not None:
            best = BestSnapshot(
                epoch=int(meta["best"]["epoch"]),
                test_acc=float(meta["best"]["test_acc"]),
                birth=_prefixed(sections, "best"),
            )
        state = TrainingState(
            config=config,
            model=model,
            adam=adam,
            rng=rng,
            epoch=int(meta["epoch"]),
            history=[MetricsRecord.from_dict(d) for d in _json_from(sections, "metrics")],
            initial=initial,
            initial_test_acc=float(meta["initial_test_acc"]),
            birth=_prefixed(sections, "birth"),
            best=best,
        )

        vocab_data = _json_from(sections, "vocab")
        vocab = None
        if vocab_data is not None:
            vocab = Vocabulary.from_words(vocab_data["words"], int(vocab_data["capacity"]))
        class_names = [str(c) for c in _json_from(sections, "classes")]
    except _Corrupt as e:
        raise CorruptCheckpointError(path, str(e)) from e
    except (ConfigError, VersionMismatchError):
        raise
    except (SetLstmError, KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpointError(path, f"inconsistent content: {e}") from e

    return Checkpoint(state=state, vocab=vocab, class_names=class_names)


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataIOError(path, str(e)) from e
    checkpoint = decode_checkpoint(data, path)
    logger.info(f"Loaded checkpoint {path} (epoch {checkpoint.state.epoch})")
    return checkpoint
