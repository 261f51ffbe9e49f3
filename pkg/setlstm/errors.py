"""
SET-LSTM - Error Types
Exception hierarchy shared by the library and the command line
"""

from typing import Any, Dict, Optional, Tuple


class SetLstmError(Exception):
    """Base exception for SET-LSTM errors"""

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
        exit_code: int = 2,
    ):
        self.message = message
        self.error_code = error_code or "SETLSTM_ERROR"
        self.details = details or {}
        self.exit_code = exit_code
        super().__init__(message)

    def __str__(self) -> str:
        return f"[{self.error_code}] {self.message}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": True,
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
        }


# ===========================================
# Sparse-core errors
# ===========================================


class OutOfBoundsError(SetLstmError):
    """A (row, col) position outside the matrix"""

    def __init__(self, row: int, col: int, shape: Tuple[int, int]):
        super().__init__(
            message=f"position ({row}, {col}) out of bounds for shape {shape}",
            error_code="OUT_OF_BOUNDS",
            details={"row": int(row), "col": int(col), "shape": list(shape)},
        )


class DuplicatePositionError(SetLstmError):
    """The same (row, col) position stored twice"""

    def __init__(self, row: int, col: int):
        super().__init__(
            message=f"duplicate position ({row}, {col})",
            error_code="DUPLICATE_POSITION",
            details={"row": int(row), "col": int(col)},
        )


class ShapeMismatchError(SetLstmError):
    """Operand shapes are incompatible"""

    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        details: Dict[str, Any] = {}
        if expected is not None:
            details["expected"] = expected
        if actual is not None:
            details["actual"] = actual
        super().__init__(
            message=message, error_code="SHAPE_MISMATCH", details=details
        )


# ===========================================
# Neural errors
# ===========================================


class TokenOutOfRangeError(SetLstmError):
    """Token id not covered by the embedding"""

    def __init__(self, token: int, vocab_size: int):
        super().__init__(
            message=f"token id {token} outside vocabulary of size {vocab_size}",
            error_code="TOKEN_OUT_OF_RANGE",
            details={"token": int(token), "vocab_size": int(vocab_size)},
        )


class LabelOutOfRangeError(SetLstmError):
    """Class label not covered by the output layer"""

    def __init__(self, label: int, n_classes: int):
        super().__init__(
            message=f"label {label} outside {n_classes} classes",
            error_code="LABEL_OUT_OF_RANGE",
            details={"label": int(label), "n_classes": int(n_classes)},
        )


class CacheMismatchError(SetLstmError):
    """Backward pass called with caches from a different forward pass"""

    def __init__(self, message: str):
        super().__init__(message=message, error_code="CACHE_MISMATCH")


# ===========================================
# Optimizer errors
# ===========================================


class MaskMismatchError(SetLstmError):
    """Gradient positions differ from the parameter positions"""

    def __init__(self, layer: str):
        super().__init__(
            message=f"gradient mask of '{layer}' differs from its parameter mask",
            error_code="MASK_MISMATCH",
            details={"layer": layer},
        )


class StateMismatchError(SetLstmError):
    """Optimizer state keys differ from the parameter positions"""

    def __init__(self, layer: str, reason: str = "state keys do not match"):
        super().__init__(
            message=f"optimizer state of '{layer}': {reason}",
            error_code="STATE_MISMATCH",
            details={"layer": layer},
        )


# ===========================================
# Data / IO errors
# ===========================================


class DataIOError(SetLstmError):
    """File could not be read or written"""

    def __init__(self, path: Any, reason: str):
        super().__init__(
            message=f"cannot access '{path}': {reason}",
            error_code="IO_ERROR",
            details={"path": str(path)},
        )


class ParseError(SetLstmError):
    """Malformed input line"""

    def __init__(self, line: int, reason: str, path: Any = None):
        details: Dict[str, Any] = {"line": int(line)}
        if path is not None:
            details["path"] = str(path)
        super().__init__(
            message=f"line {line}: {reason}",
            error_code="PARSE_ERROR",
            details=details,
        )
        self.line = line


class EmptyCorpusError(SetLstmError):
    """Corpus file holds no examples"""

    def __init__(self, path: Any):
        super().__init__(
            message=f"corpus '{path}' contains no examples",
            error_code="EMPTY_CORPUS",
            details={"path": str(path)},
        )


class ConfigError(SetLstmError):
    """Invalid training configuration"""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        error_details = details or {}
        if field:
            error_details["field"] = field
        super().__init__(
            message=message, error_code="CONFIG_ERROR", details=error_details
        )


# ===========================================
# Checkpoint errors
# ===========================================


class VersionMismatchError(SetLstmError):
    """Checkpoint written by another format version or for another config"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message, error_code="VERSION_MISMATCH", details=details
        )


class CorruptCheckpointError(SetLstmError):
    """Checkpoint bytes fail the digest or structure check"""

    def __init__(self, path: Any, reason: str):
        super().__init__(
            message=f"checkpoint '{path}' is corrupt: {reason}",
            error_code="CORRUPT_CHECKPOINT",
            details={"path": str(path)},
        )


class MissingInitialSnapshotError(SetLstmError):
    """Same-initialization requested but no epoch-0 values were stored"""

    def __init__(self):
        super().__init__(
            message="checkpoint holds no epoch-0 parameter snapshot",
            error_code="MISSING_INITIAL_SNAPSHOT",
        )


class VerificationError(SetLstmError):
    """Gradient verification failed"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            error_code="VERIFICATION_FAILED",
            details=details,
            exit_code=3,
        )
