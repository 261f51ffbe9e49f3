# ===========================================
# SET-LSTM - Data Pipeline
# Corpus loading, vocabulary, encoding, splitting, batching
# ===========================================

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import train_test_split

from .errors import (
    ConfigError,
    DataIOError,
    EmptyCorpusError,
    ParseError,
    ShapeMismatchError,
)

logger = logging.getLogger(__name__)

PAD_ID = 0
OOV_ID = 1
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"

_EDGE_PUNCT = re.compile(r"^\W+|\W+$")

PathLike = Union[str, Path]


@dataclass
class Corpus:
    """Labelled texts plus the class names their labels index"""

    examples: List[Tuple[int, str]]
    class_names: List[str]

    def __post_init__(self):
        if not self.examples:
            raise EmptyCorpusError("<memory>")
        n = len(self.class_names)
        for label, _ in self.examples:
            if not 0 <= label < n:
                raise ShapeMismatchError(
                    f"label {label} outside {n} classes", expected=n, actual=label
                )

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for label, _ in self.examples], dtype=np.int64)

    @property
    def texts(self) -> List[str]:
        return [text for _, text in self.examples]

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus([self.examples[i] for i in indices], list(self.class_names))


@dataclass
class Vocabulary:
    """word -> id; 0 is PAD, 1 is OOV, the rest ranked by corpus frequency"""

    capacity: int
    word_to_id: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 3:
            raise ConfigError("vocabulary capacity must be at least 3", field="vocab_size")

    @classmethod
    def from_words(cls, words: Sequence[str], capacity: int) -> "Vocabulary":
        """Rebuild from the ranked word list (ids 2, 3, ...)"""
        if len(words) > capacity - 2:
            raise ConfigError(
                f"{len(words)} words do not fit a vocabulary of {capacity}",
                field="vocab_size",
            )
        return cls(capacity, {w: i + 2 for i, w in enumerate(words)})

    def words(self) -> List[str]:
        """Ranked words without the reserved ids"""
        return sorted(self.word_to_id, key=self.word_to_id.__getitem__)

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, OOV_ID)

    def __len__(self) -> int:
        return len(self.word_to_id) + 2

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id


@dataclass
class EncodedDataset:
    tokens: np.ndarray  # N x T int64
    labels: np.ndarray  # N int64

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.tokens.ndim != 2 or self.labels.shape != (self.tokens.shape[0],):
            raise ShapeMismatchError(
                "tokens must be N x T with N labels",
                actual=[list(self.tokens.shape), list(self.labels.shape)],
            )

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def seq_len(self) -> int:
        return int(self.tokens.shape[1])


# ===========================================
# Loading
# ===========================================


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties"""
    words = (_EDGE_PUNCT.sub("", w) for w in text.lower().split())
    return [w for w in words if w]


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(path, str(e)) from e


def classes_path(path: PathLike) -> Path:
    """The '<stem>.classes' sidecar next to a corpus file"""
    return Path(path).with_suffix(".classes")


def load_corpus(path: PathLike) -> Corpus:
    """
    Read a "<label>\\t<text>" file.

    Blank lines are skipped. Class names come from the '<stem>.classes'
    sidecar when present, one per line; otherwise they are "0".."max label".

    Raises:
        DataIOError: file missing or not UTF-8
        ParseError: malformed line, carrying its 1-based line number
        EmptyCorpusError: no examples
    """
    path = Path(path)
    text = _read_text(path)

    class_names = None
    sidecar = classes_path(path)
    if sidecar.exists():
        class_names = [
            line.strip() for line in _read_text(sidecar).splitlines() if line.strip()
        ]

    examples: List[Tuple[int, str]] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if "\t" not in line:
            raise ParseError(lineno, "expected '<label>\\t<text>'", path=path)
        label_text, body = line.split("\t", 1)
        label_text = label_text.strip()
        if not label_text.isdigit():
            raise ParseError(
                lineno, f"label '{label_text}' is not a non-negative integer", path=path
            )
        label = int(label_text)
        if class_names is not None and label >= len(class_names):
            raise ParseError(
                lineno,
                f"label {label} not listed in {sidecar.name} ({len(class_names)} classes)",
                path=path,
            )
        examples.append((label, body))

    if not examples:
        raise EmptyCorpusError(path)
    if class_names is None:
        class_names = [str(i) for i in range(max(lab for lab, _ in examples) + 1)]
    logger.info(
        f"Loaded {len(examples)} examples, {len(class_names)} classes from {path}"
    )
    return Corpus(examples, class_names)


def write_corpus(corpus: Corpus, path: PathLike) -> Path:
    """Write the TSV and its '.classes' sidecar"""
    path = Path(path)
    lines = [f"{label}\t{text}" for label, text in corpus.examples]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        classes_path(path).write_text(
            "\n".join(corpus.class_names) + "\n", encoding="utf-8"
        )
    except OSError as e:
        raise DataIOError(path, str(e)) from e
    return path


# ===========================================
# Vocabulary and encoding
# ===========================================


def build_vocab(corpus: Corpus, capacity: int) -> Vocabulary:
    """Keep the capacity - 2 most frequent words; ties by lexicographic order"""
    if capacity < 3:
        raise ConfigError("vocabulary capacity must be at least 3", field="vocab_size")
    counts = Counter(w for text in corpus.texts for w in tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[: capacity - 2]]
    logger.debug(f"vocabulary keeps {len(words)} of {len(counts)} distinct words")
    return Vocabulary.from_words(words, capacity)


def encode(text: str, vocab: Vocabulary, seq_len: int) -> np.ndarray:
    """Keep the last seq_len token ids, left-padded with PAD"""
    ids = [vocab.id_of(w) for w in tokenize(text)][-seq_len:]
    out = np.full(seq_len, PAD_ID, dtype=np.int64)
    if ids:
        out[seq_len - len(ids) :] = ids
    return out


def encode_corpus(corpus: Corpus, vocab: Vocabulary, seq_len: int) -> EncodedDataset:
    tokens = np.stack([encode(text, vocab, seq_len) for text in corpus.texts])
    return EncodedDataset(tokens=tokens, labels=corpus.labels)


# ===========================================
# Splitting and batching
# ===========================================


def split(corpus: Corpus, ratio: float = 0.8, seed: int = 0) -> Tuple[Corpus, Corpus]:
    """
    Deterministic shuffled split with floor(ratio * N) training examples.

    Raises:
        ConfigError: ratio outside (0, 1) or a side would be empty
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError("split ratio must lie in (0, 1)", field="split_ratio")
    indices = np.arange(len(corpus))
    try:
        train_idx, test_idx = train_test_split(
            indices, train_size=ratio, random_state=seed % (2**32), shuffle=True
        )
    except ValueError as e:
        raise ConfigError(
            f"cannot split {len(corpus)} examples at ratio {ratio}: {e}",
            field="split_ratio",
        ) from e
    return corpus.subset(train_idx), corpus.subset(test_idx)


def batches(
    dataset: EncodedDataset, batch_size: int, shuffle_seed: int
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Shuffled mini-batches; the final partial batch is included"""
    if batch_size < 1:
        raise ConfigError("batch size must be positive", field="batch_size")
    order = np.random.default_rng(shuffle_seed).permutation(len(dataset))
    for start in range(0, order.size, batch_size):
        idx = order[start : start + batch_size]
        yield dataset.tokens[idx], dataset.labels[idx]
