# ===========================================
# SET-LSTM - Test Configuration
# ===========================================

import numpy as np
import pytest

from setlstm.config import TrainConfig
from setlstm.data import Corpus, build_vocab, encode_corpus, split, write_corpus
from setlstm.gradcheck import random_instance
from setlstm.synthetic import generate_sentiment_corpus


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Keep developer environment overrides out of the tests"""
    for name in ("SETLSTM_SEED", "SETLSTM_LOG_LEVEL", "SETLSTM_JOBS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_instance():
    """Small random model with a batch, as used by the gradient check"""
    sizes = {"B": 4, "T": 5, "D": 5, "H": 4, "V": 7, "C": 3}
    return random_instance(sizes, np.random.default_rng(7))


@pytest.fixture
def tiny_config():
    """Dimensions small enough for multi-epoch runs inside unit tests"""
    return TrainConfig(
        vocab_size=60,
        embed_dim=8,
        hidden_dim=8,
        seq_len=12,
        n_classes=2,
        epsilon=2.0,
        zeta=0.3,
        lr=0.02,
        batch_size=16,
        epochs=3,
        seed=5,
    )


@pytest.fixture
def tiny_corpus() -> Corpus:
    return generate_sentiment_corpus(
        n_examples=120, n_classes=2, seed=3, min_fillers=2, max_fillers=6
    )


@pytest.fixture
def tiny_data(tiny_config, tiny_corpus):
    """(train_set, test_set) encoded with tiny_config"""
    train_c, test_c = split(tiny_corpus, tiny_config.split_ratio, tiny_config.seed)
    vocab = build_vocab(train_c, tiny_config.vocab_size)
    return (
        encode_corpus(train_c, vocab, tiny_config.seq_len),
        encode_corpus(test_c, vocab, tiny_config.seq_len),
    )


@pytest.fixture
def corpus_file(tmp_path, tiny_corpus):
    return write_corpus(tiny_corpus, tmp_path / "corpus.tsv")


@pytest.fixture
def config_file(tmp_path, tiny_config):
    path = tmp_path / "tiny.cfg"
    path.write_text("\n".join(tiny_config.to_lines()) + "\n", encoding="utf-8")
    return path
