# ===========================================
# SET-LSTM - Synthetic Corpus
# Seeded keyword-template sentiment corpus for desk-scale runs
# ===========================================

import logging
from typing import List, Sequence

import numpy as np

from .data import Corpus
from .errors import ConfigError

logger = logging.getLogger(__name__)

# Class names follow the four-class tweet sentiment layout.
CLASS_NAMES = ("negative", "positive", "neutral", "irrelevant")

CLASS_KEYWORDS = (
    (
        "awful", "terrible", "boring", "broken", "hate", "worst", "disappointing",
        "dull", "refund", "rude", "slow", "useless", "waste", "annoying",
    ),
    (
        "amazing", "excellent", "great", "love", "wonderful", "brilliant",
        "delightful", "enjoyed", "fantastic", "perfect", "superb", "recommend",
        "favorite", "charming",
    ),
    (
        "okay", "average", "fine", "decent", "normal", "standard", "moderate",
        "usual", "acceptable", "typical", "plain", "ordinary", "fair", "mixed",
    ),
    (
        "lottery", "weather", "traffic", "crypto", "giveaway", "horoscope",
        "recipe", "football", "election", "sponsored", "followback", "retweet",
        "podcast", "playlist",
    ),
)

FILLER_WORDS = (
    "the", "a", "an", "this", "that", "it", "was", "is", "and", "but", "so",
    "we", "i", "you", "they", "my", "our", "their", "movie", "film", "book",
    "show", "store", "service", "product", "place", "food", "staff", "story",
    "plot", "actor", "scene", "music", "ending", "price", "order", "delivery",
    "today", "yesterday", "again", "really", "very", "quite", "just", "about",
    "with", "from", "for", "of", "at", "on", "in", "after", "before", "while",
    "then", "some", "every", "one", "two", "time", "night", "week", "friend",
    "family", "people", "thing", "overall", "honestly", "maybe", "still",
)


def generate_sentiment_corpus(
    n_examples: int = 2000,
    n_classes: int = 2,
    seed: int = 0,
    noise: float = 0.2,
    min_keywords: int = 2,
    max_keywords: int = 4,
    min_fillers: int = 6,
    max_fillers: int = 20,
) -> Corpus:
    """
    Generate a labelled corpus from keyword templates.

    Each example shuffles filler words together with min..max keywords of its
    class; with probability ``noise`` one keyword of another class is mixed in.
    Labels are never flipped, so own-class keywords always outnumber the
    distractor.

    Args:
        n_examples: number of examples, classes drawn uniformly
        n_classes: 2 to 4 classes
        seed: generator seed, same seed gives the same corpus
        noise: probability of a distractor keyword

    Returns:
        Corpus with class names taken from CLASS_NAMES
    """
    if not 2 <= n_classes <= len(CLASS_NAMES):
        raise ConfigError(
            f"synthetic corpus supports 2 to {len(CLASS_NAMES)} classes",
            field="n_classes",
        )
    if n_examples < 1:
        raise ConfigError("n_examples must be positive")
    if not 1 <= min_keywords <= max_keywords:
        raise ConfigError("keyword range must satisfy 1 <= min <= max")
    if not 0 <= min_fillers <= max_fillers:
        raise ConfigError("filler range must satisfy 0 <= min <= max")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError("noise must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n_examples):
        label = int(rng.integers(n_classes))
        words: List[str] = list(
            _pick(rng, CLASS_KEYWORDS[label], rng.integers(min_keywords, max_keywords + 1))
        )
        if rng.random() < noise:
            other = int(rng.integers(n_classes - 1))
            other += other >= label
            words.extend(_pick(rng, CLASS_KEYWORDS[other], 1))
        words.extend(
            _pick(rng, FILLER_WORDS, rng.integers(min_fillers, max_fillers + 1))
        )
        rng.shuffle(words)
        examples.append((label, " ".join(words)))

    logger.info(
        f"Generated {n_examples} synthetic examples over {n_classes} classes (seed={seed})"
    )
    return Corpus(examples, list(CLASS_NAMES[:n_classes]))


def _pick(rng: np.random.Generator, pool: Sequence[str], n) -> List[str]:
    idx = rng.integers(len(pool), size=int(n))
    return [pool[i] for i in idx]
