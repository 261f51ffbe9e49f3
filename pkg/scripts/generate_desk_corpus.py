#!/usr/bin/env python3
"""
SET-LSTM - Desk Corpus Generator
================================
Writes the seeded synthetic sentiment corpus used by the desk-scale runs.

Usage:
    python scripts/generate_desk_corpus.py --out data/desk.tsv
    python scripts/generate_desk_corpus.py --out data/tweets4.tsv --classes 4 --seed 7
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from setlstm.data import write_corpus
from setlstm.errors import SetLstmError
from setlstm.synthetic import generate_sentiment_corpus

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main():
    """Command-line interface"""
    parser = argparse.ArgumentParser(
        description="Generate the synthetic desk sentiment corpus",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--out", required=True, help="Output TSV path")
    parser.add_argument(
        "--examples", type=int, default=2000, help="Number of examples (default: 2000)"
    )
    parser.add_argument(
        "--classes", type=int, default=2, help="Number of classes, 2 to 4 (default: 2)"
    )
    parser.add_argument("--seed", type=int, default=0, help="Generator seed (default: 0)")
    parser.add_argument(
        "--noise",
        type=float,
        default=0.2,
        help="Probability of a distractor keyword (default: 0.2)",
    )
    args = parser.parse_args()

    try:
        corpus = generate_sentiment_corpus(
            n_examples=args.examples,
            n_classes=args.classes,
            seed=args.seed,
            noise=args.noise,
        )
        path = write_corpus(corpus, args.out)
    except SetLstmError as e:
        logger.error(str(e))
        sys.exit(e.exit_code)

    logger.info(f"✓ Corpus written: {path} ({len(corpus)} examples)")


if __name__ == "__main__":
    main()
