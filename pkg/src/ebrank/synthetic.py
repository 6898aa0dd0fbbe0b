"""Synthetic LETOR corpus standing in for the licensed benchmark sets.

Each query gets graded labels in 0..2; a latent relevance (label plus
noise) drives a handful of informative features of varying strength while
the rest are noise, and every feature also carries a per-query offset so
that absolute values do not transfer cleanly across queries.

    python -m ebrank.synthetic out.txt
"""

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .letor import Dataset, QueryRecord, dump_letor, parse_letor

BUNDLED_NAME = "synthetic_200x30x20.txt"
BUNDLED_SEED = 20230723
BM25_INDEX = 0

_LABEL_PROBS = (0.6, 0.28, 0.12)


def make_corpus(n_queries=200, n_items=30, n_features=20, seed=BUNDLED_SEED) -> Dataset:
    rng = np.random.default_rng(seed)
    strength = np.zeros(n_features)
    n_informative = min(8, n_features)
    strength[:n_informative] = np.linspace(0.9, 0.2, n_informative)
    noise = rng.uniform(0.6, 1.2, n_features)

    queries = []
    for qi in range(n_queries):
        labels = rng.choice(3, size=n_items, p=_LABEL_PROBS)
        latent = labels + rng.normal(0.0, 0.9, n_items)
        offset = rng.normal(0.0, 1.0, n_features)
        feats = (latent[:, None] * strength[None, :] + offset[None, :]
                 + rng.normal(0.0, 1.0, (n_items, n_features)) * noise[None, :])
        feats = np.round(feats, 6)
        queries.append(QueryRecord(str(qi + 1), labels.astype(np.int64), feats))
    return Dataset(tuple(queries), n_features, 2, BM25_INDEX)


def bundled_path() -> Path:
    return Path(str(resources.files("ebrank") / "data" / BUNDLED_NAME))


def load_bundled() -> Dataset:
    return parse_letor(bundled_path().read_text(encoding="utf-8"), BM25_INDEX)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", nargs="?", default="-")
    parser.add_argument("--queries", type=int, default=200)
    parser.add_argument("--items", type=int, default=30)
    parser.add_argument("--features", type=int, default=20)
    parser.add_argument("--seed", type=int, default=BUNDLED_SEED)
    args = parser.parse_args(argv)
    text = dump_letor(make_corpus(args.queries, args.items, args.features, args.seed))
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")


if __name__ == "__main__":
    main()
