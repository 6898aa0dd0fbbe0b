"""LETOR / SVMLight ranking data: parsing, query-level splits and scaling.

Lines look like ``<label> qid:<id> 1:<v> 2:<v> ... [# comment]``. Only the
dense flavour is accepted: every line lists features 1..F with no gaps.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class LetorParseError(ValueError):
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ItemRecord:
    item_id: int
    label: int
    features: np.ndarray
    comment: Optional[str] = None


@dataclass(frozen=True, eq=False)
class QueryRecord:
    """One query and its candidates.

    Item ids are positions within the query (0..len-1), which keeps them
    unique and gives a natural deterministic tie-break order.
    """

    query_id: str
    labels: np.ndarray
    features: np.ndarray
    comments: Tuple[Optional[str], ...] = ()

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError(f"query {self.query_id} has no items")
        if self.features.shape[0] != len(self.labels):
            raise ValueError("features and labels disagree on item count")
        if not self.comments:
            object.__setattr__(self, "comments", (None,) * len(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def item_ids(self) -> np.ndarray:
        return np.arange(len(self.labels))

    @property
    def items(self) -> List[ItemRecord]:
        return [
            ItemRecord(i, int(self.labels[i]), self.features[i], self.comments[i])
            for i in range(len(self.labels))
        ]

    def __eq__(self, other):
        if not isinstance(other, QueryRecord):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
            and self.comments == other.comments
        )

    def with_features(self, features: np.ndarray) -> "QueryRecord":
        return QueryRecord(self.query_id, self.labels, features, self.comments)


@dataclass(frozen=True, eq=False)
class Dataset:
    queries: Tuple[QueryRecord, ...]
    feature_count: int
    y_max: int
    bm25_feature_index: int = 0
    _by_id: Dict[str, QueryRecord] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.bm25_feature_index < self.feature_count:
            raise ValueError(
                f"bm25_feature_index {self.bm25_feature_index} outside [0, {self.feature_count})"
            )
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "_by_id", {q.query_id: q for q in self.queries})
        if len(self._by_id) != len(self.queries):
            raise ValueError("duplicate query ids")

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def __getitem__(self, query_id: str) -> QueryRecord:
        return self._by_id[query_id]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_count == other.feature_count
            and self.y_max == other.y_max
            and self.bm25_feature_index == other.bm25_feature_index
            and self.queries == other.queries
        )

    @property
    def query_ids(self) -> List[str]:
        return [q.query_id for q in self.queries]

    @property
    def avg_docs(self) -> float:
        return float(np.mean([len(q) for q in self.queries]))

    def subset(self, query_ids: Sequence[str]) -> "Dataset":
        return Dataset(
            tuple(self._by_id[qid] for qid in query_ids),
            self.feature_count,
            self.y_max,
            self.bm25_feature_index,
        )


def parse_letor_line(line: str, lineno: Optional[int] = None):
    """Parse one line into ``(label, query_id, features, comment)``."""
    body, sep, comment = line.partition("#")
    comment = comment.strip() if sep else None
    tokens = body.split()
    if len(tokens) < 2:
        raise LetorParseError("expected '<label> qid:<id> ...'", lineno)
    try:
        label = int(tokens[0])
    except ValueError:
        raise LetorParseError(f"non-numeric label {tokens[0]!r}", lineno) from None
    if not tokens[1].startswith("qid:") or len(tokens[1]) == 4:
        raise LetorParseError(f"missing qid, got {tokens[1]!r}", lineno)
    query_id = tokens[1][4:]

    values = []
    for expected, tok in enumerate(tokens[2:], start=1):
        key, colon, raw = tok.partition(":")
        if not colon:
            raise LetorParseError(f"malformed feature token {tok!r}", lineno)
        try:
            index = int(key)
        except ValueError:
            raise LetorParseError(f"malformed feature index {key!r}", lineno) from None
        if index < expected:
            raise LetorParseError(f"duplicate or decreasing feature index {index}", lineno)
        if index > expected:
            raise LetorParseError(f"missing feature index {expected} (dense format)", lineno)
        try:
            value = float(raw)
        except ValueError:
            raise LetorParseError(f"non-numeric value {raw!r} for feature {index}", lineno) from None
        if not np.isfinite(value):
            raise LetorParseError(f"non-finite value for feature {index}", lineno)
        values.append(value)
    return label, query_id, np.array(values, dtype=np.float64), comment


def parse_letor(text: str, bm25_feature_index: int = 0, drop_features: Sequence[int] = ()) -> Dataset:
    """Parse LETOR text; items are grouped by qid in first-appearance order.

    ``drop_features`` lists 0-based columns to zero out. Columns keep their
    positions so published feature ids stay valid.
    """
    grouped: Dict[str, Tuple[list, list, list]] = {}
    feature_count = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        label, qid, feats, comment = parse_letor_line(line, lineno)
        if feature_count is None:
            feature_count = len(feats)
        elif len(feats) != feature_count:
            raise LetorParseError(
                f"inconsistent feature count: {len(feats)} vs {feature_count}", lineno
            )
        if label < 0:
            raise LetorParseError(f"negative label {label}", lineno)
        labels, rows, comments = grouped.setdefault(qid, ([], [], []))
        labels.append(label)
        rows.append(feats)
        comments.append(comment)
    if feature_count is None:
        raise LetorParseError("no data lines")

    queries = []
    for qid, (labels, rows, comments) in grouped.items():
        features = np.vstack(rows) if feature_count else np.zeros((len(rows), 0))
        if drop_features:
            features[:, list(drop_features)] = 0.0
        queries.append(QueryRecord(qid, np.array(labels, dtype=np.int64), features, tuple(comments)))
    y_max = int(max(q.labels.max() for q in queries))
    return Dataset(tuple(queries), feature_count, y_max, bm25_feature_index)


def load_dataset(path: "str | os.PathLike", bm25_feature_index: int = 0,
                 drop_features: Sequence[int] = ()) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_letor(fh.read(), bm25_feature_index, drop_features)


def dump_letor(dataset: Dataset) -> str:
    buf = io.StringIO()
    for q in dataset.queries:
        for label, row, comment in zip(q.labels, q.features, q.comments):
            feats = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(row.tolist()))
            line = f"{int(label)} qid:{q.query_id} {feats}"
            if comment is not None:
                line += f" # {comment}"
            buf.write(line + "\n")
    return buf.getvalue()


def partition(dataset: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Split at query level into (train, valid, test); deterministic in seed.

    Sizes are the rounded ratios for train and valid with test taking the
    remainder; queries keep their original relative order in each part.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    nq = len(dataset)
    if nq < 3:
        raise ValueError(f"need at least 3 queries to make 3 partitions, got {nq}")
    n_train = int(np.floor(ratios[0] * nq + 0.5))
    n_valid = int(np.floor(ratios[1] * nq + 0.5))
    n_train = min(max(n_train, 1), nq - 2)
    n_valid = min(max(n_valid, 1), nq - n_train - 1)

    perm = np.random.default_rng(seed).permutation(nq)
    cuts = (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_valid]),
            np.sort(perm[n_train + n_valid:]))
    ids = dataset.query_ids
    return tuple(dataset.subset([ids[i] for i in part]) for part in cuts)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature min-max map fitted on one partition, applied to any."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, dataset: Dataset) -> "Normalizer":
        stacked = np.vstack([q.features for q in dataset.queries])
        return cls(stacked.min(axis=0), stacked.max(axis=0))

    def transform(self, features: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        scaled = (features - self.mins) / safe
        # constant training columns carry no information
        return np.where(span > 0, scaled, 0.0)

    def apply(self, dataset: Dataset) -> Dataset:
        return Dataset(
            tuple(q.with_features(self.transform(q.features)) for q in dataset.queries),
            dataset.feature_count,
            dataset.y_max,
            dataset.bm25_feature_index,
        )


def normalize_features(train: Dataset, others: Sequence[Dataset] = ()):
    """Scale ``train`` and each of ``others`` with statistics from ``train``.

    Returns ``(train, others, normalizer)``; values outside the training
    range are not clipped.
    """
    for other in others:
        if other.feature_count != train.feature_count:
            raise ValueError("feature counts differ between partitions")
    norm = Normalizer.fit(train)
    return norm.apply(train), [norm.apply(o) for o in others], norm
