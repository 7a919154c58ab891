"""Per-parcel visual bag-of-words counts and their TF-IDF transform.

tf is the word share within one parcel, idf = ln(|D| / (df + 1)) where df
counts the parcels containing the word (set semantics) and |D| is the
number of non-empty parcels.  The +1 smoothing is kept verbatim, so words
present in every parcel get a negative idf.  The log base is natural;
any other fixed base only rescales features uniformly.

Parcels with zero sampled words get an all-zero feature row, are excluded
from the corpus statistics, and are reported via ``empty_parcel_ids``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyParcelError, VocabularyError


@dataclass(frozen=True)
class WordFrequencyTable:
    """Integer word counts, one row per parcel over a fixed vocabulary."""

    vocabulary: tuple[str, ...]
    parcel_ids: tuple[int, ...]
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.counts.shape != (len(self.parcel_ids), len(self.vocabulary)):
            raise ValueError("counts shape must be (parcels, vocabulary)")
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("counts must be non-negative")

    def row(self, parcel_id: int) -> np.ndarray:
        return self.counts[self.parcel_ids.index(parcel_id)]

    def empty_parcel_ids(self) -> tuple[int, ...]:
        totals = self.counts.sum(axis=1)
        return tuple(pid for pid, t in zip(self.parcel_ids, totals) if t == 0)


@dataclass(frozen=True)
class CorpusStats:
    """Document count and per-word document frequency over non-empty parcels."""

    document_count: int
    document_frequency: np.ndarray = field(repr=False)

    def __post_init__(self):
        df = self.document_frequency
        if df.size and (df.min() < 0 or df.max() > self.document_count):
            raise ValueError("document frequencies must lie in [0, document_count]")


def count_words(
    per_parcel_words: Mapping[int, Sequence[str]], vocabulary: Iterable[str]
) -> WordFrequencyTable:
    """Exact multiset counts per parcel; raises VocabularyError on unknown words."""
    vocab = tuple(vocabulary)
    index = {word: i for i, word in enumerate(vocab)}
    parcel_ids = tuple(per_parcel_words)
    counts = np.zeros((len(parcel_ids), len(vocab)), dtype=np.int64)
    for r, pid in enumerate(parcel_ids):
        for word in per_parcel_words[pid]:
            col = index.get(word)
            if col is None:
                raise VocabularyError(f"word {word!r} not in declared vocabulary")
            counts[r, col] += 1
    return WordFrequencyTable(vocabulary=vocab, parcel_ids=parcel_ids, counts=counts)


def term_frequency(counts: np.ndarray) -> np.ndarray:
    """Word shares for one parcel row; raises EmptyParcelError on an all-zero row."""
    total = counts.sum()
    if total == 0:
        raise EmptyParcelError("parcel has no sampled words")
    return counts / total


def corpus_stats(table: WordFrequencyTable) -> CorpusStats:
    """Document frequencies with set semantics, counting non-empty parcels only."""
    non_empty = table.counts.sum(axis=1) > 0
    df = (table.counts[non_empty] > 0).sum(axis=0).astype(np.int64)
    return CorpusStats(document_count=int(non_empty.sum()), document_frequency=df)


def inverse_document_frequency(stats: CorpusStats) -> np.ndarray:
    """idf per word: ln(document_count / (document_frequency + 1))."""
    if stats.document_count < 1:
        raise ValueError("corpus must contain at least one non-empty parcel")
    return np.log(stats.document_count / (stats.document_frequency + 1.0))


def tfidf_features(table: WordFrequencyTable, stats: CorpusStats) -> np.ndarray:
    """Per-parcel tf * idf matrix, rows aligned with table.parcel_ids.

    Empty parcels yield exact all-zero rows (the caller policy for the
    empty-parcel error of ``term_frequency``).
    """
    idf = inverse_document_frequency(stats)
    features = np.zeros((len(table.parcel_ids), len(table.vocabulary)), dtype=np.float64)
    totals = table.counts.sum(axis=1)
    non_empty = totals > 0
    tf = table.counts[non_empty] / totals[non_empty, np.newaxis]
    features[non_empty] = tf * idf
    # keep exact zeros (avoid -0.0 where idf is negative and the count is zero)
    features[table.counts == 0] = 0.0
    return features


def export_features_csv(
    path: str | Path,
    table: WordFrequencyTable,
    features: np.ndarray,
) -> None:
    """Write the feature matrix as CSV: parcel_id column then one column per word."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_id", *table.vocabulary])
        for pid, row in zip(table.parcel_ids, features):
            writer.writerow([pid, *(f"{v:.15g}" for v in row)])


def load_features_csv(path: str | Path) -> tuple[tuple[str, ...], tuple[int, ...], np.ndarray]:
    """Inverse of export_features_csv: (vocabulary, parcel_ids, features)."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        vocabulary = tuple(header[1:])
        parcel_ids: list[int] = []
        rows: list[list[float]] = []
        for row in reader:
            if not row:
                continue
            parcel_ids.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    features = np.asarray(rows, dtype=np.float64).reshape(len(parcel_ids), len(vocabulary))
    return vocabulary, tuple(parcel_ids), features
