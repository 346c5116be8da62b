"""Tag/class co-occurrence counts, distinctive scores and subclass selection."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from subclassrep.dataset import ImageRecord, normalize_tag
from subclassrep.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TagVocabulary:
    tags: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tags)) != len(self.tags):
            raise DataError("vocabulary contains duplicate tags")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tags)})

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self.index


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    """``counts[i, j]`` is the number of class-``j`` records carrying tag ``i``."""

    counts: np.ndarray
    vocabulary: TagVocabulary
    classes: tuple[str, ...]

    def row(self, tag: str) -> np.ndarray:
        return self.counts[self.vocabulary.index[normalize_tag(tag)]]

    def triplets(self) -> list[tuple[str, str, int]]:
        """Nonzero entries as (tag, class, count), in vocabulary then class order."""
        rows, cols = np.nonzero(self.counts)
        return [(self.vocabulary.tags[i], self.classes[j], int(self.counts[i, j])) for i, j in zip(rows, cols)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tag", "class", "count"])
        w.writerows(self.triplets())
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class DistinctiveScores:
    scores: np.ndarray


def build_cooccurrence(records: Sequence[ImageRecord], classes: Sequence[str]) -> CooccurrenceMatrix:
    """Count (tag, class) incidences; the vocabulary is ordered by first occurrence."""
    classes = tuple(normalize_tag(c) for c in classes)
    class_index = {c: j for j, c in enumerate(classes)}
    vocab: dict[str, int] = {}
    rows: list[int] = []
    cols: list[int] = []
    for rec in records:
        j = class_index.get(rec.label)
        if j is None:
            raise DataError(f"record {rec.id!r} has label {rec.label!r} outside the class list")
        # frozenset iteration order is hash-dependent; sort for a stable vocabulary
        for tag in sorted(rec.tags):
            i = vocab.setdefault(tag, len(vocab))
            rows.append(i)
            cols.append(j)
    shape = (len(vocab), len(classes))
    data = np.ones(len(rows), dtype=np.int64)
    # duplicate (row, col) pairs are summed on conversion
    counts = sparse.coo_matrix((data, (rows, cols)), shape=shape).toarray()
    return CooccurrenceMatrix(counts=counts, vocabulary=TagVocabulary(tuple(vocab)), classes=classes)


def distinctive_scores(C: CooccurrenceMatrix) -> DistinctiveScores:
    totals = C.counts.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        bad = C.vocabulary.tags[int(np.flatnonzero(totals[:, 0] == 0)[0])]
        raise DataError(f"tag {bad!r} has no co-occurrences")
    return DistinctiveScores(scores=C.counts / totals)


@dataclass(frozen=True)
class MiningConfig:
    thr_distin: float = 0.6
    top_k: int = 10
    min_photos: int = 0
    exclude_class_tags: bool = True

    def __post_init__(self):
        if not 0.0 < self.thr_distin <= 1.0:
            raise DataError(f"thr_distin must lie in (0, 1], got {self.thr_distin}")
        if self.top_k < 1:
            raise DataError(f"top_k must be positive, got {self.top_k}")
        if self.min_photos < 0:
            raise DataError(f"min_photos must be non-negative, got {self.min_photos}")


@dataclass(frozen=True)
class SubclassEntry:
    parent: str
    tag: str
    photo_count: int
    score: float

    @property
    def identity(self) -> tuple[str, str]:
        return (self.parent, self.tag)


@dataclass(frozen=True)
class SubclassCatalog:
    entries: tuple[SubclassEntry, ...]
    classes: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, m: int) -> SubclassEntry:
        return self.entries[m]

    def per_class_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in self.classes}
        for e in self.entries:
            counts[e.parent] = counts.get(e.parent, 0) + 1
        return counts

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parent_class", "tag", "photo_count", "score"])
        for e in self.entries:
            w.writerow([e.parent, e.tag, e.photo_count, repr(e.score)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, classes: Sequence[str] = ()) -> "SubclassCatalog":
        reader = csv.DictReader(io.StringIO(text))
        entries = tuple(
            SubclassEntry(row["parent_class"], row["tag"], int(row["photo_count"]), float(row["score"]))
            for row in reader
        )
        return cls(entries, tuple(classes))

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


def select_subclasses(S: DistinctiveScores, C: CooccurrenceMatrix, config: MiningConfig = MiningConfig()) -> SubclassCatalog:
    """Per class: threshold, drop the class's own tag, rank by photo count, keep top_k.

    Ties in photo count are broken by tag text. Classes are concatenated in
    class-index order.
    """
    if S.scores.shape != C.counts.shape:
        raise DataError("scores and counts are not aligned")
    tags = C.vocabulary.tags
    entries: list[SubclassEntry] = []
    for j, label in enumerate(C.classes):
        cand = np.flatnonzero(S.scores[:, j] > config.thr_distin)
        ranked = sorted(
            (i for i in cand if not (config.exclude_class_tags and tags[i] == label)),
            key=lambda i: (-int(C.counts[i, j]), tags[i]),
        )
        kept = [i for i in ranked[: config.top_k] if C.counts[i, j] >= config.min_photos]
        if not kept:
            logger.warning("class %r yields no subclasses", label)
        entries.extend(SubclassEntry(label, tags[i], int(C.counts[i, j]), float(S.scores[i, j])) for i in kept)
    return SubclassCatalog(tuple(entries), C.classes)


def mine_subclasses(
    records: Sequence[ImageRecord], classes: Sequence[str], config: MiningConfig = MiningConfig()
) -> tuple[SubclassCatalog, CooccurrenceMatrix]:
    C = build_cooccurrence(records, classes)
    return select_subclasses(distinctive_scores(C), C, config), C
