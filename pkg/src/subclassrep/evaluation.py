"""Average precision, MAP over classes and learning-curve tables."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from subclassrep.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedList:
    """Test ids best first, with their (non-increasing) scores."""

    ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.scores):
            raise DataError("ids and scores differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("ranked ids are not distinct")
        s = np.asarray(self.scores, dtype=np.float64)
        if s.size > 1 and np.any(np.diff(s) > 0):
            raise DataError("scores must be non-increasing")

    @classmethod
    def from_scores(cls, ids: Sequence[str], scores) -> "RankedList":
        """Sort by score descending, ties by id ascending."""
        scores = np.asarray(scores, dtype=np.float64)
        order = sorted(range(len(ids)), key=lambda k: (-scores[k], ids[k]))
        return cls(tuple(ids[k] for k in order), tuple(float(scores[k]) for k in order))

    def __len__(self) -> int:
        return len(self.ids)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "id", "probability"])
        for rank, (i, s) in enumerate(zip(self.ids, self.scores), start=1):
            w.writerow([rank, i, repr(s)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RankedList":
        rows = sorted(csv.DictReader(io.StringIO(text)), key=lambda row: int(row["rank"]))
        return cls(tuple(r["id"] for r in rows), tuple(float(r["probability"]) for r in rows))


def average_precision(ranked: RankedList | Sequence[str], relevant: Iterable[str]) -> float:
    """Non-interpolated AP normalized by the total number of relevant ids.

    Relevant ids missing from the ranking count as never retrieved. An empty
    relevant set gives 0.0 and a warning.
    """
    ids = ranked.ids if isinstance(ranked, RankedList) else tuple(ranked)
    relevant = set(relevant)
    if not relevant:
        logger.warning("average precision requested with an empty relevant set; returning 0")
        return 0.0
    hits = 0
    total = 0.0
    for k, i in enumerate(ids, start=1):
        if i in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)


@dataclass(frozen=True)
class MAPReport:
    per_class_ap: dict[str, float]
    map: float
    train_size: int = 0
    classes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {"train_size": self.train_size, "map": self.map, "per_class_ap": dict(self.per_class_ap)}


def map_over_classes(
    results: Mapping[str, RankedList],
    truth: Mapping[str, str],
    train_size: int = 0,
) -> MAPReport:
    """AP of each class's ranking against ids truly in that class, and their mean."""
    if not results:
        raise DataError("no rankings to evaluate")
    universe = None
    for label, ranked in results.items():
        ids = set(ranked.ids)
        if universe is None:
            universe = ids
        elif ids != universe:
            raise DataError(f"ranking for {label!r} covers a different test set")
    missing = sorted(i for i in universe if i not in truth)
    if missing:
        raise DataError(f"test id {missing[0]!r} has no ground-truth label ({len(missing)} missing)")
    per_class = {}
    for label, ranked in results.items():
        relevant = {i for i in universe if truth[i] == label}
        per_class[label] = average_precision(ranked, relevant)
    mean = float(np.mean(list(per_class.values())))
    return MAPReport(per_class, mean, train_size, tuple(results))


def learning_curve(reports: Sequence[MAPReport], classes: Sequence[str] | None = None) -> list[list]:
    """Rows ``[train_size, map, ap_<class>...]`` with a header row first."""
    if not reports:
        raise DataError("no reports")
    sizes = [r.train_size for r in reports]
    if len(set(sizes)) != len(sizes):
        raise DataError(f"duplicate train sizes in {sizes}")
    if sizes != sorted(sizes):
        raise DataError(f"reports must be sorted by train size, got {sizes}")
    if classes is None:
        classes = reports[0].classes or tuple(reports[0].per_class_ap)
    rows: list[list] = [["train_size", "map", *(f"ap_{c}" for c in classes)]]
    for r in reports:
        rows.append([r.train_size, r.map, *(r.per_class_ap[c] for c in classes)])
    return rows


def rows_to_csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()
