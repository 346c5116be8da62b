"""Corpus ingestion, the stratified three-way split and per-subclass binary sets.

A corpus is a JSONL file with one object per line::

    {"id": "123", "label": "nature", "tags": ["Flower", "macro"], "features": [0.1, ...]}

Tags and labels are normalized on the way in (lowercase, trimmed, internal
whitespace collapsed) so that co-occurrence counts compare like with like.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from subclassrep._seeding import rng_for
from subclassrep.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (4, 3, 1)
DEFAULT_CAP = 10_000


def normalize_tag(text: str) -> str:
    if not isinstance(text, str):
        raise DataError(f"tag must be a string, got {type(text).__name__}")
    norm = " ".join(text.lower().split())
    if not norm:
        raise DataError(f"tag {text!r} is empty after normalization")
    return norm


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """One photo: id, top-level class label, tag set and a dense feature vector."""

    id: str
    label: str
    tags: frozenset[str]
    features: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 1 or feats.size == 0:
            raise DataError(f"record {self.id!r}: features must be a non-empty 1-D vector")
        if not np.all(np.isfinite(feats)):
            raise DataError(f"record {self.id!r}: features contain NaN or infinite values")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", normalize_tag(self.label))
        object.__setattr__(self, "tags", frozenset(normalize_tag(t) for t in self.tags))

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "label": self.label,
                "tags": sorted(self.tags),
                "features": [float(v) for v in self.features],
            }
        )


def feature_matrix(records: Sequence[ImageRecord]) -> np.ndarray:
    if not records:
        raise DataError("no records to stack")
    return np.vstack([r.features for r in records])


def class_list(records: Iterable[ImageRecord]) -> list[str]:
    """Distinct labels, sorted; this order defines class indices for a run."""
    return sorted({r.label for r in records})


def _parse_line(line: str, lineno: int) -> ImageRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    missing = [k for k in ("id", "label", "features") if k not in obj]
    if missing:
        raise DataError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    tags = obj.get("tags", [])
    if not isinstance(tags, list):
        raise DataError(f"line {lineno}: 'tags' must be a list")
    feats = obj["features"]
    if not isinstance(feats, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats
    ):
        raise DataError(f"line {lineno}: 'features' must be a list of numbers")
    try:
        return ImageRecord(id=str(obj["id"]), label=obj["label"], tags=frozenset(tags), features=feats)
    except DataError as exc:
        raise DataError(f"line {lineno}: {exc}") from None


def load_records(
    path: str | Path,
    expected_dim: int | None = None,
    labels: Iterable[str] | None = None,
) -> list[ImageRecord]:
    """Parse and validate a JSONL corpus.

    Raises DataError on a malformed line, a feature-dimension mismatch (against
    ``expected_dim`` or else the first record), a duplicate id, or a label not
    in ``labels`` when a whitelist is given. Blank lines are skipped.
    """
    path = Path(path)
    allowed = None if labels is None else {normalize_tag(x) for x in labels}
    records: list[ImageRecord] = []
    seen: set[str] = set()
    dim = expected_dim
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_line(line, lineno)
            if dim is None:
                dim = rec.dim
            elif rec.dim != dim:
                raise DataError(f"line {lineno}: feature dimension {rec.dim}, expected {dim}")
            if rec.id in seen:
                raise DataError(f"line {lineno}: duplicate id {rec.id!r}")
            if allowed is not None and rec.label not in allowed:
                raise DataError(f"line {lineno}: unknown class label {rec.label!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def write_records(records: Iterable[ImageRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


@dataclass(frozen=True)
class DatasetSplit:
    part_subclass: tuple[ImageRecord, ...]
    part_top: tuple[ImageRecord, ...]
    part_val: tuple[ImageRecord, ...]
    seed: int
    ratios: tuple[int, int, int] = DEFAULT_RATIOS

    @property
    def parts(self) -> tuple[tuple[ImageRecord, ...], ...]:
        return (self.part_subclass, self.part_top, self.part_val)


def part_sizes(n: int, ratios: Sequence[int]) -> list[int]:
    """Floor-proportional sizes; leftover records go to parts in order."""
    total = sum(ratios)
    sizes = [n * r // total for r in ratios]
    for k in range(n - sum(sizes)):
        sizes[k % len(sizes)] += 1
    return sizes


def split_dataset(
    records: Sequence[ImageRecord],
    ratios: Sequence[int] = DEFAULT_RATIOS,
    seed: int = 0,
) -> DatasetSplit:
    """Stratified three-way split.

    Within each class (processed in sorted label order) the records are
    shuffled by one seeded generator and cut into consecutive blocks of
    ``part_sizes``. Each part keeps the input order of its members.
    """
    if not records:
        raise DataError("cannot split an empty corpus")
    ratios = tuple(int(r) for r in ratios)
    if len(ratios) != 3 or any(r < 1 for r in ratios):
        raise DataError(f"ratios must be three positive integers, got {ratios}")
    _check_unique_ids(records)

    by_class: dict[str, list[int]] = defaultdict(list)
    for i, rec in enumerate(records):
        by_class[rec.label].append(i)

    rng = np.random.default_rng(seed)
    assignment = np.empty(len(records), dtype=np.int64)
    for label in sorted(by_class):
        idx = np.asarray(by_class[label])
        if idx.size < 3:
            raise DataError(f"class {label!r} has {idx.size} record(s); at least 3 are needed to populate all parts")
        shuffled = idx[rng.permutation(idx.size)]
        start = 0
        for part, size in enumerate(part_sizes(idx.size, ratios)):
            assignment[shuffled[start : start + size]] = part
            start += size

    parts = [tuple(records[i] for i in np.flatnonzero(assignment == p)) for p in range(3)]
    return DatasetSplit(parts[0], parts[1], parts[2], seed=seed, ratios=ratios)  # type: ignore[arg-type]


def _check_unique_ids(records: Sequence[ImageRecord]) -> None:
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise DataError(f"duplicate id {rec.id!r}")
        seen.add(rec.id)


@dataclass(frozen=True)
class BinaryTrainingSet:
    positives: tuple[ImageRecord, ...]
    negatives: tuple[ImageRecord, ...]
    subclass: tuple[str, str]
    cap: int = DEFAULT_CAP

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked features and +1/-1 labels, positives first."""
        X = feature_matrix(self.positives + self.negatives)
        y = np.concatenate([np.ones(len(self.positives)), -np.ones(len(self.negatives))])
        return X, y


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratified_quotas(available: dict[str, int], total: int) -> dict[str, int]:
    """Spread ``total`` draws as evenly as possible across classes, capped by availability."""
    quotas = {k: 0 for k in available}
    remaining = min(total, sum(available.values()))
    open_classes = sorted(k for k, v in available.items() if v > 0)
    while remaining > 0 and open_classes:
        share, extra = divmod(remaining, len(open_classes))
        for pos, k in enumerate(open_classes):
            want = share + (1 if pos < extra else 0)
            take = min(want, available[k] - quotas[k])
            quotas[k] += take
            remaining -= take
        open_classes = [k for k in open_classes if quotas[k] < available[k]]
    return quotas


def build_binary_set(
    pool: Sequence[ImageRecord],
    subclass: tuple[str, str],
    cap: int = DEFAULT_CAP,
    neg_ratio: float = 1.0,
    seed: int = 0,
) -> BinaryTrainingSet:
    """Positives carry the subclass tag and the parent label; negatives lack the tag.

    Positives beyond ``cap`` are dropped by seeded uniform sampling. Negatives
    number ``round(neg_ratio * |positives|)`` (or all that exist), drawn
    without replacement and spread evenly over the top-level classes.
    """
    if cap < 1:
        raise DataError(f"cap must be >= 1, got {cap}")
    if not neg_ratio > 0:
        raise DataError(f"neg_ratio must be > 0, got {neg_ratio}")
    parent, tag = normalize_tag(subclass[0]), normalize_tag(subclass[1])
    rng = rng_for(seed)

    pos_idx = [i for i, r in enumerate(pool) if tag in r.tags and r.label == parent]
    if not pos_idx:
        raise DataError(f"subclass {tag!r} of class {parent!r} has no positive records")
    if len(pos_idx) > cap:
        keep = np.sort(rng.choice(len(pos_idx), size=cap, replace=False))
        pos_idx = [pos_idx[k] for k in keep]

    neg_by_class: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(pool):
        if tag not in r.tags:
            neg_by_class[r.label].append(i)
    wanted = _round_half_up(neg_ratio * len(pos_idx))
    quotas = _stratified_quotas({k: len(v) for k, v in neg_by_class.items()}, wanted)
    neg_idx: list[int] = []
    for label in sorted(quotas):
        q = quotas[label]
        if q:
            members = neg_by_class[label]
            pick = np.sort(rng.choice(len(members), size=q, replace=False))
            neg_idx.extend(members[k] for k in pick)
    neg_idx.sort()
    if not neg_idx:
        logger.warning("subclass %r of class %r has no negative records available", tag, parent)

    return BinaryTrainingSet(
        positives=tuple(pool[i] for i in pos_idx),
        negatives=tuple(pool[i] for i in neg_idx),
        subclass=(parent, tag),
        cap=cap,
    )
