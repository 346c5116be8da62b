"""Two-level subclass-representation pipeline and the two baselines.

Level one is a bank of calibrated subclass detectors trained on raw features;
its outputs form the representation on which a one-vs-one top-level model is
trained. The baselines are a one-vs-one model on raw features
(``SVM_VisFeat``) and a two-stage model whose intermediate space is the
top-level class posterior itself (``SVM_ClassProb``).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Sequence

import numpy as np

from subclassrep._seeding import derive_seed, rng_for
from subclassrep.dataset import (
    DEFAULT_CAP,
    DEFAULT_RATIOS,
    DatasetSplit,
    ImageRecord,
    build_binary_set,
    feature_matrix,
)
from subclassrep.errors import DataError, HygieneError
from subclassrep.evaluation import RankedList
from subclassrep.prob import (
    CalibratedBinary,
    PairwiseModel,
    _map_jobs,
    train_calibrated_binary,
    train_one_vs_one,
)
from subclassrep.svm import TrainConfig
from subclassrep.tagmine import MiningConfig, SubclassCatalog, mine_subclasses

logger = logging.getLogger(__name__)

PROBABILITY = "probability"
MARGIN = "margin"
BANK_BINARY = "binary"
BANK_ONE_VS_ONE = "one_vs_one"

# key prefixes keep seeds of different job families apart
_SEED_BANK_SET, _SEED_BANK_FIT, _SEED_SUBSAMPLE, _SEED_STAGE1, _SEED_STAGE2 = range(1, 6)


class MethodKind(str, Enum):
    SUBCLASS_PROB = "SVM_SubClassProb"
    VIS_FEAT = "SVM_VisFeat"
    CLASS_PROB = "SVM_ClassProb"

    @classmethod
    def parse(cls, text: str) -> "MethodKind":
        for m in cls:
            if text in (m.value, m.name):
                return m
        raise DataError(f"unknown method {text!r}; choose from {', '.join(m.value for m in cls)}")


@dataclass(frozen=True)
class PipelineConfig:
    mining: MiningConfig = field(default_factory=MiningConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    calibration_folds: int = 3
    subclass_cap: int = DEFAULT_CAP
    neg_ratio: float = 1.0
    representation_mode: str = PROBABILITY
    bank_mode: str = BANK_BINARY
    per_class_train_sizes: tuple[int, ...] = ()
    split_ratios: tuple[int, int, int] = DEFAULT_RATIOS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "per_class_train_sizes", tuple(int(s) for s in self.per_class_train_sizes))
        object.__setattr__(self, "split_ratios", tuple(int(r) for r in self.split_ratios))
        if self.calibration_folds < 2:
            raise DataError(f"calibration_folds must be >= 2, got {self.calibration_folds}")
        if self.subclass_cap < 1:
            raise DataError(f"subclass_cap must be >= 1, got {self.subclass_cap}")
        if not self.neg_ratio > 0:
            raise DataError(f"neg_ratio must be > 0, got {self.neg_ratio}")
        if self.representation_mode not in (PROBABILITY, MARGIN):
            raise DataError(f"representation_mode must be {PROBABILITY!r} or {MARGIN!r}")
        if self.bank_mode not in (BANK_BINARY, BANK_ONE_VS_ONE):
            raise DataError(f"bank_mode must be {BANK_BINARY!r} or {BANK_ONE_VS_ONE!r}")
        if any(s < 1 for s in self.per_class_train_sizes):
            raise DataError("per_class_train_sizes must be positive")
        if len(set(self.per_class_train_sizes)) != len(self.per_class_train_sizes):
            raise DataError("per_class_train_sizes contains duplicates")
        if len(self.split_ratios) != 3 or any(r < 1 for r in self.split_ratios):
            raise DataError("split_ratios must be three positive integers")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["per_class_train_sizes"] = list(self.per_class_train_sizes)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "PipelineConfig":
        obj = dict(obj)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(obj) - known)
        if unknown:
            raise DataError(f"unknown pipeline config key(s): {', '.join(unknown)}")
        try:
            mining = MiningConfig(**obj.pop("mining", {}))
            train = TrainConfig(**obj.pop("train", {}))
        except TypeError as exc:
            raise DataError(f"invalid config: {exc}") from None
        return cls(mining=mining, train=train, **obj)


@dataclass(frozen=True)
class SubclassModelBank:
    """Subclass detectors aligned with ``catalog.entries``.

    In the binary layout ``models[m]`` detects entry m. In the one-vs-one
    layout a single pairwise model over all M subclasses is kept instead and
    its coupled posterior is the representation.
    """

    catalog: SubclassCatalog
    models: tuple[CalibratedBinary, ...] = ()
    pairwise: PairwiseModel | None = None

    def __post_init__(self):
        if self.pairwise is None:
            if len(self.models) != len(self.catalog):
                raise DataError("bank and catalog differ in length")
            for m, (model, entry) in enumerate(zip(self.models, self.catalog)):
                if tuple(model.identity) != entry.identity:
                    raise DataError(f"bank model {m} is not aligned with catalog entry {entry.identity}")

    def __len__(self) -> int:
        return len(self.catalog)

    @property
    def dim(self) -> int:
        if self.pairwise is not None:
            return self.pairwise.binaries[0].model.dim
        return self.models[0].model.dim

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"catalog": [asdict(e) for e in self.catalog]}
        if self.pairwise is not None:
            out["pairwise"] = self.pairwise.to_dict()
        else:
            out["models"] = [m.to_dict() for m in self.models]
        return out


def check_disjoint(**groups: Iterable[str]) -> None:
    """Raise HygieneError if any two named id collections overlap."""
    named = [(name, set(ids)) for name, ids in groups.items()]
    for a in range(len(named)):
        for b in range(a + 1, len(named)):
            common = named[a][1] & named[b][1]
            if common:
                example = sorted(common)[0]
                raise HygieneError(
                    f"{named[a][0]} and {named[b][0]} share {len(common)} record(s), e.g. {example!r}"
                )


def _subclass_positives_for_ovo(pool: Sequence[ImageRecord], catalog: SubclassCatalog, cap: int, seed: int):
    """Each record is labelled by the first catalog entry it matches."""
    members: list[list[int]] = [[] for _ in catalog]
    for i, rec in enumerate(pool):
        for m, entry in enumerate(catalog):
            if rec.label == entry.parent and entry.tag in rec.tags:
                members[m].append(i)
                break
    rows, labels = [], []
    for m, idx in enumerate(members):
        if not idx:
            raise DataError(f"subclass {catalog[m].tag!r} of class {catalog[m].parent!r} has no positive records")
        if len(idx) > cap:
            keep = np.sort(rng_for(seed, m).choice(len(idx), size=cap, replace=False))
            idx = [idx[k] for k in keep]
        rows.extend(idx)
        labels.extend([m] * len(idx))
    return rows, np.asarray(labels, dtype=np.int64)


def train_subclass_bank(
    catalog: SubclassCatalog,
    part_subclass: Sequence[ImageRecord],
    config: PipelineConfig = PipelineConfig(),
    jobs: int = 1,
) -> SubclassModelBank:
    """Train one calibrated detector per catalog entry (or one M-way pairwise model)."""
    if len(catalog) == 0:
        raise DataError("cannot train a bank from an empty catalog")
    pool = list(part_subclass)

    if config.bank_mode == BANK_ONE_VS_ONE:
        if len(catalog) < 2:
            raise DataError("a one-vs-one bank needs at least 2 subclasses")
        rows, labels = _subclass_positives_for_ovo(pool, catalog, config.subclass_cap, derive_seed(config.seed, _SEED_BANK_SET))
        X = feature_matrix([pool[i] for i in rows])
        names = [f"{e.parent}/{e.tag}" for e in catalog]
        pairwise = train_one_vs_one(
            X, labels, names, config.train, config.calibration_folds, derive_seed(config.seed, _SEED_BANK_FIT), jobs
        )
        return SubclassModelBank(catalog, pairwise=pairwise)

    def job(m: int) -> CalibratedBinary:
        entry = catalog[m]
        bs = build_binary_set(
            pool, entry.identity, config.subclass_cap, config.neg_ratio, derive_seed(config.seed, _SEED_BANK_SET, m)
        )
        X, y = bs.arrays()
        try:
            return train_calibrated_binary(
                X, y, config.train, config.calibration_folds, derive_seed(config.seed, _SEED_BANK_FIT, m), entry.identity
            )
        except DataError as exc:
            raise DataError(f"subclass {entry.tag!r} of class {entry.parent!r}: {exc}") from None

    return SubclassModelBank(catalog, tuple(_map_jobs(job, range(len(catalog)), jobs)))


def project_many(X, bank: SubclassModelBank, mode: str = PROBABILITY) -> np.ndarray:
    """Representation matrix of shape (n, M); column order follows the catalog."""
    if len(bank) == 0:
        raise DataError("cannot project onto an empty bank")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != bank.dim:
        raise DataError(f"feature dimension {X.shape[1]} does not match bank dimension {bank.dim}")
    if bank.pairwise is not None:
        if mode != PROBABILITY:
            raise DataError("the one-vs-one bank only supports the probability representation")
        return bank.pairwise.predict_proba(X)
    if mode == PROBABILITY:
        cols = [m.probability(X) for m in bank.models]
    elif mode == MARGIN:
        cols = [m.decision_function(X) for m in bank.models]
    else:
        raise DataError(f"unknown representation mode {mode!r}")
    return np.column_stack(cols)


def project(features, bank: SubclassModelBank, mode: str = PROBABILITY) -> np.ndarray:
    """Subclass representation of one feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("project takes a single feature vector; use project_many for matrices")
    return project_many(x[None, :], bank, mode)[0]


def train_top(
    representations,
    y,
    classes: Sequence[str],
    config: PipelineConfig = PipelineConfig(),
    *,
    ids: Iterable[str] | None = None,
    stage1_ids: Iterable[str] | None = None,
    seed: int | None = None,
    jobs: int = 1,
) -> PairwiseModel:
    """One-vs-one calibrated model over the subclass space.

    When ``ids`` and ``stage1_ids`` are both given, any overlap between the
    records behind the representations and the bank's training records raises
    HygieneError.
    """
    if ids is not None and stage1_ids is not None:
        check_disjoint(stage1=stage1_ids, stage2=ids)
    seed = derive_seed(config.seed, _SEED_STAGE2) if seed is None else seed
    return train_one_vs_one(representations, y, classes, config.train, config.calibration_folds, seed, jobs)


@dataclass(frozen=True, eq=False)
class MethodResult:
    method: MethodKind
    train_size: int
    classes: tuple[str, ...]
    test_ids: tuple[str, ...]
    probability_matrix: np.ndarray
    per_class_rankings: dict[str, RankedList]
    requested_size: int | None = None
    clamped: dict[str, int] = field(default_factory=dict)
    catalog: SubclassCatalog | None = None
    models: dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def probabilities(self) -> dict[str, np.ndarray]:
        return {i: self.probability_matrix[k] for k, i in enumerate(self.test_ids)}


def _rankings(test_ids: Sequence[str], P: np.ndarray, classes: Sequence[str]) -> dict[str, RankedList]:
    return {c: RankedList.from_scores(test_ids, P[:, j]) for j, c in enumerate(classes)}


def _by_class(records: Sequence[ImageRecord], classes: Sequence[str]) -> list[list[ImageRecord]]:
    index = {c: j for j, c in enumerate(classes)}
    out: list[list[ImageRecord]] = [[] for _ in classes]
    for r in records:
        if r.label not in index:
            raise DataError(f"record {r.id!r} has label {r.label!r} outside the class list")
        out[index[r.label]].append(r)
    return out


def _subsample(
    pools: list[list[ImageRecord]], sizes: Sequence[int | None], seed: int, classes: Sequence[str], what: str, clamped: dict
) -> list[ImageRecord]:
    """Seeded per-class subsample; sizes above the pool are clamped with a warning."""
    out: list[ImageRecord] = []
    for j, (pool, size) in enumerate(zip(pools, sizes)):
        if size is None or size >= len(pool):
            if size is not None and size > len(pool):
                logger.warning("%s: class %r has %d records, fewer than the requested %d", what, classes[j], len(pool), size)
                clamped[f"{what}:{classes[j]}"] = len(pool)
            out.extend(pool)
            continue
        keep = np.sort(rng_for(seed, j).choice(len(pool), size=size, replace=False))
        out.extend(pool[k] for k in keep)
    return out


def _labels(records: Sequence[ImageRecord], classes: Sequence[str]) -> np.ndarray:
    index = {c: j for j, c in enumerate(classes)}
    return np.asarray([index[r.label] for r in records], dtype=np.int64)


def _stage_budgets(size: int | None, ratios: Sequence[int]) -> tuple[int | None, int | None]:
    if size is None:
        return None, None
    first = int(np.floor(size * ratios[0] / (ratios[0] + ratios[1]) + 0.5))
    first = min(max(first, 1), size)
    return first, size - first


def run_method(
    method: MethodKind | str,
    split: DatasetSplit,
    test: Sequence[ImageRecord],
    config: PipelineConfig = PipelineConfig(),
    classes: Sequence[str] | None = None,
    jobs: int = 1,
) -> list[MethodResult]:
    """Train ``method`` on the split and rank ``test``; one result per training size.

    A per-class training size ``s`` is the total budget per class. Two-stage
    methods give ``s * r1 / (r1 + r2)`` of it to stage one (drawn from
    ``part_subclass``) and the rest to stage two (from ``part_top``);
    ``SVM_VisFeat`` draws all ``s`` from the union of both parts. With no sizes
    configured every available record is used. Test records contribute
    features only.
    """
    method = MethodKind(method) if not isinstance(method, MethodKind) else method
    if classes is None:
        classes = sorted({r.label for part in split.parts for r in part})
    classes = tuple(classes)
    if len(classes) < 2:
        raise DataError("at least two top-level classes are required")
    test = list(test)
    if not test:
        raise DataError("empty test set")
    test_ids = tuple(r.id for r in test)
    X_test = feature_matrix(test)

    sizes: list[int | None] = list(config.per_class_train_sizes) or [None]
    results = []
    for size_index, size in enumerate(sizes):
        clamped: dict[str, int] = {}
        sub_seed = derive_seed(config.seed, _SEED_SUBSAMPLE, size_index)
        models: dict[str, Any] = {}
        catalog = None
        if method is MethodKind.VIS_FEAT:
            pools = _by_class(list(split.part_subclass) + list(split.part_top), classes)
            train = _subsample(pools, [size] * len(classes), sub_seed, classes, "train", clamped)
            check_disjoint(train=(r.id for r in train), test=test_ids)
            model = train_one_vs_one(
                feature_matrix(train), _labels(train, classes), classes, config.train,
                config.calibration_folds, derive_seed(config.seed, _SEED_STAGE1, size_index), jobs,
            )
            P = model.predict_proba(X_test)
            models["model"] = model
            used = max(len(p) for p in _by_class(train, classes))
        else:
            b1, b2 = _stage_budgets(size, config.split_ratios)
            stage1 = _subsample(_by_class(split.part_subclass, classes), [b1] * len(classes), sub_seed, classes, "stage1", clamped)
            stage2 = _subsample(
                _by_class(split.part_top, classes), [b2] * len(classes), derive_seed(sub_seed, 1), classes, "stage2", clamped
            )
            s1_ids = [r.id for r in stage1]
            s2_ids = [r.id for r in stage2]
            check_disjoint(stage1=s1_ids, stage2=s2_ids, test=test_ids)
            y2 = _labels(stage2, classes)
            stage2_seed = derive_seed(config.seed, _SEED_STAGE2, size_index)
            if method is MethodKind.SUBCLASS_PROB:
                catalog, bank = _fit_bank(stage1, classes, config, jobs)
                R2 = project_many(feature_matrix(stage2), bank, config.representation_mode)
                top = train_top(R2, y2, classes, config, ids=s2_ids, stage1_ids=s1_ids, seed=stage2_seed, jobs=jobs)
                P = top.predict_proba(project_many(X_test, bank, config.representation_mode))
                models["bank"] = bank
                models["top"] = top
            else:
                first = train_one_vs_one(
                    feature_matrix(stage1), _labels(stage1, classes), classes, config.train,
                    config.calibration_folds, derive_seed(config.seed, _SEED_STAGE1, size_index), jobs,
                )
                R2 = first.predict_proba(feature_matrix(stage2))
                top = train_one_vs_one(R2, y2, classes, config.train, config.calibration_folds, stage2_seed, jobs)
                P = top.predict_proba(first.predict_proba(X_test))
                models["stage1"] = first
                models["top"] = top
            used = max(len(a) + len(b) for a, b in zip(_by_class(stage1, classes), _by_class(stage2, classes)))
        results.append(
            MethodResult(
                method=method,
                train_size=size if size is not None else used,
                classes=classes,
                test_ids=test_ids,
                probability_matrix=P,
                per_class_rankings=_rankings(test_ids, P, classes),
                requested_size=size,
                clamped=clamped,
                catalog=catalog,
                models=models,
            )
        )
    return results


def _fit_bank(stage1: Sequence[ImageRecord], classes: Sequence[str], config: PipelineConfig, jobs: int):
    if not any(r.tags for r in stage1):
        raise DataError("SVM_SubClassProb needs tags on the subclass-training records, but none carry any")
    mining = config.mining
    if mining.min_photos < config.calibration_folds:
        # a subclass needs at least one positive per calibration fold
        mining = replace(mining, min_photos=config.calibration_folds)
    catalog, _ = mine_subclasses(stage1, classes, mining)
    if len(catalog) == 0:
        raise DataError("tag mining produced an empty subclass catalog")
    return catalog, train_subclass_bank(catalog, stage1, config, jobs)
