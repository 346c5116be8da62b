"""Subclass-representation image ranking.

Tags that co-occur almost exclusively with one top-level class become
subclasses; a calibrated linear SVM per subclass projects every image into a
space of subclass probabilities, and a one-vs-one model over that space ranks
test images per top-level class.
"""

from subclassrep.dataset import (
    BinaryTrainingSet,
    DatasetSplit,
    ImageRecord,
    build_binary_set,
    load_records,
    normalize_tag,
    split_dataset,
)
from subclassrep.errors import (
    DataError,
    HygieneError,
    InvariantError,
    SubclassRepError,
)
from subclassrep.evaluation import (
    MAPReport,
    RankedList,
    average_precision,
    learning_curve,
    map_over_classes,
)
from subclassrep.pipeline import (
    MethodKind,
    MethodResult,
    PipelineConfig,
    SubclassModelBank,
    project,
    run_method,
    train_subclass_bank,
    train_top,
)
from subclassrep.prob import (
    CalibratedBinary,
    PairwiseModel,
    PlattParams,
    couple,
    fit_platt,
    sigmoid_prob,
    train_one_vs_one,
)
from subclassrep.svm import (
    LinearModel,
    SolverReport,
    TrainConfig,
    decision_value,
    kkt_violation,
    train_binary,
)
from subclassrep.tagmine import (
    CooccurrenceMatrix,
    DistinctiveScores,
    MiningConfig,
    SubclassCatalog,
    build_cooccurrence,
    distinctive_scores,
    select_subclasses,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryTrainingSet",
    "CalibratedBinary",
    "CooccurrenceMatrix",
    "DataError",
    "DatasetSplit",
    "DistinctiveScores",
    "HygieneError",
    "ImageRecord",
    "InvariantError",
    "LinearModel",
    "MAPReport",
    "MethodKind",
    "MethodResult",
    "MiningConfig",
    "PairwiseModel",
    "PipelineConfig",
    "PlattParams",
    "RankedList",
    "SolverReport",
    "SubclassCatalog",
    "SubclassModelBank",
    "SubclassRepError",
    "TrainConfig",
    "average_precision",
    "build_binary_set",
    "build_cooccurrence",
    "couple",
    "decision_value",
    "distinctive_scores",
    "fit_platt",
    "kkt_violation",
    "learning_curve",
    "load_records",
    "map_over_classes",
    "normalize_tag",
    "project",
    "run_method",
    "select_subclasses",
    "sigmoid_prob",
    "split_dataset",
    "train_binary",
    "train_one_vs_one",
    "train_subclass_bank",
    "train_top",
]
