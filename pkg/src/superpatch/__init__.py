"""Superclass prediction for unseen classes from clustered patch-appearance features.

The library trains class-agnostic appearance clusters over patch feature
vectors of known classes, attaches a class-confidence column to every cluster,
and predicts the superclass of images from classes never seen at training time
by averaging the columns of each patch's nearest cluster.
"""

from .clustering import Centroids, ElbowCurve, assign, elbow_select, fit_kmeans, knee_index
from .embedding import (
    PositionalConfig,
    SaliencyWeights,
    mix_positional,
    positional_encode,
    saliency_weights,
)
from .errors import (
    ConfigError,
    CorruptionError,
    DataError,
    DegenerateDataError,
    EmptyTrainingError,
    FormatError,
    MigrationError,
    MissingClassError,
    ProtocolError,
    SplitContaminationError,
    StoreIOError,
    SuperpatchError,
    UndefinedPredictionError,
    ValidationError,
)
from .inference import (
    EvalReport,
    SemanticPrediction,
    TrainedModel,
    evaluate,
    export_assignments,
    load_model,
    predict,
    rank_superclasses,
    save_model,
)
from .pipeline import RunConfig, TrainResult, build_config, load_dataset, train_model
from .semantics import (
    SemanticMatrix,
    build_semantic_matrix,
    cluster_purity_report,
    shannon_entropy,
)
from .store import (
    ClassHierarchy,
    DatasetManifest,
    FeatureGrid,
    ManifestEntry,
    load_hierarchy,
    load_manifest,
    read_feature_grid,
    validate_dataset,
    write_feature_grid,
    write_hierarchy,
    write_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "Centroids",
    "ClassHierarchy",
    "ConfigError",
    "CorruptionError",
    "DataError",
    "DatasetManifest",
    "DegenerateDataError",
    "ElbowCurve",
    "EmptyTrainingError",
    "EvalReport",
    "FeatureGrid",
    "FormatError",
    "ManifestEntry",
    "MigrationError",
    "MissingClassError",
    "PositionalConfig",
    "ProtocolError",
    "RunConfig",
    "SaliencyWeights",
    "SemanticMatrix",
    "SemanticPrediction",
    "SplitContaminationError",
    "StoreIOError",
    "SuperpatchError",
    "TrainResult",
    "TrainedModel",
    "UndefinedPredictionError",
    "ValidationError",
    "assign",
    "build_config",
    "build_semantic_matrix",
    "cluster_purity_report",
    "elbow_select",
    "evaluate",
    "export_assignments",
    "fit_kmeans",
    "knee_index",
    "load_dataset",
    "load_hierarchy",
    "load_manifest",
    "load_model",
    "mix_positional",
    "positional_encode",
    "predict",
    "rank_superclasses",
    "read_feature_grid",
    "saliency_weights",
    "save_model",
    "shannon_entropy",
    "train_model",
    "validate_dataset",
    "write_feature_grid",
    "write_hierarchy",
    "write_manifest",
]
