"""Bayesian nonparametric bidirectional clustering of multi-platform omics
matrices, with survival-outcome-driven selection of the fitted clusters."""

__version__ = "0.1.0"

from omiclust.config import ConfigError, RunConfig, load_config, write_default_config
from omiclust.data import (
    ClinicalOutcomes,
    PlatformMatrix,
    TransformDomainError,
    TransformedDataset,
    transform_platform,
)
from omiclust.engine import ChainSchedule, Stage1Result, run_stage1
from omiclust.estimators import MultiOmicBicluster, SurvivalClusterSelector
from omiclust.io import ParseError, load_clinical, load_dataset, load_platform
from omiclust.model import ClusterState, Hyperparameters, LatentMatrices
from omiclust.pipeline import PipelineError, run_pipeline
from omiclust.pointest import least_squares_allocation, pairwise_coclustering
from omiclust.selection import (
    MergedClusters,
    SelectionConfig,
    SplineConfig,
    Stage2Result,
    fdr_select,
    inclusion_probs,
    member_matrix,
    merge_clusters,
    run_stage2,
)
from omiclust.simulate import (
    GeneratorConfig,
    SurvivalTruth,
    SyntheticTruth,
    column_accuracy,
    fit_r2,
    generate_survival,
    generate_synthetic,
    row_accuracy,
    run_replication_study,
)

__all__ = [
    "ChainSchedule",
    "ClinicalOutcomes",
    "ClusterState",
    "ConfigError",
    "GeneratorConfig",
    "Hyperparameters",
    "LatentMatrices",
    "MergedClusters",
    "MultiOmicBicluster",
    "ParseError",
    "PipelineError",
    "PlatformMatrix",
    "RunConfig",
    "SelectionConfig",
    "SplineConfig",
    "Stage1Result",
    "Stage2Result",
    "SurvivalClusterSelector",
    "SurvivalTruth",
    "SyntheticTruth",
    "TransformDomainError",
    "TransformedDataset",
    "column_accuracy",
    "fdr_select",
    "fit_r2",
    "generate_survival",
    "generate_synthetic",
    "inclusion_probs",
    "least_squares_allocation",
    "load_clinical",
    "load_config",
    "load_dataset",
    "load_platform",
    "member_matrix",
    "merge_clusters",
    "pairwise_coclustering",
    "row_accuracy",
    "run_pipeline",
    "run_replication_study",
    "run_stage1",
    "run_stage2",
    "transform_platform",
    "write_default_config",
    "__version__",
]
