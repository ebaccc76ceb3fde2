"""Instance-wise ensembles of pre-trained models weighted by learnt domain densities."""

__version__ = "0.1.0"

from .core import (
    Dataset,
    ExpertModel,
    ModelBundle,
    auroc_ovr,
    binary_auroc,
    read_dataset_csv,
    relative_rmse,
    rmse,
    write_dataset_csv,
)
from .density import (
    BinaryDim,
    ContinuousDim,
    DensityModel,
    ModelInfo,
    ZeroVarianceWarning,
    fit_density,
    fit_factorised,
    fit_kde,
    log_density,
    sample,
    scott_bandwidth,
)
from .representation import (
    LatentMap,
    LossWeights,
    RepresentationConfig,
    TrainingDivergence,
    balance_losses,
    train_representation,
)
from .weights import (
    LatentDensitySet,
    WeightVector,
    build_latent_densities,
    compute_weights,
    confidence_flag,
    weights_from_densities,
)
from .ensembles import (
    EnsembleStrategy,
    bma_weights,
    predict_entropy_weighted,
    predict_global_average,
    predict_majority_vote,
    predict_smc,
    predict_smc_bma,
)
from .cohort import DemographicsTable, PooledCohort, impute_missing, rejection_subsample
from .pipeline import InsufficientInformation, PipelineSettings, fit_smc
from .kernels import BACKEND

__all__ = [
    "BACKEND", "BinaryDim", "ContinuousDim", "Dataset", "DemographicsTable", "DensityModel",
    "EnsembleStrategy", "ExpertModel", "InsufficientInformation", "LatentDensitySet",
    "LatentMap", "LossWeights", "ModelBundle", "ModelInfo", "PipelineSettings", "PooledCohort",
    "RepresentationConfig", "TrainingDivergence", "WeightVector", "ZeroVarianceWarning",
    "auroc_ovr", "balance_losses", "binary_auroc", "bma_weights", "build_latent_densities",
    "compute_weights", "confidence_flag", "fit_density", "fit_factorised", "fit_kde",
    "fit_smc", "impute_missing", "log_density", "predict_entropy_weighted",
    "predict_global_average", "predict_majority_vote", "predict_smc", "predict_smc_bma",
    "read_dataset_csv", "rejection_subsample", "relative_rmse", "rmse", "sample",
    "scott_bandwidth", "train_representation", "weights_from_densities", "write_dataset_csv",
]
