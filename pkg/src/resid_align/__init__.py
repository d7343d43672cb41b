"""Voxelwise encoding models with linear feature removal, cross-subject
noise-ceiling normalization, and block-permutation statistics."""

from .data_model import (ExperimentConfig, FeatureMatrix, ResponseMatrix, RoiAtlas, Sampling,
                         TimedAnnotation, load_feature_matrix, load_response_matrix,
                         save_feature_matrix, save_response_matrix, validate_experiment)
from .encoding import EncodingResult, fit_encoding, pearson_per_voxel, percent_decrease
from .residual import RemovalRecord, remove_feature
from .ridge import RidgeModel, bootstrap_ridge, predict, probe_r2, ridge_fit
from .stats import (AlignmentReport, block_permutation_test, feature_correlation,
                    normalize_alignment, roi_aggregate, wilcoxon_signed_rank)
from .synth import SynthSpec, generate
from .temporal import DelaySpec, fir_expand, lanczos_downsample, zscore_split

__all__ = [
    "AlignmentReport", "DelaySpec", "EncodingResult", "ExperimentConfig", "FeatureMatrix",
    "RemovalRecord", "ResponseMatrix", "RidgeModel", "RoiAtlas", "Sampling", "SynthSpec",
    "TimedAnnotation", "block_permutation_test", "bootstrap_ridge", "feature_correlation",
    "fir_expand", "fit_encoding", "generate", "lanczos_downsample", "load_feature_matrix",
    "load_response_matrix", "normalize_alignment", "pearson_per_voxel", "percent_decrease",
    "predict", "probe_r2", "remove_feature", "ridge_fit", "roi_aggregate",
    "save_feature_matrix", "save_response_matrix", "validate_experiment",
    "wilcoxon_signed_rank", "zscore_split",
]

__version__ = "0.1.0"
