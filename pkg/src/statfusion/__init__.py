"""Spectral/textural image indicators fused with CNN class probabilities."""

from .ablation import IndicatorFamily, ablate, ablation_matrix, indicator_families
from .classifiers import (
    LabeledDataset,
    Standardizer,
    TrainedClassifier,
    dumps_model,
    fit_classifier,
    loads_model,
    predict_proba,
    train,
)
from .errors import StatFusionError
from .fusion import CnnProbabilityTable, EvaluationReport, evaluate, fuse_average, train_fusion, weighted_precision
from .glcm import Glcm, build_glcm, quantize_channel
from .imageio import ImageRgb, decode_image, resize_bilinear
from .indicators import FEATURE_NAMES, ExtractionConfig, IndicatorVector, extract_batch, extract_indicators, textural_features
from .pipeline import RunConfig, SynthSpec, generate_synthetic

__version__ = "0.1.0"
