"""Multimodal anomaly detection: a BiGAN latent space clustered by an infinite Gaussian mixture."""

from .bigan import BiGANConfig, BiGANModel, DataLeakError, train_bigan
from .evaluate import ExperimentSpec, MetricsReport, evaluate_comparison, load_model, persist_model, roc_auc
from .igmm import IGMMResult, NIWPrior, hungarian, macro_f1, niw_posterior, predictive_logpdf, run_igmm
from .scoring import MultimodalModel, egbad_score, min_mahalanobis_score

__version__ = "0.1.0"

__all__ = [
    "BiGANConfig", "BiGANModel", "DataLeakError", "ExperimentSpec", "IGMMResult", "MetricsReport",
    "MultimodalModel", "NIWPrior", "egbad_score", "evaluate_comparison", "hungarian", "load_model",
    "macro_f1", "min_mahalanobis_score", "niw_posterior", "persist_model", "predictive_logpdf", "roc_auc",
    "run_igmm", "train_bigan",
]
