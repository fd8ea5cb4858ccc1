"""Evaluation protocols: ROI contrast statistics, PCA/t-SNE projection and the
downstream augmentation classifier."""

from .classifier import ClassifierConfig, SequenceClassifier, TrainedClassifier, train_classifier
from .contrast import RegionContrast, bio_scram_ttest, condition_mean_z, roi_mean_series
from .experiment import augment_gaussian, augmentation_experiment
from .projection import ProjectionResult, flatten_for_projection, pca_reduce, project_sequences, tsne_embed
from .stats import ClassifierReport, auc_pairwise, classification_metrics, ttest_ind, zscore_series

__all__ = [
    "ClassifierConfig",
    "ClassifierReport",
    "ProjectionResult",
    "RegionContrast",
    "SequenceClassifier",
    "TrainedClassifier",
    "auc_pairwise",
    "augment_gaussian",
    "augmentation_experiment",
    "bio_scram_ttest",
    "classification_metrics",
    "condition_mean_z",
    "flatten_for_projection",
    "pca_reduce",
    "project_sequences",
    "roi_mean_series",
    "train_classifier",
    "ttest_ind",
    "tsne_embed",
    "zscore_series",
]
