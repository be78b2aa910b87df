"""Metrics, t-SNE and report artefacts."""

from .metrics import (
    EMBEDDING_GROUP,
    FEATURE_GROUPS,
    DetectionCurve,
    FeatureErrorReport,
    detection_curve,
    feature_group,
    per_feature_error,
    positive_rate_summary,
)
from .tsne import Embedding2D, TsneConfig, tsne

__all__ = [
    "EMBEDDING_GROUP",
    "FEATURE_GROUPS",
    "DetectionCurve",
    "Embedding2D",
    "FeatureErrorReport",
    "TsneConfig",
    "detection_curve",
    "feature_group",
    "per_feature_error",
    "positive_rate_summary",
    "tsne",
]
