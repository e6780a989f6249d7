# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the chirploc chirp-localization toolkit."""

from ._core import (
    ChirpParams,
    ChirplocError,
    ConfigError,
    DomainError,
    IoError,
    MetricError,
    NormalizationError,
    NumericError,
    Predictor,
    ShapeError,
    SynthConfig,
    UsageError,
    __version__,
    compute_stats,
    denormalize_predictions,
    format_prediction_report,
    gaussian_smooth,
    generate_dataset,
    normalize_labels,
    pearson_r,
    render,
    sample_skewness,
    split_dataset,
    synthesize,
    to_image,
)

__all__ = [
    "ChirpParams",
    "ChirplocError",
    "ConfigError",
    "DomainError",
    "IoError",
    "MetricError",
    "NormalizationError",
    "NumericError",
    "Predictor",
    "ShapeError",
    "SynthConfig",
    "UsageError",
    "__version__",
    "compute_stats",
    "denormalize_predictions",
    "format_prediction_report",
    "gaussian_smooth",
    "generate_dataset",
    "normalize_labels",
    "pearson_r",
    "render",
    "sample_skewness",
    "split_dataset",
    "synthesize",
    "to_image",
]
