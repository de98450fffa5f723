"""Multimodal classification of citizen-reported urban micro-events.

A numpy-based library for turning raw citizen reports (text, image
features, coordinates, timestamps, weather) into feature blocks, fusing
those blocks with early / late / hybrid strategies, and training
multinomial logistic regression or gradient-boosted tree classifiers on
the result.  A synthetic generator with controllable per-modality signal
supports end-to-end verification without any proprietary data.
"""

from urbanfuse.core import (
    Dataset,
    FeatureBlock,
    InvalidInputError,
    LabelTaxonomy,
    Report,
    UrbanFuseError,
    split_dataset,
    validate_dataset,
)

__all__ = [
    "Dataset",
    "FeatureBlock",
    "InvalidInputError",
    "LabelTaxonomy",
    "Report",
    "UrbanFuseError",
    "split_dataset",
    "validate_dataset",
]

__version__ = "0.1.0"
