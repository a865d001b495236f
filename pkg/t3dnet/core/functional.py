"""Loss helpers on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from t3dnet.core.errors import DimensionError, LabelIndexError
from t3dnet.core.tensor import Tensor, log_softmax


def _check_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be B x C, got shape {logits.shape}")
    batch, num_classes = logits.shape
    if batch < 1:
        raise DimensionError("empty batch")
    if labels.shape != (batch,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise LabelIndexError(f"label {int(bad)} out of range for {num_classes} classes")
    return labels.astype(np.int64)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    Mean over the batch of -log softmax(logits)[label].

    Raises:
        LabelIndexError: label outside [0, C)
        DimensionError: logits not B x C or labels of the wrong length
    """
    labels = _check_labels(logits, labels)
    picked = log_softmax(logits)[np.arange(labels.shape[0]), labels]
    return -picked.mean()


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax equals the label."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=-1) == labels))


def correct_count(logits: np.ndarray, labels: np.ndarray) -> int:
    return int(np.sum(np.argmax(np.asarray(logits), axis=-1) == np.asarray(labels)))
