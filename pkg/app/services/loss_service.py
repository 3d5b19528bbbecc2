from typing import Optional, Sequence, Tuple
import logging
import numpy as np
from scipy.special import expit, logsumexp, softmax
from app.core.exceptions import InvalidLabelError, ShapeError
from app.schemas.training import LossValue
from app.schemas.transforms import NUM_TRANSFORMS, LabelMode

logger = logging.getLogger(__name__)


def _check_logits(logits: np.ndarray, columns: Optional[int] = None) -> None:
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ShapeError(f"Logits must have shape (B, K), got {logits.shape}")
    if columns is not None and logits.shape[1] != columns:
        raise ShapeError(f"Expected {columns} logit columns, got {logits.shape[1]}")


def pretext_loss_multilabel(logits: np.ndarray, z: np.ndarray) -> Tuple[LossValue, np.ndarray]:
    """Sum of seven binary cross-entropies, averaged over the batch.

    Uses softplus(x) - z * x for -[z log s(x) + (1 - z) log(1 - s(x))].
    """
    _check_logits(logits, NUM_TRANSFORMS)
    z = np.asarray(z)
    if z.shape != logits.shape:
        raise ShapeError(f"Indicator shape {z.shape} does not match logits {logits.shape}")
    if not np.all((z == 0) | (z == 1)):
        raise InvalidLabelError("Multilabel targets must be 0 or 1")
    x = logits.astype(np.float64)
    target = z.astype(np.float64)
    terms = np.logaddexp(0.0, x) - target * x
    batch = x.shape[0]
    per_transform = terms.mean(axis=0)
    value = max(float(terms.sum() / batch), 0.0)
    grad = ((expit(x) - target) / batch).astype(logits.dtype)
    return LossValue(value=value, per_transform=[float(v) for v in per_transform]), grad


def _softmax_cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> Tuple[LossValue, np.ndarray]:
    _check_logits(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, classes = logits.shape
    if labels.shape[0] != batch:
        raise ShapeError(f"Got {labels.shape[0]} labels for a batch of {batch}")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise InvalidLabelError(f"Labels must lie in [0, {classes}), got {labels.tolist()}")
    x = logits.astype(np.float64)
    rows = np.arange(batch)
    value = float(np.mean(logsumexp(x, axis=1) - x[rows, labels]))
    grad = softmax(x, axis=1)
    grad[rows, labels] -= 1.0
    return LossValue(value=max(value, 0.0)), (grad / batch).astype(logits.dtype)


def pretext_loss_multiclass(logits: np.ndarray, class_ids: Sequence[int]) -> Tuple[LossValue, np.ndarray]:
    """Softmax cross-entropy over the pseudo-label classes (8 for the full transform set)."""
    return _softmax_cross_entropy(logits, class_ids)


def downstream_loss(logits: np.ndarray, labels: Sequence[int]) -> Tuple[LossValue, np.ndarray]:
    return _softmax_cross_entropy(logits, labels)


def accuracy(logits: np.ndarray, labels, mode: LabelMode = LabelMode.MULTI_CLASS) -> float:
    """Top-1 for class labels; exact match of all thresholded bits for multilabel."""
    _check_logits(logits)
    labels = np.asarray(labels)
    if mode == LabelMode.MULTI_LABEL:
        if labels.shape != logits.shape:
            raise ShapeError(f"Indicator shape {labels.shape} does not match logits {logits.shape}")
        predicted = (expit(logits.astype(np.float64)) > 0.5).astype(np.int64)
        return float(np.mean(np.all(predicted == labels, axis=1)))
    labels = labels.reshape(-1)
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"Got {labels.shape[0]} labels for a batch of {logits.shape[0]}")
    return float(np.mean(np.argmax(logits, axis=1) == labels))
