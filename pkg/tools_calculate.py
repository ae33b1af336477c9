import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from sklearn.metrics import confusion_matrix

logger = logging.getLogger(__name__)

AGGREGATED = 'aggregated'
FLATTENED = 'flattened'
RESIDUAL_MODES = (AGGREGATED, FLATTENED)


class DataError(ValueError):
    """Inputs that are individually valid but inconsistent with each other (lengths, labels, dimensions)."""


@dataclass(frozen=True)
class ResidualVector:
    """
    Reconstruction residual of one window.

    Attributes:
        values (np.ndarray): Non-negative vector, length m (aggregated) or l * m (flattened).
        mode (str): 'aggregated' or 'flattened'.
    """
    values: np.ndarray
    mode: str

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


def check_mode(mode: str):
    if mode not in RESIDUAL_MODES:
        raise ValueError(f"residual mode must be one of {RESIDUAL_MODES}, got {mode!r}")


def residual_matrix(windows, reconstructions, mode: str = AGGREGATED) -> np.ndarray:
    """
    Residual vectors of a batch.

    Args:
        windows (np.ndarray): (N, l, m) inputs.
        reconstructions (np.ndarray): (N, l, m) autoencoder outputs.
        mode (str): 'aggregated' gives the per-feature mean absolute residual over time (d = m);
            'flattened' gives the row-major absolute residual (d = l * m).

    Returns:
        np.ndarray: (N, d) matrix.
    """
    check_mode(mode)
    windows = np.asarray(windows, dtype=float)
    reconstructions = np.asarray(reconstructions, dtype=float)
    if windows.shape != reconstructions.shape:
        raise ValueError(f"shape mismatch: {windows.shape} vs {reconstructions.shape}")
    if windows.ndim != 3:
        raise ValueError(f"expected an (N, l, m) batch, got shape {windows.shape}")
    absolute = np.abs(windows - reconstructions)
    if mode == AGGREGATED:
        return absolute.mean(axis=1)
    return absolute.reshape(absolute.shape[0], -1)


def residual_vector(window, reconstruction, mode: str = AGGREGATED) -> ResidualVector:
    """Residual of a single (l, m) window; see residual_matrix for the two modes."""
    window = np.asarray(window, dtype=float)
    reconstruction = np.asarray(reconstruction, dtype=float)
    if window.shape != reconstruction.shape:
        raise ValueError(f"shape mismatch: {window.shape} vs {reconstruction.shape}")
    if window.ndim != 2:
        raise ValueError(f"expected an (l, m) window, got shape {window.shape}")
    return ResidualVector(residual_matrix(window[None], reconstruction[None], mode)[0], mode)


@dataclass(frozen=True)
class Metrics:
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(numerator: float, denominator: float) -> float:
    return float(numerator / denominator) if denominator else 0.0


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> Metrics:
    """Precision, recall and F1 from confusion counts; zero denominators give 0."""
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return Metrics(int(tp), int(fp), int(tn), int(fn), precision, recall, f1)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall, 0 when both are 0."""
    return _ratio(2 * precision * recall, precision + recall)


def evaluate(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """
    Confusion counts and derived metrics, with 1 = anomaly as the positive class.

    Args:
        predictions (Sequence[int]): Predicted window labels in {0, 1}.
        labels (Sequence[int]): True window labels in {0, 1}, same length.

    Returns:
        Metrics: Counts plus precision, recall and f1.
    """
    predictions = np.asarray(predictions, dtype=int).ravel()
    labels = np.asarray(labels, dtype=int).ravel()
    if predictions.shape != labels.shape:
        raise DataError(f"{predictions.shape[0]} predictions but {labels.shape[0]} labels")
    for name, values in (('predictions', predictions), ('labels', labels)):
        if not np.isin(values, (0, 1)).all():
            raise DataError(f"{name} must be 0 or 1")
    if predictions.size == 0:
        return metrics_from_counts(0, 0, 0, 0)
    tn, fp, fn, tp = confusion_matrix(labels, predictions, labels=[0, 1]).ravel()
    metrics = metrics_from_counts(tp, fp, tn, fn)
    logger.info("Precision %.4f, recall %.4f, F1 %.4f", metrics.precision, metrics.recall, metrics.f1)
    return metrics
