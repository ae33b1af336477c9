import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tools_import import RecordTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max scaler fitted on training rows."""
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        minimum = np.asarray(self.minimum, dtype=float)
        maximum = np.asarray(self.maximum, dtype=float)
        if minimum.shape != maximum.shape or minimum.ndim != 1:
            raise ValueError("scaler minimum and maximum must be vectors of equal length")
        if (minimum > maximum).any():
            raise ValueError("scaler minimum exceeds maximum")
        object.__setattr__(self, 'minimum', minimum)
        object.__setattr__(self, 'maximum', maximum)

    @property
    def n_features(self) -> int:
        return self.minimum.shape[0]


@dataclass(frozen=True)
class Window:
    """
    One length-l slice of an m-feature series.

    Attributes:
        start_index (int): Row index of the first covered source row.
        values (np.ndarray): Read-only (l, m) view of the source rows.
        label (int): 1 if any covered row is an attack row, else 0.
    """
    start_index: int
    values: np.ndarray
    label: int


def fit_scaler(table: RecordTable) -> Scaler:
    """
    Fit column-wise extrema.

    Args:
        table (RecordTable): Training rows, n >= 1.

    Returns:
        Scaler: Exact column minima and maxima.
    """
    if table.n_rows == 0:
        raise ValueError("cannot fit a scaler on an empty table")
    return Scaler(table.rows.min(axis=0), table.rows.max(axis=0))


def _check_columns(scaler: Scaler, table: RecordTable):
    if table.n_features != scaler.n_features:
        raise ValueError(f"table has {table.n_features} columns, scaler expects {scaler.n_features}")


def apply_scaler(scaler: Scaler, table: RecordTable) -> RecordTable:
    """
    Map each column to (v - min) / (max - min). Constant columns map to 0.0.

    Args:
        scaler (Scaler): Fitted scaler.
        table (RecordTable): Table with the same column count.

    Returns:
        RecordTable: Scaled copy, labels untouched.
    """
    _check_columns(scaler, table)
    span = scaler.maximum - scaler.minimum
    constant = span == 0
    safe_span = np.where(constant, 1.0, span)
    scaled = (table.rows - scaler.minimum) / safe_span
    scaled[:, constant] = 0.0
    return RecordTable(table.feature_names, scaled, table.labels)


def invert_scaler(scaler: Scaler, table: RecordTable) -> RecordTable:
    """Undo apply_scaler; constant columns come back as their fitted value."""
    _check_columns(scaler, table)
    span = scaler.maximum - scaler.minimum
    original = table.rows * span + scaler.minimum
    return RecordTable(table.feature_names, original, table.labels)


def split_train_test(table: RecordTable, train_fraction: float) -> Tuple[RecordTable, RecordTable]:
    """
    Chronological split: the first floor(n * train_fraction) rows are train, the rest test.

    Args:
        table (RecordTable): Full table.
        train_fraction (float): Fraction in the open interval (0, 1).

    Returns:
        tuple: (train, test) tables.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    cut = int(np.floor(table.n_rows * train_fraction))
    return table.select(slice(0, cut)), table.select(slice(cut, table.n_rows))


def filter_normal_rows(table: RecordTable) -> RecordTable:
    """Keep label-0 rows. Unlabelled tables are returned unchanged."""
    if table.labels is None:
        return table
    filtered = table.select(table.labels == 0)
    dropped = table.n_rows - filtered.n_rows
    logger.info("Rows after removing %d attack rows: %d", dropped, filtered.n_rows)
    return filtered


def window_labels(table: RecordTable, l: int) -> np.ndarray:
    """Any-attack label of every length-l window, as an int vector of length n - l + 1."""
    _check_window_length(table, l)
    n_windows = table.n_rows - l + 1
    if table.labels is None:
        return np.zeros(n_windows, dtype=int)
    return sliding_window_view(table.labels, l).max(axis=1).astype(int)


def _check_window_length(table: RecordTable, l: int):
    if l < 1 or l > table.n_rows:
        raise ValueError(f"window length must satisfy 1 <= l <= n = {table.n_rows}, got {l}")


def windows_to_array(table: RecordTable, l: int) -> np.ndarray:
    """All overlapping windows as a read-only (n - l + 1, l, m) array view."""
    _check_window_length(table, l)
    return sliding_window_view(table.rows, (l, table.n_features))[:, 0]


def make_windows(table: RecordTable, l: int) -> List[Window]:
    """
    Cut the table into n - l + 1 overlapping windows; window i starts at row i.

    Args:
        table (RecordTable): Source rows.
        l (int): Window length, 1 <= l <= n.

    Returns:
        list: Window objects in start order.
    """
    stacked = windows_to_array(table, l)
    labels = window_labels(table, l)
    return [Window(i, stacked[i], int(labels[i])) for i in range(stacked.shape[0])]


def filter_normal_windows(windows: List[Window]) -> List[Window]:
    """Keep the windows whose covered rows are all normal."""
    return [window for window in windows if window.label == 0]


def stack_windows(windows: List[Window]) -> np.ndarray:
    """Stack windows into an (N, l, m) float array."""
    if not windows:
        raise ValueError("no windows to stack")
    return np.stack([window.values for window in windows]).astype(float)
