import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from tools_import import RecordTable

logger = logging.getLogger(__name__)

SPIKE = 'spike'
STUCK = 'stuck'
SPIKE_FACTOR = 10.0
STUCK_LENGTH = 4
# every third event is a stuck-at-zero segment, the rest are single-row spikes
EVENT_PATTERN = (SPIKE, SPIKE, STUCK)


@dataclass(frozen=True)
class Injection:
    """
    One injected anomaly.

    Attributes:
        row (int): First affected row.
        feature (int): Affected feature column.
        kind (str): 'spike' (value scaled by 10) or 'stuck' (value held at 0).
        length (int): Number of affected rows.
    """
    row: int
    feature: int
    kind: str
    length: int = 1

    @property
    def rows(self) -> range:
        return range(self.row, self.row + self.length)


def _event_length(kind: str) -> int:
    return STUCK_LENGTH if kind == STUCK else 1


def events_for_fraction(n_rows: int, anomaly_fraction: float) -> int:
    """Number of events in EVENT_PATTERN order needed to cover about anomaly_fraction of the rows."""
    if not 0 <= anomaly_fraction < 1:
        raise ValueError(f"anomaly_fraction must lie in [0, 1), got {anomaly_fraction}")
    target = int(round(anomaly_fraction * n_rows))
    covered = 0
    events = 0
    while covered < target:
        covered += _event_length(EVENT_PATTERN[events % len(EVENT_PATTERN)])
        events += 1
    return events


def _spike(value: float, span: float) -> float:
    scaled = value * SPIKE_FACTOR
    # near-zero readings would barely move under scaling
    if abs(scaled - value) >= span:
        return scaled
    return value + SPIKE_FACTOR * span


def inject_anomalies(table: RecordTable, n_events: int, seed: int = 0) -> Tuple[RecordTable, List[Injection]]:
    """
    Inject spike and stuck-at-zero events, spread evenly over the table.

    The series is cut into n_events equal segments and each event lands at a random offset
    inside its own segment, on a random feature. Affected rows are labelled 1.

    Args:
        table (RecordTable): Source rows; labels, when present, are kept and extended.
        n_events (int): Number of events.
        seed (int): Seed of the placement.

    Returns:
        tuple: (table with injections, list of Injection).
    """
    rows = table.rows.copy()
    labels = np.zeros(table.n_rows, dtype=int) if table.labels is None else table.labels.copy()
    if n_events == 0:
        return RecordTable(table.feature_names, rows, labels), []
    segment = table.n_rows // n_events
    if segment < STUCK_LENGTH + 2:
        raise ValueError(f"{table.n_rows} rows are too few for {n_events} injected events")

    rng = np.random.default_rng(seed)
    span = np.ptp(table.rows, axis=0)
    span = np.where(span > 0, span, 1.0)
    injections = []
    for event in range(n_events):
        kind = EVENT_PATTERN[event % len(EVENT_PATTERN)]
        length = _event_length(kind)
        margin = min(segment // 4, 8)
        low = event * segment + margin
        high = max(low + 1, (event + 1) * segment - length - margin + 1)
        row = int(rng.integers(low, high))
        feature = int(rng.integers(0, table.n_features))
        if kind == SPIKE:
            rows[row, feature] = _spike(rows[row, feature], span[feature])
        else:
            rows[row:row + length, feature] = 0.0
        labels[row:row + length] = 1
        injections.append(Injection(row, feature, kind, length))

    logger.info("Injected %d anomalies covering %d rows", len(injections), int(labels.sum()))
    return RecordTable(table.feature_names, rows, labels), injections


def make_normal_process(n_rows: int, n_features: int, seed: int = 0) -> RecordTable:
    """
    Noisy sinusoids with distinct periods and phases, offset well above zero.

    Feature k has amplitude a_k and a baseline of 3 * a_k + 1, so readings stay positive
    and a stuck-at-zero value lies below the normal range.
    """
    if n_rows < 1 or n_features < 1:
        raise ValueError("n_rows and n_features must be >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows)[:, None]
    k = np.arange(n_features)[None, :]
    amplitude = 0.5 + 0.1 * k
    period = 16.0 + 7.0 * k
    phase = rng.uniform(0, 2 * np.pi, size=(1, n_features))
    noise = rng.normal(0.0, 0.01, size=(n_rows, n_features)) * amplitude
    rows = 3 * amplitude + 1 + amplitude * np.sin(2 * np.pi * t / period + phase) + noise
    names = tuple(f"sensor_{i}" for i in range(n_features))
    return RecordTable(names, rows, np.zeros(n_rows, dtype=int))


def make_synthetic_process(n_rows: int = 2000, n_features: int = 6, anomaly_fraction: float = 0.05,
                           seed: int = 0) -> Tuple[RecordTable, List[Injection]]:
    """
    Seeded benchmark series: a normal multivariate process with injected anomalies.

    Args:
        n_rows (int): Number of rows.
        n_features (int): Number of features.
        anomaly_fraction (float): Approximate share of rows touched by injections.
        seed (int): Seed for both the process noise and the injection placement.

    Returns:
        tuple: (labelled RecordTable, list of Injection).
    """
    normal = make_normal_process(n_rows, n_features, seed)
    n_events = events_for_fraction(n_rows, anomaly_fraction)
    return inject_anomalies(normal, n_events, seed + 1)
