import io
import logging
import os
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.io.arff import ArffError, loadarff

logger = logging.getLogger(__name__)

# Column names (lower case) recognised as the binary attack flag.
LABEL_COLUMNS = ('result', 'label', 'binary result')
# Extra Gas Pipeline label attributes; they encode the attack class and are never features.
AUXILIARY_LABEL_COLUMNS = ('categorized result', 'specific result')
DROPPED_FEATURES = ('time',)

NORMAL_LABEL_NAMES = ('normal', 'benign')
ATTACK_LABEL_NAMES = ('attack', 'anomaly', 'abnormal', 'malicious')


class ParseError(ValueError):
    """Raised when a telemetry file cannot be parsed.

    Attributes:
        line (int): 1-based line number of the offending line, 0 when the whole input is at fault.
    """

    def __init__(self, message: str, line: int = 0):
        self.line = line
        if line:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class RecordTable:
    """
    An n x m matrix of feature readings with optional per-row attack labels.

    Attributes:
        feature_names (tuple): Ordered feature names, length m.
        rows (np.ndarray): Float matrix of shape (n, m).
        labels (np.ndarray, optional): Integer vector of length n with values in {0, 1}.
    """
    feature_names: Tuple[str, ...]
    rows: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError(f"rows must be a 2-D matrix, got shape {rows.shape}")
        if rows.shape[1] != len(self.feature_names):
            raise ValueError(f"rows have {rows.shape[1]} columns but {len(self.feature_names)} feature names")
        object.__setattr__(self, 'feature_names', tuple(self.feature_names))
        object.__setattr__(self, 'rows', rows)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (rows.shape[0],):
                raise ValueError(f"labels must have length {rows.shape[0]}, got shape {labels.shape}")
            if not np.isin(labels, (0, 1)).all():
                raise ValueError("labels must be 0 (normal) or 1 (attack)")
            object.__setattr__(self, 'labels', labels)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def select(self, index) -> 'RecordTable':
        """Return the rows picked by a slice, index array or boolean mask as a new table."""
        labels = None if self.labels is None else self.labels[index]
        return RecordTable(self.feature_names, self.rows[index], labels)

    def to_dataframe(self) -> pd.DataFrame:
        df = pd.DataFrame(self.rows, columns=list(self.feature_names))
        if self.labels is not None:
            df['label'] = self.labels
        return df


def _normalise_name(name: str) -> str:
    return str(name).strip().strip('\'"').strip()


def _parse_label(value, line: int) -> int:
    if isinstance(value, bytes):
        value = value.decode('utf-8')
    text = str(value).strip().strip('\'"').lower()
    if text in NORMAL_LABEL_NAMES:
        return 0
    if text in ATTACK_LABEL_NAMES:
        return 1
    try:
        number = float(text)
    except ValueError:
        raise ParseError(f"unrecognised label value {value!r}", line) from None
    return 0 if number == 0 else 1


def _split_columns(names: Sequence[str]) -> Tuple[Optional[int], List[int]]:
    """Index of the label column (or None) and indices of the feature columns."""
    lowered = [name.lower() for name in names]
    label_idx = next((i for i, name in enumerate(lowered) if name in LABEL_COLUMNS), None)
    skipped = {i for i, name in enumerate(lowered)
               if name in DROPPED_FEATURES or name in AUXILIARY_LABEL_COLUMNS}
    feature_idx = [i for i in range(len(names)) if i != label_idx and i not in skipped]
    if not feature_idx:
        raise ParseError("no feature columns left after removing time and label columns")
    return label_idx, feature_idx


# pandas reports tokenizer failures as "... in line <n>, saw <k>"
_PANDAS_LINE = re.compile(r"line (\d+)")


def _parse_csv(text: str) -> RecordTable:
    try:
        frame = pd.read_csv(io.StringIO(text), header=None, dtype=str, keep_default_na=False,
                            skipinitialspace=True, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise ParseError("missing header row") from None
    except pd.errors.ParserError as e:
        match = _PANDAS_LINE.search(str(e))
        raise ParseError(f"wrong number of fields ({e})", int(match.group(1)) if match else 0) from None

    names = [_normalise_name(name) for name in frame.iloc[0]]
    data = frame.iloc[1:].reset_index(drop=True)
    if data.empty:
        raise ParseError("no data rows")
    label_idx, feature_idx = _split_columns(names)

    # file line of every data row; pandas skips the same blank lines
    lines = [number for number, line in enumerate(text.splitlines(), start=1) if line.strip()][1:]

    def line_of(row: int) -> int:
        return lines[row] if row < len(lines) else 0

    short = np.flatnonzero(data.isna().any(axis=1).to_numpy())
    if short.size:
        row = int(short[0])
        raise ParseError(f"expected {len(names)} fields, found {int(data.iloc[row].notna().sum())}", line_of(row))

    values = data.iloc[:, feature_idx].apply(pd.to_numeric, errors='coerce')
    bad = np.argwhere(values.isna().to_numpy())
    if bad.size:
        row, column = (int(index) for index in bad[0])
        raise ParseError(f"non-numeric value {data.iat[row, feature_idx[column]]!r} "
                         f"in column {names[feature_idx[column]]!r}", line_of(row))

    labels = None
    if label_idx is not None:
        labels = np.array([_parse_label(value, line_of(row))
                           for row, value in enumerate(data.iloc[:, label_idx])], dtype=int)
    return RecordTable(tuple(names[i] for i in feature_idx), values.to_numpy(dtype=float), labels)


def _parse_arff(text: str) -> RecordTable:
    try:
        data, meta = loadarff(io.StringIO(text))
    except StopIteration:
        raise ParseError("missing @data section") from None
    except (ArffError, NotImplementedError, ValueError) as e:
        raise ParseError(f"malformed ARFF input: {e}") from None

    raw_names = meta.names()
    names = [_normalise_name(name) for name in raw_names]
    types = meta.types()
    label_idx, feature_idx = _split_columns(names)
    for i in feature_idx:
        if types[i] != 'numeric':
            raise ParseError(f"{types[i]} attribute {names[i]!r} is only supported as the label")
    if data.shape[0] == 0:
        raise ParseError("no data rows")

    values = np.column_stack([data[raw_names[i]].astype(float) for i in feature_idx])
    missing = np.argwhere(np.isnan(values))
    if missing.size:
        row, column = (int(index) for index in missing[0])
        raise ParseError(f"missing value in data row {row + 1}, column {names[feature_idx[column]]!r}")

    labels = None
    if label_idx is not None:
        labels = np.array([_parse_label(value, 0) for value in data[raw_names[label_idx]]], dtype=int)
    return RecordTable(tuple(names[i] for i in feature_idx), values, labels)

def parse_dataset(raw_bytes: bytes, format_tag: str) -> RecordTable:
    """
    Parse ICS telemetry from raw bytes.

    The feature named 'time' is dropped, and a 'result' / 'label' / 'binary result' column
    (case-insensitive) is split out as per-row labels.

    Args:
        raw_bytes (bytes): File contents.
        format_tag (str): 'csv' or 'arff'.

    Returns:
        RecordTable: The parsed table, feature order preserved.

    Raises:
        ParseError: Empty input, wrong arity or non-numeric fields (with line number).
    """
    tag = format_tag.lower()
    if tag not in ('csv', 'arff'):
        raise ValueError(f"unsupported format {format_tag!r}, expected 'csv' or 'arff'")
    if not raw_bytes or not raw_bytes.strip():
        raise ParseError("empty input")
    try:
        text = raw_bytes.decode('utf-8-sig')
    except UnicodeDecodeError as e:
        raise ParseError(f"input is not UTF-8 text: {e}") from None
    return _parse_csv(text) if tag == 'csv' else _parse_arff(text)


def load_dataset(input_file: str, format_tag: str = None) -> RecordTable:
    """
    Load a telemetry file from disk.

    Args:
        input_file (str): Path to a CSV or ARFF file.
        format_tag (str, optional): 'csv' or 'arff'. Inferred from the extension when None.

    Returns:
        RecordTable: The parsed table.
    """
    if format_tag is None:
        extension = os.path.splitext(input_file)[1].lower().lstrip('.')
        format_tag = 'arff' if extension == 'arff' else 'csv'
    with open(input_file, 'rb') as file:
        raw_bytes = file.read()
    table = parse_dataset(raw_bytes, format_tag)
    logger.info("Loaded %d rows x %d features from %s", table.n_rows, table.n_features, input_file)
    return table
