import itertools

import numpy as np
import pytest

from tools_filter import (
    apply_scaler,
    filter_normal_rows,
    filter_normal_windows,
    fit_scaler,
    invert_scaler,
    make_windows,
    split_train_test,
    stack_windows,
    window_labels,
    windows_to_array,
)
from tools_import import RecordTable, load_dataset


def _table(n_rows=10, labels=None):
    rows = np.column_stack([np.arange(n_rows, dtype=float), np.arange(n_rows, dtype=float) ** 2])
    return RecordTable(('a', 'b'), rows, labels)


def test_scaler_maps_training_rows_to_unit_interval():
    table = _table()
    scaled = apply_scaler(fit_scaler(table), table)

    np.testing.assert_allclose(scaled.rows.min(axis=0), [0.0, 0.0])
    np.testing.assert_allclose(scaled.rows.max(axis=0), [1.0, 1.0])


def test_constant_column_maps_to_zero():
    table = RecordTable(('c', 'x'), np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
    scaled = apply_scaler(fit_scaler(table), table)
    np.testing.assert_array_equal(scaled.rows[:, 0], [0.0, 0.0, 0.0])


def test_invert_scaler_restores_rows():
    table = _table()
    scaler = fit_scaler(table)
    restored = invert_scaler(scaler, apply_scaler(scaler, table))
    np.testing.assert_allclose(restored.rows, table.rows)


def test_scaler_rejects_other_column_count():
    scaler = fit_scaler(_table())
    with pytest.raises(ValueError):
        apply_scaler(scaler, RecordTable(('x',), np.zeros((2, 1))))


def test_fit_scaler_on_empty_table():
    with pytest.raises(ValueError):
        fit_scaler(RecordTable(('x',), np.zeros((0, 1))))


def test_split_is_chronological():
    train, test = split_train_test(_table(10), 0.8)
    assert train.n_rows == 8
    assert test.n_rows == 2
    assert test.rows[0, 0] == 8.0


@pytest.mark.parametrize('fraction', [0.0, 1.0, 1.5])
def test_split_rejects_fraction_outside_open_interval(fraction):
    with pytest.raises(ValueError):
        split_train_test(_table(), fraction)


def test_window_count_and_contents():
    table = _table(10)
    windows = make_windows(table, 3)

    assert len(windows) == 8
    for i, window in enumerate(windows):
        assert window.start_index == i
        np.testing.assert_array_equal(window.values, table.rows[i:i + 3])


def test_window_length_equal_to_rows_gives_one_window():
    assert len(make_windows(_table(5), 5)) == 1


@pytest.mark.parametrize('length', [0, 11])
def test_window_length_out_of_range(length):
    with pytest.raises(ValueError):
        make_windows(_table(10), length)


def test_windows_are_read_only_views():
    stacked = windows_to_array(_table(6), 2)
    assert stacked.shape == (5, 2, 2)
    assert not stacked.flags.writeable


def test_any_attack_window_label():
    labels = np.zeros(10, dtype=int)
    labels[5] = 1
    np.testing.assert_array_equal(np.flatnonzero(window_labels(_table(10, labels), 3)), [3, 4, 5])


def test_unlabelled_windows_are_normal():
    np.testing.assert_array_equal(window_labels(_table(6), 2), np.zeros(5, dtype=int))


def test_filter_normal_rows_and_windows():
    labels = np.zeros(10, dtype=int)
    labels[[2, 7]] = 1
    table = _table(10, labels)

    assert filter_normal_rows(table).n_rows == 8
    kept = filter_normal_windows(make_windows(table, 2))
    assert [w.start_index for w in kept] == [0, 3, 4, 5, 8]


def test_stack_windows():
    batch = stack_windows(make_windows(_table(6), 3))
    assert batch.shape == (4, 3, 2)
    with pytest.raises(ValueError):
        stack_windows([])


def test_scaler_round_trip_on_fixture(sample_csv_path):
    table = load_dataset(sample_csv_path)
    scaler = fit_scaler(table)
    scaled = apply_scaler(scaler, table)
    restored = invert_scaler(scaler, scaled)

    assert scaled.rows.min() >= 0.0
    assert scaled.rows.max() <= 1.0
    np.testing.assert_allclose(restored.rows, table.rows, rtol=1e-12, atol=1e-12 * np.abs(table.rows).max())


def test_fit_scaler_matches_running_extrema(sample_csv_path):
    table = load_dataset(sample_csv_path)
    low = list(table.rows[0])
    high = list(table.rows[0])
    for row in table.rows[1:]:
        for k, value in enumerate(row):
            low[k] = min(low[k], value)
            high[k] = max(high[k], value)

    scaler = fit_scaler(table)
    np.testing.assert_array_equal(scaler.minimum, low)
    np.testing.assert_array_equal(scaler.maximum, high)


@pytest.mark.parametrize('n_rows', [1, 2, 3, 4, 5, 6])
def test_window_labels_exhaustive(n_rows):
    for bits in itertools.product((0, 1), repeat=n_rows):
        labels = np.array(bits)
        table = _table(n_rows, labels)
        for length in range(1, n_rows + 1):
            result = window_labels(table, length)
            expected = [int(any(bits[start:start + length])) for start in range(n_rows - length + 1)]
            np.testing.assert_array_equal(result, expected)

            # raising any row label never lowers a window label
            for row in np.flatnonzero(labels == 0):
                raised = labels.copy()
                raised[row] = 1
                assert np.all(window_labels(_table(n_rows, raised), length) >= result)
