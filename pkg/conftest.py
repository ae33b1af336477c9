import os

import numpy as np
import pytest
import yaml

from tools_import import RecordTable
from tools_prob import make_synthetic_process

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')


@pytest.fixture
def sample_csv_path():
    return os.path.join(DATA_DIR, 'gas_pipeline_sample.csv')


@pytest.fixture
def sample_arff_path():
    return os.path.join(DATA_DIR, 'gas_pipeline_sample.arff')


@pytest.fixture
def sine_table():
    """Two smooth features in [0.25, 0.75], no labels."""
    t = np.arange(120)
    rows = np.column_stack([0.5 + 0.25 * np.sin(t / 4.0), 0.5 + 0.25 * np.cos(t / 4.0)])
    return RecordTable(('sine', 'cosine'), rows)


@pytest.fixture
def synthetic_csv(tmp_path):
    table, _ = make_synthetic_process(n_rows=300, n_features=3, anomaly_fraction=0.05, seed=0)
    path = tmp_path / 'synthetic.csv'
    table.to_dataframe().to_csv(path, index=False)
    return str(path)


@pytest.fixture
def write_config(tmp_path, synthetic_csv):
    """Write a small, fast run configuration and return its path; keyword sections override it."""

    def write(**overrides):
        config = {
            'dataset': {'path': synthetic_csv},
            'window_size': 4,
            'output_dir': str(tmp_path / 'out'),
            'autoencoder': {'hidden_dim': 4, 'latent_dim': 2, 'epochs': 3, 'batch_size': 16},
            'explain': {'n_baselines': 10, 'n_samples': 20},
            'gridsearch': {'candidate_sizes': [2, 4]},
        }
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(config.get(key), dict):
                config[key] = {**config[key], **value}
            else:
                config[key] = value
        path = tmp_path / 'config.yaml'
        with open(path, 'w') as file:
            yaml.safe_dump(config, file)
        return str(path)

    return write
