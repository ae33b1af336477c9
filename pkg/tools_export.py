import json
import logging
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from tools_autoencoder import AutoencoderModel, TrainingHistory, init_model
from tools_explain import BaselineSet, aggregate_per_feature
from tools_filter import Scaler, Window
from tools_ocsvm import OcsvmModel
from tools_process import Detection, FittedPipeline

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

DETECTION_COLUMNS = ['window_start', 'verdict', 'decision', 'score']
ATTRIBUTION_COLUMNS = ['window_id', 'timestep', 'feature_name', 'shap_value', 'feature_value']
SUMMARY_COLUMNS = ['window_id', 'feature_name', 'signed_sum', 'mean_abs', 'rank']
GLOBAL_COLUMNS = ['feature_name', 'mean_abs', 'rank']


def _autoencoder_to_dict(model: AutoencoderModel) -> dict:
    return {
        'n_features': model.n_features,
        'window_length': model.window_length,
        'hidden_dim': model.hidden_dim,
        'latent_dim': model.latent_dim,
        'seed': model.seed,
        'parameters': {name: value.tolist() for name, value in model.parameters().items()},
    }


def _autoencoder_from_dict(data: dict) -> AutoencoderModel:
    skeleton = init_model(data['n_features'], data['window_length'], data['hidden_dim'],
                          data['latent_dim'], data['seed'])
    return skeleton.with_parameters({name: np.asarray(value, dtype=float)
                                     for name, value in data['parameters'].items()})


def _ocsvm_to_dict(model: OcsvmModel) -> dict:
    return {
        'support_vectors': model.support_vectors.tolist(),
        'alpha': model.alpha.tolist(),
        'rho': model.rho,
        'gamma': model.gamma,
        'upper_bound': model.upper_bound,
        'converged': model.converged,
        'iterations': model.iterations,
        'tolerance': model.tolerance,
    }


def _ocsvm_from_dict(data: dict) -> OcsvmModel:
    support_vectors = np.asarray(data['support_vectors'], dtype=float)
    return OcsvmModel(
        support_vectors=support_vectors.reshape(len(data['alpha']), -1),
        alpha=np.asarray(data['alpha'], dtype=float),
        rho=float(data['rho']),
        gamma=float(data['gamma']),
        upper_bound=float(data['upper_bound']),
        converged=bool(data['converged']),
        iterations=int(data['iterations']),
        tolerance=float(data['tolerance']),
    )


def save_models(pipeline: FittedPipeline, output_file: str):
    """
    Write a fitted pipeline as versioned JSON.

    Args:
        pipeline (FittedPipeline): Scaler, autoencoder, one-class SVM and baselines.
        output_file (str): Destination path.
    """
    document = {
        'format_version': FORMAT_VERSION,
        'feature_names': list(pipeline.feature_names),
        'residual_mode': pipeline.mode,
        'window_length': pipeline.window_length,
        'scaler': {'minimum': pipeline.scaler.minimum.tolist(), 'maximum': pipeline.scaler.maximum.tolist()},
        'autoencoder': _autoencoder_to_dict(pipeline.autoencoder),
        'ocsvm': _ocsvm_to_dict(pipeline.ocsvm),
        'baselines': pipeline.baselines.windows.tolist(),
    }
    with open(output_file, 'w') as file:
        json.dump(document, file, indent=2)
    logger.info("Models saved to %s", output_file)


def load_models(input_file: str) -> FittedPipeline:
    """
    Read a pipeline written by save_models.

    Raises:
        ValueError: Unknown format_version or a malformed document.
    """
    with open(input_file) as file:
        try:
            document = json.load(file)
        except json.JSONDecodeError as e:
            raise ValueError(f"model file {input_file} is not valid JSON: {e}") from None
    version = document.get('format_version') if isinstance(document, dict) else None
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        pipeline = FittedPipeline(
            scaler=Scaler(document['scaler']['minimum'], document['scaler']['maximum']),
            autoencoder=_autoencoder_from_dict(document['autoencoder']),
            ocsvm=_ocsvm_from_dict(document['ocsvm']),
            baselines=BaselineSet(document['baselines']),
            mode=document['residual_mode'],
            feature_names=tuple(document['feature_names']),
            history=TrainingHistory(),
        )
    except KeyError as e:
        raise ValueError(f"model file {input_file} is missing {e}") from None
    if pipeline.window_length != document['window_length']:
        raise ValueError(f"model file {input_file} has inconsistent window lengths")
    logger.info("Models loaded from %s", input_file)
    return pipeline


def save_json(report: Dict, output_file: str):
    """Write a report dictionary (metrics, history, grid search) as indented JSON."""
    with open(output_file, 'w') as file:
        json.dump(report, file, indent=2)
    logger.info("Report saved to %s", output_file)


def detections_to_dataframe(detections: Sequence[Detection]) -> pd.DataFrame:
    records = [(d.start_index, d.verdict, d.decision, d.score) for d in detections]
    return pd.DataFrame(records, columns=DETECTION_COLUMNS)


def export_detections_to_csv(detections: Sequence[Detection], output_file: str):
    detections_to_dataframe(detections).to_csv(output_file, index=False)
    logger.info("Detections saved to %s", output_file)


def export_attributions_to_csv(detections: Sequence[Detection], windows: Sequence[Window],
                               feature_names: Sequence[str], output_file: str):
    """
    One row per (explained window, timestep, feature) with the attribution and the scaled input value.

    Args:
        detections (Sequence[Detection]): Output of detect, aligned with windows.
        windows (Sequence[Window]): The scaled windows that were classified.
        feature_names (Sequence[str]): Column names.
        output_file (str): Destination path.
    """
    if len(detections) != len(windows):
        raise ValueError(f"{len(detections)} detections but {len(windows)} windows")
    records = []
    for detection, window in zip(detections, windows):
        if detection.attribution is None:
            continue
        values = detection.attribution.values
        for t in range(values.shape[0]):
            for k, name in enumerate(feature_names):
                records.append((detection.start_index, t, name, values[t, k], window.values[t, k]))
    pd.DataFrame(records, columns=ATTRIBUTION_COLUMNS).to_csv(output_file, index=False)
    logger.info("Attributions saved to %s", output_file)


def attribution_summary(detections: Sequence[Detection], feature_names: Sequence[str]) -> pd.DataFrame:
    records = []
    for detection in detections:
        if detection.attribution is None:
            continue
        importance = aggregate_per_feature(detection.attribution)
        ranks = importance.ranks()
        for k, name in enumerate(feature_names):
            records.append((detection.start_index, name, importance.signed[k], importance.mean_abs[k], int(ranks[k])))
    return pd.DataFrame(records, columns=SUMMARY_COLUMNS)


def attribution_global(detections: Sequence[Detection], feature_names: Sequence[str]) -> pd.DataFrame:
    """Mean of the per-window mean-absolute importance over all explained windows, ranked."""
    per_window: List[np.ndarray] = [aggregate_per_feature(d.attribution).mean_abs
                                    for d in detections if d.attribution is not None]
    if not per_window:
        return pd.DataFrame([], columns=GLOBAL_COLUMNS)
    mean_abs = np.mean(per_window, axis=0)
    ranking = np.lexsort((np.arange(mean_abs.size), -mean_abs))
    ranks = np.empty(mean_abs.size, dtype=int)
    ranks[ranking] = np.arange(1, mean_abs.size + 1)
    return pd.DataFrame({'feature_name': list(feature_names), 'mean_abs': mean_abs, 'rank': ranks},
                        columns=GLOBAL_COLUMNS)


def export_attribution_summaries(detections: Sequence[Detection], feature_names: Sequence[str],
                                 summary_file: str, global_file: str):
    attribution_summary(detections, feature_names).to_csv(summary_file, index=False)
    attribution_global(detections, feature_names).to_csv(global_file, index=False)
    logger.info("Attribution summaries saved to %s and %s", summary_file, global_file)
