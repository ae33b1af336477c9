"""
End-to-end anomaly detection: scale and window the telemetry, reconstruct with the LSTM
autoencoder, classify the reconstruction residuals with the one-class SVM and explain the
windows flagged as anomalous.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from tools_autoencoder import AutoencoderModel, TrainingHistory, init_model, reconstruct, train
from tools_calculate import AGGREGATED, FLATTENED, DataError, Metrics, check_mode, evaluate, residual_matrix
from tools_explain import AttributionMatrix, BaselineSet, autoencoder_score_fn, gradient_shap, sample_baselines
from tools_filter import (
    Scaler,
    Window,
    apply_scaler,
    filter_normal_rows,
    filter_normal_windows,
    fit_scaler,
    make_windows,
    split_train_test,
    stack_windows,
)
from tools_import import RecordTable
from tools_ocsvm import ANOMALY, OcsvmConfig, OcsvmModel, decision, fit, label_from_decision
from tools_prob import inject_anomalies

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATE_SIZES = (4, 8, 16, 32)
# one injected event per this many validation rows when the validation slice has no positives
VALIDATION_ROWS_PER_EVENT = 40


@dataclass(frozen=True)
class TrainParams:
    hidden_dim: int = 32
    latent_dim: int = 16
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_grad_norm: Optional[float] = None


@dataclass(frozen=True)
class ExplainParams:
    """
    Attributes:
        baselines (BaselineSet): Background windows, normally sampled from the training windows.
        n_samples (int): Gradient SHAP draws per explained window.
        target (str): 'surrogate' or 'flattened:<index>'.
        seed (int): Base seed; window i of a detect call uses seed + i.
    """
    baselines: BaselineSet
    n_samples: int = 200
    target: str = 'surrogate'
    seed: int = 0


@dataclass(frozen=True)
class Detection:
    start_index: int
    verdict: str
    decision: float
    score: float
    attribution: Optional[AttributionMatrix] = None

    @property
    def is_anomaly(self) -> bool:
        return self.verdict == ANOMALY


@dataclass(frozen=True)
class FittedPipeline:
    """
    Everything learned from the training rows.

    Attributes:
        scaler (Scaler): Min-max scaler fitted on the normal training rows.
        autoencoder (AutoencoderModel): Trained autoencoder.
        ocsvm (OcsvmModel): One-class SVM fitted on the training residuals.
        baselines (BaselineSet): Background windows for explanations.
        mode (str): Residual mode.
        feature_names (tuple): Feature order of the training table.
        history (TrainingHistory): Per-epoch training loss.
    """
    scaler: Scaler
    autoencoder: AutoencoderModel
    ocsvm: OcsvmModel
    baselines: BaselineSet
    mode: str
    feature_names: Tuple[str, ...]
    history: TrainingHistory = field(default_factory=TrainingHistory)

    @property
    def window_length(self) -> int:
        return self.autoencoder.window_length


@dataclass(frozen=True)
class CandidateResult:
    window_size: int
    metrics: Metrics
    seconds: float
    converged: bool


@dataclass(frozen=True)
class GridSearchReport:
    candidates: List[CandidateResult]
    selected_size: int
    synthetic_validation: bool

    def to_dict(self) -> dict:
        return {
            'candidate_sizes': [c.window_size for c in self.candidates],
            'selected_size': self.selected_size,
            'synthetic_validation': self.synthetic_validation,
            'candidates': [{'window_size': c.window_size, 'seconds': c.seconds, 'converged': c.converged,
                            **c.metrics.to_dict()} for c in self.candidates],
        }


def residual_dimension(autoencoder: AutoencoderModel, mode: str) -> int:
    if mode == AGGREGATED:
        return autoencoder.n_features
    if mode == FLATTENED:
        return autoencoder.window_length * autoencoder.n_features
    raise ValueError(f"unknown residual mode {mode!r}")


def fit_pipeline(train_table: RecordTable, window_length: int, train_params: TrainParams = None,
                 ocsvm_config: OcsvmConfig = None, mode: str = AGGREGATED, seed: int = 0,
                 n_baselines: int = 100) -> FittedPipeline:
    """
    Train the autoencoder and the one-class SVM on the normal part of the training rows.

    The scaler is fitted on label-0 rows only; training windows are the windows whose
    covered rows are all normal.

    Args:
        train_table (RecordTable): Chronological training rows, labels optional.
        window_length (int): Window size l.
        train_params (TrainParams, optional): Autoencoder settings.
        ocsvm_config (OcsvmConfig, optional): Solver settings.
        mode (str): Residual mode, 'aggregated' or 'flattened'.
        seed (int): Seed for initialisation, shuffling and baseline sampling.
        n_baselines (int): Size of the stored baseline set.

    Returns:
        FittedPipeline: The fitted artefacts.
    """
    train_params = train_params or TrainParams()
    ocsvm_config = ocsvm_config or OcsvmConfig()
    check_mode(mode)

    normal_rows = filter_normal_rows(train_table)
    if normal_rows.n_rows == 0:
        raise DataError("training rows contain no normal rows")
    scaler = fit_scaler(normal_rows)
    windows = filter_normal_windows(make_windows(apply_scaler(scaler, train_table), window_length))
    if len(windows) < 2:
        raise DataError(f"only {len(windows)} normal training windows of length {window_length}")
    batch = stack_windows(windows)
    logger.info("Training autoencoder on %d windows (l = %d, m = %d)", batch.shape[0], window_length, batch.shape[2])

    model = init_model(batch.shape[2], window_length, train_params.hidden_dim, train_params.latent_dim, seed)
    model, history = train(model, batch, epochs=train_params.epochs, learning_rate=train_params.learning_rate,
                           batch_size=train_params.batch_size, seed=seed,
                           max_grad_norm=train_params.max_grad_norm)

    residuals = residual_matrix(batch, reconstruct(model, batch), mode)
    ocsvm_model = fit(residuals, ocsvm_config)
    baselines = sample_baselines(batch, n_baselines, seed)
    return FittedPipeline(scaler, model, ocsvm_model, baselines, mode, train_table.feature_names, history)


def pipeline_windows(pipeline: FittedPipeline, table: RecordTable) -> List[Window]:
    """Scale a table with the fitted scaler and cut it into the pipeline's windows."""
    if table.feature_names != pipeline.feature_names:
        raise DataError(f"table features {list(table.feature_names)} do not match "
                        f"trained features {list(pipeline.feature_names)}")
    return make_windows(apply_scaler(pipeline.scaler, table), pipeline.window_length)


def detect(autoencoder: AutoencoderModel, ocsvm_model: OcsvmModel, windows, mode: str = AGGREGATED,
           explain: bool = False, explain_params: ExplainParams = None) -> List[Detection]:
    """
    Classify windows and optionally explain the anomalous ones.

    Args:
        autoencoder (AutoencoderModel): Trained autoencoder.
        ocsvm_model (OcsvmModel): One-class SVM fitted on residuals of the same mode.
        windows (list or np.ndarray): Window objects, or an (N, l, m) array numbered from 0.
        mode (str): Residual mode used at training time.
        explain (bool): Attach an attribution to every anomalous detection.
        explain_params (ExplainParams, optional): Required when explain is True.

    Returns:
        list: One Detection per window, in input order.
    """
    expected = residual_dimension(autoencoder, mode)
    if ocsvm_model.n_dimensions != expected:
        raise DataError(f"one-class SVM expects {ocsvm_model.n_dimensions}-dimensional residuals, "
                        f"the autoencoder produces {expected} in {mode} mode")
    if explain and explain_params is None:
        raise ValueError("explain_params are required when explain is set")

    if isinstance(windows, np.ndarray):
        batch = np.asarray(windows, dtype=float)
        starts = list(range(batch.shape[0]))
    else:
        windows = list(windows)
        if not windows:
            return []
        batch = stack_windows(windows)
        starts = [window.start_index for window in windows]
    if batch.shape[0] == 0:
        return []

    reconstruction = reconstruct(autoencoder, batch)
    scores = ((batch - reconstruction) ** 2).sum(axis=(1, 2))
    decisions = decision(ocsvm_model, residual_matrix(batch, reconstruction, mode))
    score_fn = autoencoder_score_fn(autoencoder, explain_params.target) if explain else None

    detections = []
    for i, start in enumerate(starts):
        verdict = label_from_decision(decisions[i], ocsvm_model.tolerance)
        attribution = None
        if explain and verdict == ANOMALY:
            attribution = gradient_shap(score_fn, batch[i], explain_params.baselines,
                                        explain_params.n_samples, explain_params.seed + i)
        detections.append(Detection(int(start), verdict, float(decisions[i]), float(scores[i]), attribution))

    n_anomalies = sum(d.is_anomaly for d in detections)
    logger.info("Flagged %d of %d windows as anomalous", n_anomalies, len(detections))
    return detections


def detect_table(pipeline: FittedPipeline, table: RecordTable, explain: bool = False,
                 n_samples: int = 200, target: str = 'surrogate', seed: int = 0) -> List[Detection]:
    """Run detect on every window of a raw table with a fitted pipeline."""
    params = ExplainParams(pipeline.baselines, n_samples, target, seed) if explain else None
    return detect(pipeline.autoencoder, pipeline.ocsvm, pipeline_windows(pipeline, table),
                  pipeline.mode, explain, params)


def predictions_of(detections: Sequence[Detection]) -> np.ndarray:
    return np.array([int(d.is_anomaly) for d in detections], dtype=int)


def _evaluate_candidate(fit_rows: RecordTable, validation: RecordTable, window_size: int,
                        train_params: TrainParams, ocsvm_config: OcsvmConfig, mode: str,
                        seed: int) -> CandidateResult:
    start = time.perf_counter()
    pipeline = fit_pipeline(fit_rows, window_size, train_params, ocsvm_config, mode, seed, n_baselines=1)
    windows = pipeline_windows(pipeline, validation)
    detections = detect(pipeline.autoencoder, pipeline.ocsvm, windows, mode)
    metrics = evaluate(predictions_of(detections), [window.label for window in windows])
    seconds = time.perf_counter() - start
    logger.info("Window size %d: F1 %.4f in %.1f s", window_size, metrics.f1, seconds)
    return CandidateResult(window_size, metrics, seconds, pipeline.ocsvm.converged)


def select_window_size(results: Sequence[CandidateResult]) -> int:
    """Highest F1; ties go to the smallest window."""
    return min(results, key=lambda result: (-result.metrics.f1, result.window_size)).window_size


def grid_search(table: RecordTable, candidate_sizes: Sequence[int] = DEFAULT_CANDIDATE_SIZES,
                train_params: TrainParams = None, ocsvm_config: OcsvmConfig = None, seed: int = 0,
                mode: str = AGGREGATED, validation_fraction: float = 0.2, n_jobs: int = 1) -> GridSearchReport:
    """
    Choose the window size by validation F1.

    The last validation_fraction of the training rows is held out. When it carries no attack
    labels, synthetic spike and stuck-at-zero events are injected into it. Candidate i is
    trained with seed + i.

    Args:
        table (RecordTable): Training rows.
        candidate_sizes (Sequence[int]): Window sizes to try, each >= 1.
        train_params (TrainParams, optional): Autoencoder settings.
        ocsvm_config (OcsvmConfig, optional): Solver settings.
        seed (int): Base seed.
        mode (str): Residual mode.
        validation_fraction (float): Share of rows held out, in (0, 1).
        n_jobs (int): joblib workers.

    Returns:
        GridSearchReport: Per-candidate metrics and timings plus the selected size.
    """
    sizes = [int(size) for size in candidate_sizes]
    if not sizes:
        raise ValueError("candidate_sizes must not be empty")
    if any(size < 1 for size in sizes):
        raise ValueError(f"candidate sizes must be >= 1, got {sizes}")

    fit_rows, validation = split_train_test(table, 1.0 - validation_fraction)
    synthetic = validation.labels is None or not validation.labels.any()
    if synthetic:
        n_events = max(1, validation.n_rows // VALIDATION_ROWS_PER_EVENT)
        validation, _ = inject_anomalies(validation, n_events, seed)
        logger.info("Validation slice has no attack labels, using %d synthetic events", n_events)

    results = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_candidate)(fit_rows, validation, size, train_params or TrainParams(),
                                     ocsvm_config or OcsvmConfig(), mode, seed + index)
        for index, size in enumerate(sizes))
    selected = select_window_size(results)
    logger.info("Selected window size %d", selected)
    return GridSearchReport(list(results), selected, synthetic)
