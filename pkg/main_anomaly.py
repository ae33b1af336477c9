#!/usr/bin/env python3
"""
Anomaly detection and explanation for ICS telemetry.

Usage:
    python main_anomaly.py <train|detect|explain|eval|gridsearch> --config <config.yaml> [options]
Example:
    python main_anomaly.py train --config config.yaml --out output
    python main_anomaly.py explain --config config.yaml --out output
"""
import argparse
import logging
import os
import sys
import time

import pandas as pd

from tools_autoencoder import NumericError
from tools_calculate import DataError, evaluate
from tools_config import RESOLVED_CONFIG_FILE, ConfigError, RunConfig, config_to_dict, dump_config, load_config, with_overrides
from tools_export import (
    export_attribution_summaries,
    export_attributions_to_csv,
    export_detections_to_csv,
    load_models,
    save_json,
    save_models,
)
from tools_filter import split_train_test
from tools_import import ParseError, load_dataset
from tools_ocsvm import OcsvmConfig
from tools_process import (
    ExplainParams,
    TrainParams,
    detect,
    fit_pipeline,
    grid_search,
    pipeline_windows,
    predictions_of,
)

logger = logging.getLogger(__name__)

COMMANDS = ('train', 'detect', 'explain', 'eval', 'gridsearch')
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='main_anomaly.py', description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('command', choices=COMMANDS, help="Pipeline stage to run")
    parser.add_argument('--config', required=True, help="Run configuration YAML")
    parser.add_argument('--out', help="Output directory (overrides output_dir)")
    parser.add_argument('--seed', type=int, help="Global seed (overrides seed)")
    parser.add_argument('--window-size', type=int, help="Window length l (overrides window_size)")
    parser.add_argument('--format', choices=('csv', 'arff'), help="Dataset format (overrides dataset.format)")
    parser.add_argument('--model', help="Model file read by detect/explain/eval (default <out>/model.json); not accepted by train")
    parser.add_argument('--labels', help="CSV with a 'label' column, one row per window, for eval")
    parser.add_argument('--verbose', action='store_true', help="Log at DEBUG level")
    return parser


def _train_params(config: RunConfig) -> TrainParams:
    ae = config.autoencoder
    return TrainParams(ae.hidden_dim, ae.latent_dim, ae.epochs, ae.learning_rate, ae.batch_size, ae.max_grad_norm)


def _ocsvm_config(config: RunConfig) -> OcsvmConfig:
    svm = config.ocsvm
    return OcsvmConfig(nu=svm.nu, gamma=svm.gamma, tolerance=svm.tolerance, max_iterations=svm.max_iterations)


def _load_split(config: RunConfig):
    table = load_dataset(config.dataset.path, config.dataset.format)
    return split_train_test(table, config.train_fraction)


def _model_path(args, config: RunConfig) -> str:
    return args.model or os.path.join(config.output_dir, 'model.json')


def command_train(args, config: RunConfig):
    train_table, _ = _load_split(config)
    pipeline = fit_pipeline(train_table, config.window_size, _train_params(config), _ocsvm_config(config),
                            config.residual_mode, config.seed, config.explain.n_baselines)
    if not pipeline.ocsvm.converged:
        raise NumericError(f"one-class SVM did not converge within {config.ocsvm.max_iterations} iterations")
    save_models(pipeline, os.path.join(config.output_dir, 'model.json'))
    save_json({'losses': pipeline.history.losses, 'epochs_run': pipeline.history.epochs_run},
              os.path.join(config.output_dir, 'history.json'))


def _run_detection(args, config: RunConfig, explain: bool):
    pipeline = load_models(_model_path(args, config))
    _, test_table = _load_split(config)
    windows = pipeline_windows(pipeline, test_table)
    params = None
    if explain:
        params = ExplainParams(pipeline.baselines, config.explain.n_samples, config.explain.target, config.seed)
    detections = detect(pipeline.autoencoder, pipeline.ocsvm, windows, pipeline.mode, explain, params)
    return pipeline, windows, detections


def command_detect(args, config: RunConfig):
    _, _, detections = _run_detection(args, config, explain=False)
    export_detections_to_csv(detections, os.path.join(config.output_dir, 'detections.csv'))


def command_explain(args, config: RunConfig):
    pipeline, windows, detections = _run_detection(args, config, explain=True)
    out = config.output_dir
    export_detections_to_csv(detections, os.path.join(out, 'detections.csv'))
    export_attributions_to_csv(detections, windows, pipeline.feature_names, os.path.join(out, 'attributions.csv'))
    export_attribution_summaries(detections, pipeline.feature_names, os.path.join(out, 'attribution_summary.csv'),
                                 os.path.join(out, 'attribution_global.csv'))


def _read_labels(path: str):
    try:
        labels = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read labels from {path}: {e}") from None
    if 'label' not in labels.columns:
        raise DataError(f"labels file {path} has no 'label' column")
    return labels['label'].to_numpy()


def command_eval(args, config: RunConfig):
    start = time.perf_counter()
    _, windows, detections = _run_detection(args, config, explain=False)
    labels = _read_labels(args.labels) if args.labels else [window.label for window in windows]
    metrics = evaluate(predictions_of(detections), labels)
    save_json({'metrics': metrics.to_dict(), 'n_windows': len(detections), 'seconds': time.perf_counter() - start,
               'config': config_to_dict(config)}, os.path.join(config.output_dir, 'metrics.json'))


def command_gridsearch(args, config: RunConfig):
    train_table, _ = _load_split(config)
    grid = config.gridsearch
    report = grid_search(train_table, grid.candidate_sizes, _train_params(config), _ocsvm_config(config),
                         config.seed, config.residual_mode, grid.validation_fraction, grid.n_jobs)
    save_json({**report.to_dict(), 'config': config_to_dict(config)},
              os.path.join(config.output_dir, 'gridsearch.json'))


HANDLERS = {
    'train': command_train,
    'detect': command_detect,
    'explain': command_explain,
    'eval': command_eval,
    'gridsearch': command_gridsearch,
}


def _fail(kind: str, code: int, error: Exception) -> int:
    message = ' '.join(str(error).split())
    print(f"error kind={kind} exit={code} message={message}", file=sys.stderr)
    return code


def run(argv) -> int:
    """
    Execute one subcommand.

    Returns:
        int: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == 'train' and args.model:
            parser.error("--model is read-only; train always writes <out>/model.json")
    except UsageError as e:
        parser.print_usage(sys.stderr)
        return _fail('usage', EXIT_USAGE, e)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        config = with_overrides(load_config(args.config), seed=args.seed, window_size=args.window_size,
                                output_dir=args.out, format_tag=args.format)
        os.makedirs(config.output_dir, exist_ok=True)
        dump_config(config, os.path.join(config.output_dir, RESOLVED_CONFIG_FILE))
        HANDLERS[args.command](args, config)
    except ConfigError as e:
        return _fail('config', EXIT_USAGE, e)
    except NumericError as e:
        return _fail('numeric', EXIT_NUMERIC, e)
    except (ParseError, DataError, ValueError, KeyError, OSError) as e:
        return _fail('data', EXIT_DATA, e)
    logger.info("Command %s finished", args.command)
    return EXIT_OK


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == '__main__':
    main()
