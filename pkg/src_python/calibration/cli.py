"""
Copyright 2024 The Posterior Calibration authors and contributors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

"""
Command-line front end.

Subcommands:

    ece           accuracy, ECE and reliability table of one prediction log
    fit-temp      fit T on a dev log and evaluate other logs at that T
    reliability   reliability-diagram CSV of one prediction log
    benchmark     MLE vs LS on the synthetic shift benchmark, several seeds
    shift-sweep   fitted temperatures across shift magnitudes

Exit codes: 0 success, 1 data error (unreadable or invalid input), 2 usage
error (bad flags). Report lines go to stdout with fixed precision (accuracy
and ECE: 4 decimals, T: 2 decimals); logging goes to stderr.
"""

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .constants import (DEFAULT_ALPHA, DEFAULT_BATCH_SIZE, DEFAULT_BENCHMARK_CLASSES, DEFAULT_BENCHMARK_DIM,
                        DEFAULT_BENCHMARK_N, DEFAULT_EPOCHS, DEFAULT_GRID_HI, DEFAULT_GRID_LO,
                        DEFAULT_GRID_STEP, DEFAULT_LEARNING_RATE, DEFAULT_NUM_BINS, DEFAULT_SHIFT,
                        MIN_SPLIT_SIZE, REPORT_FORMAT)
from .manifest import RunManifest
from .metrics import BinScheme, BinSpec, evaluate, reliability_rows, write_reliability_csv
from .prediction_store import FileFormat, SplitTag, ingest, write
from .temperature import Objective, ObjectiveKind, SearchGrid, fit_temperature, write_curve_csv
from .training import ExperimentConfig, ExperimentResult, Setting, TrainingDivergenceError, run_experiment

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

SUMMARY_HEADER = ('seed', 'model', 'setting', 'id_accuracy', 'id_ece', 'ood_accuracy', 'ood_ece',
                  'temperature', 'dev_accuracy', 'dev_ece', 'oracle_t_id', 'oracle_t_ood')
SUMMARY_METRICS = SUMMARY_HEADER[3:]
SWEEP_HEADER = ('shift', 'model', 'dev_temperature', 'oracle_t_id', 'oracle_t_ood',
                'id_ece', 'ood_ece', 'ood_ece_scaled', 'ood_accuracy')


class UsageError(Exception):
    """A flag combination that parses but cannot be honored."""


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _fmt(value: float) -> str:
    return format(float(value), REPORT_FORMAT)


def _input_format(path: Path, requested: Optional[str]) -> FileFormat:
    if requested:
        return FileFormat(requested)
    return FileFormat.CSV if path.suffix.lower() == '.csv' else FileFormat.JSONL


def _bin_spec(args) -> BinSpec:
    if args.bins < 1:
        raise UsageError(f"--bins must be >= 1, got {args.bins}")
    return BinSpec(args.bins, BinScheme(args.scheme))


def _temperature(args) -> float:
    if not math.isfinite(args.temperature) or args.temperature <= 0:
        raise UsageError(f"--temperature must be a finite positive number, got {args.temperature}")
    return args.temperature


def _load(path: Path, requested_format: Optional[str], split_tag: SplitTag, num_classes: Optional[int]):
    return ingest(path, _input_format(path, requested_format), split_tag, num_classes)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding='utf-8')


def _output_dir(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.parent


# ---------------------------------------------------------------------------
# ece / reliability
# ---------------------------------------------------------------------------

def cmd_ece(args) -> int:
    """Accuracy and ECE of one prediction log at temperature T."""
    spec = _bin_spec(args)
    temperature = _temperature(args)
    prediction_set = _load(args.input, args.format, SplitTag.IN_DOMAIN_TEST, args.num_classes)
    result = evaluate(prediction_set, temperature, spec)

    print(f"n: {len(prediction_set)}")
    print(f"temperature: {temperature:.2f}")
    print(f"accuracy: {result.accuracy:.4f}")
    print(f"ece: {result.ece:.4f}")

    if args.out is not None:
        out_dir = _output_dir(args.out)
        _write_json(args.out, {
            'input': str(args.input),
            'n': len(prediction_set),
            'temperature': temperature,
            'num_bins': spec.num_bins,
            'scheme': spec.scheme.value,
            'accuracy': result.accuracy,
            'ece': result.ece,
        })
        write_reliability_csv(result.table, out_dir / f"reliability_{args.input.stem}.csv")
        RunManifest.build('ece', {
            'input': args.input, 'format': _input_format(args.input, args.format), 'bins': spec.num_bins,
            'scheme': spec.scheme, 'temperature': temperature, 'num_classes': args.num_classes,
            'out': args.out,
        }, __version__, [args.input]).write(out_dir)
    return 0


def cmd_reliability(args) -> int:
    """Reliability-diagram CSV of one prediction log."""
    spec = _bin_spec(args)
    temperature = _temperature(args)
    prediction_set = _load(args.input, args.format, SplitTag.IN_DOMAIN_TEST, args.num_classes)
    table = evaluate(prediction_set, temperature, spec).table

    if args.out is None:
        csv.writer(sys.stdout, lineterminator='\n').writerows(reliability_rows(table))
        return 0
    out_dir = _output_dir(args.out)
    write_reliability_csv(table, args.out)
    RunManifest.build('reliability', {
        'input': args.input, 'format': _input_format(args.input, args.format), 'bins': spec.num_bins,
        'scheme': spec.scheme, 'temperature': temperature, 'num_classes': args.num_classes,
        'out': args.out,
    }, __version__, [args.input]).write(out_dir)
    print(f"reliability table written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# fit-temp
# ---------------------------------------------------------------------------

def cmd_fit_temp(args) -> int:
    """Fit T on a dev log, then evaluate each --eval log at the fitted T."""
    spec = _bin_spec(args)
    try:
        grid = SearchGrid(args.grid_lo, args.grid_hi, args.grid_step)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.workers < 1:
        raise UsageError(f"--workers must be >= 1, got {args.workers}")
    objective = Objective(ObjectiveKind(args.objective), spec)

    dev = _load(args.dev, args.format, SplitTag.IN_DOMAIN_DEV, args.num_classes)
    eval_sets = [(path, _load(path, args.format, SplitTag.IN_DOMAIN_TEST, args.num_classes))
                 for path in args.eval]
    fit = fit_temperature(dev, grid, objective, workers=args.workers)

    print(f"temperature: {fit.temperature:.2f}")
    print(f"dev {objective.kind.value}: {fit.objective_value:.4f}")
    for path, prediction_set in eval_sets:
        result = evaluate(prediction_set, fit.temperature, spec)
        print(f"{path}: accuracy: {result.accuracy:.4f} ece: {result.ece:.4f}")

    if args.out is not None:
        out_dir = _output_dir(args.out)
        write_curve_csv(fit, args.out)
        RunManifest.build('fit-temp', {
            'dev': args.dev, 'format': _input_format(args.dev, args.format), 'eval': list(args.eval),
            'eval_formats': [_input_format(path, args.format) for path in args.eval],
            'grid': [grid.lo, grid.hi, grid.step], 'objective': objective.kind, 'bins': spec.num_bins,
            'scheme': spec.scheme, 'num_classes': args.num_classes, 'out': args.out,
        }, __version__, [args.dev, *args.eval]).write(out_dir)
    return 0


# ---------------------------------------------------------------------------
# benchmark / shift-sweep
# ---------------------------------------------------------------------------

def _experiment_config(args, shift: float) -> ExperimentConfig:
    if args.classes < 2:
        raise UsageError(f"--classes must be >= 2, got {args.classes}")
    if args.dim < 1:
        raise UsageError(f"--dim must be >= 1, got {args.dim}")
    if args.n < MIN_SPLIT_SIZE:
        raise UsageError(f"--n must be >= {MIN_SPLIT_SIZE}, got {args.n}")
    if not math.isfinite(shift) or shift < 0:
        raise UsageError(f"shift must be a finite nonnegative number, got {shift}")
    if not 0.0 < args.alpha < 1.0:
        raise UsageError(f"--alpha must lie in (0, 1), got {args.alpha}")
    if args.epochs < 1 or args.batch_size < 1 or not args.learning_rate > 0:
        raise UsageError("--epochs and --batch-size must be >= 1 and --learning-rate positive")
    return ExperimentConfig(args.classes, args.dim, args.n, shift, args.alpha,
                            args.epochs, args.batch_size, args.learning_rate, _bin_spec(args))


def _experiment_parameters(args, config: ExperimentConfig) -> Dict:
    return {
        'classes': config.num_classes, 'dim': config.feature_dim, 'n': config.n, 'alpha': config.alpha,
        'epochs': config.epochs, 'batch_size': config.batch_size, 'learning_rate': config.learning_rate,
        'bins': config.bin_spec.num_bins, 'scheme': config.bin_spec.scheme,
        'grid': [config.grid.lo, config.grid.hi, config.grid.step], 'objective': ObjectiveKind.ECE,
    }


def _run_seeds(seeds: Sequence[int], config: ExperimentConfig, workers: int) -> List[ExperimentResult]:
    """Run every seed; divergent seeds are logged and skipped. Results are in seed order."""
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_experiment, seed, config) for seed in seeds]
            outcomes = []
            for seed, future in zip(seeds, futures):
                try:
                    outcomes.append(future.result())
                except TrainingDivergenceError as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for seed in seeds:
            try:
                outcomes.append(run_experiment(seed, config))
            except TrainingDivergenceError as exc:
                outcomes.append(exc)

    results = []
    for seed, outcome in zip(seeds, outcomes):
        if isinstance(outcome, TrainingDivergenceError):
            logger.error("Seed %d failed: %s", seed, outcome)
            print(f"seed {seed}: {outcome}", file=sys.stderr)
        else:
            results.append(outcome)
    return results


def _summary_line(label, model, setting, values) -> str:
    return (f"{label:>6} {model:<3} {setting:<18} id_acc {values[0]:.4f} id_ece {values[1]:.4f} "
            f"ood_acc {values[2]:.4f} ood_ece {values[3]:.4f} T {values[4]:.2f}")


def aggregate_rows(results: Sequence[ExperimentResult]):
    """
    Mean and population standard deviation across seeds.

    Returns:
        List of (statistic, model, setting, values) with values ordered as
        ``SUMMARY_METRICS``.
    """
    groups: Dict = {}
    for result in results:
        for row in result.rows:
            groups.setdefault((row.model, row.setting.value), []).append(
                [getattr(row, name) for name in SUMMARY_METRICS])
    aggregated = []
    for (model, setting), values in groups.items():
        matrix = np.array(values, dtype=np.float64)
        aggregated.append(('mean', model, setting, matrix.mean(axis=0).tolist()))
        aggregated.append(('std', model, setting, matrix.std(axis=0).tolist()))
    return aggregated


def _write_benchmark_outputs(out_dir: Path, results: Sequence[ExperimentResult], aggregated) -> None:
    with (out_dir / 'summary.csv').open('w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SUMMARY_HEADER)
        for result in results:
            for row in result.rows:
                writer.writerow([row.seed, row.model, row.setting.value]
                                + [_fmt(getattr(row, name)) for name in SUMMARY_METRICS])
        for statistic, model, setting, values in aggregated:
            writer.writerow([statistic, model, setting] + [_fmt(v) for v in values])

    for result in results:
        for run in result.runs:
            write_curve_csv(run.dev_fit, out_dir / f"curve_{result.seed}_{run.name}.csv")
            for split, prediction_set in run.prediction_sets.items():
                write(prediction_set, out_dir / f"logits_{result.seed}_{run.name}_{split}.jsonl", FileFormat.JSONL)


def cmd_benchmark(args) -> int:
    """MLE vs LS, out-of-the-box vs temperature-scaled, on the shift benchmark."""
    config = _experiment_config(args, args.shift)
    if args.workers < 1:
        raise UsageError(f"--workers must be >= 1, got {args.workers}")
    seeds = list(args.seeds)

    results = _run_seeds(seeds, config, args.workers)
    if not results:
        print("no seed completed", file=sys.stderr)
        return 1

    for result in results:
        for row in result.rows:
            print(_summary_line(f"seed {row.seed}", row.model, row.setting.value,
                                [getattr(row, name) for name in SUMMARY_METRICS]))
    aggregated = aggregate_rows(results)
    for statistic, model, setting, values in aggregated:
        print(_summary_line(statistic, model, setting, values))

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_benchmark_outputs(args.out, results, aggregated)
        parameters = _experiment_parameters(args, config)
        parameters.update(shift=config.shift_magnitude, seeds=seeds, workers=args.workers)
        RunManifest.build('benchmark', parameters, __version__).write(args.out)
    return 0


def cmd_shift_sweep(args) -> int:
    """Dev-fitted and oracle temperatures for a range of shift magnitudes."""
    configs = [_experiment_config(args, shift) for shift in args.shifts]
    rows = []
    for config in configs:
        try:
            result = run_experiment(args.seed, config)
        except TrainingDivergenceError as exc:
            logger.error("Shift %g failed: %s", config.shift_magnitude, exc)
            print(f"shift {config.shift_magnitude:g}: {exc}", file=sys.stderr)
            continue
        by_key = {(row.model, row.setting): row for row in result.rows}
        for run in result.runs:
            plain = by_key[(run.name, Setting.OUT_OF_THE_BOX)]
            scaled = by_key[(run.name, Setting.TEMPERATURE_SCALED)]
            rows.append((config.shift_magnitude, run.name, run.dev_fit.temperature, plain.oracle_t_id,
                         plain.oracle_t_ood, plain.id_ece, plain.ood_ece, scaled.ood_ece, plain.ood_accuracy))

    if not rows:
        print("no shift completed", file=sys.stderr)
        return 1
    for shift, model, dev_t, _, oracle_ood, _, ood_ece, ood_scaled, _ in rows:
        print(f"shift {shift:g} {model:<3} dev T {dev_t:.2f} ood oracle T {oracle_ood:.2f} "
              f"ood_ece {ood_ece:.4f} scaled {ood_scaled:.4f}")

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with (args.out / 'sweep.csv').open('w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(SWEEP_HEADER)
            for shift, model, *values in rows:
                writer.writerow([_fmt(shift), model] + [_fmt(v) for v in values])
        parameters = _experiment_parameters(args, configs[0])
        parameters.update(shifts=list(args.shifts), seed=args.seed)
        RunManifest.build('shift-sweep', parameters, __version__).write(args.out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_input_arguments(parser, name='input'):
    parser.add_argument(name, type=Path, help="Prediction log (JSONL or CSV)")
    parser.add_argument('--format', choices=[f.value for f in FileFormat],
                        help="Input format (default: from the file extension)")
    parser.add_argument('--num-classes', type=int, help="Expected number of classes")


def _add_binning_arguments(parser):
    parser.add_argument('--bins', type=int, default=DEFAULT_NUM_BINS, help="Number of confidence bins")
    parser.add_argument('--scheme', choices=[s.value for s in BinScheme], default=BinScheme.EQUAL_WIDTH.value,
                        help="Binning scheme")


def _add_benchmark_arguments(parser):
    parser.add_argument('--classes', type=int, default=DEFAULT_BENCHMARK_CLASSES)
    parser.add_argument('--dim', type=int, default=DEFAULT_BENCHMARK_DIM)
    parser.add_argument('--n', type=int, default=DEFAULT_BENCHMARK_N, help="Examples per split")
    parser.add_argument('--alpha', type=float, default=DEFAULT_ALPHA, help="Label-smoothing mass")
    parser.add_argument('--epochs', type=int, default=DEFAULT_EPOCHS)
    parser.add_argument('--batch-size', type=int, default=DEFAULT_BATCH_SIZE)
    parser.add_argument('--learning-rate', type=float, default=DEFAULT_LEARNING_RATE)
    _add_binning_arguments(parser)
    parser.add_argument('--out', type=Path, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='calibration', description="Posterior calibration toolkit")
    parser.add_argument('-v', '--verbose', action='count', default=0, help="-v for INFO, -vv for DEBUG")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest='command', required=True)

    ece = subparsers.add_parser('ece', help="Accuracy and ECE of a prediction log")
    _add_input_arguments(ece)
    _add_binning_arguments(ece)
    ece.add_argument('--temperature', type=float, default=1.0)
    ece.add_argument('--out', type=Path, help="Report path (JSON); reliability CSV goes alongside")
    ece.set_defaults(handler=cmd_ece)

    fit = subparsers.add_parser('fit-temp', help="Fit a temperature on a dev log")
    _add_input_arguments(fit, 'dev')
    fit.add_argument('--grid-lo', type=float, default=DEFAULT_GRID_LO)
    fit.add_argument('--grid-hi', type=float, default=DEFAULT_GRID_HI)
    fit.add_argument('--grid-step', type=float, default=DEFAULT_GRID_STEP)
    fit.add_argument('--objective', choices=[k.value for k in ObjectiveKind], default=ObjectiveKind.ECE.value)
    _add_binning_arguments(fit)
    fit.add_argument('--eval', type=Path, nargs='*', default=[], help="Logs to evaluate at the fitted T")
    fit.add_argument('--workers', type=int, default=1, help="Threads for the line search")
    fit.add_argument('--out', type=Path, help="Objective curve CSV")
    fit.set_defaults(handler=cmd_fit_temp)

    reliability = subparsers.add_parser('reliability', help="Reliability-diagram CSV of a prediction log")
    _add_input_arguments(reliability)
    _add_binning_arguments(reliability)
    reliability.add_argument('--temperature', type=float, default=1.0)
    reliability.add_argument('--out', type=Path, help="CSV path (default: stdout)")
    reliability.set_defaults(handler=cmd_reliability)

    benchmark = subparsers.add_parser('benchmark', help="MLE vs LS on the synthetic shift benchmark")
    benchmark.add_argument('--shift', type=float, default=DEFAULT_SHIFT)
    benchmark.add_argument('--seeds', type=int, nargs='+', default=[0])
    benchmark.add_argument('--workers', type=int, default=1, help="Processes for independent seeds")
    _add_benchmark_arguments(benchmark)
    benchmark.set_defaults(handler=cmd_benchmark)

    sweep = subparsers.add_parser('shift-sweep', help="Fitted temperatures across shift magnitudes")
    sweep.add_argument('--shifts', type=float, nargs='+', default=[0.0, 1.0, 2.0, 3.0, 4.0])
    sweep.add_argument('--seed', type=int, default=0)
    _add_benchmark_arguments(sweep)
    sweep.set_defaults(handler=cmd_shift_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.verbose)

    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
