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
Synthetic domain-shift benchmark and the per-seed MLE/LS experiment.

Each class is an isotropic unit-variance Gaussian cluster. The class means
sit at the vertices of a regular simplex of radius ``DEFAULT_CLUSTER_RADIUS``
centered at the origin, rotated into feature space by a seeded random
orthonormal basis. The out-of-domain split uses the same classes with every
mean translated by ``shift_magnitude`` along a seeded random unit direction
inside the span of the means, and with the standard deviation inflated to
1 + ``DEFAULT_COVARIANCE_INFLATION`` * shift_magnitude. A zero shift makes
the out-of-domain split a fresh draw from the in-domain distribution.

Randomness comes from ``SeedSequence(seed).spawn``: one child stream for the
geometry and one per split, so every split is reproducible on its own.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from ..constants import (DEFAULT_ALPHA, DEFAULT_BATCH_SIZE, DEFAULT_BENCHMARK_CLASSES,
                         DEFAULT_BENCHMARK_DIM, DEFAULT_BENCHMARK_N, DEFAULT_CLUSTER_RADIUS,
                         DEFAULT_COVARIANCE_INFLATION, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE,
                         DEFAULT_SHIFT, MIN_NUM_CLASSES, MIN_SPLIT_SIZE, ROUND_TRIP_FORMAT)
from ..metrics import BinSpec, EvaluationResult, evaluate
from ..prediction_store import PredictionSet, SplitTag
from ..temperature import Objective, SearchGrid, TemperatureFit, fit_temperature
from .model import (LabeledFeatures, LinearSoftmaxModel, TrainConfig, TrainingObjective,
                    TrainingResult, train)

logger = logging.getLogger(__name__)

SPLITS = ('train_id', 'dev_id', 'test_id', 'test_ood')
EVALUATED_SPLITS = {
    'dev_id': SplitTag.IN_DOMAIN_DEV,
    'test_id': SplitTag.IN_DOMAIN_TEST,
    'test_ood': SplitTag.OUT_OF_DOMAIN_TEST,
}
# train_id is cached alongside the evaluated splits but never scored
CACHED_SPLITS = {'train_id': SplitTag.UNLABELED_SPLIT, **EVALUATED_SPLITS}


@dataclass(frozen=True, eq=False)
class ShiftBenchmark:
    """
    Four labeled splits: train, dev and test in-domain, test out-of-domain.

    Attributes:
        train_id: In-domain training split.
        dev_id: In-domain development split (used to fit T).
        test_id: In-domain test split.
        test_ood: Shifted test split.
        seed: Generator seed.
        shift_magnitude: Translation length of the out-of-domain means.
        class_means: (num_classes, feature_dim) in-domain cluster centers.
        shift_direction: (feature_dim,) unit translation direction.
    """
    train_id: LabeledFeatures
    dev_id: LabeledFeatures
    test_id: LabeledFeatures
    test_ood: LabeledFeatures
    seed: int
    shift_magnitude: float
    class_means: np.ndarray = field(repr=False)
    shift_direction: np.ndarray = field(repr=False)

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.class_means.shape[1]

    def splits(self) -> Dict[str, LabeledFeatures]:
        return {name: getattr(self, name) for name in SPLITS}


def _class_means(num_classes: int, feature_dim: int, radius: float,
                 rng: np.random.Generator) -> np.ndarray:
    simplex_dim = num_classes - 1
    if feature_dim < simplex_dim:
        # Not enough room for a simplex; fall back to random directions.
        means = rng.standard_normal((num_classes, feature_dim))
        return radius * means / np.linalg.norm(means, axis=1, keepdims=True)

    centered = np.eye(num_classes) - 1.0 / num_classes
    _, _, vt = np.linalg.svd(centered)
    vertices = centered @ vt[:simplex_dim].T
    vertices *= radius / np.linalg.norm(vertices, axis=1, keepdims=True)
    basis, _ = np.linalg.qr(rng.standard_normal((feature_dim, simplex_dim)))
    return vertices @ basis.T


def _shift_direction(means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    direction = rng.standard_normal(means.shape[0]) @ means
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        direction = rng.standard_normal(means.shape[1])
        norm = np.linalg.norm(direction)
    return direction / norm


def _sample(means: np.ndarray, n: int, offset: np.ndarray, scale: float,
            rng: np.random.Generator) -> LabeledFeatures:
    labels = rng.integers(means.shape[0], size=n)
    noise = rng.standard_normal((n, means.shape[1]))
    return LabeledFeatures(means[labels] + offset + scale * noise, labels)


def generate_shift_benchmark(num_classes: int = DEFAULT_BENCHMARK_CLASSES,
                             feature_dim: int = DEFAULT_BENCHMARK_DIM,
                             n: int = DEFAULT_BENCHMARK_N,
                             shift_magnitude: float = DEFAULT_SHIFT,
                             seed: int = 0) -> ShiftBenchmark:
    """
    Generate a seeded shift benchmark.

    Args:
        num_classes: Number of classes (>= 2).
        feature_dim: Feature dimension (>= 1).
        n: Examples per split (>= 10).
        shift_magnitude: Out-of-domain translation length (>= 0).
        seed: Generator seed; the same arguments give a bit-identical result.

    Returns:
        ShiftBenchmark

    Raises:
        ValueError: On invalid sizes or a negative shift.
    """
    if num_classes < MIN_NUM_CLASSES:
        raise ValueError(f"num_classes must be >= {MIN_NUM_CLASSES}, got {num_classes}")
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    if n < MIN_SPLIT_SIZE:
        raise ValueError(f"n must be >= {MIN_SPLIT_SIZE} per split, got {n}")
    if not math.isfinite(shift_magnitude) or shift_magnitude < 0:
        raise ValueError(f"shift_magnitude must be a finite nonnegative number, got {shift_magnitude}")

    geometry, *streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
    means = _class_means(num_classes, feature_dim, DEFAULT_CLUSTER_RADIUS, geometry)
    direction = _shift_direction(means, geometry)

    no_offset = np.zeros(feature_dim)
    train_id, dev_id, test_id = (_sample(means, n, no_offset, 1.0, rng) for rng in streams[:3])
    test_ood = _sample(means, n, shift_magnitude * direction,
                       1.0 + DEFAULT_COVARIANCE_INFLATION * shift_magnitude, streams[3])

    means.setflags(write=False)
    direction.setflags(write=False)
    logger.debug("Generated benchmark seed=%d classes=%d dim=%d n=%d shift=%g",
                 seed, num_classes, feature_dim, n, shift_magnitude)
    return ShiftBenchmark(train_id, dev_id, test_id, test_ood, seed, float(shift_magnitude),
                          means, direction)


def write_features_csv(data: LabeledFeatures, path: Union[str, Path]) -> None:
    """
    Write a feature split as CSV with columns ``f_0..f_{d-1},label``.

    Args:
        data: The split to write.
        path: Destination file.
    """
    with Path(path).open('w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow([f"f_{i}" for i in range(data.feature_dim)] + ['label'])
        for row, label in zip(data.features, data.labels):
            writer.writerow([format(float(v), ROUND_TRIP_FORMAT) for v in row] + [int(label)])


class Setting(str, Enum):
    """Whether the reported calibration uses post-processing."""

    OUT_OF_THE_BOX = 'out-of-the-box'
    TEMPERATURE_SCALED = 'temperature-scaled'


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one seeded MLE-vs-LS run depends on, apart from the seed.

    Attributes:
        num_classes: Benchmark classes.
        feature_dim: Benchmark feature dimension.
        n: Examples per split.
        shift_magnitude: Out-of-domain shift.
        alpha: Label-smoothing mass for the LS model.
        epochs: Training epochs.
        batch_size: Training minibatch size.
        learning_rate: Training step size.
        bin_spec: Binning for every ECE.
        grid: Temperature grid for every fit.
    """
    num_classes: int = DEFAULT_BENCHMARK_CLASSES
    feature_dim: int = DEFAULT_BENCHMARK_DIM
    n: int = DEFAULT_BENCHMARK_N
    shift_magnitude: float = DEFAULT_SHIFT
    alpha: float = DEFAULT_ALPHA
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    bin_spec: BinSpec = field(default_factory=BinSpec)
    grid: SearchGrid = field(default_factory=SearchGrid)


@dataclass(frozen=True)
class SummaryRow:
    """One (seed, model, setting) line of the benchmark summary."""
    seed: int
    model: str
    setting: Setting
    id_accuracy: float
    id_ece: float
    ood_accuracy: float
    ood_ece: float
    temperature: float
    dev_accuracy: float
    dev_ece: float
    oracle_t_id: float
    oracle_t_ood: float


@dataclass(frozen=True)
class ModelRun:
    """
    One trained model and everything derived from its cached logits.

    Attributes:
        name: ``'mle'`` or ``'ls'``.
        training: Trained parameters and per-epoch losses.
        prediction_sets: Cached logits on all four splits (see ``CACHED_SPLITS``).
        dev_fit: Temperature fitted on the dev split (the reported one).
        oracle_fits: Temperatures fitted directly on each test split.
    """
    name: str
    training: TrainingResult
    prediction_sets: Dict[str, PredictionSet]
    dev_fit: TemperatureFit
    oracle_fits: Dict[str, TemperatureFit]

    def rows(self, seed: int, bin_spec: BinSpec) -> Tuple[SummaryRow, ...]:
        rows = []
        for setting, t in ((Setting.OUT_OF_THE_BOX, 1.0), (Setting.TEMPERATURE_SCALED, self.dev_fit.temperature)):
            results: Dict[str, EvaluationResult] = {
                split: evaluate(self.prediction_sets[split], t, bin_spec) for split in EVALUATED_SPLITS
            }
            rows.append(SummaryRow(
                seed, self.name, setting,
                results['test_id'].accuracy, results['test_id'].ece,
                results['test_ood'].accuracy, results['test_ood'].ece,
                t, results['dev_id'].accuracy, results['dev_id'].ece,
                self.oracle_fits['test_id'].temperature, self.oracle_fits['test_ood'].temperature,
            ))
        return tuple(rows)


@dataclass(frozen=True)
class ExperimentResult:
    """Both models of one seed plus their summary rows."""
    seed: int
    benchmark: ShiftBenchmark
    runs: Tuple[ModelRun, ...]
    rows: Tuple[SummaryRow, ...]


def _run_model(benchmark: ShiftBenchmark, objective: TrainingObjective,
               config: ExperimentConfig, seed: int) -> ModelRun:
    initial = LinearSoftmaxModel.init(benchmark.num_classes, benchmark.feature_dim, seed)
    train_config = TrainConfig(config.epochs, config.batch_size, config.learning_rate, seed)
    result = train(initial, benchmark.train_id, objective, train_config)

    prediction_sets = {split: result.model.predict_set(getattr(benchmark, split), tag)
                       for split, tag in CACHED_SPLITS.items()}
    ece_objective = Objective(bin_spec=config.bin_spec)
    dev_fit = fit_temperature(prediction_sets['dev_id'], config.grid, ece_objective)
    oracle_fits = {split: fit_temperature(prediction_sets[split], config.grid, ece_objective)
                   for split in ('test_id', 'test_ood')}
    return ModelRun(objective.name, result, prediction_sets, dev_fit, oracle_fits)


def run_experiment(seed: int, config: ExperimentConfig = ExperimentConfig()) -> ExperimentResult:
    """
    Generate a benchmark, train MLE and LS, and calibrate both.

    Both models start from the same initial parameters and see the same
    minibatch order; only the training target differs. Each model's T is
    fitted on the dev split with the ECE objective and then applied to the
    in-domain and out-of-domain test splits.

    Args:
        seed: Seed for the benchmark, the initialization and the shuffles.
        config: Sizes, training and calibration settings.

    Returns:
        ExperimentResult with four summary rows (MLE/LS x out-of-the-box /
        temperature-scaled).

    Raises:
        TrainingDivergenceError: If either model diverges.
    """
    benchmark = generate_shift_benchmark(config.num_classes, config.feature_dim, config.n,
                                         config.shift_magnitude, seed)
    runs = tuple(_run_model(benchmark, objective, config, seed)
                 for objective in (TrainingObjective.mle(), TrainingObjective.label_smoothing(config.alpha)))
    rows = tuple(row for run in runs for row in run.rows(seed, config.bin_spec))
    logger.info("Seed %d done: %s", seed,
                ", ".join(f"{r.model}/{r.setting.value} ood_ece={r.ood_ece:.4f}" for r in rows))
    return ExperimentResult(seed, benchmark, runs, rows)
