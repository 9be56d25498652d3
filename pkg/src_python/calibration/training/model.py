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
Desk-scale linear softmax classifier trained by minibatch gradient descent.

The model stands in for a fine-tuned classifier: it is trained under MLE
(alpha = 0) or label smoothing, and its logits are then cached in a
``PredictionSet`` and calibrated like any other model's.

Training is plain minibatch gradient descent on the mean smoothed loss, with
no momentum, weight decay or clipping. Runs are single-threaded and fully
determined by the seed.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from ..constants import (DEFAULT_ALPHA, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_INIT_SCALE,
                         DEFAULT_LEARNING_RATE, ROUND_TRIP_FORMAT)
from ..numerics import softmax_rows
from ..prediction_store import LabelSpace, PredictionSet, SplitTag
from .smoothing import SmoothingConfig, batch_loss, smooth_target_matrix

logger = logging.getLogger(__name__)


class TrainingDivergenceError(RuntimeError):
    """The training loss or the parameters became non-finite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}: mean loss {loss}")

    def __reduce__(self):
        # Raised inside benchmark worker processes.
        return (type(self), (self.epoch, self.loss))


@dataclass(frozen=True)
class LabeledFeatures:
    """
    A labeled feature dataset.

    Attributes:
        features: (n, feature_dim) float64 matrix.
        labels: (n,) integer gold labels.
    """
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, 'features', x)
        object.__setattr__(self, 'labels', y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledFeatures):
            return NotImplemented
        return np.array_equal(self.features, other.features) and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class LinearSoftmaxModel:
    """
    Multinomial logistic regression: logits = W x + b.

    Attributes:
        weights: (num_classes, feature_dim) matrix W.
        bias: (num_classes,) vector b.
    """
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"weights {w.shape} and bias {b.shape} do not line up")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, 'weights', w)
        object.__setattr__(self, 'bias', b)

    @classmethod
    def init(cls, num_classes: int, feature_dim: int, seed: int,
             scale: float = DEFAULT_INIT_SCALE) -> 'LinearSoftmaxModel':
        """Small seeded Gaussian weights and zero bias."""
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((num_classes, feature_dim)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        """(n, num_classes) logits for an (n, feature_dim) feature matrix."""
        return features @ self.weights.T + self.bias

    def predict_set(self, data: LabeledFeatures, split_tag: SplitTag) -> PredictionSet:
        """Cache this model's logits on ``data`` as a prediction set."""
        return PredictionSet(LabelSpace(self.num_classes), self.logits(data.features), data.labels, split_tag)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearSoftmaxModel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(self.bias, other.bias)


@dataclass(frozen=True)
class TrainingObjective:
    """
    MLE or label smoothing with a given alpha.

    Attributes:
        alpha: Smoothing mass; 0 means MLE.
    """
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")

    @classmethod
    def mle(cls) -> 'TrainingObjective':
        return cls(0.0)

    @classmethod
    def label_smoothing(cls, alpha: float = DEFAULT_ALPHA) -> 'TrainingObjective':
        return cls(alpha)

    @property
    def name(self) -> str:
        return 'mle' if self.alpha == 0.0 else 'ls'


@dataclass(frozen=True)
class TrainConfig:
    """
    Gradient-descent settings.

    Attributes:
        epochs: Passes over the training data.
        batch_size: Minibatch size; >= n means full-batch descent.
        learning_rate: Step size (> 0).
        seed: Seed for the per-epoch shuffles.
    """
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not math.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class TrainingResult:
    """
    A trained model and its per-epoch mean training loss.

    ``epoch_losses[i]`` is the mean loss over the whole training set after
    epoch i + 1.
    """
    model: LinearSoftmaxModel
    epoch_losses: Tuple[float, ...] = field(default_factory=tuple)


def mean_loss(model: LinearSoftmaxModel, data: LabeledFeatures, smoothing: SmoothingConfig) -> float:
    """Mean smoothed loss of ``model`` over ``data``."""
    targets = smooth_target_matrix(data.labels, smoothing)
    return float(np.mean(batch_loss(model.logits(data.features), targets)))


def train(model: LinearSoftmaxModel, data: LabeledFeatures, objective: TrainingObjective,
          config: TrainConfig = TrainConfig()) -> TrainingResult:
    """
    Train a linear softmax model by seeded minibatch gradient descent.

    Each epoch shuffles the data with the config's seed stream and takes one
    step per minibatch on the mean smoothed loss. The gradient with respect
    to the logits is softmax(z) - q, giving dW = G^T X / m and db = sum(G) / m.

    Args:
        model: Starting parameters.
        data: Training data with matching feature dimension.
        objective: MLE or label smoothing.
        config: Gradient-descent settings.

    Returns:
        TrainingResult with the final-epoch model and per-epoch losses.

    Raises:
        ValueError: On mismatched dimensions or an out-of-range label.
        TrainingDivergenceError: If the loss or parameters become non-finite.
    """
    if data.feature_dim != model.feature_dim:
        raise ValueError(f"feature_dim mismatch: data {data.feature_dim} vs model {model.feature_dim}")
    if len(data) == 0:
        raise ValueError("training data is empty")
    if np.any(data.labels < 0) or np.any(data.labels >= model.num_classes):
        raise ValueError("training labels out of range")

    smoothing = SmoothingConfig(model.num_classes, objective.alpha)
    targets = smooth_target_matrix(data.labels, smoothing)
    x = data.features
    n = len(data)
    rng = np.random.default_rng(config.seed)
    weights = model.weights.copy()
    bias = model.bias.copy()

    losses = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            xb = x[batch]
            grad = (softmax_rows(xb @ weights.T + bias) - targets[batch]) / batch.shape[0]
            weights -= config.learning_rate * (grad.T @ xb)
            bias -= config.learning_rate * grad.sum(axis=0)

        loss = float(np.mean(batch_loss(x @ weights.T + bias, targets)))
        if not math.isfinite(loss) or not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            logger.error("Training diverged at epoch %d (loss %s)", epoch, loss)
            raise TrainingDivergenceError(epoch, loss)
        losses.append(loss)
        logger.debug("epoch %d/%d %s loss %.6f", epoch, config.epochs, objective.name, loss)

    return TrainingResult(LinearSoftmaxModel(weights, bias), tuple(losses))


def save_model(model: LinearSoftmaxModel, path: Union[str, Path], seed: Optional[int] = None) -> None:
    """
    Write parameters as a flat CSV: weights row-major, then bias.

    The first line is a header ``# num_classes=K feature_dim=D seed=S``.

    Args:
        model: The model to save.
        path: Destination file.
        seed: Seed recorded in the header (``none`` when not given).
    """
    with Path(path).open('w', encoding='utf-8', newline='') as f:
        f.write(f"# num_classes={model.num_classes} feature_dim={model.feature_dim} "
                f"seed={'none' if seed is None else seed}\n")
        writer = csv.writer(f, lineterminator='\n')
        for value in np.concatenate([model.weights.ravel(), model.bias]):
            writer.writerow([format(float(value), ROUND_TRIP_FORMAT)])


def load_model(path: Union[str, Path]) -> LinearSoftmaxModel:
    """Read parameters written by ``save_model``."""
    with Path(path).open('r', encoding='utf-8') as f:
        header = f.readline()
        if not header.startswith('#'):
            raise ValueError(f"{path}: missing parameter header")
        fields = dict(item.split('=', 1) for item in header[1:].split())
        k, d = int(fields['num_classes']), int(fields['feature_dim'])
        values = np.array([float(line) for line in f if line.strip()], dtype=np.float64)
    if values.shape[0] != k * d + k:
        raise ValueError(f"{path}: expected {k * d + k} parameters, got {values.shape[0]}")
    return LinearSoftmaxModel(values[:k * d].reshape(k, d), values[k * d:])
