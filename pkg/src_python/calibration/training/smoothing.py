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
Label-smoothing targets and the smoothed training loss.

The smoothed target puts 1 - alpha on the gold label and alpha / (|Y| - 1) on
every other label; alpha = 0 gives the one-hot MLE target. With alpha = 0.1
and three classes, [1, 0, 0] becomes [0.9, 0.05, 0.05].

The loss is KL(target || softmax(z)). It differs from the cross-entropy
H(target, softmax(z)) only by the entropy of the target, which does not
depend on z, so both have the same gradient softmax(z) - target.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..constants import DEFAULT_ALPHA, MIN_NUM_CLASSES, TARGET_SUM_TOLERANCE
from ..numerics import log_softmax, log_softmax_rows, softmax


@dataclass(frozen=True)
class SmoothingConfig:
    """
    Label-smoothing parameters.

    Attributes:
        num_classes: |Y| >= 2.
        alpha: Smoothing mass in [0, 1); 0 is plain MLE.
    """
    num_classes: int
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.num_classes < MIN_NUM_CLASSES:
            raise ValueError(f"num_classes must be >= {MIN_NUM_CLASSES}, got {self.num_classes}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")

    @property
    def off_value(self) -> float:
        """Mass on each non-gold label."""
        return self.alpha / (self.num_classes - 1)

    @property
    def on_value(self) -> float:
        """Mass on the gold label."""
        return 1.0 - self.alpha


@dataclass(frozen=True, eq=False)
class TargetDistribution:
    """
    A per-example training target.

    Attributes:
        target: Probability vector q over the label space.
    """
    target: np.ndarray

    def __post_init__(self):
        q = np.array(self.target, dtype=np.float64)
        if q.ndim != 1 or np.any(q < 0.0) or abs(q.sum() - 1.0) > TARGET_SUM_TOLERANCE:
            raise ValueError(f"target must be a probability vector, got {self.target}")
        q.setflags(write=False)
        object.__setattr__(self, 'target', q)

    @property
    def num_classes(self) -> int:
        return self.target.shape[0]


def smooth_targets(gold_label: int, config: SmoothingConfig) -> TargetDistribution:
    """
    Label-smoothed target for one example.

    Args:
        gold_label: Gold class index.
        config: Smoothing parameters.

    Returns:
        TargetDistribution with 1 - alpha on the gold label and
        alpha / (|Y| - 1) elsewhere.
    """
    if not 0 <= gold_label < config.num_classes:
        raise ValueError(f"gold_label {gold_label} out of range for {config.num_classes} classes")
    q = np.full(config.num_classes, config.off_value, dtype=np.float64)
    q[gold_label] = config.on_value
    return TargetDistribution(q)


def smooth_target_matrix(labels: np.ndarray, config: SmoothingConfig) -> np.ndarray:
    """(n, |Y|) matrix whose rows are the smoothed targets of ``labels``."""
    q = np.full((labels.shape[0], config.num_classes), config.off_value, dtype=np.float64)
    q[np.arange(labels.shape[0]), labels] = config.on_value
    return q


def _check_arity(logits: np.ndarray, target: TargetDistribution):
    if logits.shape[-1] != target.num_classes:
        raise ValueError(
            f"mismatched lengths: {logits.shape[-1]} logits vs {target.num_classes} target entries"
        )


def smoothed_loss(logits, target: TargetDistribution) -> float:
    """
    KL(target || softmax(logits)), computed in the log domain.

    Args:
        logits: Real vector.
        target: Training target of the same length.

    Returns:
        Nonnegative loss; equals the NLL of the gold label when alpha = 0.
    """
    z = np.asarray(logits, dtype=np.float64)
    _check_arity(z, target)
    q = target.target
    return max(float(np.sum(special.xlogy(q, q) - q * log_softmax(z))), 0.0)


def loss_gradient(logits, target: TargetDistribution) -> np.ndarray:
    """
    Gradient of ``smoothed_loss`` with respect to the logits.

    Returns:
        softmax(logits) - target; the components sum to zero.
    """
    z = np.asarray(logits, dtype=np.float64)
    _check_arity(z, target)
    return softmax(z) - target.target


def batch_loss(logits_matrix: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row smoothed loss for an (n, K) logit matrix and (n, K) targets."""
    return np.sum(special.xlogy(targets, targets) - targets * log_softmax_rows(logits_matrix), axis=1)
