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
Numerically stable probability kernels.

All log-domain quantities come from log-softmax (max-subtracted
log-sum-exp) rather than from exponentiated probabilities, so logits with
magnitudes in the thousands neither overflow nor produce NaN. Everything is
float64.

Argmax ties are broken by the lowest class index (numpy's argmax rule).
"""

from typing import NamedTuple

import numpy as np
from scipy import special

# Handle both relative imports (when used as a module) and absolute imports (when run as script,
# or when imported by another module that was run as a script)
if not __package__:
    from constants import PROBABILITY_SUM_TOLERANCE
else:
    from .constants import PROBABILITY_SUM_TOLERANCE

# Smallest positive float64; -log of it is ~744.4, still finite.
_SMALLEST_PROBABILITY = np.nextafter(0.0, 1.0)


class ConfidenceOutcome(NamedTuple):
    """
    A single prediction reduced to what calibration needs.

    Attributes:
        predicted_label: Argmax class (lowest index on ties).
        confidence: Probability of the predicted class, in (0, 1].
        correct: Whether the prediction matches the gold label.
    """
    predicted_label: int
    confidence: float
    correct: bool


class OutcomeBatch(NamedTuple):
    """Column-wise confidence outcomes for a whole prediction set."""
    predicted_label: np.ndarray
    confidence: np.ndarray
    correct: np.ndarray

    @property
    def size(self) -> int:
        return int(self.confidence.shape[0])

    def outcomes(self):
        """Row-wise ``ConfidenceOutcome`` list."""
        return [ConfidenceOutcome(int(p), float(c), bool(k))
                for p, c, k in zip(self.predicted_label, self.confidence, self.correct)]


def _as_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ValueError(f"logits must be a vector of length >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"logits must be finite, got {z}")
    return z


def _check_temperature(temperature: float) -> float:
    t = float(temperature)
    if not np.isfinite(t) or t <= 0:
        raise ValueError(f"temperature must be a finite positive number, got {temperature}")
    return t


def validate_probability_vector(probs, tolerance: float = PROBABILITY_SUM_TOLERANCE) -> np.ndarray:
    """
    Check that a vector is a probability distribution.

    Args:
        probs: Candidate vector.
        tolerance: Allowed deviation of the sum from 1.

    Returns:
        The vector as a float64 array.

    Raises:
        ValueError: If an entry is outside [0, 1] or the sum is off by more
            than ``tolerance``.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 1:
        raise ValueError(f"probability vector must be one-dimensional, got shape {p.shape}")
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise ValueError(f"probability entries must lie in [0, 1], got {p}")
    if abs(p.sum() - 1.0) > tolerance:
        raise ValueError(f"probabilities must sum to 1, got {p.sum()!r}")
    return p


def softmax(logits) -> np.ndarray:
    """
    Stable softmax of a logit vector.

    Args:
        logits: Finite real vector, length >= 2.

    Returns:
        Probability vector of the same length.

    Example:
        >>> softmax([2.0, 1.0, 0.0]).round(5)
        array([0.66524, 0.24473, 0.09003])
    """
    return special.softmax(_as_logits(logits))


def log_softmax(logits) -> np.ndarray:
    """Stable log-softmax of a logit vector."""
    return special.log_softmax(_as_logits(logits))


def apply_temperature(logits, temperature: float) -> np.ndarray:
    """
    Divide logits by a temperature.

    Positive scaling never changes the argmax. As T goes to 0 the softmax
    concentrates on the mode; as T grows it approaches uniform.

    Args:
        logits: Finite real vector.
        temperature: T > 0.

    Returns:
        z / T elementwise.
    """
    return _as_logits(logits) / _check_temperature(temperature)


def one_hot(label: int, num_classes: int) -> np.ndarray:
    """One-hot vector for ``label``."""
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for {num_classes} classes")
    target = np.zeros(num_classes, dtype=np.float64)
    target[label] = 1.0
    return target


def nll(probs, gold_label: int) -> float:
    """
    Negative log-likelihood of the gold label.

    A probability that underflowed to zero is read as the smallest positive
    float64, so the result stays finite. Prefer ``nll_from_logits`` when the
    logits are available.

    Args:
        probs: Probability vector.
        gold_label: Gold class index.

    Returns:
        -log(probs[gold_label])
    """
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= gold_label < p.shape[0]:
        raise ValueError(f"gold_label {gold_label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(p[gold_label], _SMALLEST_PROBABILITY)))


def nll_from_logits(logits, gold_label: int) -> float:
    """-log softmax(logits)[gold_label], computed in the log domain."""
    log_p = log_softmax(logits)
    if not 0 <= gold_label < log_p.shape[0]:
        raise ValueError(f"gold_label {gold_label} out of range for {log_p.shape[0]} classes")
    return float(-log_p[gold_label])


def kl_divergence(target, probs) -> float:
    """
    KL(target || probs) with 0 * log 0 taken as 0.

    Args:
        target: Reference distribution.
        probs: Model distribution with strictly positive entries.

    Returns:
        Nonnegative divergence.
    """
    q = np.asarray(target, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"mismatched lengths: target {q.shape} vs probs {p.shape}")
    return max(float(special.rel_entr(q, p).sum()), 0.0)


def entropy(probs) -> float:
    """Shannon entropy in nats; 0 for one-hot, log(K) for uniform."""
    p = np.asarray(probs, dtype=np.float64)
    return max(float(special.entr(p).sum()), 0.0)


def confidence_outcome(record, temperature: float = 1.0) -> ConfidenceOutcome:
    """
    Reduce one prediction record to (predicted label, confidence, correct).

    Args:
        record: A ``PredictionRecord``.
        temperature: T > 0 applied before the softmax.

    Returns:
        ConfidenceOutcome
    """
    z = _as_logits(record.logits)
    probs = special.softmax(z / _check_temperature(temperature))
    predicted = int(np.argmax(z))
    return ConfidenceOutcome(predicted, float(probs[predicted]), predicted == record.gold_label)


def softmax_rows(logits_matrix: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of an (n, K) matrix."""
    return special.softmax(logits_matrix, axis=1)


def log_softmax_rows(logits_matrix: np.ndarray) -> np.ndarray:
    """Row-wise stable log-softmax of an (n, K) matrix."""
    return special.log_softmax(logits_matrix, axis=1)


def confidence_outcomes(prediction_set, temperature: float = 1.0) -> OutcomeBatch:
    """
    Batch version of ``confidence_outcome`` over a whole prediction set.

    Reuses the set's cached logit matrix; only the division by T and the
    softmax are recomputed.

    Args:
        prediction_set: A ``PredictionSet``.
        temperature: T > 0.

    Returns:
        OutcomeBatch with one entry per record, in set order.
    """
    t = _check_temperature(temperature)
    z = prediction_set.logits_matrix()
    predicted = np.argmax(z, axis=1)
    probs = softmax_rows(z / t)
    confidence = probs[np.arange(z.shape[0]), predicted]
    return OutcomeBatch(predicted, confidence, predicted == prediction_set.labels())


# Example usage and testing
if __name__ == "__main__":
    print("Testing numerics kernels...\n")
    print(f"  softmax([2, 1, 0]) = {softmax([2.0, 1.0, 0.0])}")
    print(f"  softmax([2, 0] / 2) = {softmax(apply_temperature([2.0, 0.0], 2.0))}")
    print(f"  nll(p_gold = 0.5) = {nll([0.5, 0.5], 0):.5f}")
    print(f"  KL([0.9, 0.05, 0.05] || uniform) = {kl_divergence([0.9, 0.05, 0.05], [1 / 3] * 3):.5f}")
    print(f"  entropy([0.5, 0.25, 0.25]) = {entropy([0.5, 0.25, 0.25]):.5f}")
    print(f"  extreme logits nll = {nll_from_logits([1e4, -1e4], 1):.1f}")
    print("\nNumerics test completed successfully!")
