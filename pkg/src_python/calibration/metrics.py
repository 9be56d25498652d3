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
Calibration metrics: confidence binning, expected calibration error and
reliability-diagram tables.

Predictions are grouped into k bins by confidence. For every bin we keep the
count b_k, the mean member confidence conf(k) and the empirical accuracy
acc(k). The expected calibration error is

    ECE = sum_k (b_k / n) * |acc(k) - conf(k)|

over the non-empty bins.

Equal-width bins are [(i-1)/k, i/k) for i = 1..k, with the last bin closed at
1.0. A confidence lying exactly on an interior boundary goes to the higher
bin. Equal-mass bins hold ceil/floor(n/k) predictions each, filled in order of
increasing confidence.

Per-bin sums use ``math.fsum`` (exactly rounded), so reordering the input
changes neither the bin statistics nor the ECE.
"""

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

# Handle both relative imports (when used as a module) and absolute imports (when run as script,
# or when imported by another module that was run as a script)
if not __package__:
    from constants import DEFAULT_NUM_BINS, REPORT_FORMAT
    from numerics import ConfidenceOutcome, OutcomeBatch, confidence_outcomes
else:
    from .constants import DEFAULT_NUM_BINS, REPORT_FORMAT
    from .numerics import ConfidenceOutcome, OutcomeBatch, confidence_outcomes

RELIABILITY_HEADER = ('bin_lo', 'bin_hi', 'count', 'avg_confidence', 'accuracy', 'gap')

Outcomes = Union[Sequence[ConfidenceOutcome], OutcomeBatch]


class BinScheme(str, Enum):
    """How confidence bins are laid out."""

    EQUAL_WIDTH = 'equal-width'
    EQUAL_MASS = 'equal-mass'


@dataclass(frozen=True)
class BinSpec:
    """
    Binning configuration.

    Attributes:
        num_bins: Number of bins k (>= 1).
        scheme: Equal-width over [0, 1] or equal-mass (equal counts).
    """
    num_bins: int = DEFAULT_NUM_BINS
    scheme: BinScheme = BinScheme.EQUAL_WIDTH

    def __post_init__(self):
        if isinstance(self.num_bins, bool) or not isinstance(self.num_bins, (int, np.integer)) \
                or self.num_bins < 1:
            raise ValueError(f"num_bins must be a positive integer, got {self.num_bins!r}")
        object.__setattr__(self, 'scheme', BinScheme(self.scheme))

    def edges(self) -> np.ndarray:
        """Equal-width bin edges i/k for i = 0..k."""
        return np.arange(self.num_bins + 1, dtype=np.float64) / self.num_bins


@dataclass(frozen=True)
class BinStats:
    """
    Statistics of one confidence bin.

    Empty bins keep their boundaries and a zero count; their confidence,
    accuracy and gap are None and they carry no weight in the ECE.

    Equal-width bins always have lo < hi. Equal-mass bins only guarantee
    lo <= hi: an empty bin (more bins than predictions) collapses onto the
    previous upper bound, and so does a bin whose members all tie with the
    previous bin's largest confidence.

    Attributes:
        lo: Lower boundary.
        hi: Upper boundary.
        count: Number of predictions b_k in the bin.
        mean_confidence: conf(k), the mean member confidence.
        accuracy: acc(k), the fraction of members predicted correctly.
        gap: |acc(k) - conf(k)|.
    """
    lo: float
    hi: float
    count: int
    mean_confidence: Optional[float] = None
    accuracy: Optional[float] = None
    gap: Optional[float] = None

    @property
    def is_empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True)
class ReliabilityTable:
    """
    Per-bin calibration statistics: the data behind a reliability diagram.

    Attributes:
        spec: The binning used.
        bins: Exactly ``spec.num_bins`` rows, empty bins included.
        total: Number of predictions n; equals the sum of bin counts.
    """
    spec: BinSpec
    bins: Tuple[BinStats, ...]
    total: int
    _confidence_sum: float = field(default=0.0, repr=False, compare=False)
    _correct_count: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if sum(b.count for b in self.bins) != self.total:
            raise ValueError("bin counts must add up to the total number of predictions")

    @property
    def non_empty_bins(self) -> Tuple[BinStats, ...]:
        return tuple(b for b in self.bins if not b.is_empty)

    @property
    def mean_confidence(self) -> float:
        """Mean confidence over all predictions."""
        return self._confidence_sum / self.total

    @property
    def accuracy(self) -> float:
        """Overall accuracy over all predictions."""
        return self._correct_count / self.total


def _as_batch(outcomes: Outcomes) -> OutcomeBatch:
    if isinstance(outcomes, OutcomeBatch):
        return outcomes
    outcomes = list(outcomes)
    return OutcomeBatch(
        np.array([o.predicted_label for o in outcomes], dtype=np.int64),
        np.array([o.confidence for o in outcomes], dtype=np.float64),
        np.array([o.correct for o in outcomes], dtype=bool),
    )


def assign_bins(confidence: np.ndarray, correct: np.ndarray, spec: BinSpec) -> np.ndarray:
    """
    Bin index of every prediction.

    Args:
        confidence: (n,) confidences in (0, 1].
        correct: (n,) correctness flags (orders ties under equal-mass).
        spec: Binning configuration.

    Returns:
        (n,) integer array with values in [0, num_bins).
    """
    k = spec.num_bins
    if spec.scheme is BinScheme.EQUAL_WIDTH:
        return np.searchsorted(spec.edges()[1:-1], confidence, side='right')

    # Sort on (confidence, correct) so tied confidences are ordered the same
    # way whatever the input order.
    order = np.lexsort((correct, confidence))
    ranks = np.empty_like(order)
    ranks[order] = np.arange(order.shape[0])
    n = order.shape[0]
    # Bin i holds ranks [start_i, start_{i+1}), sizes as in np.array_split.
    base, extra = divmod(n, k)
    sizes = np.full(k, base, dtype=np.int64)
    sizes[:extra] += 1
    starts = np.cumsum(sizes)[:-1]
    return np.searchsorted(starts, ranks, side='right')


def _equal_mass_bounds(confidence: np.ndarray, bin_index: np.ndarray, k: int):
    bounds = []
    lo = 0.0
    for i in range(k):
        members = confidence[bin_index == i]
        if members.size:
            hi = 1.0 if i == k - 1 else float(members.max())
        else:
            hi = 1.0 if i == k - 1 else lo
        bounds.append((lo, hi))
        lo = hi
    return bounds


def reliability_table(outcomes: Outcomes, spec: BinSpec = BinSpec()) -> ReliabilityTable:
    """
    Bin confidence outcomes and compute per-bin statistics.

    Args:
        outcomes: Non-empty list of ``ConfidenceOutcome`` or an ``OutcomeBatch``.
        spec: Binning configuration.

    Returns:
        ReliabilityTable with exactly ``spec.num_bins`` rows.

    Raises:
        ValueError: If there are no outcomes or a confidence lies outside (0, 1].
    """
    batch = _as_batch(outcomes)
    n = batch.size
    if n == 0:
        raise ValueError("reliability_table needs at least one outcome")
    confidence = np.asarray(batch.confidence, dtype=np.float64)
    correct = np.asarray(batch.correct, dtype=bool)
    if np.any(confidence <= 0.0) or np.any(confidence > 1.0):
        raise ValueError("confidences must lie in (0, 1]")

    k = spec.num_bins
    bin_index = assign_bins(confidence, correct, spec)
    counts = np.bincount(bin_index, minlength=k)
    correct_counts = np.bincount(bin_index, weights=correct.astype(np.float64), minlength=k)

    # Group confidences by bin for exactly rounded per-bin sums.
    grouped = confidence[np.argsort(bin_index, kind='stable')]
    chunks = np.split(grouped, np.cumsum(counts)[:-1])
    confidence_sums = [math.fsum(chunk.tolist()) for chunk in chunks]

    if spec.scheme is BinScheme.EQUAL_WIDTH:
        edges = spec.edges()
        bounds = [(float(edges[i]), float(edges[i + 1])) for i in range(k)]
    else:
        bounds = _equal_mass_bounds(confidence, bin_index, k)

    bins = []
    for i in range(k):
        count = int(counts[i])
        lo, hi = bounds[i]
        if count == 0:
            bins.append(BinStats(lo, hi, 0))
            continue
        conf = confidence_sums[i] / count
        acc = float(correct_counts[i]) / count
        bins.append(BinStats(lo, hi, count, conf, acc, abs(acc - conf)))

    return ReliabilityTable(spec, tuple(bins), n,
                            _confidence_sum=math.fsum(confidence_sums),
                            _correct_count=int(correct.sum()))


def ece(table: ReliabilityTable) -> float:
    """
    Expected calibration error of a reliability table.

    Args:
        table: Output of ``reliability_table``.

    Returns:
        sum over non-empty bins of (b_k / n) * gap_k, in [0, 1].
    """
    return math.fsum((b.count / table.total) * b.gap for b in table.non_empty_bins)


def accuracy(outcomes: Outcomes) -> float:
    """
    Fraction of correct predictions.

    Raises:
        ValueError: If there are no outcomes.
    """
    batch = _as_batch(outcomes)
    if batch.size == 0:
        raise ValueError("accuracy needs at least one outcome")
    return int(np.count_nonzero(batch.correct)) / batch.size


class EvaluationResult(NamedTuple):
    """Result of ``evaluate``; unpacks as (accuracy, ece, table)."""
    accuracy: float
    ece: float
    table: ReliabilityTable


def evaluate(prediction_set, temperature: float = 1.0, spec: BinSpec = BinSpec()) -> EvaluationResult:
    """
    Accuracy, ECE and reliability table of a prediction set at temperature T.

    T = 1 is the out-of-the-box setting (no post-processing).

    Args:
        prediction_set: A ``PredictionSet``.
        temperature: T > 0 applied to the cached logits.
        spec: Binning configuration.

    Returns:
        EvaluationResult
    """
    batch = confidence_outcomes(prediction_set, temperature)
    table = reliability_table(batch, spec)
    return EvaluationResult(accuracy(batch), ece(table), table)


def _format_stat(value: Optional[float]) -> str:
    return '' if value is None else format(value, REPORT_FORMAT)


def reliability_rows(table: ReliabilityTable):
    """CSV rows (header first) for a reliability table."""
    yield list(RELIABILITY_HEADER)
    for b in table.bins:
        yield [format(b.lo, REPORT_FORMAT), format(b.hi, REPORT_FORMAT), str(b.count),
               _format_stat(b.mean_confidence), _format_stat(b.accuracy), _format_stat(b.gap)]


def write_reliability_csv(table: ReliabilityTable, path: Union[str, Path]) -> None:
    """
    Export a reliability table as CSV.

    One row per bin, empty bins included with count 0 and empty statistics.

    Args:
        table: The table to export.
        path: Destination file.
    """
    with Path(path).open('w', encoding='utf-8', newline='') as f:
        csv.writer(f, lineterminator='\n').writerows(reliability_rows(table))


# Example usage and testing
if __name__ == "__main__":
    print("Testing calibration metrics...\n")

    demo = [
        ConfidenceOutcome(0, 0.95, True),
        ConfidenceOutcome(0, 0.85, True),
        ConfidenceOutcome(1, 0.85, False),
        ConfidenceOutcome(2, 0.55, True),
    ]
    table = reliability_table(demo, BinSpec(10))
    for b in table.non_empty_bins:
        print(f"  [{b.lo:.1f}, {b.hi:.1f}): count={b.count} conf={b.mean_confidence:.2f} acc={b.accuracy:.2f}")
    print(f"  ECE = {ece(table):.4f} (expected 0.3000)")
    print(f"  accuracy = {accuracy(demo):.4f}")
    print("\nCalibration metrics test completed successfully!")
