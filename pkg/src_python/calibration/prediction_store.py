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
Prediction logs: data model, ingestion, writing and dev-set halving.

A prediction log stores one example per row: the model's raw (non-normalized)
logit vector and the gold label index. Logits rather than probabilities are
the stored quantity because temperature scaling works by rescaling cached
logits; probabilities are always derived.

Two file formats are supported:

- ``jsonl``: one object per line with exactly the keys ``"logits"`` (array of
  finite numbers) and ``"label"`` (integer).
- ``csv``: header ``logit_0,...,logit_{K-1},label`` followed by one row per
  example.
"""

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

# Handle both relative imports (when used as a module) and absolute imports (when run as script,
# or when imported by another module that was run as a script)
if not __package__:
    from constants import (MIN_NUM_CLASSES, MAX_NUM_CLASSES, MAX_RECORDS,
                           ROUND_TRIP_FORMAT)
else:
    from .constants import (MIN_NUM_CLASSES, MAX_NUM_CLASSES, MAX_RECORDS,
                            ROUND_TRIP_FORMAT)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

JSONL_KEYS = frozenset({'logits', 'label'})


class SplitTag(str, Enum):
    """Which evaluation split a prediction set belongs to."""

    IN_DOMAIN_DEV = 'in-domain-dev'
    IN_DOMAIN_TEST = 'in-domain-test'
    OUT_OF_DOMAIN_TEST = 'out-of-domain-test'
    UNLABELED_SPLIT = 'unlabeled-split'


class FileFormat(str, Enum):
    """Supported prediction-log file formats."""

    JSONL = 'jsonl'
    CSV = 'csv'


class IngestError(ValueError):
    """
    A prediction file failed validation.

    Attributes:
        path: The offending file.
        line: 1-based line number of the offending row (0 when the problem
              concerns the file as a whole).
        reason: The message without the location prefix.
    """

    def __init__(self, path: PathLike, line: int, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        location = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{location}: {reason}")


@dataclass(frozen=True)
class LabelSpace:
    """
    The label set of a classification task.

    Attributes:
        num_classes: Number of classes |Y|; between 2 and MAX_NUM_CLASSES.
    """
    num_classes: int

    def __post_init__(self):
        if isinstance(self.num_classes, bool) or not isinstance(self.num_classes, (int, np.integer)):
            raise ValueError(f"num_classes must be an integer, got {self.num_classes!r}")
        if not MIN_NUM_CLASSES <= self.num_classes <= MAX_NUM_CLASSES:
            raise ValueError(
                f"num_classes must be in [{MIN_NUM_CLASSES}, {MAX_NUM_CLASSES}], got {self.num_classes}"
            )

    def contains(self, label: int) -> bool:
        """Whether a label index lies in [0, num_classes)."""
        return 0 <= label < self.num_classes


@dataclass(frozen=True)
class PredictionRecord:
    """
    One example: the raw logit vector and the gold label index.

    Attributes:
        logits: Non-normalized scores, one per class.
        gold_label: Index of the gold class.
    """
    logits: Tuple[float, ...]
    gold_label: int

    @property
    def num_classes(self) -> int:
        return len(self.logits)


class PredictionSet:
    """
    An immutable, ordered collection of prediction records over one label space.

    Records are held as a read-only (n, K) float64 logit matrix plus an (n,)
    label vector, so batch kernels work on the cached arrays directly and the
    logits are never recomputed. ``records`` exposes the same data as
    ``PredictionRecord`` objects in file order.

    Attributes:
        label_space (LabelSpace): The shared label space.
        split_tag (SplitTag): Which evaluation split the set represents.
    """

    def __init__(self, label_space: LabelSpace, logits, labels, split_tag: SplitTag):
        """
        Build and validate a prediction set from arrays.

        Args:
            label_space: Label space every record must conform to.
            logits: Array-like of shape (n, num_classes).
            labels: Array-like of shape (n,) with integer gold labels.
            split_tag: The split this set represents.

        Raises:
            ValueError: If the set is empty, the shapes disagree, a logit is
                non-finite or a label is out of range.
        """
        matrix = np.array(logits, dtype=np.float64, copy=True)
        gold = np.array(labels, copy=True)

        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise ValueError("PredictionSet must contain at least one record")
        if matrix.shape[0] > MAX_RECORDS:
            raise ValueError(f"PredictionSet exceeds {MAX_RECORDS} records")
        if matrix.shape[1] != label_space.num_classes:
            raise ValueError(
                f"inconsistent logit arity: expected {label_space.num_classes}, got {matrix.shape[1]}"
            )
        if gold.shape != (matrix.shape[0],):
            raise ValueError(f"expected {matrix.shape[0]} labels, got shape {gold.shape}")
        if gold.dtype.kind not in 'iu':
            raise ValueError("gold labels must be integers")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("non-finite logit")
        if np.any(gold < 0) or np.any(gold >= label_space.num_classes):
            raise ValueError("gold_label out of range")

        matrix.setflags(write=False)
        gold = gold.astype(np.int64)
        gold.setflags(write=False)

        self.label_space = label_space
        self.split_tag = SplitTag(split_tag)
        self._logits = matrix
        self._labels = gold

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord], split_tag: SplitTag,
                     label_space: Optional[LabelSpace] = None) -> 'PredictionSet':
        """
        Build a set from record objects, inferring the label space if not given.

        Args:
            records: Non-empty sequence of records.
            split_tag: The split the set represents.
            label_space: Optional explicit label space.

        Returns:
            PredictionSet
        """
        if not records:
            raise ValueError("PredictionSet must contain at least one record")
        space = label_space or LabelSpace(records[0].num_classes)
        for index, record in enumerate(records):
            if record.num_classes != space.num_classes:
                raise ValueError(
                    f"inconsistent logit arity at record {index}: "
                    f"expected {space.num_classes}, got {record.num_classes}"
                )
        logits = [record.logits for record in records]
        labels = np.array([record.gold_label for record in records], dtype=np.int64)
        return cls(space, logits, labels, split_tag)

    @property
    def num_classes(self) -> int:
        return self.label_space.num_classes

    def __len__(self) -> int:
        return self._labels.shape[0]

    def __iter__(self) -> Iterator[PredictionRecord]:
        for row, label in zip(self._logits, self._labels):
            yield PredictionRecord(tuple(float(v) for v in row), int(label))

    def __getitem__(self, index: int) -> PredictionRecord:
        return PredictionRecord(tuple(float(v) for v in self._logits[index]), int(self._labels[index]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PredictionSet):
            return NotImplemented
        return (self.label_space == other.label_space
                and self.split_tag == other.split_tag
                and np.array_equal(self._logits, other._logits)
                and np.array_equal(self._labels, other._labels))

    def __repr__(self):
        return (f"PredictionSet(n={len(self)}, num_classes={self.num_classes}, "
                f"split_tag={self.split_tag.value!r})")

    @cached_property
    def records(self) -> Tuple[PredictionRecord, ...]:
        """All records in stored order."""
        return tuple(self)

    def logits_matrix(self) -> np.ndarray:
        """The cached, read-only (n, num_classes) logit matrix."""
        return self._logits

    def labels(self) -> np.ndarray:
        """The cached, read-only (n,) gold-label vector."""
        return self._labels

    def subset(self, indices, split_tag: Optional[SplitTag] = None) -> 'PredictionSet':
        """
        Select records by index, preserving the given order.

        Args:
            indices: Integer index array.
            split_tag: Tag for the new set (default: this set's tag).

        Returns:
            PredictionSet
        """
        indices = np.asarray(indices, dtype=np.int64)
        return PredictionSet(self.label_space, self._logits[indices], self._labels[indices],
                             split_tag or self.split_tag)


def _parse_jsonl_row(path: Path, line_no: int, line: str) -> Tuple[List[float], int]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise IngestError(path, line_no, f"malformed row: {exc.msg}") from None
    except ValueError as exc:
        # integer literals past the interpreter's digit limit
        raise IngestError(path, line_no, f"malformed row: {exc}") from None
    if not isinstance(obj, dict):
        raise IngestError(path, line_no, "malformed row: expected a JSON object")
    unknown = sorted(set(obj) - JSONL_KEYS)
    if unknown:
        raise IngestError(path, line_no, f"malformed row: unknown key {unknown[0]!r}")
    missing = sorted(JSONL_KEYS - set(obj))
    if missing:
        raise IngestError(path, line_no, f"malformed row: missing key {missing[0]!r}")

    raw_logits, raw_label = obj['logits'], obj['label']
    if not isinstance(raw_logits, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw_logits):
        raise IngestError(path, line_no, "malformed row: 'logits' must be an array of numbers")
    if isinstance(raw_label, bool) or not isinstance(raw_label, int):
        raise IngestError(path, line_no, "malformed row: 'label' must be an integer")
    try:
        logits = [float(v) for v in raw_logits]
    except OverflowError:
        raise IngestError(path, line_no, "non-finite logit") from None
    return logits, raw_label


def _parse_csv_row(path: Path, line_no: int, row: List[str], arity: int) -> Tuple[List[float], int]:
    if len(row) != arity + 1:
        raise IngestError(
            path, line_no,
            f"inconsistent logit arity: expected {arity} logits, got {len(row) - 1}"
        )
    try:
        logits = [float(cell) for cell in row[:-1]]
    except ValueError:
        raise IngestError(path, line_no, "malformed row: logits must be numbers") from None
    try:
        label = int(row[-1])
    except ValueError:
        raise IngestError(path, line_no, f"malformed row: label {row[-1]!r} is not an integer") from None
    return logits, label


def _decoded_lines(path: Path) -> Iterator[str]:
    """Yield the file's lines as text, decoding each line on its own."""
    with path.open('rb') as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                yield raw.decode('utf-8')
            except UnicodeDecodeError:
                raise IngestError(path, line_no, "malformed row: invalid UTF-8") from None


def _iter_jsonl(path: Path) -> Iterator[Tuple[int, List[float], int]]:
    for line_no, line in enumerate(_decoded_lines(path), start=1):
        if not line.strip():
            continue
        logits, label = _parse_jsonl_row(path, line_no, line)
        yield line_no, logits, label


def _iter_csv(path: Path) -> Iterator[Tuple[int, List[float], int]]:
    reader = csv.reader(_decoded_lines(path))
    header = next(reader, None)
    if header is None:
        return
    arity = len(header) - 1
    expected = [f"logit_{i}" for i in range(arity)] + ['label']
    if arity < 1 or [h.strip() for h in header] != expected:
        raise IngestError(path, 1, "malformed row: header must be logit_0,...,logit_{K-1},label")
    for row in reader:
        if not row:
            continue
        logits, label = _parse_csv_row(path, reader.line_num, row, arity)
        yield reader.line_num, logits, label


def ingest(path: PathLike, file_format: Union[FileFormat, str], split_tag: Union[SplitTag, str],
           num_classes: Optional[int] = None) -> PredictionSet:
    """
    Read and validate a prediction log.

    The label space is inferred from the first record (or taken from
    ``num_classes`` when given) and enforced for every following record.
    File order is preserved. Validation is total: any bad row raises and no
    partial set is returned.

    Args:
        path: File to read.
        file_format: ``'jsonl'`` or ``'csv'``.
        split_tag: Split the file represents.
        num_classes: Optional override; must agree with the data.

    Returns:
        PredictionSet

    Raises:
        IngestError: On a malformed row, inconsistent logit arity, an
            out-of-range gold label, a non-finite logit or an empty file.
        OSError: If the file cannot be read.
    """
    path = Path(path)
    file_format = FileFormat(file_format)
    rows = _iter_jsonl(path) if file_format is FileFormat.JSONL else _iter_csv(path)

    arity = num_classes
    logits: List[List[float]] = []
    labels: List[int] = []
    for line_no, row_logits, label in rows:
        if arity is None:
            arity = len(row_logits)
        if len(row_logits) != arity:
            raise IngestError(
                path, line_no,
                f"inconsistent logit arity: expected {arity}, got {len(row_logits)}"
            )
        if not MIN_NUM_CLASSES <= arity <= MAX_NUM_CLASSES:
            raise IngestError(
                path, line_no,
                f"malformed row: num_classes must be in [{MIN_NUM_CLASSES}, {MAX_NUM_CLASSES}], got {arity}"
            )
        if not all(math.isfinite(v) for v in row_logits):
            raise IngestError(path, line_no, "non-finite logit")
        if not 0 <= label < arity:
            raise IngestError(path, line_no, f"gold_label out of range: {label} not in [0, {arity})")
        if len(labels) >= MAX_RECORDS:
            raise IngestError(path, line_no, f"too many records: limit is {MAX_RECORDS}")
        logits.append(row_logits)
        labels.append(label)

    if not labels:
        raise IngestError(path, 0, "empty file")

    logger.info("Ingested %d records with %d classes from %s", len(labels), arity, path)
    return PredictionSet(LabelSpace(arity), logits, np.array(labels, dtype=np.int64), split_tag)


def _format_number(value: float) -> str:
    return format(float(value), ROUND_TRIP_FORMAT)


def write(prediction_set: PredictionSet, path: PathLike, file_format: Union[FileFormat, str]) -> None:
    """
    Write a prediction set in the same format ``ingest`` reads.

    Numbers are written with 17 significant digits so every float64 logit
    survives the round trip bit-for-bit.

    Args:
        prediction_set: The set to write.
        path: Destination file.
        file_format: ``'jsonl'`` or ``'csv'``.
    """
    path = Path(path)
    file_format = FileFormat(file_format)
    matrix = prediction_set.logits_matrix()
    labels = prediction_set.labels()

    with path.open('w', encoding='utf-8', newline='') as f:
        if file_format is FileFormat.JSONL:
            for row, label in zip(matrix, labels):
                values = ', '.join(_format_number(v) for v in row)
                f.write(f'{{"logits": [{values}], "label": {int(label)}}}\n')
        else:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow([f"logit_{i}" for i in range(prediction_set.num_classes)] + ['label'])
            for row, label in zip(matrix, labels):
                writer.writerow([_format_number(v) for v in row] + [int(label)])


def split_half(prediction_set: PredictionSet, seed: int) -> Tuple[PredictionSet, PredictionSet]:
    """
    Split a set into two halves after a seeded uniform shuffle.

    Used to carve a held-out, non-blind test half out of a development set.
    The first half receives the extra record when the size is odd. Both
    halves keep the input's split tag.

    Args:
        prediction_set: Set with at least two records.
        seed: Shuffle seed; the same seed always yields the same partition.

    Returns:
        (first_half, second_half)

    Raises:
        ValueError: If the set has fewer than two records.
    """
    n = len(prediction_set)
    if n < 2:
        raise ValueError(f"split_half needs at least 2 records, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    cut = (n + 1) // 2
    return prediction_set.subset(order[:cut]), prediction_set.subset(order[cut:])


def file_digest(path: PathLike) -> str:
    """SHA-256 hex digest of a file's contents."""
    digest = hashlib.sha256()
    with Path(path).open('rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


# Example usage and testing
if __name__ == "__main__":
    import tempfile

    print("Testing prediction store...\n")

    demo = PredictionSet(LabelSpace(3), [[2.0, 1.0, 0.0], [0.0, 0.0, 3.0]], [0, 2],
                         SplitTag.IN_DOMAIN_TEST)
    print(f"  {demo}")
    with tempfile.TemporaryDirectory() as tmp:
        for fmt in FileFormat:
            target = Path(tmp) / f"demo.{fmt.value}"
            write(demo, target, fmt)
            again = ingest(target, fmt, SplitTag.IN_DOMAIN_TEST)
            print(f"  {fmt.value} round trip equal: {again == demo}")

    first, second = split_half(demo, seed=7)
    print(f"  split sizes: {len(first)}, {len(second)}")
    print("\nPrediction store test completed successfully!")
