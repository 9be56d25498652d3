"""Shared fixtures for the calibration test suite."""

import math

import numpy as np
import pytest

from calibration.prediction_store import FileFormat, LabelSpace, PredictionSet, SplitTag, write


def logit_for(p):
    """Two-class logit vector whose softmax puts probability p on class 0."""
    return [math.log(p / (1.0 - p)), 0.0]


# Confidences {0.95 correct, 0.85 correct, 0.85 wrong, 0.55 correct}: ECE 0.30 with 10 bins.
FOUR_OUTCOME_LOGITS = [logit_for(0.95), logit_for(0.85), logit_for(0.85), logit_for(0.55)]
FOUR_OUTCOME_LABELS = [0, 0, 1, 0]


@pytest.fixture
def four_outcome_set():
    return PredictionSet(LabelSpace(2), FOUR_OUTCOME_LOGITS, FOUR_OUTCOME_LABELS, SplitTag.IN_DOMAIN_TEST)


@pytest.fixture
def four_outcome_file(tmp_path, four_outcome_set):
    path = tmp_path / 'four.jsonl'
    write(four_outcome_set, path, FileFormat.JSONL)
    return path


@pytest.fixture
def overconfident_dev():
    """Labels drawn from softmax(z); the stored logits are 3z, so the right T is 3."""
    rng = np.random.default_rng(1234)
    z = 1.5 * rng.standard_normal((10_000, 3))
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    labels = (rng.random(10_000)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
    labels = np.minimum(labels, 2)
    return PredictionSet(LabelSpace(3), 3.0 * z, labels, SplitTag.IN_DOMAIN_DEV)


@pytest.fixture
def write_lines(tmp_path):
    """Write raw text lines to a file under tmp_path and return its path."""

    def _write(name, lines):
        path = tmp_path / name
        path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
        return path

    return _write
