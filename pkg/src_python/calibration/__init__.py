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

__version__ = "0.1.0"

from . import constants
from .prediction_store import (SplitTag, FileFormat, IngestError, LabelSpace, PredictionRecord, PredictionSet,
                               ingest, write, split_half, file_digest)
from .numerics import (ConfidenceOutcome, OutcomeBatch, validate_probability_vector, softmax, log_softmax,
                       apply_temperature, one_hot, nll, nll_from_logits, kl_divergence, entropy,
                       confidence_outcome, confidence_outcomes)
from .metrics import (BinScheme, BinSpec, BinStats, ReliabilityTable, EvaluationResult, reliability_table,
                      ece, accuracy, evaluate, write_reliability_csv)
from .temperature import (SearchGrid, ObjectiveKind, Objective, TemperatureFit, rescale_evaluate,
                          fit_temperature, write_curve_csv)
from .manifest import RunManifest

__all__ = [
    '__version__', 'constants',
    'SplitTag', 'FileFormat', 'IngestError', 'LabelSpace', 'PredictionRecord', 'PredictionSet',
    'ingest', 'write', 'split_half', 'file_digest',
    'ConfidenceOutcome', 'OutcomeBatch', 'validate_probability_vector', 'softmax', 'log_softmax',
    'apply_temperature', 'one_hot', 'nll', 'nll_from_logits', 'kl_divergence', 'entropy',
    'confidence_outcome', 'confidence_outcomes',
    'BinScheme', 'BinSpec', 'BinStats', 'ReliabilityTable', 'EvaluationResult', 'reliability_table',
    'ece', 'accuracy', 'evaluate', 'write_reliability_csv',
    'SearchGrid', 'ObjectiveKind', 'Objective', 'TemperatureFit', 'rescale_evaluate',
    'fit_temperature', 'write_curve_csv',
    'RunManifest',
]
