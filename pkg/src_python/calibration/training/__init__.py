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

from .smoothing import (SmoothingConfig, TargetDistribution, smooth_targets, smooth_target_matrix,
                        smoothed_loss, loss_gradient, batch_loss)
from .model import (LabeledFeatures, LinearSoftmaxModel, TrainingObjective, TrainConfig, TrainingResult,
                    TrainingDivergenceError, mean_loss, train, save_model, load_model)
from .benchmark import (ShiftBenchmark, ExperimentConfig, ExperimentResult, ModelRun, Setting, SummaryRow,
                        generate_shift_benchmark, run_experiment, write_features_csv)

__all__ = [
    'SmoothingConfig', 'TargetDistribution', 'smooth_targets', 'smooth_target_matrix',
    'smoothed_loss', 'loss_gradient', 'batch_loss',
    'LabeledFeatures', 'LinearSoftmaxModel', 'TrainingObjective', 'TrainConfig', 'TrainingResult',
    'TrainingDivergenceError', 'mean_loss', 'train', 'save_model', 'load_model',
    'ShiftBenchmark', 'ExperimentConfig', 'ExperimentResult', 'ModelRun', 'Setting', 'SummaryRow',
    'generate_shift_benchmark', 'run_experiment', 'write_features_csv',
]
