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
Constants used throughout the calibration toolkit.

Defaults live here rather than on the individual classes so that the CLI,
the fitter and the training code share one set of values without circular
imports.
"""

# Binning
DEFAULT_NUM_BINS = 10

# Temperature line search (range [0.01, 5.0], granularity 0.01)
DEFAULT_GRID_LO = 0.01
DEFAULT_GRID_HI = 5.0
DEFAULT_GRID_STEP = 0.01
GRID_DECIMALS = 12           # grid points are rounded to this many decimals

# Label smoothing
DEFAULT_ALPHA = 0.1

# Ingest bounds
MIN_NUM_CLASSES = 2
MAX_NUM_CLASSES = 10_000
MAX_RECORDS = 2**32 - 1

# Tolerances (64-bit floats throughout)
PROBABILITY_SUM_TOLERANCE = 1e-9
TARGET_SUM_TOLERANCE = 1e-12

# Serialization
ROUND_TRIP_FORMAT = '.17g'   # logits and model parameters
REPORT_FORMAT = '.10g'       # reliability and curve exports

# Desk-scale training defaults (see calibration.training)
DEFAULT_EPOCHS = 5
DEFAULT_BATCH_SIZE = 50
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_INIT_SCALE = 0.01

# Shift benchmark defaults
DEFAULT_BENCHMARK_CLASSES = 3
DEFAULT_BENCHMARK_DIM = 2
DEFAULT_BENCHMARK_N = 2000
DEFAULT_SHIFT = 3.0
DEFAULT_CLUSTER_RADIUS = 1.5
DEFAULT_COVARIANCE_INFLATION = 0.25
MIN_SPLIT_SIZE = 10
