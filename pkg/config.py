"""
Centralized configuration for the platoon synchronization toolkit
All scripts resolve result locations, bundled scenarios and numeric defaults
from here so that runs are reproducible from the environment alone.
"""

import os
from pathlib import Path

# Base directory of the toolkit
PROJECT_DIR = Path(__file__).parent


def get_results_root():
    """Get the results root from environment or defaults"""
    # First check for explicit environment variable
    if env_path := os.environ.get('PLATOON_RESULTS_PATH'):
        return Path(env_path).resolve()
    return PROJECT_DIR / 'results'


RESULTS_PATH = get_results_root()

# Bundled scenario files
SCENARIO_DIR = PROJECT_DIR / 'scenarios'
BUNDLED_SCENARIOS = {
    'platoon_aocm': SCENARIO_DIR / 'platoon_aocm.yaml',
    'platoon_nn': SCENARIO_DIR / 'platoon_nn.yaml',
    'platoon_ie': SCENARIO_DIR / 'platoon_ie.yaml',
    'platoon_merge': SCENARIO_DIR / 'platoon_merge.yaml',
    'matched_linear': SCENARIO_DIR / 'matched_linear.yaml',
}

# Logging
LOG_LEVEL = os.environ.get('PLATOON_LOG_LEVEL', 'INFO').upper()
LOG_FILE = os.environ.get('PLATOON_LOG_FILE', 'platoon_sync.log')

# Sweeps run one process per scenario variant
SWEEP_WORKERS = int(os.environ.get('PLATOON_SWEEP_WORKERS', os.cpu_count() or 1))

# Integration defaults
DEFAULT_STEP = 1e-3
DEFAULT_HORIZON = 30.0
DIVERGENCE_GUARD = 1e6
FINAL_WINDOW_FRACTION = 0.2
LYAPUNOV_DESCENT_TOLERANCE = 1e-6

# Adaptive law defaults (cooperative cruise control study)
DEFAULT_GAMMA = 10.0
DEFAULT_V = 1.0
DEFAULT_Q_DIAG = (10.0, 1.0, 1.0)
DEFAULT_POLES = (-1.0, -2.0, -3.0)

# Neural network defaults
NN_WIDTH = 5
NN_STEEPNESS = 1.0
NN_SEED = 0
NN_INIT_SCALE = 0.1

# Numerical tolerances
MATCHING_TOLERANCE = 1e-9
HURWITZ_TOLERANCE = 1e-10
LYAPUNOV_RESIDUAL_FACTOR = 1e-8

# Output formats
CSV_FLOAT_FORMAT = '%.17g'
SERIES_DOWNSAMPLE = 10


# Utility functions
def get_results_path(*segments):
    """Get a path within the results directory"""
    return RESULTS_PATH.joinpath(*segments)


def get_scenario_path(name_or_path):
    """Resolve a bundled scenario name or a file path"""
    if name_or_path in BUNDLED_SCENARIOS:
        return BUNDLED_SCENARIOS[name_or_path]
    return Path(name_or_path)


def ensure_dir(path):
    """Ensure a directory exists"""
    Path(path).mkdir(parents=True, exist_ok=True)
    return path


# Debug information
if __name__ == "__main__":
    print(f"Platoon Sync Configuration:")
    print(f"  Results Path: {RESULTS_PATH}")
    print(f"  Results Path Exists: {RESULTS_PATH.exists()}")
    print(f"  Log Level: {LOG_LEVEL} (file: {LOG_FILE})")
    print(f"  Sweep Workers: {SWEEP_WORKERS}")
    print(f"  Bundled Scenarios:")
    for name, path in BUNDLED_SCENARIOS.items():
        print(f"    {name}: {path}")
