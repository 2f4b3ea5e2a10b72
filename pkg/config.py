"""
Configuration file for the vacuum INS harness
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Grid Configuration
GRID_CONFIG = {
    'n': 64,
    'd': 2,
    'min_n': 8,
    'dealias_fraction': 2.0 / 3.0,
    'mean_tolerance': 1e-10  # relative tolerance for zero-mean checks
}

# Solver Configuration
SOLVER_CONFIG = {
    'mu': 1.0,
    'dt': 1e-3,
    'eps_floor': 0.0,
    'rho_star': 1.0,
    'n': 64,
    'inner_tol': 1e-8,
    'inner_maxit': 400,
    'T_end': 0.1,
    'cfl_bound': 1.0,
    'dealias': True
}

# Diagnostics Configuration
DIAGNOSTICS_CONFIG = {
    'p_list': [1.0, 2.0, 4.0],
    'prs_table': [[4.0, 3.0, 1.0], [3.0, 4.0, 1.0]],
    'alpha_list': [0.1, 0.25, 0.4],
    'energy_floor': 1e-14,
    'holder_alpha': 0.5
}

# Inequality Ensemble Configuration
ENSEMBLE_CONFIG = {
    'seed': 2024,
    'count': 1000,
    'patch_area': (0.05, 0.5),
    'mass': 0.5,
    'kmax': 10,
    'rho_star': 1.0,
    'n_list': [64, 128],
    'truncation_n': 4,
    'stability_band': 0.5
}

# Lagrangian Configuration
LAGRANGIAN_CONFIG = {
    'interpolation_order': 3,
    'accuracy_tolerance': 1e-6,
    'singular_det': 1e-8,
    'max_spacing_ratio': 20.0,
    'pair_cutoff': 2.0,
    'markers': 256,
    'neumann_terms': 8
}

# Twisted Divergence Configuration
TWISTED_CONFIG = {
    'tol': 1e-12,
    'maxit': 200,
    'det_tolerance': 1e-6,
    'samples': 8,
    'growth_steps': 2
}

# Output Configuration
OUTPUT_CONFIG = {
    'snapshot_every': 0,
    'record_every': 1,
    'workers': int(os.getenv('INS_WORKERS', '4')),
    'diagnostics_csv': 'diagnostics.csv',
    'apriori_json': 'apriori.json',
    'boundary_csv': 'boundary.csv',
    'manifest_json': 'manifest.json',
    'failure_json': 'failure.json'
}

# Report Workbook Configuration
REPORT_CONFIG = {
    'file_name': 'summary.xlsx',
    'header_color': '366092',
    'pass_color': '00CC00',
    'fail_color': 'CC0000',
    'warn_color': 'FFCC00'
}

# Logging Configuration
LOGGING_CONFIG = {
    'level': os.getenv('INS_LOG_LEVEL', 'INFO'),
    'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
}

# File Paths
HARNESS_HOME = Path(os.getenv('INS_HARNESS_HOME', str(Path.home() / '.ins_harness')))
OUTPUT_DIR = HARNESS_HOME / 'runs'
LOG_FILE = HARNESS_HOME / 'logs' / 'ins_harness.log'


def ensure_directories():
    """Create the output and log directories"""
    OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
    LOG_FILE.parent.mkdir(parents=True, exist_ok=True)
