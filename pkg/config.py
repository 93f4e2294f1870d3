"""
Configuration file for the NeRF-ID volume-rendering toolkit
"""

import os

from dotenv import load_dotenv

load_dotenv()

# Application Configuration
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'
TOOLKIT_VERSION = '1.0.0'

# Numerical Runtime Configuration
PRECISION = os.getenv('NERFID_PRECISION', 'float32')  # 'float32' (training) or 'float64' (verification)
WORKERS = int(os.getenv('NERFID_WORKERS', '0'))  # 0 = pick from CPU count
RENDER_CHUNK_RAYS = int(os.getenv('NERFID_RENDER_CHUNK_RAYS', '1024'))  # Rays per forward pass at inference
PSNR_CAP = float(os.getenv('NERFID_PSNR_CAP', '100.0'))  # Reported PSNR for identical images

# Storage Configuration
OUTPUT_ROOT = os.getenv('NERFID_OUTPUT_ROOT', './runs')
DATA_ROOT = os.getenv('NERFID_DATA_ROOT', './data')

# Oracle Quadrature Configuration
ORACLE_MIN_QUAD = 1024
ORACLE_MAX_QUAD = 2 ** 16
ORACLE_TOLERANCE = float(os.getenv('NERFID_ORACLE_TOLERANCE', '1e-4'))

# Full configuration dictionary
CONFIG = {
    'app': {
        'log_level': LOG_LEVEL,
        'debug': DEBUG,
        'version': TOOLKIT_VERSION
    },
    'runtime': {
        'precision': PRECISION,
        'workers': WORKERS,
        'render_chunk_rays': RENDER_CHUNK_RAYS,
        'psnr_cap': PSNR_CAP
    },
    'storage': {
        'output_root': OUTPUT_ROOT,
        'data_root': DATA_ROOT
    },
    'oracle': {
        'min_quad': ORACLE_MIN_QUAD,
        'max_quad': ORACLE_MAX_QUAD,
        'tolerance': ORACLE_TOLERANCE
    }
}
