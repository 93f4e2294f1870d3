"""
Image quality metrics and the append-only training metrics log
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from config import CONFIG

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

METRICS_COLUMNS = ['step', 'stage', 'loss_coarse', 'loss_fine', 'loss_match', 'loss_importance', 'lr', 'val_psnr']


def psnr(prediction: np.ndarray, target: np.ndarray, cap: Optional[float] = None) -> float:
    """-10 log10(MSE) on [0, 1] images; identical images report ``cap``"""
    cap = CONFIG['runtime']['psnr_cap'] if cap is None else cap
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(f"psnr: shape mismatch {prediction.shape} vs {target.shape}")
    mse = float(np.mean((prediction - target) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, -10.0 * np.log10(mse))


def gaussian_kernel(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    kernel = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def _window_size(height: int, width: int, window: int) -> int:
    size = min(window, height, width)
    return size if size % 2 else size - 1


def _filter_valid(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view
    rows = windows(image, kernel.size, axis=0) @ kernel
    return windows(rows, kernel.size, axis=1) @ kernel


def ssim(prediction: np.ndarray, target: np.ndarray, data_range: float = 1.0,
         window: int = SSIM_WINDOW) -> float:
    """
    Structural similarity with a separable Gaussian window ('valid' region only)

    Args:
        prediction: Image (H, W) or (H, W, C)
        target: Reference image, same shape
        data_range: Dynamic range of the pixel values
        window: Window size; shrinks to the largest odd size that fits the image

    Returns:
        SSIM averaged over the valid region and over channels
    """
    a = np.asarray(prediction, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]

    kernel = gaussian_kernel(_window_size(a.shape[0], a.shape[1], window))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    scores = []
    for channel in range(a.shape[-1]):
        x, y = a[..., channel], b[..., channel]
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        var_x = _filter_valid(x * x, kernel) - mu_x ** 2
        var_y = _filter_valid(y * y, kernel) - mu_y ** 2
        cov = _filter_valid(x * y, kernel) - mu_x * mu_y
        numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        denominator = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(numerator / denominator)))
    return float(np.mean(scores))


class MetricsLog:
    """Buffered, append-only CSV of per-step training metrics"""

    def __init__(self, path: Union[str, Path], flush_every: int = 50):
        self.path = Path(path)
        self.flush_every = flush_every
        self._rows: List[Dict[str, Any]] = []

    def append(self, row: Dict[str, Any]):
        unknown = set(row) - set(METRICS_COLUMNS)
        if unknown:
            raise KeyError(f"Unknown metrics columns: {sorted(unknown)}")
        self._rows.append(row)
        if len(self._rows) >= self.flush_every:
            self.flush()

    def flush(self):
        if not self._rows:
            return
        frame = pd.DataFrame(self._rows, columns=METRICS_COLUMNS)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        write_header = not os.path.exists(self.path)
        frame.to_csv(self.path, mode='a', header=write_header, index=False)
        self._rows = []

    def read(self) -> pd.DataFrame:
        self.flush()
        return pd.read_csv(self.path)
