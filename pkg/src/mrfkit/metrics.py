"""Masked reconstruction quality metrics: PSNR, SSIM, RMSE, NMSE."""

from __future__ import annotations

import numpy as np

from .phantom import TargetStats, TissueMap

PSNR_CAP_DB = 200.0  # reported for an exact match instead of +inf

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def masked_rmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    diff = pred[mask] - truth[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def masked_nmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    diff = pred[mask] - truth[mask]
    denom = np.sum(truth[mask] ** 2)
    if denom == 0:
        return 0.0 if not diff.any() else float("inf")
    return float(np.sum(diff * diff) / denom)


def masked_psnr(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    rmse = masked_rmse(pred, truth, mask)
    peak = float(truth[mask].max())
    if rmse == 0:
        return PSNR_CAP_DB
    return float(min(20.0 * np.log10(peak / rmse), PSNR_CAP_DB))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _windowed(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Local weighted means via zero-padded sliding windows."""
    size = window.shape[0]
    half = size // 2
    padded = np.pad(img, half)
    patches = np.lib.stride_tricks.sliding_window_view(padded, (size, size))
    return np.einsum("ijkl,kl->ij", patches, window, optimize=True)


def masked_ssim(
    pred: np.ndarray,
    truth: np.ndarray,
    mask: np.ndarray,
    data_range: float | None = None,
) -> float:
    """Mean structural similarity over windows whose center voxel is masked.

    Both maps have background zeroed before windowing; the dynamic range
    defaults to the masked truth range. Gaussian 11x11 window, sigma 1.5.
    """
    if not mask.any():
        raise ValueError("ssim needs at least one masked voxel")
    p = np.where(mask, pred, 0.0)
    t = np.where(mask, truth, 0.0)
    if data_range is None:
        data_range = float(truth[mask].max() - truth[mask].min())
    if data_range == 0:
        data_range = 1.0
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    window = _gaussian_window()
    mu_p = _windowed(p, window)
    mu_t = _windowed(t, window)
    pp = _windowed(p * p, window) - mu_p * mu_p
    tt = _windowed(t * t, window) - mu_t * mu_t
    pt = _windowed(p * t, window) - mu_p * mu_t
    ssim_map = ((2 * mu_p * mu_t + c1) * (2 * pt + c2)) / (
        (mu_p * mu_p + mu_t * mu_t + c1) * (pp + tt + c2)
    )
    return float(ssim_map[mask].mean())


def evaluate_pair(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> dict:
    return {
        "psnr": masked_psnr(pred, truth, mask),
        "ssim": masked_ssim(pred, truth, mask),
        "rmse": masked_rmse(pred, truth, mask),
        "nmse": masked_nmse(pred, truth, mask),
    }


def evaluate(pred_standardized: np.ndarray, truth: TissueMap, stats: TargetStats) -> dict:
    """Metrics per parameter on de-standardized maps over the tissue mask.

    ``pred_standardized`` is the network output (2, H, W) in standardized
    units; predictions are mapped back to physical ms before comparison.
    """
    if not truth.mask.any():
        raise ValueError("evaluation needs a non-empty mask")
    t1_hat, t2_hat = stats.destandardize(pred_standardized)
    return {
        "t1": evaluate_pair(t1_hat, truth.t1, truth.mask),
        "t2": evaluate_pair(t2_hat, truth.t2, truth.mask),
    }
