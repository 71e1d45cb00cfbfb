"""Error measures shared by training and evaluation."""
from __future__ import annotations

import numpy as np


def mse_loss(pred, truth) -> float:
    """Mean over frames (and windows) of the squared per-frame error norm.

    Arrays are (..., frames, D) or (frames, windows, D); the last axis is the
    frame vector and every other axis is averaged.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean(np.sum((pred - truth) ** 2, axis=-1)))


def aco(pred, truth) -> float:
    """Average absolute offset in centimeters over frames and all degrees of freedom."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)) * 100.0)


def offset_profile(pred, truth, frame_axis: int = 0) -> np.ndarray:
    """Per-frame-index ACO curve in centimeters."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    err = np.moveaxis(np.abs(pred - truth), frame_axis, 0)
    return err.reshape(err.shape[0], -1).mean(axis=1) * 100.0
