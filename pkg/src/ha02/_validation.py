"""Input validation shared by the estimators."""

from __future__ import annotations

import numpy as np

from .ofdm import FrameConfig


def check_pilot_estimates(X, frame: FrameConfig) -> np.ndarray:
    """Complex pilot estimates ``[n, N/2, n_pilot]``; a single ``[N/2, n_pilot]`` array is promoted."""
    X = np.asarray(X)
    expected = (frame.n_subcarriers // 2, frame.n_pilot)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != expected:
        raise ValueError(f"expected pilot estimates of shape (n, {expected[0]}, {expected[1]}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("pilot estimates contain non-finite values")
    return X.astype(np.complex128, copy=False)


def check_packed(X, rows: int, name: str = "X", dtype=np.float64) -> np.ndarray:
    """Real packed arrays ``[n, rows, 2]``; a single ``[rows, 2]`` array is promoted."""
    X = np.asarray(X)
    if np.iscomplexobj(X):
        raise ValueError(f"{name} must be real-valued packed data, got complex")
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (rows, 2):
        raise ValueError(f"expected {name} of shape (n, {rows}, 2), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X.astype(dtype, copy=False)
