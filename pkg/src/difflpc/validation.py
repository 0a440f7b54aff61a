"""Argument checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .signal_ops import Signal


def check_signal(x, name: str = "signal") -> np.ndarray:
    """A finite 1-D float64 sample array from a Signal or array-like."""
    data = x.samples if isinstance(x, Signal) else x
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    return arr


def check_signals(X) -> list[np.ndarray]:
    """One signal, or a sequence of signals, as a list of 1-D arrays."""
    if isinstance(X, Signal):
        return [check_signal(X)]
    if isinstance(X, np.ndarray) and X.ndim == 1:
        return [check_signal(X)]
    signals = [check_signal(x, f"signal {i}") for i, x in enumerate(X)]
    if not signals:
        raise ValueError("need at least one signal")
    return signals


def check_cepstra(X, n_bands: int = 18) -> np.ndarray:
    """(n_frames, n_bands) finite float64 cepstra; FeatureFrames are accepted."""
    X = getattr(X, "cepstrum", X)
    arr = check_array(X, dtype=np.float64, ensure_2d=False, ensure_min_samples=0)
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != n_bands:
        raise ValueError(f"expected (n_frames, {n_bands}) cepstra, got shape {arr.shape}")
    return arr


def check_reflection(k) -> np.ndarray:
    arr = np.asarray(k, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) >= 1.0):
        raise ValueError("reflection coefficients must be finite with |k| < 1")
    return arr


def check_probabilities(p, atol: float = 1e-9) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if np.any(arr < 0) or not np.allclose(arr.sum(axis=-1), 1.0, atol=atol):
        raise ValueError("rows must be non-negative and sum to 1")
    return arr


def check_choice(value, choices, name: str):
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value
