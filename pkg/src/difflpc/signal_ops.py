"""Deterministic signal-domain primitives.

mu-law companding in the signed convention (values in [-128, 128], U(0) = 0),
first-order pre/de-emphasis with explicit carried state, and linear-prediction
filtering (prediction, residual, synthesis) with per-frame filters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MU = 255.0
U_MAX = 128.0
LOG1P_MU = float(np.log1p(MU))
DEFAULT_ALPHA = 0.85
SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Signal:
    """Mono float64 samples with their sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"Signal must be 1-D, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Signal contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate_hz


def _samples(sig) -> np.ndarray:
    if isinstance(sig, Signal):
        return sig.samples
    return np.asarray(sig, dtype=np.float64)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"emphasis coefficient must be in [0, 1), got {alpha}")
    return alpha


def mu_compand(x):
    """Linear amplitude in [-1, 1] to real-valued signed mu-law in [-128, 128]."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("mu_compand domain is [-1, 1]")
    return np.sign(x) * U_MAX * np.log1p(MU * np.abs(x)) / LOG1P_MU


def mu_expand(u):
    """Inverse of :func:`mu_compand`."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(u) > U_MAX):
        raise ValueError("mu_expand domain is [-128, 128]")
    return np.sign(u) * np.expm1(np.abs(u) / U_MAX * LOG1P_MU) / MU


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def mu_quantize(u):
    """Nearest signed 8-bit mu-law index; ties go away from zero, 128 clamps to 127."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(u) > U_MAX):
        raise ValueError("mu_quantize domain is [-128, 128]")
    q = np.clip(round_half_away(u), -128, 127).astype(np.int64)
    return q if q.ndim else int(q)


def pre_emphasis(sig, alpha: float = DEFAULT_ALPHA, state: float = 0.0):
    """y[t] = x[t] - alpha * x[t-1].

    ``state`` is the previous input sample; the returned state continues the
    stream so chunked calls match a single call exactly.
    """
    alpha = _check_alpha(alpha)
    x = _samples(sig)
    prev = np.empty_like(x)
    if x.size:
        prev[0] = state
        prev[1:] = x[:-1]
    y = x - alpha * prev
    new_state = float(x[-1]) if x.size else float(state)
    if isinstance(sig, Signal):
        y = Signal(y, sig.sample_rate_hz)
    return y, new_state


def de_emphasis(sig, alpha: float = DEFAULT_ALPHA, state: float = 0.0):
    """y[t] = x[t] + alpha * y[t-1]; ``state`` is the previous output sample."""
    from scipy.signal import lfilter

    alpha = _check_alpha(alpha)
    x = _samples(sig)
    if x.size == 0:
        y, new_state = x.copy(), float(state)
    else:
        y, zf = lfilter([1.0], [1.0, -alpha], x, zi=[alpha * state])
        new_state = float(y[-1])
    if isinstance(sig, Signal):
        y = Signal(y, sig.sample_rate_hz)
    return y, new_state


def _direct(filt) -> np.ndarray:
    direct = getattr(filt, "direct", filt)
    return np.asarray(direct, dtype=np.float64)


def lp_predict(history, filt) -> float:
    """Prediction sum_i a_i s[t-i] from the last M samples (oldest first)."""
    a = _direct(filt)
    history = np.asarray(history, dtype=np.float64)
    if history.shape != a.shape:
        raise ValueError(
            f"history length {history.shape[0]} does not match order {a.shape[0]}"
        )
    return float(np.dot(a, history[::-1]))


def _frame_filters(per_frame_filters, n: int, frame_size: int) -> np.ndarray:
    filters = np.atleast_2d(np.array([_direct(f) for f in per_frame_filters]))
    if n % frame_size:
        raise ValueError(f"signal length {n} is not a multiple of frame_size {frame_size}")
    if filters.shape[0] != n // frame_size:
        raise ValueError(
            f"expected {n // frame_size} filters for {n} samples, got {filters.shape[0]}"
        )
    return filters


def history_matrix(s, order: int, context=None) -> np.ndarray:
    """Row t holds s[t-1], s[t-2], ..., s[t-M] (zeros or ``context`` before t=0).

    ``context`` supplies the M samples preceding ``s``, oldest first.
    """
    s = np.asarray(s, dtype=np.float64)
    lead = np.zeros(order) if context is None else np.asarray(context, dtype=np.float64)
    padded = np.concatenate([lead, s])
    windows = np.lib.stride_tricks.sliding_window_view(padded[:-1], order)
    return windows[:, ::-1]


def lp_predictions(s, per_sample_filters, context=None) -> np.ndarray:
    """Predictions p[t] for every sample given one filter row per sample."""
    a = np.asarray(per_sample_filters, dtype=np.float64)
    hist = history_matrix(s, a.shape[1], context)
    return np.einsum("ti,ti->t", hist, a)


def lp_residual(sig, per_frame_filters, frame_size: int):
    """Excitation e[t] = s[t] - p[t] with history carried across frames.

    Samples before the start of the signal are taken as zero.
    """
    s = _samples(sig)
    filters = _frame_filters(per_frame_filters, s.shape[0], frame_size)
    e = s - lp_predictions(s, np.repeat(filters, frame_size, axis=0))
    if isinstance(sig, Signal):
        return Signal(e, sig.sample_rate_hz)
    return e


def lp_synthesize(excitation, per_frame_filters, frame_size: int):
    """All-pole synthesis s[t] = e[t] + p[t]; inverse of :func:`lp_residual`."""
    e = _samples(excitation)
    filters = _frame_filters(per_frame_filters, e.shape[0], frame_size)
    order = filters.shape[1]
    padded = np.zeros(order + e.shape[0])
    for j, a in enumerate(filters):
        start = j * frame_size
        for t in range(start, start + frame_size):
            padded[t + order] = e[t] + np.dot(a, padded[t : t + order][::-1])
    s = padded[order:]
    if isinstance(excitation, Signal):
        return Signal(s, excitation.sample_rate_hz)
    return s
