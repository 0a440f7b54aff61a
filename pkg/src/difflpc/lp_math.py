"""Linear-prediction algebra.

Conventions: the predictor is p[t] = sum_i a_i s[t-i], so the inverse filter is
A(z) = 1 - sum_i a_i z^-i. Reflection coefficients satisfy a_i^(i) = k_i and the
step-up a_j^(i) = a_j^(i-1) - k_i a_{i-j}^(i-1), so an AR(1) process with
correlation rho has k_1 = a_1 = rho and |k_i| < 1 for every i is equivalent to a
minimum-phase A(z). (Negating both k and a gives the "+" form of the recursion
used with A(z) = 1 + sum_i a_i z^-i.) Log-area ratios are log((1 - k)/(1 + k)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ORDER = 16
DEFAULT_NFFT = 512
# downdating in lpc_to_rc is refused beyond this magnitude
RC_LIMIT = 0.9999


class UnstableFilterError(ValueError):
    """Raised when a filter has (or would need) a reflection coefficient with |k| >= 1."""


@dataclass(frozen=True)
class LpcFilter:
    """Direct-form predictor coefficients a_1..a_M."""

    direct: np.ndarray
    rc: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        direct = np.atleast_1d(np.asarray(self.direct, dtype=np.float64))
        if direct.ndim != 1 or direct.size < 1:
            raise ValueError("LpcFilter needs a 1-D coefficient vector of order >= 1")
        if not np.all(np.isfinite(direct)):
            raise ValueError("LpcFilter coefficients must be finite")
        object.__setattr__(self, "direct", direct)

    @property
    def order(self) -> int:
        return self.direct.shape[0]

    def reflection(self) -> np.ndarray:
        if self.rc is not None:
            return np.asarray(self.rc, dtype=np.float64)
        return lpc_to_rc(self.direct)


def _as_array(x) -> np.ndarray:
    if isinstance(x, LpcFilter):
        return x.direct
    return np.asarray(x, dtype=np.float64)


def rc_to_lpc(k) -> np.ndarray:
    """Levinson step-up recursion from reflection to direct-form coefficients.

    Works on the last axis, so a batch of shape (..., M) converts in one call.
    Stability of ``k`` is not required.
    """
    k = np.asarray(k, dtype=np.float64)
    order = k.shape[-1]
    a = np.zeros_like(k)
    for i in range(order):
        prev = a[..., :i].copy()
        a[..., :i] = prev - k[..., i : i + 1] * prev[..., ::-1]
        a[..., i] = k[..., i]
    return a


def lpc_to_rc(a) -> np.ndarray:
    """Step-down recursion, the inverse of :func:`rc_to_lpc` on stable filters."""
    a = np.array(_as_array(a), dtype=np.float64)
    if a.ndim != 1:
        return np.stack([lpc_to_rc(row) for row in a.reshape(-1, a.shape[-1])]).reshape(a.shape)
    order = a.shape[0]
    k = np.zeros(order)
    cur = a.copy()
    for i in range(order - 1, -1, -1):
        ki = cur[i]
        if abs(ki) >= RC_LIMIT:
            raise UnstableFilterError(f"reflection coefficient {ki:.6f} at order {i + 1}")
        k[i] = ki
        head = cur[:i]
        cur = (head + ki * head[::-1]) / (1.0 - ki * ki)
    return k


def is_stable(k) -> bool:
    k = np.asarray(k, dtype=np.float64)
    return bool(np.all(np.abs(k) < 1.0))


def condition_autocorr(r, white_noise: float = 1e-4, lag_bandwidth: float = 0.005) -> np.ndarray:
    """White-noise correction on r[0] and a Gaussian lag window.

    The window is exp(-0.5 (j / sigma)^2) with sigma = 1 / (2 pi lag_bandwidth),
    ``lag_bandwidth`` being a fraction of the sample rate.
    """
    r = np.array(r, dtype=np.float64)
    lags = np.arange(r.shape[-1])
    sigma = 1.0 / (2.0 * np.pi * lag_bandwidth)
    r = r * np.exp(-0.5 * (lags / sigma) ** 2)
    r[..., 0] *= 1.0 + white_noise
    return r


def levinson_durbin(r):
    """Solve the Toeplitz normal equations for autocorrelation lags r_0..r_M.

    Returns
    -------
    filt : LpcFilter
    k : ndarray
        Reflection coefficients, one per order.
    energy : float
        Prediction error energy r_0 * prod(1 - k_i^2).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("need at least r_0 and r_1")
    if not np.all(np.isfinite(r)):
        raise ValueError("autocorrelation must be finite")
    if r[0] <= 0:
        raise ValueError("r_0 must be positive")
    order = r.size - 1
    a = np.zeros(order)
    k = np.zeros(order)
    energy = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        ki = acc / energy
        if abs(ki) >= 1.0:
            raise UnstableFilterError(
                f"degenerate autocorrelation: |k_{i + 1}| = {abs(ki):.6f} >= 1"
            )
        k[i] = ki
        a[:i] = a[:i] - ki * a[:i][::-1]
        a[i] = ki
        energy = energy * (1.0 - ki * ki)
    return LpcFilter(a, rc=k), k, float(energy)


def rc_to_lar(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if np.any(np.abs(k) >= 1.0):
        raise ValueError("log-area ratio needs |k| < 1")
    return np.log((1.0 - k) / (1.0 + k))


def lar_to_rc(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    # (1 - e^g) / (1 + e^g) == -tanh(g / 2), which does not overflow
    return -np.tanh(0.5 * g)


def lar_distance(k, k_ref) -> float:
    """Squared Euclidean distance between log-area-ratio vectors."""
    d = rc_to_lar(k) - rc_to_lar(k_ref)
    return float(np.sum(d * d))


def lpc_log_response(filt, n_fft: int = DEFAULT_NFFT) -> np.ndarray:
    """Magnitude of 1/A(e^jw) in dB at n_fft//2 + 1 bins on [0, pi]."""
    a = _as_array(filt)
    if n_fft < 2 * a.shape[-1]:
        raise ValueError(f"n_fft={n_fft} is smaller than twice the order")
    poly = np.zeros(a.shape[:-1] + (a.shape[-1] + 1,))
    poly[..., 0] = 1.0
    poly[..., 1:] = -a
    mag = np.abs(np.fft.rfft(poly, n=n_fft, axis=-1))
    if np.any(mag == 0.0):
        raise UnstableFilterError("A(z) vanishes on a sampled frequency (pole on the unit circle)")
    return -20.0 * np.log10(mag)


def log_spectral_distance(f1, f2, n_fft: int = DEFAULT_NFFT):
    """RMS over bins of the dB difference between two all-pole responses.

    Batched inputs (..., M) give one distance per leading index.
    """
    diff = lpc_log_response(f1, n_fft) - lpc_log_response(f2, n_fft)
    out = np.sqrt(np.mean(diff * diff, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def impulse_response(filt, length: int) -> np.ndarray:
    from scipy.signal import lfilter

    a = _as_array(filt)
    impulse = np.zeros(length)
    impulse[0] = 1.0
    return lfilter([1.0], np.concatenate([[1.0], -a]), impulse)


def autocorr_of_rc(k, n_lags: int | None = None) -> np.ndarray:
    """Normalised (r_0 = 1) autocorrelation of the AR process with reflection
    coefficients ``k``, by inverting the Levinson-Durbin recursion.

    Lags beyond the order follow the Yule-Walker extension r_j = sum_i a_i r_{j-i}.
    """
    k = np.asarray(k, dtype=np.float64)
    order = k.shape[0]
    n_lags = order if n_lags is None else n_lags
    r = np.zeros(order + 1)
    r[0] = 1.0
    a = np.zeros(order)
    energy = 1.0
    for i in range(order):
        r[i + 1] = k[i] * energy + np.dot(a[:i], r[i:0:-1])
        a[:i] = a[:i] - k[i] * a[:i][::-1]
        a[i] = k[i]
        energy *= 1.0 - k[i] ** 2
    if n_lags > order:
        ext = np.zeros(n_lags + 1)
        ext[: order + 1] = r
        for j in range(order + 1, n_lags + 1):
            ext[j] = np.dot(a, ext[j - order : j][::-1])
        r = ext
    return r[: n_lags + 1]
