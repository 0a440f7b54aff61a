"""Band-cepstrum analysis and the cepstrum -> LPC ground-truth path.

Each 10 ms hop takes a periodic-Hann window of 20 ms, computes its power
spectrum and pools it into 18 triangular bands whose centres (Hz) are

    0 200 400 600 800 1000 1200 1400 1600 2000 2400 2800 3200 4000 4800 5600 6800 8000

Adjacent triangles overlap so the weights sum to one on every bin. Band
energies are averaged per unit weight (a power-per-bin density), floored,
log10'd and decorrelated with an orthonormal DCT-II.

Going back, the inverse DCT gives log band energies. Plain linear interpolation
of those values would smooth the spectrum a second time, so the node values
at the band centres are chosen such that re-pooling the interpolated density
reproduces the band energies (a well-conditioned 18x18 solve, clamped below
at a tenth of the band energy). The density is then linearly interpolated
between band centres, the inverse real FFT gives the circular autocorrelation
of that spectrum, and Levinson-Durbin gives the LPCs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, idct
from scipy.signal import get_window

from .lp_math import condition_autocorr, levinson_durbin
from .signal_ops import DEFAULT_ALPHA, SAMPLE_RATE, Signal

BAND_CENTERS_HZ = np.array(
    [0, 200, 400, 600, 800, 1000, 1200, 1400, 1600,
     2000, 2400, 2800, 3200, 4000, 4800, 5600, 6800, 8000],
    dtype=np.float64,
)
LOG_FLOOR = 1e-10
NODE_FLOOR = 0.1
FEATURE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AnalysisConfig:
    frame_size: int = 160
    window_size: int = 320
    n_bands: int = 18
    fft_size: int = 320
    lpc_order: int = 16
    pre_emphasis: float = DEFAULT_ALPHA
    sample_rate: int = SAMPLE_RATE
    active_threshold_db: float = -60.0

    def __post_init__(self):
        if self.window_size < self.frame_size:
            raise ValueError("window_size must be >= frame_size")
        if self.fft_size < self.window_size:
            raise ValueError("fft_size must be >= window_size")
        if not 0 < self.lpc_order < self.frame_size:
            raise ValueError("lpc_order must be in (0, frame_size)")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise ValueError(f"pre_emphasis must be in [0, 1), got {self.pre_emphasis}")
        if self.n_bands != BAND_CENTERS_HZ.size:
            raise ValueError(f"the band table has {BAND_CENTERS_HZ.size} bands")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError("analysis is defined at 16 kHz only")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class FeatureFrame:
    cepstrum: np.ndarray
    frame_index: int
    active: bool

    @property
    def energy_db(self) -> float:
        return cepstral_energy_db(self.cepstrum)


class FeatureFrames:
    """Frames of one utterance stored as a (n_frames, n_bands) array."""

    def __init__(self, cepstrum, active=None, threshold_db: float = -60.0):
        self.cepstrum = np.atleast_2d(np.asarray(cepstrum, dtype=np.float64))
        if active is None:
            active = cepstral_energy_db(self.cepstrum) > threshold_db
        self.active = np.asarray(active, dtype=bool)

    def __len__(self):
        return self.cepstrum.shape[0]

    def __getitem__(self, i) -> FeatureFrame:
        i = range(len(self))[i]
        return FeatureFrame(self.cepstrum[i], i, bool(self.active[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def energy_db(self) -> np.ndarray:
        return cepstral_energy_db(self.cepstrum)


def cepstral_energy_db(cepstrum) -> np.ndarray:
    """Mean log band energy in dB, read off c0 of the orthonormal DCT."""
    cepstrum = np.asarray(cepstrum, dtype=np.float64)
    return 10.0 * cepstrum[..., 0] / np.sqrt(cepstrum.shape[-1])


def band_weights(cfg: AnalysisConfig) -> np.ndarray:
    """Triangular weights, shape (n_bands, n_bins); columns sum to one."""
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size
    eye = np.eye(cfg.n_bands)
    return np.stack([np.interp(freqs, BAND_CENTERS_HZ, row) for row in eye])


def node_operator(cfg: AnalysisConfig) -> np.ndarray:
    """Maps band energies to interpolation nodes: inverse of the pooling of a
    piecewise-linear density (applied as ``energies @ node_operator``)."""
    w = band_weights(cfg)
    pooled = (w / w.sum(axis=1, keepdims=True)) @ w.T
    return np.linalg.inv(pooled).T


def band_of(freq_hz: float) -> int:
    """Index of the band whose centre is nearest ``freq_hz``."""
    return int(np.argmin(np.abs(BAND_CENTERS_HZ - freq_hz)))


def _frame_matrix(x: np.ndarray, cfg: AnalysisConfig) -> np.ndarray:
    n = (x.shape[0] - cfg.window_size) // cfg.frame_size + 1
    if n <= 0:
        return np.zeros((0, cfg.window_size))
    windows = np.lib.stride_tricks.sliding_window_view(x, cfg.window_size)
    return windows[:: cfg.frame_size][:n]


def power_spectra(x, cfg: AnalysisConfig) -> np.ndarray:
    frames = _frame_matrix(np.asarray(x, dtype=np.float64), cfg)
    window = get_window("hann", cfg.window_size)
    spec = np.fft.rfft(frames * window, n=cfg.fft_size, axis=-1)
    return spec.real**2 + spec.imag**2


def band_energies(power: np.ndarray, cfg: AnalysisConfig) -> np.ndarray:
    w = band_weights(cfg)
    return power @ w.T / w.sum(axis=1)


def analyze(sig, cfg: AnalysisConfig | None = None) -> FeatureFrames:
    """Band cepstra for every full window of ``sig`` (pre-emphasised upstream).

    Frame count is floor((len - window_size) / frame_size) + 1, zero if the
    signal is shorter than one window.
    """
    cfg = cfg or AnalysisConfig()
    x = sig.samples if isinstance(sig, Signal) else np.asarray(sig, dtype=np.float64)
    power = power_spectra(x, cfg)
    if power.shape[0] == 0:
        return FeatureFrames(np.zeros((0, cfg.n_bands)), np.zeros(0, dtype=bool))
    log_e = np.log10(np.maximum(band_energies(power, cfg), LOG_FLOOR))
    cep = dct(log_e, type=2, norm="ortho", axis=-1)
    return FeatureFrames(cep, threshold_db=cfg.active_threshold_db)


def analyze_aligned(sig, cfg: AnalysisConfig | None = None) -> FeatureFrames:
    """Analysis centred on consecutive frame_size blocks: frame j describes samples
    [j*frame_size, (j+1)*frame_size), one frame per full block."""
    cfg = cfg or AnalysisConfig()
    x = sig.samples if isinstance(sig, Signal) else np.asarray(sig, dtype=np.float64)
    n_frames = x.shape[0] // cfg.frame_size
    pad = (cfg.window_size - cfg.frame_size) // 2
    tail = cfg.window_size - cfg.frame_size - pad
    padded = np.concatenate([np.zeros(pad), x[: n_frames * cfg.frame_size], np.zeros(tail)])
    return analyze(padded, cfg)


def cepstrum_to_autocorr(frame, cfg: AnalysisConfig | None = None, condition: bool = True):
    """Lags r_0..r_M of the spectrum described by a cepstrum (or a batch of them)."""
    cfg = cfg or AnalysisConfig()
    cep = np.asarray(getattr(frame, "cepstrum", frame), dtype=np.float64)
    energies = 10.0 ** idct(cep, type=2, norm="ortho", axis=-1)
    nodes = np.maximum(energies @ node_operator(cfg), NODE_FLOOR * energies)
    density = nodes @ band_weights(cfg)
    r = np.fft.irfft(density, n=cfg.fft_size, axis=-1)[..., : cfg.lpc_order + 1]
    return condition_autocorr(r) if condition else r


def ground_truth_lpc(frame, cfg: AnalysisConfig | None = None):
    """LPCs computed from the features alone; returns (LpcFilter, reflection coeffs)."""
    filt, k, _ = levinson_durbin(cepstrum_to_autocorr(frame, cfg))
    return filt, k


def ground_truth_batch(cepstra, cfg: AnalysisConfig | None = None):
    """Direct and reflection coefficients for every row of ``cepstra``, as arrays."""
    cfg = cfg or AnalysisConfig()
    cepstra = np.atleast_2d(cepstra)
    r = cepstrum_to_autocorr(cepstra, cfg)
    a = np.zeros((cepstra.shape[0], cfg.lpc_order))
    k = np.zeros_like(a)
    for i, row in enumerate(r):
        filt, k[i], _ = levinson_durbin(row)
        a[i] = filt.direct
    return a, k


def activity_mask(energy_db, margin_db: float = 10.0) -> np.ndarray:
    """Frames louder than (median - margin) over the whole collection."""
    energy_db = np.asarray(energy_db, dtype=np.float64)
    if energy_db.size == 0:
        return np.zeros(0, dtype=bool)
    return energy_db > np.median(energy_db) - margin_db


def write_features(path, frames, cfg: AnalysisConfig | None = None) -> None:
    """Header JSON line, then little-endian float32 cepstra, n_bands per frame.

    Written to a temporary file and renamed into place.
    """
    cfg = cfg or AnalysisConfig()
    cep = np.asarray(getattr(frames, "cepstrum", frames), dtype="<f4")
    header = {
        "version": FEATURE_FORMAT_VERSION,
        "n_bands": cfg.n_bands,
        "frame_size": cfg.frame_size,
        "sample_rate": cfg.sample_rate,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(cep.tobytes())
    tmp.replace(path)


def read_features(path):
    """Returns (header dict, FeatureFrames)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    n_bands = int(header["n_bands"])
    if len(payload) % (4 * n_bands):
        raise ValueError(f"{path}: payload is not a whole number of frames")
    cep = np.frombuffer(payload, dtype="<f4").reshape(-1, n_bands)
    return header, FeatureFrames(cep.astype(np.float64))


def config_dict(cfg: AnalysisConfig) -> dict:
    return asdict(cfg)

