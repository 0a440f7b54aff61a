"""16-bit PCM mono WAV files via the standard library."""

from __future__ import annotations

import os
import wave
from pathlib import Path

import numpy as np

from .signal_ops import SAMPLE_RATE, Signal


class WavFormatError(ValueError):
    pass


def read_wav(path, expected_rate: int = SAMPLE_RATE) -> Signal:
    """Read a mono 16-bit WAV at ``expected_rate`` into samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != expected_rate:
        raise WavFormatError(f"{path}: expected {expected_rate} Hz, got {rate} Hz")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Signal(data, rate)


def write_wav(path, sig: Signal) -> None:
    """Write 16-bit PCM (clipped to the int16 range) atomically."""
    x = np.asarray(sig.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("refusing to write non-finite samples")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with wave.open(str(tmp), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(sig.sample_rate_hz)
            fh.writeframes(pcm.tobytes())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
