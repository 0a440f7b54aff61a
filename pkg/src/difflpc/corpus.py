"""Deterministic synthetic speech-like corpus.

Source-filter synthesis: a glottal pulse train with drifting pitch (voiced
segments), white noise (unvoiced segments) or near-silence, shaped by a
cascade of formant resonators whose frequencies glide within each segment.
It stands in for recorded speech in tests and toy training runs; the spectral
envelope changes every few milliseconds, which is what the LP front end and
the vocoder need to model.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from .signal_ops import SAMPLE_RATE, Signal

BLOCK = 80  # filter coefficients are updated every 5 ms
FORMANT_RANGES_HZ = ((300.0, 850.0), (850.0, 2300.0), (2200.0, 3100.0), (3300.0, 4200.0))
FRICATIVE_RANGES_HZ = ((2500.0, 3500.0), (4000.0, 5500.0), (5500.0, 7000.0))


def _resonator_sos(freqs, bandwidths, fs):
    """Unit-DC-gain-ish two-pole sections for the given centre frequencies."""
    sos = []
    for f, bw in zip(freqs, bandwidths):
        r = np.exp(-np.pi * bw / fs)
        theta = 2.0 * np.pi * f / fs
        a1, a2 = -2.0 * r * np.cos(theta), r * r
        sos.append([1.0 + a1 + a2, 0.0, 0.0, 1.0, a1, a2])
    return np.array(sos)


def _glottal_source(n, f0_start, f0_end, rng, fs):
    f0 = np.linspace(f0_start, f0_end, n) * (1.0 + 0.01 * rng.standard_normal(n).cumsum() / np.sqrt(n))
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=np.floor(phase[0])) > 0
    src = pulses.astype(np.float64)
    # smooth the impulses into a rounded glottal flow derivative
    src = sps.lfilter([1.0, -1.0], [1.0, -1.94, 0.9409], src)
    return src + 0.02 * rng.standard_normal(n)


def _segment(kind, n, rng, fs):
    if kind == "silence":
        return 3e-4 * rng.standard_normal(n)
    if kind == "voiced":
        f0a, f0b = rng.uniform(90.0, 240.0, size=2)
        src = _glottal_source(n, f0a, f0b, rng, fs)
        ranges, bw_range, gain = FORMANT_RANGES_HZ, (50.0, 180.0), 10 ** rng.uniform(-1.2, -0.3)
    else:
        src = rng.standard_normal(n)
        ranges, bw_range, gain = FRICATIVE_RANGES_HZ, (300.0, 900.0), 10 ** rng.uniform(-2.0, -1.2)
    start = np.array([rng.uniform(*r) for r in ranges])
    end = np.array([rng.uniform(*r) for r in ranges])
    bws = rng.uniform(*bw_range, size=len(ranges))
    out = np.empty(n)
    zi = np.zeros((len(ranges), 2))
    for b in range(0, n, BLOCK):
        frac = b / max(n - 1, 1)
        sos = _resonator_sos(start + frac * (end - start), bws, fs)
        out[b : b + BLOCK], zi = sps.sosfilt(sos, src[b : b + BLOCK], zi=zi)
    out /= max(np.sqrt(np.mean(out**2)), 1e-12)
    return gain * out


def synthetic_utterance(duration_s: float, seed: int = 0, sample_rate: int = SAMPLE_RATE) -> Signal:
    """One utterance of alternating voiced, unvoiced and silent segments."""
    rng = np.random.default_rng(seed)
    n_total = int(round(duration_s * sample_rate))
    parts, n = [], 0
    while n < n_total:
        kind = rng.choice(["voiced", "unvoiced", "silence"], p=[0.6, 0.25, 0.15])
        length = int(rng.uniform(0.08, 0.3) * sample_rate)
        seg = _segment(kind, length, rng, sample_rate)
        ramp = min(160, length // 2)
        env = np.ones(length)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[length - ramp :] = np.linspace(1.0, 0.0, ramp)
        parts.append(seg * env)
        n += length
    x = np.concatenate(parts)[:n_total]
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.6 / peak
    return Signal(x, sample_rate)


def synthetic_corpus(total_s: float = 60.0, seed: int = 0, min_s: float = 1.5, max_s: float = 4.0,
                     sample_rate: int = SAMPLE_RATE) -> list[Signal]:
    """Utterances of random length adding up to ``total_s`` seconds.

    Lengths are drawn from [min_s, max_s]; a remainder shorter than ``min_s``
    is merged into the last utterance, which may then exceed ``max_s``.
    """
    rng = np.random.default_rng(seed)
    out, used = [], 0.0
    while used < total_s - 1e-9:
        remaining = total_s - used
        dur = min(rng.uniform(min_s, max_s), remaining)
        if remaining - dur < min_s:
            dur = remaining
        out.append(synthetic_utterance(dur, seed=int(rng.integers(2**31)), sample_rate=sample_rate))
        used += dur
    return out
