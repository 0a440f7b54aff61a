import numpy as np
import pytest
from scipy.fft import dct
from scipy.signal import lfilter

from difflpc.features import (
    BAND_CENTERS_HZ,
    AnalysisConfig,
    FeatureFrames,
    activity_mask,
    analyze,
    analyze_aligned,
    band_energies,
    band_of,
    band_weights,
    cepstrum_to_autocorr,
    ground_truth_batch,
    ground_truth_lpc,
    power_spectra,
    read_features,
    write_features,
)
from difflpc.lp_math import is_stable, log_spectral_distance, lpc_log_response, rc_to_lpc
from difflpc.signal_ops import Signal

CFG = AnalysisConfig()


def long_term_cepstrum(x):
    """Cepstrum of the frame-averaged band spectrum of ``x``."""
    energies = band_energies(power_spectra(x, CFG), CFG).mean(axis=0)
    return dct(np.log10(energies), type=2, norm="ortho")


def ar_signal(a, n, seed):
    e = np.random.default_rng(seed).standard_normal(n) * 0.01
    return lfilter([1.0], np.concatenate([[1.0], -np.asarray(a)]), e)


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            AnalysisConfig(window_size=100)
        with pytest.raises(ValueError):
            AnalysisConfig(fft_size=256)
        with pytest.raises(ValueError):
            AnalysisConfig(lpc_order=160)

    def test_band_table(self):
        assert BAND_CENTERS_HZ.size == 18
        w = band_weights(CFG)
        assert w.shape == (18, 161)
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
        assert band_of(1000.0) == 5


class TestAnalysis:
    def test_frame_count(self):
        for n in (319, 320, 479, 480, 16000):
            expected = max((n - 320) // 160 + 1, 0)
            assert len(analyze(Signal(np.random.default_rng(n).standard_normal(n)))) == expected

    def test_aligned_frame_count(self):
        assert len(analyze_aligned(np.ones(24000) * 0.1)) == 150

    def test_silence(self):
        frames = analyze(np.zeros(1600))
        c = frames.cepstrum
        np.testing.assert_allclose(c[:, 0], np.sqrt(18) * np.log10(1e-10), atol=1e-12)
        assert np.all(c[:, 1:] == 0.0)
        assert not frames.active.any()
        assert frames[0].frame_index == 0 and frames[0].active is False

    def test_deterministic(self, rng):
        x = rng.standard_normal(4000)
        assert np.array_equal(analyze(x).cepstrum, analyze(x).cepstrum)

    def test_tone_lands_in_its_band(self):
        t = np.arange(3200) / 16000
        c = analyze(0.5 * np.sin(2 * np.pi * 1000 * t)).cepstrum
        from scipy.fft import idct

        log_e = idct(c, type=2, norm="ortho", axis=-1)
        assert np.all(np.argmax(log_e, axis=-1) == band_of(1000.0))

    def test_active_flag_and_gate(self, rng):
        x = np.concatenate([np.zeros(1600), rng.standard_normal(1600) * 0.1])
        frames = analyze(x)
        assert not frames.active[0] and frames.active[-1]
        mask = activity_mask(np.array([-20.0, -22.0, -50.0, -21.0]))
        np.testing.assert_array_equal(mask, [True, True, False, True])


class TestGroundTruth:
    def test_flat_cepstrum_is_white(self):
        r = cepstrum_to_autocorr(np.zeros(18), condition=False)
        assert r[0] > 0
        assert np.max(np.abs(r[1:])) / r[0] < 1e-3

    def test_ar2_pole_angle(self):
        r, theta = 0.9, np.pi / 4
        a = [2 * r * np.cos(theta), -r * r]
        filt, k = ground_truth_lpc(long_term_cepstrum(ar_signal(a, 16000 * 4, 3)))
        resp = lpc_log_response(filt, 8192)
        peak = np.argmax(resp) * np.pi / 4096
        assert abs(peak - theta) / theta < 0.02
        assert is_stable(k)

    def test_white_noise_gives_near_zero_lpc(self):
        x = np.random.default_rng(7).standard_normal(16000 * 4)
        filt, _ = ground_truth_lpc(long_term_cepstrum(x))
        assert np.max(np.abs(filt.direct)) < 0.1

    def test_smooth_arm_envelope_lsd(self):
        # an order-16 filter whose envelope 18 bands can resolve: one resonance, zero padded
        a = np.zeros(16)
        a[:2] = [2 * 0.8 * np.cos(0.3 * np.pi), -0.64]
        filt, _ = ground_truth_lpc(long_term_cepstrum(ar_signal(a, 16000 * 4, 5)))
        assert log_spectral_distance(filt, a) < 1.5

    def test_energy_scale(self, rng):
        a = rc_to_lpc([0.6, -0.3, 0.2])
        x = ar_signal(a, 16000, 11)
        frames = analyze(x)
        from scipy.signal import get_window

        frames_td = np.lib.stride_tricks.sliding_window_view(x, 320)[::160]
        power = np.sum((frames_td * get_window("hann", 320)) ** 2, axis=-1)
        r = cepstrum_to_autocorr(frames.cepstrum, condition=False)
        ratio = r[:, 0] / power
        assert np.all((ratio > 0.25) & (ratio < 4.0))

    def test_batch_matches_single_and_is_stable(self, rng):
        cep = analyze(rng.standard_normal(3200) * 0.1).cepstrum
        a, k = ground_truth_batch(cep)
        filt, k0 = ground_truth_lpc(cep[3])
        np.testing.assert_allclose(a[3], filt.direct, atol=1e-12)
        assert np.all(np.abs(k) < 1)


class TestFeatureFile:
    def test_round_trip(self, tmp_path, rng):
        frames = analyze(rng.standard_normal(4000) * 0.1)
        path = tmp_path / "x.f32"
        write_features(path, frames)
        header, back = read_features(path)
        assert header == {"version": 1, "n_bands": 18, "frame_size": 160, "sample_rate": 16000}
        np.testing.assert_array_equal(back.cepstrum, frames.cepstrum.astype(np.float32))
        assert not (tmp_path / "x.f32.tmp").exists()

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "bad.f32"
        path.write_bytes(b'{"version": 1, "n_bands": 18, "frame_size": 160, "sample_rate": 16000}\n' + b"\0" * 10)
        with pytest.raises(ValueError):
            read_features(path)

    def test_container(self):
        frames = FeatureFrames(np.zeros((3, 18)))
        assert len(frames) == 3 and len(list(frames)) == 3
