import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import lfilter

from difflpc.lp_math import rc_to_lpc
from difflpc.signal_ops import (
    Signal,
    de_emphasis,
    lp_predict,
    lp_residual,
    lp_synthesize,
    mu_compand,
    mu_expand,
    mu_quantize,
    pre_emphasis,
)

unit = st.floats(-1.0, 1.0, allow_nan=False)


class TestSignal:
    def test_rejects_bad_rate_and_values(self):
        with pytest.raises(ValueError):
            Signal(np.zeros(4), 0)
        with pytest.raises(ValueError):
            Signal(np.array([0.0, np.nan]))
        with pytest.raises(ValueError):
            Signal(np.zeros((2, 2)))

    def test_duration(self):
        assert Signal(np.zeros(8000)).duration == 0.5


class TestMuLaw:
    def test_fixed_points(self):
        assert mu_compand(0.0) == 0.0
        assert mu_compand(1.0) == pytest.approx(128.0, abs=1e-12)
        assert mu_compand(1.0 / 255.0) == pytest.approx(16.0, abs=1e-12)
        assert mu_expand(0.0) == 0.0
        assert mu_expand(128.0) == pytest.approx(1.0, abs=1e-15)

    def test_round_trip(self, rng):
        x = rng.uniform(-1, 1, 1000)
        assert np.max(np.abs(mu_expand(mu_compand(x)) - x)) < 1e-12

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            mu_compand(1.0001)
        with pytest.raises(ValueError):
            mu_expand(-128.5)
        with pytest.raises(ValueError):
            mu_quantize(129.0)

    @given(unit)
    def test_odd_and_bounded(self, x):
        u = mu_compand(x)
        assert abs(u) <= 128.0
        assert mu_compand(-x) == -u

    @given(unit, unit)
    def test_monotone(self, x, y):
        if x < y:
            assert mu_compand(x) < mu_compand(y)
            assert mu_expand(mu_compand(x)) <= mu_expand(mu_compand(y))

    def test_quantize(self):
        assert mu_quantize(0.4) == 0
        assert mu_quantize(-3.5) == -4
        assert mu_quantize(3.5) == 4
        assert mu_quantize(127.8) == 127
        assert mu_quantize(128.0) == 127
        assert mu_quantize(-128.0) == -128


class TestEmphasis:
    def test_impulse_responses(self):
        y, _ = pre_emphasis(np.array([1.0, 0.0, 0.0]), 0.85)
        np.testing.assert_array_equal(y, [1.0, -0.85, 0.0])
        y, _ = de_emphasis(np.array([1.0, 0.0, 0.0, 0.0]), 0.85)
        np.testing.assert_allclose(y, 0.85 ** np.arange(4), rtol=1e-15)

    def test_dc_behaviour(self):
        y, _ = pre_emphasis(np.ones(50), 0.85)
        assert y[-1] == pytest.approx(0.15, abs=1e-15)
        y, _ = de_emphasis(np.ones(2000), 0.85)
        assert y[-1] == pytest.approx(1.0 / 0.15, rel=1e-12)

    def test_inverse_pair(self, rng):
        x = rng.uniform(-1, 1, 16000)
        pre, _ = pre_emphasis(x)
        back, _ = de_emphasis(pre)
        assert np.max(np.abs(back - x)) < 1e-12

    @given(st.integers(0, 300), st.integers(0, 300))
    def test_streaming_is_bit_exact(self, cut1, cut2):
        x = np.random.default_rng(cut1 * 1000 + cut2).uniform(-1, 1, 300)
        a, b = sorted((cut1, cut2))
        for fn in (pre_emphasis, de_emphasis):
            whole, _ = fn(x, 0.85)
            state, parts = 0.0, []
            for chunk in (x[:a], x[a:b], x[b:]):
                out, state = fn(chunk, 0.85, state)
                parts.append(out)
            assert np.array_equal(np.concatenate(parts), whole)

    def test_signal_in_signal_out(self):
        y, state = pre_emphasis(Signal(np.array([0.5, 0.25])))
        assert isinstance(y, Signal) and state == 0.25

    def test_alpha_domain(self):
        with pytest.raises(ValueError):
            pre_emphasis(np.zeros(3), 1.0)


class TestLinearPrediction:
    def test_predict_examples(self):
        assert lp_predict(np.zeros(4), np.zeros(4)) == 0.0
        assert lp_predict([0.3], [1.0]) == pytest.approx(0.3)
        assert lp_predict([0.2, 0.4], [0.625, 0.25]) == pytest.approx(0.3, abs=1e-15)
        with pytest.raises(ValueError):
            lp_predict([0.1, 0.2, 0.3], [0.5, 0.5])

    def test_zero_filters_pass_through(self, rng):
        s = rng.standard_normal(320)
        np.testing.assert_array_equal(lp_residual(s, np.zeros((2, 16)), 160), s)

    def test_residual_of_ar_process_is_innovation(self, rng):
        k = rng.uniform(-0.8, 0.8, 16)
        a = rc_to_lpc(k)
        innov = rng.standard_normal(1600) * 0.01
        s = lfilter([1.0], np.concatenate([[1.0], -a]), innov)
        e = lp_residual(s, np.tile(a, (10, 1)), 160)
        assert np.max(np.abs(e - innov)) < 1e-10

    def test_synthesis_inverts_residual(self, rng):
        # rounding in the residual is re-amplified by the all-pole gain, so the
        # 1e-12 bound is checked on moderate filters
        for _ in range(20):
            filters = rc_to_lpc(rng.uniform(-0.7, 0.7, (12, 16)))
            s = rng.uniform(-1, 1, 12 * 160)
            back = lp_synthesize(lp_residual(s, filters, 160), filters, 160)
            assert np.max(np.abs(back - s)) < 1e-12

    def test_synthesis_inverts_residual_with_unstable_filter(self, rng):
        filters = np.tile([1.2], (4, 1))
        s = rng.uniform(-1, 1, 40)
        back = lp_synthesize(lp_residual(s, filters, 10), filters, 10)
        assert np.max(np.abs(back - s)) < 1e-12

    def test_history_crosses_frames(self):
        s = np.zeros(4)
        s[1] = 1.0
        e = lp_residual(s, [[0.0], [0.5]], 2)
        np.testing.assert_array_equal(e, [0.0, 1.0, -0.5, 0.0])

    def test_framing_errors(self):
        with pytest.raises(ValueError):
            lp_residual(np.zeros(10), np.zeros((2, 2)), 4)
        with pytest.raises(ValueError):
            lp_synthesize(np.zeros(8), np.zeros((3, 2)), 4)
