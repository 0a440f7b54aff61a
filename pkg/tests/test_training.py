import json

import numpy as np
import pytest

from difflpc import model as mdl
from difflpc.corpus import synthetic_corpus, synthetic_utterance
from difflpc.features import AnalysisConfig
from difflpc.lp_math import log_spectral_distance
from difflpc.losses import LossConfig
from difflpc.training import (
    Adam,
    SequenceSet,
    TrainConfig,
    TrainingDiverged,
    batch_gradients,
    evaluate_lsd,
    fit,
    fit_normalization,
    lsd_baseline,
    make_sequences,
    prepare_corpus,
    sequences_from_corpus,
    train_epoch,
    with_loss,
)

TINY = mdl.ModelConfig(cond_size=32, embed_size=8, gru_a=16, gru_b=8)
# flat-filter LSD on 10 s of synthetic corpus (seed 1), frozen from the first run
BASELINE_10S_SEED1 = 14.766979774011233


@pytest.fixture(scope="module")
def overfit_set():
    return sequences_from_corpus([synthetic_utterance(3.0, seed=4)])


def tiny_params(data, seed=0):
    params = mdl.init_params(TINY, seed=seed)
    fit_normalization(params, data.features)
    return params


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.sequence_ms, cfg.frame_ms, cfg.batch_size) == (150, 10, 32)
        assert cfg.frames_per_sequence == 15
        assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)

    def test_schedule(self):
        cfg = TrainConfig()
        assert [cfg.learning_rate_at(e) for e in (0, 4, 5, 9, 10, 19)] == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 1.25e-4]

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(sequence_ms=155)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_dict_round_trip(self):
        cfg = with_loss(TrainConfig(epochs=3, freeze_final_epoch=True), "LAR", lar_weight=2.0)
        again = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg and again.loss == LossConfig("LAR", lar_weight=2.0)


class TestSequences:
    def test_one_and_a_half_seconds(self):
        data = sequences_from_corpus([synthetic_utterance(1.5, seed=0)])
        assert len(data) == 10
        assert data.signal.shape == (10, 2400)
        assert data.features.shape == (10, 15, 18)
        assert data.rc_ref.shape == data.lpc_ref.shape == (10, 15, 16)
        assert data.context.shape == (10, 17)
        assert data.n_skipped == 0

    def test_windows_are_contiguous_and_aligned(self):
        pre, feats = prepare_corpus([synthetic_utterance(1.0, seed=2)])
        x, cep = pre[0].samples, feats[0].cepstrum
        data = make_sequences(pre, feats, TrainConfig(seed=0))
        assert len(data) == 6
        starts = []
        for i in range(len(data)):
            start = next(j * 2400 for j in range(6) if np.array_equal(x[j * 2400 : (j + 1) * 2400], data.signal[i]))
            padded = np.concatenate([np.zeros(17), x])
            np.testing.assert_array_equal(data.context[i], padded[start : start + 17])
            np.testing.assert_array_equal(data.features[i], cep[start // 160 : start // 160 + 15])
            starts.append(start)
        assert sorted(starts) == [j * 2400 for j in range(6)]

    def test_seeded_order(self):
        corpus = synthetic_corpus(6.0, seed=3)
        a = sequences_from_corpus(corpus, TrainConfig(seed=1))
        b = sequences_from_corpus(corpus, TrainConfig(seed=1))
        c = sequences_from_corpus(corpus, TrainConfig(seed=2))
        np.testing.assert_array_equal(a.signal, b.signal)
        assert not np.array_equal(a.signal, c.signal)
        assert sorted(map(bytes, a.signal)) == sorted(map(bytes, c.signal))

    def test_short_utterances_skipped(self):
        data = sequences_from_corpus([synthetic_utterance(0.1, seed=0), synthetic_utterance(0.5, seed=1)])
        assert data.n_skipped == 1 and len(data) == 3
        empty = sequences_from_corpus([synthetic_utterance(0.1, seed=0)])
        assert len(empty) == 0 and empty.n_skipped == 1

    def test_alignment_checks(self):
        pre, feats = prepare_corpus([synthetic_utterance(0.5, seed=0)])
        with pytest.raises(ValueError):
            make_sequences(pre, [], TrainConfig())
        with pytest.raises(ValueError):
            make_sequences(pre, feats, TrainConfig(frame_ms=5, sequence_ms=150), AnalysisConfig())


class TestOptimizer:
    def test_adam_first_step(self):
        params = mdl.init_params(TINY)
        before = params.snapshot()
        grads = {n: np.full(params[n].shape, 2.0) for n in params.names()}
        Adam().step(params, grads, 1e-3)
        for n in params.names():
            np.testing.assert_allclose(params[n].data, before[n] - 1e-3 * 2.0 / (2.0 + 1e-8), rtol=0, atol=1e-15)

    def test_freeze_mask_honoured(self, overfit_set):
        params = tiny_params(overfit_set)
        params.freeze(params.frame_net_names())
        before = params.snapshot()
        cfg = TrainConfig(batch_size=10, epochs=1)
        train_epoch(params, overfit_set, cfg, 0, Adam(), np.random.default_rng(0))
        for n in params.frame_net_names():
            np.testing.assert_array_equal(params[n].data, before[n])
        assert all(not np.array_equal(params[n].data, before[n]) for n in params.sample_net_names())

    def test_micro_batches_match_full_batch(self, overfit_set):
        params = tiny_params(overfit_set)
        part = overfit_set.subset(slice(0, 6))
        cfg = LossConfig("L1_plus_LAR")
        loss_a, terms_a, g_a = batch_gradients(params, part, cfg, micro_batch=6)
        loss_b, terms_b, g_b = batch_gradients(params, part, cfg, micro_batch=4)
        assert loss_a == pytest.approx(loss_b, rel=1e-13)
        assert terms_a.keys() == terms_b.keys()
        for n in params.names():
            np.testing.assert_allclose(g_a[n], g_b[n], rtol=1e-10, atol=1e-15)


class TestTrainEpoch:
    def test_same_seed_same_stats(self, overfit_set):
        def run():
            params = tiny_params(overfit_set)
            stats = train_epoch(params, overfit_set, TrainConfig(batch_size=10), 0, Adam(), np.random.default_rng(3))
            return stats, params.snapshot()

        (s1, p1), (s2, p2) = run(), run()
        assert s1 == s2
        for n in p1:
            np.testing.assert_array_equal(p1[n], p2[n])

    def test_log_records(self, overfit_set, tmp_path):
        params = tiny_params(overfit_set)
        log_path = tmp_path / "train.ndjson"
        cfg = with_loss(TrainConfig(batch_size=8, epochs=1), "L1_plus_LAR")
        fit(overfit_set, cfg, params=params, log_path=log_path)
        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert len(records) == 3
        assert [r["batch"] for r in records] == [0, 1, 2]
        for r in records:
            assert set(r) == {"epoch", "batch", "loss", "terms", "grad_norm", "clipped"}
            assert {"ice", "l1", "lar"} <= set(r["terms"])

    def test_divergence_dump(self, overfit_set, tmp_path):
        params = tiny_params(overfit_set)
        params["out_b"].data[0] = np.nan
        with pytest.raises(TrainingDiverged) as info:
            train_epoch(params, overfit_set, TrainConfig(batch_size=10), 0, Adam(), np.random.default_rng(0),
                        dump_dir=tmp_path)
        dump = np.load(info.value.dump)
        assert dump["signal"].shape == (10, 2400)
        assert np.isnan(dump["param_out_b"][0])


class TestOverfit:
    """Tiny-model runs on a 20-sequence set (3 s of synthetic speech)."""

    def test_loss_strictly_decreases(self, overfit_set):
        assert len(overfit_set) == 20
        result = fit(overfit_set, with_loss(TrainConfig(batch_size=4, epochs=5), "L1"), TINY)
        losses = [h["loss"] for h in result.history]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_lar_term_trend(self, overfit_set):
        result = fit(overfit_set, with_loss(TrainConfig(batch_size=4, epochs=6), "LAR"), TINY)
        lar = [h["terms"]["lar"] for h in result.history]
        for i in range(len(lar) - 2):
            assert max(lar[i + 1 : i + 3]) <= lar[i] * 1.05, lar
        assert result.history[-1]["lsd"] < result.history[0]["lsd"]

    def test_freeze_epoch(self, overfit_set):
        cfg = with_loss(TrainConfig(batch_size=10, epochs=1, freeze_final_epoch=True), "LAR")
        result = fit(overfit_set, cfg, TINY)
        assert len(result.history) == 2
        assert result.history[-1]["frozen"] == sorted(mdl.FRAME_NET)
        assert result.freeze_check["frame_net_identical"]
        assert result.freeze_check["sample_net_changed"]
        assert result.params.frozen == set()


class TestLsd:
    def test_zero_frame_net_gives_flat_filter_baseline(self, overfit_set):
        params = mdl.init_params(TINY, zero=True)
        assert evaluate_lsd(params, overfit_set) == pytest.approx(lsd_baseline(overfit_set), rel=1e-12)

    def test_baseline_regression_value(self):
        data = sequences_from_corpus(synthetic_corpus(10.0, seed=1))
        assert lsd_baseline(data) == pytest.approx(BASELINE_10S_SEED1, rel=1e-9)

    def test_reference_against_itself(self, overfit_set):
        ref = overfit_set.lpc_ref.reshape(-1, 16)
        assert np.all(log_spectral_distance(ref, ref) == 0.0)

    def test_array_inputs(self, overfit_set):
        params = tiny_params(overfit_set)
        cep = overfit_set.features.reshape(-1, 18)
        ref = overfit_set.lpc_ref.reshape(-1, 16)
        active = overfit_set.active.ravel()
        assert evaluate_lsd(params, cep, ref, active) == evaluate_lsd(params, overfit_set)
        assert np.isnan(evaluate_lsd(params, cep, ref, np.zeros_like(active)))


def test_sequence_set_subset(overfit_set):
    sub = overfit_set.subset([0, 2])
    assert isinstance(sub, SequenceSet) and len(sub) == 2
    np.testing.assert_array_equal(sub.active, overfit_set.active[[0, 2]])
