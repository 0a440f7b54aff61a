import csv
import json

import numpy as np
import pytest

from difflpc import model as mdl
from difflpc.cli import load_config, main, UsageError
from difflpc.corpus import synthetic_corpus
from difflpc.features import read_features
from difflpc.wavio import read_wav, write_wav

SMALL_MODEL = {"cond_size": 16, "embed_size": 4, "gru_a": 8, "gru_b": 4}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "eval").mkdir()
    for i, sig in enumerate(synthetic_corpus(3.2, seed=11)):
        write_wav(d / "eval" / f"u{i}.wav", sig)
    (d / "cfg.json").write_text(json.dumps({"epochs": 1, "batch_size": 4, "model": SMALL_MODEL}))
    assert main(["features", str(d / "eval" / "u0.wav"), str(d / "a.feat")]) == 0
    assert main(["train", "--synthetic", "2", str(d / "m.ckpt"), "--config", str(d / "cfg.json"),
                 "--variant", "LAR", "--seed", "3"]) == 0
    return d


def test_features_frame_count(workdir):
    header, frames = read_features(workdir / "a.feat")
    n = read_wav(workdir / "eval" / "u0.wav").samples.size
    assert len(frames) == (n - 320) // 160 + 1
    assert header["n_bands"] == 18


def test_train_writes_config_into_checkpoint(workdir):
    params, header = mdl.load_checkpoint(workdir / "m.ckpt")
    extra = header["extra"]
    assert extra["train_config"]["loss"]["variant"] == "LAR"
    assert extra["train_config"]["seed"] == 3
    assert params.config.gru_a == 8
    assert len(extra["history"]) == 1


def test_train_is_deterministic(workdir, tmp_path):
    out = tmp_path / "again.ckpt"
    assert main(["train", "--synthetic", "2", str(out), "--config", str(workdir / "cfg.json"),
                 "--variant", "LAR", "--seed", "3"]) == 0
    assert out.read_bytes() == (workdir / "m.ckpt").read_bytes()


def test_synth_length_and_determinism(workdir, tmp_path):
    _, frames = read_features(workdir / "a.feat")
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    for path in (a, b):
        assert main(["synth", str(workdir / "a.feat"), str(workdir / "m.ckpt"), str(path), "--seed", "4"]) == 0
    out = read_wav(a)
    assert out.samples.size == 160 * len(frames)
    assert np.all(np.isfinite(out.samples))
    assert a.read_bytes() == b.read_bytes()


def test_lsd_ground_truth_is_zero(workdir, capsys):
    assert main(["lsd", str(workdir / "eval"), "--ground-truth"]) == 0
    assert capsys.readouterr().out.startswith("0.00 dB")


def test_lsd_checkpoint(workdir, capsys):
    assert main(["lsd", str(workdir / "eval"), "--checkpoint", str(workdir / "m.ckpt")]) == 0
    value = float(capsys.readouterr().out.split()[0])
    assert value > 0


def test_response_csv(workdir, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["response", str(workdir / "a.feat"), "5", str(out), "--checkpoint", str(workdir / "m.ckpt")]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["frequency_hz", "response_db", "source_label"]
    labels = [r["source_label"] for r in rows]
    assert labels.count("predicted") == labels.count("ground_truth") == 161
    freqs = [float(r["frequency_hz"]) for r in rows if r["source_label"] == "ground_truth"]
    assert freqs[0] == 0.0 and freqs[-1] == 8000.0


def test_response_ground_truth_only(workdir, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["response", str(workdir / "a.feat"), "0", str(out), "--ground-truth", "--fft-size", "512"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 257


@pytest.mark.parametrize("argv", [
    ["synth", "missing.feat", "missing.ckpt", "o.wav"],
    ["features", "missing.wav", "o.feat"],
    ["lsd", "no_such_dir", "--ground-truth"],
    ["train", "o.ckpt"],
])
def test_file_and_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_inputs_exit_2(workdir, tmp_path):
    bogus = tmp_path / "x.wav"
    bogus.write_text("not audio")
    assert main(["features", str(bogus), str(tmp_path / "x.feat")]) == 2
    assert main(["synth", str(workdir / "a.feat"), str(bogus), str(tmp_path / "o.wav")]) == 2
    assert main(["response", str(workdir / "a.feat"), "100000", str(tmp_path / "r.csv"), "--ground-truth"]) == 2
    assert main(["response", str(workdir / "a.feat"), "0", str(tmp_path / "r.csv")]) == 2
    assert not (tmp_path / "r.csv").exists()


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--synthetic", "1", "o.ckpt", "--variant", "bogus"])
    assert exc.value.code == 2


def test_config_layering(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"epochs": 3, "loss": {"variant": "L1", "gamma": 2.0},
                                "model": {"gru_a": 24}, "pre_emphasis": 0.9}))
    cfg, model_cfg, alpha = load_config(path, {"epochs": 5, "variant": None, "lar_weight": 0.5})
    assert cfg.epochs == 5
    assert cfg.loss.variant == "L1" and cfg.loss.gamma == 2.0 and cfg.loss.lar_weight == 0.5
    assert model_cfg.gru_a == 24
    assert alpha == 0.9


@pytest.mark.parametrize("content", ['{"foo": 1}', "[1, 2]", "{not json", '{"batch_size": 0}',
                                     '{"loss": {"variant": "nope"}}', '{"pre_emphasis": 1.5}'])
def test_bad_config_rejected(content, tmp_path):
    path = tmp_path / "c.json"
    path.write_text(content)
    with pytest.raises(UsageError):
        load_config(path)


def test_divergence_exits_1(tmp_path, monkeypatch, capsys):
    from difflpc import training

    def explode(*args, **kwargs):
        raise training.TrainingDiverged("non-finite gradient norm", dump=None)

    monkeypatch.setattr("difflpc.cli.fit", explode)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "model": SMALL_MODEL}))
    assert main(["train", "--synthetic", "2", str(tmp_path / "o.ckpt"), "--config", str(cfg)]) == 1
    assert "diverged" in capsys.readouterr().err
    assert not (tmp_path / "o.ckpt").exists()


def test_gradcheck_command(monkeypatch, capsys):
    from difflpc import gradsuite

    fake = [gradsuite.CheckResult("a", True, 1e-9, 3, 0, 0.0), gradsuite.CheckResult("b", False, 1.0, 3, 0, 0.0)]
    monkeypatch.setattr(gradsuite, "run_suite", lambda **kw: fake)
    assert main(["gradcheck"]) == 1
    out = capsys.readouterr().out
    assert "PASS a" in out and "FAIL b" in out
    monkeypatch.setattr(gradsuite, "run_suite", lambda **kw: fake[:1])
    assert main(["gradcheck", "--points", "5"]) == 0
