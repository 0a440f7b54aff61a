"""Command-line entry points: features, train, synth, lsd, response, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or file error. Every file
is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradsuite
from . import model as mdl
from .corpus import synthetic_corpus
from .features import (
    AnalysisConfig,
    activity_mask,
    analyze,
    cepstral_energy_db,
    ground_truth_batch,
    read_features,
    write_features,
)
from .losses import VARIANTS, LossConfig
from .lp_math import log_spectral_distance, lpc_log_response
from .signal_ops import DEFAULT_ALPHA, Signal, pre_emphasis
from .training import TrainConfig, TrainingDiverged, fit, make_sequences, prepare_corpus
from .wavio import WavFormatError, read_wav, write_wav

log = logging.getLogger("difflpc")


class UsageError(Exception):
    """Bad arguments, configuration or input files (exit code 2)."""


def _atomic_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _read_wav(path) -> Signal:
    try:
        return read_wav(path)
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except WavFormatError as exc:
        raise UsageError(str(exc)) from exc


def _read_features(path):
    try:
        header, frames = read_features(path)
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: not a feature file ({exc})") from exc
    return header, frames


def _load_checkpoint(path):
    try:
        return mdl.load_checkpoint(path)
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: not a checkpoint ({exc})") from exc


def _wav_dir(path) -> list[Signal]:
    d = Path(path)
    if not d.is_dir():
        raise UsageError(f"{path} is not a directory")
    files = sorted(d.glob("*.wav"))
    if not files:
        raise UsageError(f"no .wav files in {path}")
    return [_read_wav(f) for f in files]


# -- configuration ------------------------------------------------------------

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"loss"}
_LOSS_FIELDS = {f.name for f in dataclasses.fields(LossConfig)}
_MODEL_FIELDS = {f.name for f in dataclasses.fields(mdl.ModelConfig)}


def load_config(path=None, overrides: dict | None = None):
    """(TrainConfig, ModelConfig, pre-emphasis) from a JSON file and flag overrides.

    The file mirrors TrainConfig field names, with LossConfig fields under
    "loss" and ModelConfig fields under "model"; "pre_emphasis" is top level.
    """
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
    train = {k: v for k, v in raw.items() if k not in ("loss", "model", "pre_emphasis")}
    loss = dict(raw.get("loss", {}))
    model = dict(raw.get("model", {}))
    alpha = raw.get("pre_emphasis", DEFAULT_ALPHA)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _LOSS_FIELDS:
            loss[key] = value
        elif key == "pre_emphasis":
            alpha = value
        else:
            train[key] = value
    unknown = (set(train) - _TRAIN_FIELDS) | (set(loss) - _LOSS_FIELDS) | (set(model) - _MODEL_FIELDS)
    if unknown:
        raise UsageError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        cfg = TrainConfig(loss=LossConfig(**loss), **train)
        model_cfg = mdl.ModelConfig(**model)
        AnalysisConfig(pre_emphasis=alpha)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return cfg, model_cfg, float(alpha)


# -- commands -----------------------------------------------------------------

def cmd_features(args) -> int:
    sig = _read_wav(args.input)
    cfg = AnalysisConfig(pre_emphasis=args.alpha)
    x, _ = pre_emphasis(sig, cfg.pre_emphasis)
    frames = analyze(x, cfg)
    write_features(args.output, frames, cfg)
    print(f"{len(frames)} frames -> {args.output}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "loss": None, "variant": args.variant, "epochs": args.epochs, "batch_size": args.batch_size,
        "seed": args.seed, "learning_rate": args.learning_rate, "gamma": args.gamma,
        "lar_weight": args.lar_weight, "freeze_final_epoch": True if args.freeze_final_epoch else None,
    }
    cfg, model_cfg, alpha = load_config(args.config, overrides)
    if args.corpus is not None and args.synthetic is not None:
        raise UsageError("give either a corpus directory or --synthetic, not both")
    if args.corpus is not None:
        signals = _wav_dir(args.corpus)
    elif args.synthetic is not None:
        signals = synthetic_corpus(args.synthetic, seed=args.corpus_seed)
    else:
        raise UsageError("need a corpus directory or --synthetic SECONDS")
    analysis = AnalysisConfig(pre_emphasis=alpha)
    pre, feats = prepare_corpus(signals, analysis)
    data = make_sequences(pre, feats, cfg, analysis)
    if len(data) == 0:
        raise UsageError("no utterance is long enough for one training sequence")
    log.info("%d sequences (%d utterances skipped)", len(data), data.n_skipped)

    def report(stats, _params):
        print(json.dumps({k: stats[k] for k in ("epoch", "loss", "lsd", "grad_norm", "clipped")}), flush=True)

    result = fit(data, cfg, model_cfg, log_path=args.log, dump_dir=args.dump_dir, callback=report)
    extra = {"train_config": cfg.to_dict(), "pre_emphasis": alpha, "history": result.history,
             "freeze_check": result.freeze_check}
    mdl.save_checkpoint(result.params, args.output, extra=extra)
    print(f"checkpoint -> {args.output}")
    return 0


def cmd_synth(args) -> int:
    _, frames = _read_features(args.features)
    params, header = _load_checkpoint(args.checkpoint)
    alpha = header.get("extra", {}).get("pre_emphasis", DEFAULT_ALPHA)
    if len(frames) == 0:
        raise UsageError(f"{args.features} holds no frames")
    out = mdl.synthesize(params, frames.cepstrum, args.temperature, args.seed, alpha)
    write_wav(args.output, out)
    print(f"{out.samples.size} samples ({out.samples.size / out.sample_rate_hz:.2f} s) -> {args.output}")
    return 0


def corpus_frames(signals, analysis: AnalysisConfig):
    """Aligned cepstra, reference LPCs and the corpus-wide activity mask of all frames."""
    _, feats = prepare_corpus(signals, analysis)
    cep = np.concatenate([f.cepstrum for f in feats])
    lpc, _ = ground_truth_batch(cep, analysis)
    return cep, lpc, activity_mask(cepstral_energy_db(cep))


def cmd_lsd(args) -> int:
    if args.ground_truth == (args.checkpoint is not None):
        raise UsageError("give exactly one of --checkpoint or --ground-truth")
    alpha = DEFAULT_ALPHA
    params = None
    if args.checkpoint is not None:
        params, header = _load_checkpoint(args.checkpoint)
        alpha = header.get("extra", {}).get("pre_emphasis", DEFAULT_ALPHA)
    analysis = AnalysisConfig(pre_emphasis=alpha)
    cep, ref, active = corpus_frames(_wav_dir(args.eval_dir), analysis)
    if not np.any(active):
        raise UsageError("no active frames in the evaluation set")
    pred = ref if params is None else mdl.frame_forward_numpy(params, cep)[2]
    lsd = float(np.mean(log_spectral_distance(pred[active], ref[active])))
    print(f"{lsd:.2f} dB mean LSD over {int(active.sum())} active frames")
    return 0


def cmd_response(args) -> int:
    if args.ground_truth == (args.checkpoint is not None):
        raise UsageError("give exactly one of --checkpoint or --ground-truth")
    _, frames = _read_features(args.features)
    if not 0 <= args.frame < len(frames):
        raise UsageError(f"frame {args.frame} out of range (0..{len(frames) - 1})")
    cep = frames.cepstrum[args.frame : args.frame + 1]
    sources = []
    if args.checkpoint is not None:
        params, _ = _load_checkpoint(args.checkpoint)
        sources.append(("predicted", mdl.frame_forward_numpy(params, cep)[2][0]))
    ref, _ = ground_truth_batch(cep, AnalysisConfig())
    sources.append(("ground_truth", ref[0]))
    freqs = np.arange(args.fft_size // 2 + 1) * 16000.0 / args.fft_size
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frequency_hz", "response_db", "source_label"])
    for label, lpc in sources:
        for f, r in zip(freqs, lpc_log_response(lpc, args.fft_size)):
            writer.writerow([f"{f:.6f}", f"{r:.6f}", label])
    _atomic_text(args.output, buf.getvalue())
    print(f"{len(sources)} responses x {freqs.size} bins -> {args.output}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradsuite.run_suite(n_points=args.points, per_tensor=args.entries)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="difflpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", help="WAV -> feature file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="pre-emphasis coefficient")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    s.add_argument("corpus", nargs="?", help="directory of 16 kHz mono 16-bit WAV files")
    s.add_argument("output", help="checkpoint path")
    s.add_argument("--config", help="JSON file with TrainConfig / loss / model fields")
    s.add_argument("--synthetic", type=float, metavar="SECONDS", help="train on a generated corpus instead")
    s.add_argument("--corpus-seed", type=int, default=0)
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--lar-weight", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--freeze-final-epoch", action="store_true")
    s.add_argument("--log", help="append per-batch NDJSON records here")
    s.add_argument("--dump-dir", help="where to write the batch dump if training diverges")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="feature file + checkpoint -> WAV")
    s.add_argument("features")
    s.add_argument("checkpoint")
    s.add_argument("output")
    s.add_argument("--temperature", type=float, default=1.0, help="<= 0 selects the argmax")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("lsd", help="mean LSD to the reference filters over active frames")
    s.add_argument("eval_dir")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--ground-truth", action="store_true", help="score the reference filters themselves")
    s.set_defaults(func=cmd_lsd)

    s = sub.add_parser("response", help="CSV of predicted and reference filter responses for one frame")
    s.add_argument("features")
    s.add_argument("frame", type=int)
    s.add_argument("output")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--ground-truth", action="store_true")
    s.add_argument("--fft-size", type=int, default=AnalysisConfig().fft_size)
    s.set_defaults(func=cmd_response)

    s = sub.add_parser("gradcheck", help="run the gradient verification suite")
    s.add_argument("--points", type=int, default=100, help="random points per primitive")
    s.add_argument("--entries", type=int, default=gradsuite.COMPOSED_ENTRIES,
                   help="entries per tensor for the composed-loss checks")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        where = f" (batch dump: {exc.dump})" if exc.dump else ""
        print(f"error: training diverged: {exc}{where}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  runtime failure: report, exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
