"""Sequence batching, Adam updates, learning-rate schedule and the freeze epoch."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as mdl
from .autodiff import Tape, mul
from .features import AnalysisConfig, activity_mask, analyze_aligned, ground_truth_batch
from .losses import LossConfig, total_loss
from .lp_math import log_spectral_distance
from .signal_ops import pre_emphasis

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    sequence_ms: int = 150
    frame_ms: int = 10
    batch_size: int = 32
    epochs: int = 20
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 5
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    freeze_final_epoch: bool = False
    clip_norm: float = 10.0
    noise_prob: float = 0.3
    micro_batch: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.frame_ms <= 0 or self.sequence_ms % self.frame_ms:
            raise ValueError("sequence_ms must be a positive multiple of frame_ms")
        if self.batch_size < 1 or self.micro_batch < 1 or self.epochs < 0:
            raise ValueError("batch_size and micro_batch must be positive, epochs non-negative")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("noise_prob must be a probability")

    @property
    def frames_per_sequence(self) -> int:
        return self.sequence_ms // self.frame_ms

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossConfig(**d["loss"])
        return cls(**d)


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; ``dump`` names the diagnostic file if one was written."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


# -- data ---------------------------------------------------------------------

@dataclass
class SequenceSet:
    signal: np.ndarray       # (N, T) pre-emphasised samples
    context: np.ndarray      # (N, M + 1) samples before each sequence
    features: np.ndarray     # (N, NF, n_bands)
    rc_ref: np.ndarray       # (N, NF, M) reference reflection coefficients
    lpc_ref: np.ndarray      # (N, NF, M)
    active: np.ndarray       # (N, NF) bool
    n_skipped: int = 0

    def __len__(self):
        return self.signal.shape[0]

    def subset(self, idx) -> "SequenceSet":
        return SequenceSet(self.signal[idx], self.context[idx], self.features[idx], self.rc_ref[idx],
                           self.lpc_ref[idx], self.active[idx], self.n_skipped)


def prepare_corpus(signals, analysis: AnalysisConfig | None = None, alpha: float | None = None):
    """Pre-emphasise raw utterances and compute their frame-aligned features."""
    analysis = analysis or AnalysisConfig()
    alpha = analysis.pre_emphasis if alpha is None else alpha
    pre, feats = [], []
    for sig in signals:
        x, _ = pre_emphasis(sig, alpha)
        pre.append(x)
        feats.append(analyze_aligned(x, analysis))
    return pre, feats


def make_sequences(signals, features, cfg: TrainConfig | None = None,
                   analysis: AnalysisConfig | None = None) -> SequenceSet:
    """Cut pre-emphasised utterances into non-overlapping sequences, seeded shuffle.

    ``features`` holds one frame-aligned cepstrum array (or FeatureFrames) per
    signal; frame j describes samples [j * frame_size, (j + 1) * frame_size).
    Utterances shorter than one sequence are skipped and counted. Frame
    activity uses the corpus-wide energy gate.
    """
    cfg = cfg or TrainConfig()
    analysis = analysis or AnalysisConfig()
    if abs(cfg.frame_ms * analysis.sample_rate / 1000.0 - analysis.frame_size) > 1e-9:
        raise ValueError("frame_ms does not match the analysis frame size")
    nf = cfg.frames_per_sequence
    T = nf * analysis.frame_size
    M = analysis.lpc_order
    if len(signals) != len(features):
        raise ValueError("need one feature array per signal")
    rows = {k: [] for k in ("signal", "context", "features")}
    skipped = 0
    for sig, feat in zip(signals, features):
        x = np.asarray(getattr(sig, "samples", sig), dtype=np.float64)
        cep = np.asarray(getattr(feat, "cepstrum", feat), dtype=np.float64)
        if cep.shape[0] < x.shape[0] // analysis.frame_size:
            raise ValueError("features are not aligned to the signal")
        n_seq = x.shape[0] // T
        if n_seq == 0:
            skipped += 1
            continue
        padded = np.concatenate([np.zeros(M + 1), x])
        for i in range(n_seq):
            start = i * T
            rows["signal"].append(x[start : start + T])
            rows["context"].append(padded[start : start + M + 1])
            rows["features"].append(cep[i * nf : (i + 1) * nf])
    if not rows["signal"]:
        n_bands = analysis.n_bands
        empty = np.zeros((0, nf, M))
        return SequenceSet(np.zeros((0, T)), np.zeros((0, M + 1)), np.zeros((0, nf, n_bands)),
                           empty, empty.copy(), np.zeros((0, nf), dtype=bool), skipped)
    feats = np.stack(rows["features"])
    flat = feats.reshape(-1, analysis.n_bands)
    lpc, rc = ground_truth_batch(flat, analysis)
    energy = 10.0 * flat[:, 0] / np.sqrt(analysis.n_bands)
    active = activity_mask(energy).reshape(feats.shape[:2])
    order = np.random.default_rng(cfg.seed).permutation(feats.shape[0])
    data = SequenceSet(np.stack(rows["signal"]), np.stack(rows["context"]), feats,
                       rc.reshape(feats.shape[:2] + (M,)), lpc.reshape(feats.shape[:2] + (M,)),
                       active, skipped)
    return data.subset(order)


def sequences_from_corpus(signals, cfg: TrainConfig | None = None, analysis: AnalysisConfig | None = None):
    pre, feats = prepare_corpus(signals, analysis)
    return make_sequences(pre, feats, cfg, analysis)


def fit_normalization(params: mdl.ModelParams, features) -> None:
    """Per-band mean and standard deviation of the training features."""
    flat = np.asarray(features, dtype=np.float64).reshape(-1, params.config.n_bands)
    params.feature_mean = flat.mean(axis=0)
    params.feature_std = np.maximum(flat.std(axis=0), 1e-3)


# -- optimisation -------------------------------------------------------------

class Adam:
    """Adaptive-moment updates; frozen tensors keep both value and moments."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: mdl.ModelParams, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in params.trainable():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def batch_loss(params: mdl.ModelParams, data: SequenceSet, loss_cfg: LossConfig, noise=None):
    """Tape-recorded loss of one (micro-)batch and its float terms."""
    tf = mdl.teacher_forced_pass(params, data.signal, data.context, data.features, noise)
    k_ref = data.rc_ref if loss_cfg.uses_lar else None
    return total_loss(loss_cfg, tf.probs, tf.excitation_mu, tf.frame.rc, k_ref)


def batch_gradients(params, data: SequenceSet, loss_cfg: LossConfig, micro_batch: int, rng=None,
                    noise_prob: float = 0.0):
    """Loss, terms and gradients of the batch mean, accumulated over micro-batches.

    Each micro-batch loss is weighted by its share of the batch, so the summed
    gradients equal those of a single pass over the whole batch.
    """
    n = len(data)
    grads = {name: np.zeros_like(params[name].data) for name in params.names()}
    total, terms = 0.0, {}
    for start in range(0, n, micro_batch):
        part = data.subset(slice(start, start + micro_batch))
        weight = len(part) / n
        noise = None
        if rng is not None and noise_prob > 0:
            noise = mdl.augmentation_noise(rng, part.signal.shape, noise_prob)
        with Tape() as tape:
            loss, part_terms = batch_loss(params, part, loss_cfg, noise)
            scaled = mul(loss, weight)
        tape.backward(scaled)
        total += weight * float(loss.data)
        for key, val in part_terms.items():
            terms[key] = terms.get(key, 0.0) + weight * val
        for name in params.names():
            g = params[name].grad
            if g is not None:
                grads[name] += g
                params[name].grad = None
    return total, terms, grads


def clip_gradients(grads: dict, names, max_norm: float):
    norm = float(np.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names)))
    clipped = bool(np.isfinite(norm) and norm > max_norm)
    if clipped:
        scale = max_norm / norm
        for n in names:
            grads[n] *= scale
    return norm, clipped


def _dump_batch(dump_dir, epoch, batch, params, data):
    if dump_dir is None:
        return None
    path = Path(dump_dir) / f"diverged_e{epoch}_b{batch}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, signal=data.signal, context=data.context, features=data.features,
             **{f"param_{k}": v for k, v in params.snapshot().items()})
    return str(path)


def train_epoch(params: mdl.ModelParams, data: SequenceSet, cfg: TrainConfig, epoch: int,
                optimizer: Adam, rng: np.random.Generator, log_file=None, dump_dir=None) -> dict:
    """One pass over shuffled batches; returns epoch statistics.

    Raises TrainingDiverged (after writing a diagnostic dump when ``dump_dir``
    is given) if a batch loss is not finite.
    """
    lr = cfg.learning_rate_at(epoch)
    order = rng.permutation(len(data))
    losses, norms, n_clipped, term_sums, weights = [], [], 0, {}, []
    for b, start in enumerate(range(0, len(data), cfg.batch_size)):
        batch = data.subset(order[start : start + cfg.batch_size])
        loss, terms, grads = batch_gradients(params, batch, cfg.loss, cfg.micro_batch, rng, cfg.noise_prob)
        if not np.isfinite(loss):
            dump = _dump_batch(dump_dir, epoch, b, params, batch)
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} batch {b}", dump)
        norm, clipped = clip_gradients(grads, params.trainable(), cfg.clip_norm)
        if not np.isfinite(norm):
            dump = _dump_batch(dump_dir, epoch, b, params, batch)
            raise TrainingDiverged(f"non-finite gradient at epoch {epoch} batch {b}", dump)
        optimizer.step(params, grads, lr)
        losses.append(loss)
        norms.append(norm)
        weights.append(len(batch))
        n_clipped += clipped
        for key, val in terms.items():
            term_sums[key] = term_sums.get(key, 0.0) + val * len(batch)
        if log_file is not None:
            record = {"epoch": epoch, "batch": b, "loss": loss, "terms": terms,
                      "grad_norm": norm, "clipped": clipped}
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
    w = np.asarray(weights, dtype=np.float64)
    stats = {
        "epoch": epoch,
        "lr": lr,
        "loss": float(np.dot(losses, w) / w.sum()) if losses else float("nan"),
        "terms": {k: v / w.sum() for k, v in term_sums.items()},
        "grad_norm": float(np.mean(norms)) if norms else 0.0,
        "clipped": int(n_clipped),
        "lsd": evaluate_lsd(params, data),
        "frozen": sorted(params.frozen),
    }
    log.info("epoch %d loss %.4f lsd %.3f dB", epoch, stats["loss"], stats["lsd"])
    return stats


# -- evaluation ---------------------------------------------------------------

def evaluate_lsd(params: mdl.ModelParams, data, lpc_ref=None, active=None) -> float:
    """Mean LSD in dB between predicted and reference LPCs over active frames.

    ``data`` is a SequenceSet, or a (frames, n_bands) cepstrum array together
    with ``lpc_ref`` and ``active``.
    """
    if isinstance(data, SequenceSet):
        cep = data.features.reshape(-1, data.features.shape[-1])
        lpc_ref = data.lpc_ref.reshape(-1, data.lpc_ref.shape[-1])
        active = data.active.ravel()
    else:
        cep = np.asarray(data, dtype=np.float64)
        active = np.ones(cep.shape[0], dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if not np.any(active):
        return float("nan")
    _, _, lpc = mdl.frame_forward_numpy(params, cep[active])
    return float(np.mean(log_spectral_distance(lpc, np.asarray(lpc_ref)[active])))


def evaluate_loss(params: mdl.ModelParams, data: SequenceSet, loss_cfg: LossConfig,
                  micro_batch: int = 8) -> tuple[float, dict]:
    """Mean loss over a dataset without noise augmentation or parameter updates."""
    total, terms = 0.0, {}
    for start in range(0, len(data), micro_batch):
        part = data.subset(slice(start, start + micro_batch))
        loss, part_terms = batch_loss(params, part, loss_cfg)
        w = len(part) / len(data)
        total += w * float(loss.data)
        for key, val in part_terms.items():
            terms[key] = terms.get(key, 0.0) + w * val
    return total, terms


@dataclass
class TrainResult:
    params: mdl.ModelParams
    history: list
    freeze_check: dict | None = None


def fit(data: SequenceSet, cfg: TrainConfig | None = None, model_config: mdl.ModelConfig | None = None,
        params: mdl.ModelParams | None = None, validation: SequenceSet | None = None,
        log_path=None, dump_dir=None, callback=None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs, plus a frozen-frame-net epoch if configured.

    With the freeze epoch, ``freeze_check`` records the validation loss before
    and after it and whether every frame-net tensor stayed bit-identical.
    """
    cfg = cfg or TrainConfig()
    if params is None:
        params = mdl.init_params(model_config, seed=cfg.seed)
        fit_normalization(params, data.features)
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    history = []
    fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            history.append(train_epoch(params, data, cfg, epoch, optimizer, rng, fh, dump_dir))
            if callback is not None:
                callback(history[-1], params)
        freeze_check = None
        if cfg.freeze_final_epoch:
            check_set = validation if validation is not None else data
            before_loss, _ = evaluate_loss(params, check_set, cfg.loss, cfg.micro_batch)
            frame_names = params.frame_net_names()
            before = {n: params[n].data.copy() for n in frame_names}
            sample_before = {n: params[n].data.copy() for n in params.sample_net_names()}
            params.freeze(frame_names)
            try:
                history.append(train_epoch(params, data, cfg, cfg.epochs, optimizer, rng, fh, dump_dir))
            finally:
                params.unfreeze(frame_names)
            after_loss, _ = evaluate_loss(params, check_set, cfg.loss, cfg.micro_batch)
            freeze_check = {
                "validation_before": before_loss,
                "validation_after": after_loss,
                "frame_net_identical": all(np.array_equal(before[n], params[n].data) for n in frame_names),
                "sample_net_changed": any(not np.array_equal(v, params[n].data) for n, v in sample_before.items()),
            }
            if callback is not None:
                callback(history[-1], params)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(params, history, freeze_check)


def lsd_baseline(data: SequenceSet) -> float:
    """LSD of the flat predictor (all RCs zero) against the references, over active frames."""
    ref = data.lpc_ref.reshape(-1, data.lpc_ref.shape[-1])[data.active.ravel()]
    return float(np.mean(log_spectral_distance(np.zeros_like(ref), ref)))


def with_loss(cfg: TrainConfig, variant: str, **kw) -> TrainConfig:
    return replace(cfg, loss=LossConfig(variant, **kw))


__all__ = [
    "Adam", "SequenceSet", "TrainConfig", "TrainResult", "TrainingDiverged", "batch_gradients",
    "batch_loss", "clip_gradients", "evaluate_loss", "evaluate_lsd", "fit", "fit_normalization",
    "lsd_baseline", "make_sequences", "prepare_corpus", "sequences_from_corpus", "train_epoch",
    "with_loss",
]
