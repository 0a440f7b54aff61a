"""Frame-rate and sample-rate networks of the end-to-end LPC vocoder.

The frame-rate network maps normalised band cepstra to a conditioning vector
f in (-1, 1)^F; its first M entries, scaled by 0.999, are the reflection
coefficients, converted to predictor coefficients by the differentiable
Levinson layer. The sample-rate network embeds (s[t-1], p[t], e[t-1]) in the
mu-law domain, runs GRU_A and GRU_B (both also fed f) and ends in a 256-way
softmax over the mu-law excitation e[t].
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import signal_ops
from .autodiff import (
    EMBED_ROWS,
    Tensor,
    affine,
    clip,
    concat,
    embed_interp,
    embed_round,
    gru_sequence,
    gru_step_numpy,
    levinson_layer,
    matmul,
    mu_compand_layer,
    mul,
    predict_layer,
    reshape,
    softmax,
    sub,
    tanh,
)
from .autodiff.tensor import add
from .signal_ops import history_matrix

CHECKPOINT_VERSION = 1
N_CLASSES = 256


@dataclass(frozen=True)
class ModelConfig:
    n_bands: int = 18
    lpc_order: int = 16
    cond_size: int = 128
    embed_size: int = 64
    gru_a: int = 192
    gru_b: int = 32
    frame_size: int = 160
    rc_scale: float = 0.999

    def __post_init__(self):
        if self.lpc_order > self.cond_size:
            raise ValueError("the RC head needs cond_size >= lpc_order")


FRAME_NET = ("fr_W1", "fr_b1", "fr_W2", "fr_b2")


class ModelParams:
    """Named float64 tensors of both networks, feature normalisation and a freeze mask."""

    def __init__(self, config: ModelConfig, tensors: dict, feature_mean=None, feature_std=None):
        self.config = config
        self.tensors = {name: t if isinstance(t, Tensor) else Tensor(t) for name, t in tensors.items()}
        for t in self.tensors.values():
            t.requires_grad = True
        self.feature_mean = np.zeros(config.n_bands) if feature_mean is None else np.asarray(feature_mean, dtype=np.float64)
        self.feature_std = np.ones(config.n_bands) if feature_std is None else np.asarray(feature_std, dtype=np.float64)
        self.frozen: set[str] = set()

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def frame_net_names(self):
        return [n for n in self.tensors if n in FRAME_NET]

    def sample_net_names(self):
        return [n for n in self.tensors if n not in FRAME_NET]

    def freeze(self, names):
        self.frozen |= set(names)

    def unfreeze(self, names=None):
        self.frozen = set() if names is None else self.frozen - set(names)

    def trainable(self):
        return [n for n in self.tensors if n not in self.frozen]

    def snapshot(self) -> dict:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        out = ModelParams(self.config, self.snapshot(), self.feature_mean.copy(), self.feature_std.copy())
        out.frozen = set(self.frozen)
        return out


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def _orthogonal(rng, n, m):
    blocks = []
    for _ in range(m // n):
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        blocks.append(q * np.sign(np.diag(r)))
    return np.concatenate(blocks, axis=1)


def init_params(config: ModelConfig | None = None, seed: int = 0, zero: bool = False) -> ModelParams:
    """Glorot input weights, orthogonal recurrent weights, zero biases.

    The embedding table starts roughly linear in the mu-law value so that
    neighbouring rows are close and interpolation is meaningful from the
    first update. ``zero=True`` gives all-zero tensors.
    """
    c = config or ModelConfig()
    rng = np.random.default_rng(seed)
    shapes = {
        "fr_W1": (c.n_bands, c.cond_size), "fr_b1": (c.cond_size,),
        "fr_W2": (c.cond_size, c.cond_size), "fr_b2": (c.cond_size,),
        "embed": (EMBED_ROWS, c.embed_size),
        "a_W": (3 * c.embed_size + c.cond_size, 3 * c.gru_a), "a_U": (c.gru_a, 3 * c.gru_a),
        "a_b": (3 * c.gru_a,), "a_bu": (3 * c.gru_a,),
        "b_W": (c.gru_a + c.cond_size, 3 * c.gru_b), "b_U": (c.gru_b, 3 * c.gru_b),
        "b_b": (3 * c.gru_b,), "b_bu": (3 * c.gru_b,),
        "out_W": (c.gru_b, N_CLASSES), "out_b": (N_CLASSES,),
    }
    if zero:
        return ModelParams(c, {n: np.zeros(s) for n, s in shapes.items()})
    tensors = {}
    for name, shape in shapes.items():
        if name == "embed":
            level = np.arange(EMBED_ROWS)[:, None] - 128.0
            slope = rng.standard_normal(shape[1]) * np.sqrt(3.0) / 128.0
            tensors[name] = level * slope + 0.1 * rng.standard_normal(shape)
        elif name.endswith("_U"):
            tensors[name] = _orthogonal(rng, *shape)
        elif len(shape) == 2:
            tensors[name] = _glorot(rng, *shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(c, tensors)


# -- frame rate ---------------------------------------------------------------

@dataclass
class FrameOutput:
    cond: Tensor
    rc: Tensor
    lpc: Tensor


def frame_forward(params: ModelParams, features) -> FrameOutput:
    """Conditioning vector, reflection coefficients and LPCs for (..., n_bands) features."""
    c = params.config
    x = np.asarray(getattr(features, "cepstrum", features), dtype=np.float64)
    if x.shape[-1] != c.n_bands:
        raise ValueError(f"expected {c.n_bands} features per frame, got {x.shape[-1]}")
    x = Tensor((x - params.feature_mean) / params.feature_std)
    hidden = tanh(affine(x, params["fr_W1"], params["fr_b1"]))
    cond = tanh(affine(hidden, params["fr_W2"], params["fr_b2"]))
    rc = mul(cond[..., : c.lpc_order], c.rc_scale)
    return FrameOutput(cond, rc, levinson_layer(rc))


def frame_forward_numpy(params: ModelParams, features):
    out = frame_forward(params, np.asarray(getattr(features, "cepstrum", features), dtype=np.float64))
    return out.cond.data, out.rc.data, out.lpc.data


# -- sample rate --------------------------------------------------------------

def _frame_broadcast_add(per_sample: Tensor, per_frame: Tensor, frame_size: int) -> Tensor:
    """per_sample (B, NF*fs, D) + per_frame (B, NF, D) repeated over each frame."""
    B, T, D = per_sample.shape
    nf = per_frame.shape[1]
    if nf * frame_size != T:
        raise ValueError(f"{nf} frames do not cover {T} samples")
    blocks = reshape(per_sample, (B, nf, frame_size, D))
    return reshape(add(blocks, reshape(per_frame, (B, nf, 1, D))), (B, T, D))


def _split_input_weights(W: Tensor, n_first: int):
    return W[:n_first], W[n_first:]


def sample_network(params: ModelParams, cond: Tensor, s_prev, p_now, e_prev, interpolate: bool = True):
    """Probability vectors (B, T, 256) for mu-law inputs of shape (B, T).

    ``cond`` is (B, NF, F) with NF * frame_size == T. With ``interpolate=False``
    the embeddings use the nearest row (inference behaviour).
    """
    c = params.config
    table = params["embed"]
    values = (s_prev, p_now, e_prev)
    if interpolate:
        emb = concat([embed_interp(table, v) for v in values], axis=-1)
    else:
        emb = Tensor(np.concatenate([embed_round(table, v) for v in values], axis=-1))
    Wa_emb, Wa_cond = _split_input_weights(params["a_W"], 3 * c.embed_size)
    emb_proj = matmul(emb, Wa_emb)
    xa = _frame_broadcast_add(emb_proj, affine(cond, Wa_cond, params["a_b"]), c.frame_size)
    B = xa.shape[0]
    ha = gru_sequence(xa, Tensor(np.zeros((B, c.gru_a))), params["a_U"], params["a_bu"])
    Wb_h, Wb_cond = _split_input_weights(params["b_W"], c.gru_a)
    xb = _frame_broadcast_add(matmul(ha, Wb_h), affine(cond, Wb_cond, params["b_b"]), c.frame_size)
    hb = gru_sequence(xb, Tensor(np.zeros((B, c.gru_b))), params["b_U"], params["b_bu"])
    return softmax(affine(hb, params["out_W"], params["out_b"]))


def sample_forward(params: ModelParams, p_t, s_prev, e_prev, cond, interpolate: bool = True) -> np.ndarray:
    """256-way distribution for one step from a fresh (zero) GRU state.

    Convenience wrapper around :func:`sample_network` for a single frame of
    conditioning; inputs are real mu-law values (scalars or (B,) arrays).
    """
    c = params.config
    cond = np.atleast_2d(np.asarray(getattr(cond, "data", cond), dtype=np.float64))
    B = cond.shape[0]
    shape = (B, c.frame_size)
    col = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float64).reshape(-1, 1), shape)
    probs = sample_network(params, Tensor(cond[:, None, :]), col(s_prev), col(p_t), col(e_prev), interpolate)
    return probs.data[:, 0]


@dataclass
class TeacherForced:
    prediction: Tensor      # (B, T) linear p[t]
    excitation_mu: Tensor   # (B, T) real mu-law e[t], the loss target
    probs: Tensor           # (B, T, 256)
    frame: FrameOutput


def teacher_forced_pass(params: ModelParams, signal, context, features, noise=None) -> TeacherForced:
    """Whole-sequence forward pass on ground-truth (pre-emphasised) samples.

    signal : (B, T) samples of the sequences
    context : (B, M + 1) samples preceding each sequence (zeros at utterance start)
    features : (B, NF, n_bands) with NF * frame_size == T
    noise : optional (2, B, T) integer mu-law offsets added to the s[t-1] and
        e[t-1] network inputs (training-time augmentation)

    The excitation e[t] = s[t] - p[t] is computed with the predicted LPCs on
    the tape, so the loss gradient reaches the reflection coefficients both
    through the target and through the p[t], e[t-1] inputs.
    """
    c = params.config
    signal = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    context = np.atleast_2d(np.asarray(context, dtype=np.float64))
    B, T = signal.shape
    M = c.lpc_order
    frame = frame_forward(params, np.asarray(features, dtype=np.float64))
    ext = np.concatenate([context[:, -1:], signal], axis=1)            # s[-1] .. s[T-1]
    hist = np.stack([history_matrix(ext[b], M, context[b, :-1]) for b in range(B)])
    lpc = frame.lpc
    nf = lpc.shape[1]
    if nf * c.frame_size != T:
        raise ValueError(f"{nf} frames do not cover {T} samples")
    per_sample = reshape(
        add(Tensor(np.zeros((B, nf, c.frame_size, M))), reshape(lpc, (B, nf, 1, M))), (B, T, M)
    )
    a_ext = concat([lpc[:, :1], per_sample], axis=1)                   # s[-1] uses frame 0
    pred = predict_layer(Tensor(hist), a_ext)                          # (B, T + 1)
    exc = sub(Tensor(ext), pred)
    exc_mu = mu_compand_layer(clip(exc, -1.0, 1.0))
    p_mu = mu_compand_layer(clip(pred[:, 1:], -1.0, 1.0))
    s_prev_mu = Tensor(signal_ops.mu_compand(np.clip(ext[:, :-1], -1.0, 1.0)))
    e_prev_mu = exc_mu[:, :-1]
    if noise is not None:
        s_prev_mu = clip(add(s_prev_mu, noise[0]), -signal_ops.U_MAX, signal_ops.U_MAX)
        e_prev_mu = clip(add(e_prev_mu, noise[1]), -signal_ops.U_MAX, signal_ops.U_MAX)
    probs = sample_network(params, frame.cond, s_prev_mu, p_mu, e_prev_mu)
    return TeacherForced(pred[:, 1:], exc_mu[:, 1:], probs, frame)


def augmentation_noise(rng: np.random.Generator, shape, prob: float = 0.3) -> np.ndarray:
    """Integer offsets in {-1, 0, +1}, nonzero with probability ``prob``."""
    hit = rng.random((2,) + tuple(shape)) < prob
    sign = rng.choice(np.array([-1.0, 1.0]), size=(2,) + tuple(shape))
    return np.where(hit, sign, 0.0)


# -- synthesis ----------------------------------------------------------------

def synthesize(params: ModelParams, features, temperature: float = 1.0, seed: int = 0,
               alpha: float = signal_ops.DEFAULT_ALPHA) -> signal_ops.Signal:
    """Autoregressive generation; one frame_size block per feature frame.

    Excitation classes are drawn from softmax(logits / temperature), or the
    argmax when ``temperature <= 0``. Embeddings use nearest-row lookup and
    the output is de-emphasised.
    """
    c = params.config
    cep = np.atleast_2d(np.asarray(getattr(features, "cepstrum", features), dtype=np.float64))
    cond, _, lpc = frame_forward_numpy(params, cep)
    t = {n: params[n].data for n in params.names()}
    E, Ha = c.embed_size, c.gru_a
    # embedding rows pushed through the GRU_A input weights, one table per input slot
    slot_tables = [t["embed"] @ t["a_W"][i * E : (i + 1) * E] for i in range(3)]
    cond_a = cond @ t["a_W"][3 * E :] + t["a_b"]
    cond_b = cond @ t["b_W"][Ha:] + t["b_b"]
    Wb_h = t["b_W"][:Ha]
    rng = np.random.default_rng(seed)
    n = cep.shape[0] * c.frame_size
    out = np.zeros(n + c.lpc_order)
    ha = np.zeros(c.gru_a)
    hb = np.zeros(c.gru_b)
    e_prev = 0
    for j in range(cep.shape[0]):
        a_rev = lpc[j][::-1]
        for i in range(c.frame_size):
            pos = j * c.frame_size + i + c.lpc_order
            past = out[pos - c.lpc_order : pos]
            p = float(np.dot(a_rev, past))
            p_q = signal_ops.mu_quantize(signal_ops.mu_compand(min(max(p, -1.0), 1.0)))
            s_q = signal_ops.mu_quantize(signal_ops.mu_compand(past[-1]))
            xa = (slot_tables[0][s_q + 128] + slot_tables[1][p_q + 128]
                  + slot_tables[2][e_prev + 128] + cond_a[j])
            ha = gru_step_numpy(xa, ha, t["a_U"], t["a_bu"])
            hb = gru_step_numpy(ha @ Wb_h + cond_b[j], hb, t["b_U"], t["b_bu"])
            logits = hb @ t["out_W"] + t["out_b"]
            if temperature <= 0:
                cls = int(np.argmax(logits))
            else:
                z = logits / temperature
                prob = np.exp(z - z.max())
                prob /= prob.sum()
                cls = int(rng.choice(N_CLASSES, p=prob))
            e_prev = cls - 128
            out[pos] = min(max(p + float(signal_ops.mu_expand(e_prev)), -1.0), 1.0)
    y, _ = signal_ops.de_emphasis(out[c.lpc_order :], alpha)
    return signal_ops.Signal(y)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    """Header JSON line then the named tensors as little-endian float64, in header order.

    Written to a temporary file and renamed into place.
    """
    arrays = dict(params.snapshot())
    arrays["feature_mean"] = params.feature_mean
    arrays["feature_std"] = params.feature_std
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "M": params.config.lpc_order,
        "B": params.config.n_bands,
        "F": params.config.cond_size,
        "E": params.config.embed_size,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(json.dumps(header).encode() + b"\n")
            for v in arrays.values():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_checkpoint(path):
    """Returns (ModelParams, header)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    arrays, offset = {}, 0
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        chunk = payload[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ValueError(f"{path}: truncated tensor {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(spec["shape"]).astype(np.float64)
        offset += 8 * count
    mean, std = arrays.pop("feature_mean"), arrays.pop("feature_std")
    return ModelParams(ModelConfig(**header["config"]), arrays, mean, std), header
