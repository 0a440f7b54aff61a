"""Gradient verification suite: every primitive and the composed training loss.

Each check compares tape gradients with central finite differences. The
composed-loss checks run a full teacher-forced pass (frame network, Levinson
layer, prediction, companding, embeddings, both GRUs, softmax) on a tiny model
with the real LP order and three frames, for each loss variant.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .autodiff import (
    GRUParams,
    Tape,
    Tensor,
    absolute,
    add,
    affine,
    clip,
    concat,
    div,
    embed_interp,
    embed_interp_sum,
    exp,
    grad_check,
    gru_cell,
    gru_sequence,
    interp_pick,
    levinson_layer,
    log,
    matmul,
    mean,
    mu_compand_layer,
    mul,
    pick,
    predict_layer,
    repeat,
    reshape,
    sigmoid,
    softmax,
    square,
    sub,
    tanh,
    tsum,
)
from .losses import VARIANTS, LossConfig, total_loss

SMOOTH_TOL = 1e-6
KINK_TOL = 1e-4
MICRO_CONFIG = mdl.ModelConfig(n_bands=18, lpc_order=16, cond_size=16, embed_size=4, gru_a=8, gru_b=4,
                               frame_size=8)
MICRO_FRAMES = 3
LAYER_STEP = 1e-3
EMBED_ENTRIES = 64
COMPOSED_STEP = 1e-3
COMPOSED_ENTRIES = 48


def weighted(out, seed=0):
    """Scalar reduction with fixed random weights so every output entry matters."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return tsum(mul(out, w))


def away_from_integers(x, guard=1e-3):
    frac = x - np.floor(x)
    return np.where(frac < guard, x + 2 * guard, np.where(frac > 1 - guard, x - 2 * guard, x))


def _gru_cell_fn(x, h, W, U, b, bu):
    return weighted(gru_cell(x, h, GRUParams(W, U, b, bu)))


def _gru_seq_fn(x, h0, U, bu):
    return weighted(gru_sequence(x, h0, U, bu))


# (name, scalar function of tensors, point generator)
SMOOTH = [
    ("add", lambda a, b: weighted(add(a, b)), lambda r: [r.normal(size=(3, 4)), r.normal(size=4)]),
    ("sub", lambda a, b: weighted(sub(a, b)), lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))]),
    ("mul", lambda a, b: weighted(mul(a, b)), lambda r: [r.normal(size=(3, 4)), r.normal(size=4)]),
    ("div", lambda a, b: weighted(div(a, b)), lambda r: [r.normal(size=5), r.uniform(0.5, 2, 5)]),
    ("matmul", lambda a, b: weighted(matmul(a, b)), lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))]),
    ("affine", lambda x, W, b: weighted(affine(x, W, b)),
     lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2)), r.normal(size=2)]),
    ("tanh", lambda x: weighted(tanh(x)), lambda r: [r.normal(size=6)]),
    ("sigmoid", lambda x: weighted(sigmoid(x)), lambda r: [r.normal(size=6)]),
    ("exp", lambda x: weighted(exp(x)), lambda r: [r.normal(size=6)]),
    ("log", lambda x: weighted(log(x)), lambda r: [r.uniform(0.1, 3, 6)]),
    ("square", lambda x: weighted(square(x)), lambda r: [r.normal(size=6)]),
    ("mean", lambda x: weighted(mean(x, axis=0)), lambda r: [r.normal(size=(3, 4))]),
    ("reshape", lambda x: weighted(reshape(x, (4, 3))), lambda r: [r.normal(size=(3, 4))]),
    ("getitem", lambda x: weighted(x[1:, ::2]), lambda r: [r.normal(size=(3, 4))]),
    ("concat", lambda a, b: weighted(concat([a, b], axis=0)), lambda r: [r.normal(size=(2, 3)), r.normal(size=(1, 3))]),
    ("repeat", lambda x: weighted(repeat(x, 3, axis=1)), lambda r: [r.normal(size=(2, 2, 3))]),
    ("softmax", lambda x: weighted(softmax(x)), lambda r: [r.normal(size=(2, 7))]),
    ("pick", lambda p: weighted(pick(softmax(p), np.array([1, 5]))), lambda r: [r.normal(size=(2, 7))]),
    ("levinson", lambda k: weighted(levinson_layer(k)), lambda r: [r.uniform(-0.9, 0.9, (2, 16))]),
    ("predict", lambda h, a: weighted(predict_layer(h, a)), lambda r: [r.normal(size=(5, 16)), r.normal(size=16)]),
    # finite-difference truncation error grows like (mu / (1 + mu|x|))^2 near 0
    ("mu_compand", lambda x: weighted(mu_compand_layer(x)),
     lambda r: [r.choice([-1, 1], 6) * r.uniform(1e-2, 0.999, 6)]),
]

# composite layers: the five-point stencil keeps rounding noise on small entries below tolerance
LAYERS = [
    ("gru_cell", _gru_cell_fn,
     lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 4)) * 0.5, r.normal(size=(3, 12)) * 0.5,
                r.normal(size=(4, 12)) * 0.5, r.normal(size=12) * 0.1, r.normal(size=12) * 0.1]),
    ("gru_sequence", _gru_seq_fn,
     lambda r: [r.normal(size=(2, 5, 9)), r.normal(size=(2, 3)) * 0.5, r.normal(size=(3, 9)) * 0.5,
                r.normal(size=9) * 0.1]),
]

KINKED = [
    ("mu_compand_near_zero", lambda x: weighted(mu_compand_layer(x)),
     lambda r: [r.choice([-1, 1], 6) * r.uniform(1e-3, 1e-2, 6)]),
    ("absolute", lambda x: weighted(absolute(x)), lambda r: [r.choice([-1, 1], 6) * r.uniform(1e-3, 2, 6)]),
    ("clip", lambda x: weighted(clip(x, -1, 1)), lambda r: [r.uniform(-2, 2, 6)]),
    ("log_floor", lambda x: weighted(log(x, 0.05)), lambda r: [r.uniform(0.06, 2, 6)]),
    # each table check samples EMBED_ENTRIES of the 257 x 3 (+ position) entries
    ("embed_interp", lambda t, x: weighted(embed_interp(t, x)),
     lambda r: [r.normal(size=(257, 3)), away_from_integers(r.uniform(-128, 128, 4))]),
    ("embed_interp_sum", lambda t1, t2, x1, x2: weighted(embed_interp_sum([t1, t2], [x1, x2])),
     lambda r: [r.normal(size=(257, 3)), r.normal(size=(257, 3)),
                away_from_integers(r.uniform(-128, 128, 4)), away_from_integers(r.uniform(-128, 128, 4))]),
    ("interp_pick", lambda p, x: weighted(interp_pick(softmax(p), x, offset=3)),
     lambda r: [r.normal(size=(4, 7)), away_from_integers(r.uniform(-3, 3, 4))]),
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_error: float
    n_checked: int
    n_skipped: int
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max rel error {self.max_rel_error:.2e} over {self.n_checked} entries"
                f" ({self.n_skipped} at kinks, {self.seconds:.1f} s)")


def name_seed(name: str) -> int:
    return zlib.crc32(name.encode())


def check_primitive(name, fn, gen, tolerance, n_points=100, h: float = 1e-5, stencil: int = 3,
                    max_entries: int | None = None) -> CheckResult:
    """grad_check at ``n_points`` seeded random points; aggregates the reports."""
    rng = np.random.default_rng(name_seed(name))
    t0 = time.perf_counter()
    ok, worst, checked, skipped = True, 0.0, 0, 0
    for i in range(n_points):
        report = grad_check(fn, gen(rng), h=h, tolerance=tolerance, stencil=stencil, max_entries=max_entries,
                            seed=i)
        ok &= report.passed
        worst = max(worst, report.max_rel_error)
        checked += report.n_checked
        skipped += len(report.skipped_indices)
    return CheckResult(name, ok, worst, checked, skipped, time.perf_counter() - t0)


def primitive_checks(n_points: int = 100):
    """CheckResult for every primitive and composite layer."""
    results = [check_primitive(n, f, g, SMOOTH_TOL, n_points) for n, f, g in SMOOTH]
    results += [check_primitive(n, f, g, KINK_TOL, n_points, h=LAYER_STEP, stencil=5) for n, f, g in LAYERS]
    for n, f, g in KINKED:
        entries = EMBED_ENTRIES if n.startswith("embed") else None
        results.append(check_primitive(n, f, g, KINK_TOL, n_points, max_entries=entries))
    return results


# -- composed loss on a micro model -------------------------------------------

def micro_problem(seed: int = 0, config: mdl.ModelConfig = MICRO_CONFIG, n_frames: int = MICRO_FRAMES):
    """Parameters and one random teacher-forced sequence for the micro model."""
    rng = np.random.default_rng(seed)
    params = mdl.init_params(config, seed=seed)
    T = n_frames * config.frame_size
    M = config.lpc_order
    x = np.zeros(T + M + 1)
    e = 0.05 * rng.standard_normal(T + M + 1)
    for t in range(T + M + 1):
        x[t] = e[t] + (1.3 * x[t - 1] - 0.6 * x[t - 2] if t >= 2 else 0.0)
    x *= 0.4 / np.max(np.abs(x))
    data = {
        "signal": x[None, M + 1 :],
        "context": x[None, : M + 1],
        "features": rng.normal(size=(1, n_frames, config.n_bands)),
        "rc_ref": rng.uniform(-0.8, 0.8, (1, n_frames, M)),
        "noise": mdl.augmentation_noise(rng, (1, T), 0.3),
    }
    return params, data


def composed_loss_fn(config: mdl.ModelConfig, names, data, loss_cfg: LossConfig):
    """Scalar loss as a function of the parameter tensors listed in ``names``."""

    def fn(*tensors):
        params = mdl.ModelParams(config, dict(zip(names, tensors)))
        tf = mdl.teacher_forced_pass(params, data["signal"], data["context"], data["features"], data["noise"])
        k_ref = data["rc_ref"] if loss_cfg.uses_lar else None
        loss, _ = total_loss(loss_cfg, tf.probs, tf.excitation_mu, tf.frame.rc, k_ref)
        return loss

    return fn


def _entry_sample(params: mdl.ModelParams, names, fn, per_tensor: int, seed: int):
    """Up to ``per_tensor`` seeded entries of each tensor.

    Embedding rows the sequence never reads have an exactly zero gradient on
    both sides, so the embedding sample is drawn from the rows that are read.
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(params[n].data.copy(), requires_grad=True) for n in names]
    with Tape() as tape:
        out = fn(*tensors)
    tape.backward(out)
    indices = []
    for i, (name, t) in enumerate(zip(names, tensors)):
        pool = np.arange(t.data.size)
        if name == "embed":
            rows = np.flatnonzero(np.any(t.grad != 0, axis=1))
            pool = (rows[:, None] * t.data.shape[1] + np.arange(t.data.shape[1])).ravel()
        if per_tensor is not None and pool.size > per_tensor:
            pool = np.sort(rng.choice(pool, per_tensor, replace=False))
        indices += [(i, int(j)) for j in pool]
    return indices


def check_composed_loss(variant: str, seed: int = 0, tolerance: float = KINK_TOL, h: float = COMPOSED_STEP,
                        per_tensor: int | None = COMPOSED_ENTRIES) -> CheckResult:
    """Finite-difference check of the full loss gradient w.r.t. the model parameters.

    Many entries have gradients near 1e-7 while the loss is O(10); a plain
    central difference at h = 1e-5 carries rounding noise (~1e-16 * loss / h)
    of 1e-3 relative to such an entry. The fourth-order stencil at h = 1e-3
    keeps both truncation and rounding error well under the tolerance.
    ``per_tensor=None`` checks every entry (about four minutes per variant).
    """
    params, data = micro_problem(seed)
    names = params.names()
    fn = composed_loss_fn(params.config, names, data, LossConfig(variant))
    t0 = time.perf_counter()
    indices = _entry_sample(params, names, fn, per_tensor, seed)
    report = grad_check(fn, [params[n].data for n in names], h=h, tolerance=tolerance, indices=indices,
                        stencil=5, refine=4)
    return CheckResult(f"composed loss {variant}", report.passed, report.max_rel_error, report.n_checked,
                       len(report.skipped_indices), time.perf_counter() - t0)


def run_suite(n_points: int = 100, per_tensor: int | None = COMPOSED_ENTRIES):
    """All primitive checks followed by the composed-loss check of each variant."""
    results = primitive_checks(n_points)
    results += [check_composed_loss(v, per_tensor=per_tensor) for v in VARIANTS]
    return results
