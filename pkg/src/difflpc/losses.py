"""Training objectives over 256-way mu-law excitation distributions.

Targets are real-valued mu-law excitations in [-128, 128]; class c of the
distribution holds the value c - 128. The interpolated cross-entropy reads the
probability at a fractional target by linear interpolation between the two
neighbouring classes, so its gradient reaches the target (and through it the
predictor). The compensation term adds |e| log(1 + mu) / U_max per sample,
which accounts for the mu-law bin width growing with amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, absolute, clip, interp_pick, log, mean, mul, pick, square, sub, tsum
from .autodiff.tensor import add
from .signal_ops import LOG1P_MU, U_MAX, round_half_away

LOG_FLOOR = 1e-12
OFFSET = 128
VARIANTS = ("L1", "LAR", "LAR_CE", "L1_plus_LAR")


@dataclass(frozen=True)
class LossConfig:
    variant: str = "L1_plus_LAR"
    gamma: float = 1.0
    lar_weight: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.gamma < 0 or self.lar_weight < 0:
            raise ValueError("gamma and lar_weight must be non-negative")

    @property
    def uses_lar(self) -> bool:
        return "LAR" in self.variant


def _targets(target):
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if np.any(np.abs(t) > U_MAX) or not np.all(np.isfinite(t)):
        raise ValueError("mu-law targets must be finite and within [-128, 128]")
    return t


def ce_loss(probs, target):
    """Mean -log P(target) for integer targets in [-128, 127]."""
    t = _targets(target)
    if np.any(t != np.round(t)) or np.any(t > U_MAX - 1):
        raise ValueError("ce_loss needs integer targets in [-128, 127]")
    chosen = pick(probs, (t + OFFSET).astype(np.int64))
    return mul(mean(log(chosen, LOG_FLOOR)), -1.0)


def ice_loss(probs, target):
    """Interpolated cross-entropy; differentiable in ``probs`` and ``target``.

    A target of exactly 128 sits past the top class and is read as 127 (the
    top bin), with no gradient into the target there.
    """
    _targets(target)
    position = clip(target, -U_MAX, U_MAX - 1)
    chosen = interp_pick(probs, position, offset=OFFSET)
    return mul(mean(log(chosen, LOG_FLOOR)), -1.0)


def compensation(target):
    """mean(|e|) * log(1 + mu) / U_max."""
    _targets(target)
    return mul(mean(absolute(target)), LOG1P_MU / U_MAX)


def compensated_loss(probs, target):
    return add(ice_loss(probs, target), compensation(target))


def l1_reg(target, gamma: float = 1.0):
    return mul(compensation(target), gamma)


def lar(k):
    """log((1 - k) / (1 + k)) as a differentiable map."""
    return sub(log(sub(1.0, k)), log(add(k, 1.0)))


def lar_reg(k, k_ref, lar_weight: float = 1.0):
    """Mean over frames of the summed squared LAR differences, times ``lar_weight``."""
    kd = k.data if isinstance(k, Tensor) else np.asarray(k)
    kr = np.asarray(k_ref, dtype=np.float64)
    if kd.shape != kr.shape:
        raise ValueError(f"RC shapes differ: {kd.shape} vs {kr.shape}")
    if np.any(np.abs(kd) >= 1) or np.any(np.abs(kr) >= 1):
        raise ValueError("reflection coefficients must lie in (-1, 1)")
    per_frame = tsum(square(sub(lar(k), lar(Tensor(kr)))), axis=-1)
    return mul(mean(per_frame), lar_weight)


def total_loss(cfg: LossConfig, probs, target, k=None, k_ref=None):
    """Loss of the configured variant and a dict of its terms as floats.

    L1: compensated + gamma * compensation. LAR: compensated + LAR term.
    LAR_CE: CE on the rounded excitation + LAR term (rounding blocks the
    excitation gradient). L1_plus_LAR: all three.
    """
    terms = {}
    if cfg.variant == "LAR_CE":
        rounded = np.minimum(round_half_away(_targets(target)), U_MAX - 1)
        loss = ce_loss(probs, rounded)
        terms["ce"] = float(loss.data)
    else:
        ice = ice_loss(probs, target)
        comp = compensation(target)
        terms["ice"] = float(ice.data)
        terms["compensation"] = float(comp.data)
        loss = add(ice, comp)
        if cfg.variant in ("L1", "L1_plus_LAR"):
            l1 = mul(comp, cfg.gamma)
            terms["l1"] = float(l1.data)
            loss = add(loss, l1)
    if cfg.uses_lar:
        if k is None or k_ref is None:
            raise ValueError(f"variant {cfg.variant} needs predicted and reference RCs")
        reg = lar_reg(k, k_ref, cfg.lar_weight)
        terms["lar"] = float(reg.data)
        loss = add(loss, reg)
    return loss, terms
