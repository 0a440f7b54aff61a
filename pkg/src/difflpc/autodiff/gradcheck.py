"""Central finite differences against tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    failing_indices: list = field(default_factory=list)
    skipped_indices: list = field(default_factory=list)
    n_checked: int = 0
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return not self.failing_indices and self.n_checked > 0

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return (
            f"{status}: max rel error {self.max_rel_error:.3e} over {self.n_checked} "
            f"entries ({len(self.failing_indices)} failing, {len(self.skipped_indices)} "
            f"skipped at kinks)"
        )


def relative_error(fd, bp, floor: float = 1e-8):
    fd, bp = np.asarray(fd), np.asarray(bp)
    return np.abs(fd - bp) / np.maximum(np.maximum(np.abs(fd), np.abs(bp)), floor)


def _evaluate(fn, arrays):
    with Tape() as tape:
        out = fn(*[Tensor(a) for a in arrays])
    return float(out.data), tape.branches


def _same_branches(b1, b2) -> bool:
    return len(b1) == len(b2) and all(
        x.shape == y.shape and np.array_equal(x, y) for x, y in zip(b1, b2)
    )


def _difference(fn, arrays, arg, flat, h, stencil, base_branches):
    """Difference quotient for one entry, or None if a step crosses a kink."""
    steps = (h, -h) if stencil == 3 else (h, -h, 2 * h, -2 * h)
    values = []
    for step in steps:
        shifted = [a.copy() for a in arrays]
        shifted[arg].reshape(-1)[flat] += step
        val, branches = _evaluate(fn, shifted)
        if not _same_branches(branches, base_branches):
            return None
        values.append(val)
    if stencil == 3:
        return (values[0] - values[1]) / (2.0 * h)
    return (8.0 * (values[0] - values[1]) - (values[2] - values[3])) / (12.0 * h)


def grad_check(fn, point, h: float = 1e-5, tolerance: float = 1e-4, indices=None,
               max_entries: int | None = None, seed: int = 0, stencil: int = 3,
               refine: int = 0) -> GradCheckReport:
    """Compare ``fn``'s tape gradient with a central difference quotient.

    ``stencil=3`` uses (f(x+h) - f(x-h)) / 2h. ``stencil=5`` uses the
    fourth-order quotient (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h,
    which tolerates a larger h and so less rounding noise on small gradients.

    Parameters
    ----------
    fn : callable
        Takes one Tensor per array in ``point`` and returns a scalar Tensor.
    point : array or sequence of arrays
    indices : optional list of (argument, flat index) pairs to check.
    max_entries : check a seeded random subset of at most this many entries.

    Perturbations that change a discrete decision noted on the tape (a floor
    index, a clip mask) straddle a kink. Such an entry is retried with the
    step divided by 10, up to ``refine`` times, and otherwise skipped and listed.
    """
    single = isinstance(point, np.ndarray) or np.isscalar(point)
    arrays = [np.array(point, dtype=np.float64)] if single else [
        np.array(p, dtype=np.float64) for p in point
    ]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*tensors)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    tape.backward(out)
    base_branches = tape.branches
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    if indices is None:
        indices = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
        if max_entries is not None and len(indices) > max_entries:
            rng = np.random.default_rng(seed)
            pick = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[p] for p in sorted(pick)]

    if stencil not in (3, 5):
        raise ValueError("stencil must be 3 or 5")
    report = GradCheckReport(0.0, tolerance=tolerance)
    for arg, flat in indices:
        fd = None
        step = h
        for _ in range(refine + 1):
            fd = _difference(fn, arrays, arg, flat, step, stencil, base_branches)
            if fd is not None:
                break
            step /= 10.0
        if fd is None:
            report.skipped_indices.append((arg, flat))
            continue
        err = float(relative_error(fd, grads[arg].reshape(-1)[flat]))
        report.n_checked += 1
        report.max_rel_error = max(report.max_rel_error, err)
        if err > tolerance:
            report.failing_indices.append((arg, flat))
    return report
