"""Differentiable building blocks of the vocoder.

GRU formulation (gates ordered update, reset, candidate; reset applied after
the recurrent product):

    gx = x W + b,  gh = h U + bu
    z = sigmoid(gx_z + gh_z)
    r = sigmoid(gx_r + gh_r)
    n = tanh(gx_n + r * gh_n)
    h' = (1 - z) * h + z * n
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .. import signal_ops
from .tensor import _data, affine, make, mul, note_branch, sigmoid, tanh, add, sub

EMBED_OFFSET = 128
EMBED_ROWS = 257


# -- embeddings ---------------------------------------------------------------

def _embed_index(x: np.ndarray):
    if np.any(np.abs(x) > signal_ops.U_MAX):
        raise ValueError("embedding input outside [-128, 128]")
    lo = np.minimum(np.floor(x), signal_ops.U_MAX - 1)
    return lo, x - lo


def _scatter_rows(rows: np.ndarray, frac: np.ndarray, grad: np.ndarray, n_rows: int) -> np.ndarray:
    """Table gradient of a row interpolation: (1 - frac) g into ``rows``, frac g into ``rows + 1``.

    Done as one sparse product (duplicate entries are summed) instead of np.add.at.
    """
    r = rows.ravel()
    f = frac.ravel()
    n = r.size
    cols = np.arange(n)
    op = sparse.csr_matrix(
        (np.concatenate([1.0 - f, f]), (np.concatenate([r, r + 1]), np.concatenate([cols, cols]))),
        shape=(n_rows, n),
    )
    return op @ grad.reshape(n, -1)


def _row_dot(g: np.ndarray, diff: np.ndarray, rows: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """sum_d g[n, d] * diff[rows[n], d] without materialising diff[rows] in full."""
    g2 = g.reshape(-1, g.shape[-1])
    r = rows.ravel()
    out = np.empty(r.size)
    for start in range(0, r.size, chunk):
        stop = start + chunk
        out[start:stop] = np.einsum("nd,nd->n", g2[start:stop], diff[r[start:stop]])
    return out.reshape(rows.shape)


def embed_interp(table, x):
    """Row interpolation (1 - f) v[floor(x)] + f v[floor(x) + 1] of a 257-row table.

    Row j + 128 holds the embedding of mu-law value j. Gradients go to both rows
    and to ``x`` through f.
    """
    return embed_interp_sum([table], [x])


def embed_interp_sum(tables, xs):
    """Sum over slots of ``embed_interp(tables[j], xs[j])`` in one output buffer.

    Used for the sample-rate network input, where each slot's table has already
    been projected through its share of the GRU input weights.
    """
    if len(tables) != len(xs) or not tables:
        raise ValueError("need one table per input")
    tds = [_data(t) for t in tables]
    saved = []
    out = None
    for td, x in zip(tds, xs):
        if td.shape[0] != EMBED_ROWS:
            raise ValueError(f"embedding table needs {EMBED_ROWS} rows")
        lo, frac = _embed_index(_data(x))
        note_branch(lo)
        rows = (lo + EMBED_OFFSET).astype(np.int64)
        f = frac[..., None]
        # (1 - f) lo + f hi is exact at both f = 0 and f = 1 (x = 128 reads the top row)
        part = (1.0 - f) * np.take(td, rows, axis=0) + f * np.take(td, rows + 1, axis=0)
        if out is None:
            out = part
        else:
            out += part
        saved.append((rows, frac))

    def vjp(g):
        g_tables, g_xs = [], []
        for td, (rows, frac) in zip(tds, saved):
            g_tables.append(_scatter_rows(rows, frac, g, td.shape[0]))
            g_xs.append(_row_dot(g, np.diff(td, axis=0), rows))
        return g_tables + g_xs

    return make(out, tuple(tables) + tuple(xs), vjp)


def embed_round(table, x) -> np.ndarray:
    """Inference lookup of the nearest row (ties away from zero); no gradient."""
    td, xd = _data(table), _data(x)
    if np.any(np.abs(xd) > signal_ops.U_MAX):
        raise ValueError("embedding input outside [-128, 128]")
    idx = signal_ops.round_half_away(xd).astype(np.int64) + EMBED_OFFSET
    return td[idx]


# -- linear prediction --------------------------------------------------------

def levinson_layer(k):
    """Reflection coefficients (..., M) to predictor coefficients (..., M).

    The backward pass replays the step-up recursion in reverse.
    """
    kd = _data(k)
    order = kd.shape[-1]
    states = []
    a = np.zeros_like(kd)
    for i in range(order):
        prev = a[..., :i].copy()
        states.append(prev)
        a[..., :i] = prev - kd[..., i : i + 1] * prev[..., ::-1]
        a[..., i] = kd[..., i]

    def vjp(g):
        g = g.copy()
        gk = np.zeros_like(kd)
        for i in range(order - 1, -1, -1):
            prev = states[i]
            gk[..., i] = g[..., i] - np.sum(g[..., :i] * prev[..., ::-1], axis=-1)
            g[..., i] = 0.0
            g[..., :i] = g[..., :i] - kd[..., i : i + 1] * g[..., :i][..., ::-1]
        return (gk,)

    return make(a, (k,), vjp)


def predict_layer(history, a):
    """p = sum_i a_i s[t-i] over the last axis; ``history[..., i]`` is s[t-1-i]."""
    hd, ad = _data(history), _data(a)
    if hd.shape[-1] != ad.shape[-1]:
        raise ValueError("history and coefficient lengths differ")
    from .tensor import unbroadcast

    def vjp(g):
        g = g[..., None]
        return unbroadcast(g * ad, hd.shape), unbroadcast(g * hd, ad.shape)

    return make(np.sum(hd * ad, axis=-1), (history, a), vjp)


def mu_compand_layer(x):
    """Differentiable mu-law companding; the derivative is continuous at 0."""
    xd = _data(x)
    out = signal_ops.mu_compand(xd)
    slope = signal_ops.U_MAX * signal_ops.MU / (signal_ops.LOG1P_MU * (1.0 + signal_ops.MU * np.abs(xd)))
    return make(out, (x,), lambda g: (g * slope,))


# -- recurrent ----------------------------------------------------------------

class GRUParams:
    """Weights of one GRU layer: W (I, 3H), U (H, 3H), b (3H,), bu (3H,)."""

    names = ("W", "U", "b", "bu")

    def __init__(self, W, U, b, bu):
        self.W, self.U, self.b, self.bu = W, U, b, bu

    @property
    def hidden(self) -> int:
        return _data(self.U).shape[0]

    def tensors(self):
        return [self.W, self.U, self.b, self.bu]


def gru_cell(x, h, params: GRUParams):
    """One GRU step built from recorded primitives."""
    H = params.hidden
    gx = affine(x, params.W, params.b)
    gh = affine(h, params.U, params.bu)
    z = sigmoid(add(gx[..., :H], gh[..., :H]))
    r = sigmoid(add(gx[..., H : 2 * H], gh[..., H : 2 * H]))
    n = tanh(add(gx[..., 2 * H :], mul(r, gh[..., 2 * H :])))
    return add(mul(sub(1.0, z), h), mul(z, n))


def _gru_forward(xproj, h0, U, bu):
    B, T, H3 = xproj.shape
    H = H3 // 3
    hs = np.empty((B, T, H))
    zr_all = np.empty((B, T, 2 * H))
    n_all = np.empty((B, T, H))
    ghn_all = np.empty((B, T, H))
    h = h0
    for t in range(T):
        gh = h @ U
        gh += bu
        gx = xproj[:, t]
        zr = gx[:, : 2 * H] + gh[:, : 2 * H]
        # sigmoid(v) = (1 + tanh(v / 2)) / 2, in place
        zr *= 0.5
        np.tanh(zr, out=zr)
        zr += 1.0
        zr *= 0.5
        ghn = gh[:, 2 * H :]
        n = ghn * zr[:, H:]
        n += gx[:, 2 * H :]
        np.tanh(n, out=n)
        h = h + zr[:, :H] * (n - h)
        hs[:, t] = h
        zr_all[:, t] = zr
        n_all[:, t] = n
        ghn_all[:, t] = ghn
    return hs, (zr_all, n_all, ghn_all)


def _gru_backward(g, h0, U, hs, zr_all, n_all, ghn_all):
    B, T, H = hs.shape
    gx = np.empty((B, T, 3 * H))
    UT = np.ascontiguousarray(U.T)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh += g[:, t]
        h_prev = hs[:, t - 1] if t > 0 else h0
        z = zr_all[:, t, :H]
        r = zr_all[:, t, H:]
        n = n_all[:, t]
        gxt = gx[:, t]
        dpre_n = dh * z
        dpre_n *= 1.0 - n * n
        gxt[:, 2 * H :] = dpre_n
        dz = dh * (n - h_prev)
        dz *= z
        dz *= 1.0 - z
        gxt[:, :H] = dz
        dr = dpre_n * ghn_all[:, t]
        dr *= r
        dr *= 1.0 - r
        gxt[:, H : 2 * H] = dr
        dh *= 1.0 - z
        dh += gxt[:, : 2 * H] @ UT[: 2 * H]
        dh += (dpre_n * r) @ UT[2 * H :]
    # recurrent-weight gradient as one product over all steps
    dgh = gx.copy()
    dgh[..., 2 * H :] *= zr_all[..., H:]
    h_prev_all = np.concatenate([h0[:, None], hs[:, :-1]], axis=1)
    gU = h_prev_all.reshape(-1, H).T @ dgh.reshape(-1, 3 * H)
    return gx, dh, gU, dgh.sum(axis=(0, 1))


def gru_sequence(xproj, h0, U, bu):
    """Run a GRU over time given precomputed input projections.

    xproj : (B, T, 3H), the x W + b part for every step
    h0 : (B, H) initial state
    Returns the states (B, T, H). Backpropagation through time is done in one
    primitive so the per-step work stays in numpy.
    """
    xd, h0d, Ud, bud = _data(xproj), _data(h0), _data(U), _data(bu)
    B, T, H3 = xd.shape
    H = H3 // 3
    if Ud.shape != (H, H3) or h0d.shape != (B, H):
        raise ValueError("gru_sequence shape mismatch")
    hs, saved = _gru_forward(xd, h0d, Ud, bud)
    return make(hs, (xproj, h0, U, bu), lambda g: _gru_backward(g, h0d, Ud, hs, *saved))


def gru_step_numpy(x_proj, h, U, bu):
    """Inference step without recording; ``x_proj`` already holds x W + b."""
    H = h.shape[-1]
    gh = h @ U + bu
    zr = 0.5 * (1.0 + np.tanh(0.5 * (x_proj[..., : 2 * H] + gh[..., : 2 * H])))
    z, r = zr[..., :H], zr[..., H:]
    n = np.tanh(x_proj[..., 2 * H :] + r * gh[..., 2 * H :])
    return h + z * (n - h)
