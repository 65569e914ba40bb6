"""Batched forward/backward primitives: LSTM, additive attention, dense, dropout.

Gate blocks are laid out ``[i | f | o | g]`` along the last axis of the
input (``W``: in x 4d), recurrent (``U``: d x 4d) and bias (``b``: 4d) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_lstm(x_width: int, W: np.ndarray, U: np.ndarray, b: np.ndarray) -> int:
    d = U.shape[0]
    if W.shape != (x_width, 4 * d) or U.shape != (d, 4 * d) or b.shape != (4 * d,):
        raise ShapeError(
            f"LSTM params W{W.shape} U{U.shape} b{b.shape} inconsistent with input width {x_width}"
        )
    return d


def lstm_cell_forward(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step; ``x`` may be a vector or a batch (rows)."""
    x = np.asarray(x, dtype=np.float64)
    d = _check_lstm(x.shape[-1], W, U, b)
    if h_prev.shape[-1] != d or c_prev.shape[-1] != d:
        raise ShapeError(f"state width must be {d}")
    z = x @ W + h_prev @ U + b
    i = sigmoid(z[..., :d])
    f = sigmoid(z[..., d : 2 * d])
    o = sigmoid(z[..., 2 * d : 3 * d])
    g = np.tanh(z[..., 3 * d :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


@dataclass
class LstmCache:
    X: np.ndarray  # (L, B, in) time-major
    W: np.ndarray
    U: np.ndarray
    gates: np.ndarray  # (L, B, 4d) post-activation [i f o g]
    H: np.ndarray  # (L, B, d)
    C: np.ndarray  # (L, B, d)
    tanhC: np.ndarray


def _gate_scale(d: int) -> np.ndarray:
    # sigmoid(z) = 0.5 + 0.5 * tanh(z / 2): halve the i/f/o pre-activations
    # so one tanh call covers all four gates
    scale = np.ones(4 * d)
    scale[: 3 * d] = 0.5
    return scale


def lstm_forward(
    X: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, LstmCache]:
    """Run an LSTM over ``X`` (B, L, in) from zero state; returns H (B, L, d)."""
    if X.ndim != 3:
        raise ShapeError(f"expected (batch, time, features), got {X.shape}")
    n_b, n_l, n_in = X.shape
    d = _check_lstm(n_in, W, U, b)
    scale = _gate_scale(d)
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2))
    Z = (Xt.reshape(-1, n_in) @ (W * scale) + b * scale).reshape(n_l, n_b, 4 * d)
    Us = U * scale
    gates = np.empty((n_l, n_b, 4 * d))
    H = np.empty((n_l, n_b, d))
    C = np.empty((n_l, n_b, d))
    tanhC = np.empty((n_l, n_b, d))
    h = np.zeros((n_b, d))
    c = np.zeros((n_b, d))
    for t in range(n_l):
        a = gates[t]
        np.tanh(Z[t] + h @ Us, out=a)
        ifo = a[:, : 3 * d]
        ifo *= 0.5
        ifo += 0.5
        c = a[:, d : 2 * d] * c
        c += a[:, :d] * a[:, 3 * d :]
        C[t] = c
        tc = tanhC[t]
        np.tanh(c, out=tc)
        h = H[t]
        np.multiply(a[:, 2 * d : 3 * d], tc, out=h)
    return np.ascontiguousarray(H.transpose(1, 0, 2)), LstmCache(Xt, W, U, gates, H, C, tanhC)


def lstm_backward(
    dH: np.ndarray, cache: LstmCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """BPTT for :func:`lstm_forward`; ``dH`` is (B, L, d). Returns (dX, dW, dU, db)."""
    W, U, gates = cache.W, cache.U, cache.gates
    n_l, n_b, d4 = gates.shape
    d = d4 // 4
    dHt = dH.transpose(1, 0, 2)
    i = gates[..., :d]
    f = gates[..., d : 2 * d]
    o = gates[..., 2 * d : 3 * d]
    g = gates[..., 3 * d :]
    tc = cache.tanhC
    Cprev = np.empty_like(cache.C)
    Cprev[0] = 0.0
    Cprev[1:] = cache.C[:-1]
    # per-step local derivatives, vectorized over time; D holds a(1-a) for
    # the sigmoid gates (its g block is unused)
    D = gates * (1.0 - gates)
    P_i = g * D[..., :d]
    P_f = Cprev * D[..., d : 2 * d]
    P_o = tc * D[..., 2 * d : 3 * d]
    P_g = i * (1.0 - g * g)
    O_dtc = o * (1.0 - tc * tc)

    dZ = np.empty((n_l, n_b, d4))
    dh_next = np.zeros((n_b, d))
    dc_next = np.zeros((n_b, d))
    UT = U.T
    for t in range(n_l - 1, -1, -1):
        dh = dHt[t] + dh_next
        dc = dh * O_dtc[t]
        dc += dc_next
        dz = dZ[t]
        np.multiply(dc, P_i[t], out=dz[:, :d])
        np.multiply(dc, P_f[t], out=dz[:, d : 2 * d])
        np.multiply(dh, P_o[t], out=dz[:, 2 * d : 3 * d])
        np.multiply(dc, P_g[t], out=dz[:, 3 * d :])
        dc_next = dc * f[t]
        dh_next = dz @ UT
    flat_dZ = dZ.reshape(-1, d4)
    dW = cache.X.reshape(-1, cache.X.shape[2]).T @ flat_dZ
    Hprev = np.empty_like(cache.H)
    Hprev[0] = 0.0
    Hprev[1:] = cache.H[:-1]
    dU = Hprev.reshape(-1, d).T @ flat_dZ
    db = flat_dZ.sum(axis=0)
    dX = (flat_dZ @ W.T).reshape(n_l, n_b, -1).transpose(1, 0, 2)
    return dX, dW, dU, db


def bilstm_forward(
    X: np.ndarray,
    fwd: tuple[np.ndarray, np.ndarray, np.ndarray],
    bwd: tuple[np.ndarray, np.ndarray, np.ndarray],
    last_only: bool = False,
) -> tuple[np.ndarray, tuple[LstmCache, LstmCache]]:
    """Concatenate a forward pass over t=1..L with an independent one over t=L..1.

    With ``last_only`` only the final time step is returned, shape (B, 1, 2d);
    the backward direction then needs just its first step (it has seen x_L
    alone), so the rest of that pass is skipped.
    """
    Hf, cf = lstm_forward(X, *fwd)
    if last_only:
        Hb, cb = lstm_forward(X[:, -1:], *bwd)
        return np.concatenate([Hf[:, -1:], Hb], axis=-1), (cf, cb)
    Hb_rev, cb = lstm_forward(X[:, ::-1], *bwd)
    return np.concatenate([Hf, Hb_rev[:, ::-1]], axis=-1), (cf, cb)


def bilstm_backward(dH: np.ndarray, caches: tuple[LstmCache, LstmCache], last_only: bool = False):
    """Returns (dX, grads_fwd, grads_bwd) with each grads tuple = (dW, dU, db).

    ``dH`` is (B, L, 2d), or (B, 1, 2d) for a ``last_only`` forward.
    """
    cf, cb = caches
    d = cf.U.shape[0]
    n_l = cf.gates.shape[0]
    if last_only:
        dHf = np.zeros((dH.shape[0], n_l, d))
        dHf[:, -1] = dH[:, 0, :d]
        dXf, *gf = lstm_backward(dHf, cf)
        dXb, *gb = lstm_backward(dH[:, :, d:], cb)
        dXf[:, -1] += dXb[:, 0]
        return dXf, tuple(gf), tuple(gb)
    dXf, *gf = lstm_backward(dH[..., :d], cf)
    dXb_rev, *gb = lstm_backward(dH[:, ::-1, d:], cb)
    return dXf + dXb_rev[:, ::-1], tuple(gf), tuple(gb)


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AttentionCache:
    H: np.ndarray
    Wa: np.ndarray
    v: np.ndarray
    T: np.ndarray  # tanh(H Wa^T), (B, L, a)
    alpha: np.ndarray


def additive_attention(
    H: np.ndarray, Wa: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray, AttentionCache]:
    """Scores ``e_t = v . tanh(Wa h_t)``, weights ``softmax(e)``, context ``sum alpha_t h_t``.

    ``H`` is (L, d) or (B, L, d); returns (context, alpha, cache).
    """
    single = H.ndim == 2
    Hb = H[None] if single else H
    if Wa.ndim != 2 or Wa.shape[1] != Hb.shape[-1] or v.shape != (Wa.shape[0],):
        raise ShapeError(f"attention params Wa{Wa.shape} v{v.shape} do not fit hidden width {Hb.shape[-1]}")
    T = np.tanh(Hb @ Wa.T)
    scores = T @ v
    alpha = softmax(scores, axis=-1)
    context = np.einsum("bl,bld->bd", alpha, Hb)
    cache = AttentionCache(Hb, Wa, v, T, alpha)
    if single:
        return context[0], alpha[0], cache
    return context, alpha, cache


def additive_attention_backward(dcontext: np.ndarray, cache: AttentionCache):
    """Returns (dH, dWa, dv) for batched attention."""
    H, alpha, T = cache.H, cache.alpha, cache.T
    dalpha = np.einsum("bd,bld->bl", dcontext, H)
    dH = alpha[..., None] * dcontext[:, None, :]
    dscore = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
    dv = np.einsum("bl,bla->a", dscore, T)
    dpre = dscore[..., None] * cache.v * (1.0 - T * T)
    dWa = np.einsum("bla,bld->ad", dpre, H)
    dH += dpre @ cache.Wa
    return dH, dWa, dv


def dropout_mask(rng: np.random.Generator, shape: tuple, rate: float) -> np.ndarray | None:
    """Inverted-dropout multiplier (kept units scaled by 1/(1-rate)); None when inactive."""
    if rate <= 0.0:
        return None
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)
