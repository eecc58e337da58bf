"""Forward and backward passes for the recurrent building blocks.

Everything is batched: sequences are (B, T, D) arrays padded at the end,
with a per-example length. Backward functions return input gradients and
add parameter gradients into caller-provided arrays.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def check_shape(name: str, arr: np.ndarray, shape: tuple) -> None:
    if arr.shape != shape:
        raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")


# ---------------------------------------------------------------------------
# LSTM (one direction)

def lstm_forward(X, W, U, b):
    """Run an LSTM over X (B, T, D) with gate order (input, forget, cell, output).

    A leading stack axis is also accepted: X (K, B, T, D) with W (K, D, 4H),
    U (K, H, 4H), b (K, 4H) runs K independent LSTMs in one time loop.
    """
    single = X.ndim == 3
    if single:
        X, W, U, b = X[None], W[None], U[None], b[None]
    K, B, T, _ = X.shape
    H = U.shape[1]
    ax = X @ W[:, None] + b[:, None, None, :]
    dt = ax.dtype
    hs = np.zeros((K, B, T + 1, H), dt)
    cs = np.zeros((K, B, T + 1, H), dt)
    gates = np.empty((K, B, T, 4 * H), dt)
    tcs = np.empty((K, B, T, H), dt)
    ifo_cols = np.r_[0:2 * H, 3 * H:4 * H]
    for t in range(T):
        a = ax[:, :, t] + hs[:, :, t] @ U
        ifo = sigmoid(a[..., ifo_cols])
        g = np.tanh(a[..., 2 * H:3 * H])
        i, f, o = ifo[..., :H], ifo[..., H:2 * H], ifo[..., 2 * H:]
        c = f * cs[:, :, t] + i * g
        tc = np.tanh(c)
        cs[:, :, t + 1] = c
        hs[:, :, t + 1] = o * tc
        gt = gates[:, :, t]
        gt[..., :2 * H] = ifo[..., :2 * H]
        gt[..., 2 * H:3 * H] = g
        gt[..., 3 * H:] = o
        tcs[:, :, t] = tc
    out = hs[:, :, 1:]
    return (out[0] if single else out), (single, X, W, U, hs, cs, gates, tcs)


def lstm_backward(dHs, cache, dW, dU, db):
    """Backward of ``lstm_forward``; parameter gradients are added into dW, dU, db."""
    single, X, W, U, hs, cs, gates, tcs = cache
    if single:
        dHs, dW, dU, db = dHs[None], dW[None], dU[None], db[None]
    K, B, T, H = dHs.shape
    dA = np.empty((K, B, T, 4 * H), dHs.dtype)
    dh_next = np.zeros((K, B, H), dHs.dtype)
    dc_next = np.zeros((K, B, H), dHs.dtype)
    Ut = U.transpose(0, 2, 1)
    for t in range(T - 1, -1, -1):
        g4 = gates[:, :, t]
        i, f, g, o = g4[..., :H], g4[..., H:2 * H], g4[..., 2 * H:3 * H], g4[..., 3 * H:]
        tc = tcs[:, :, t]
        dh = dHs[:, :, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dA[:, :, t]
        da[..., :H] = dc * g * i * (1.0 - i)
        da[..., H:2 * H] = dc * cs[:, :, t] * f * (1.0 - f)
        da[..., 2 * H:3 * H] = dc * i * (1.0 - g * g)
        da[..., 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ Ut
    flat_dA = dA.reshape(K, B * T, 4 * H)
    dU += hs[:, :, :-1].reshape(K, B * T, H).transpose(0, 2, 1) @ flat_dA
    dW += X.reshape(K, B * T, -1).transpose(0, 2, 1) @ flat_dA
    db += flat_dA.sum(axis=1)
    dX = dA @ W.transpose(0, 2, 1)[:, None]
    return dX[0] if single else dX


def reverse_padded(X, lengths):
    """Reverse each sequence within its own length; padding stays at the end.

    The mapping is an involution, so it also serves as its own backward pass.
    """
    B, T = X.shape[:2]
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    idx = np.where(t < L, L - 1 - t, t)
    return X[np.arange(B)[:, None], idx]


def bilstm_forward(X, lengths, p, prefix):
    """Both directions run in one stacked loop; output is [forward; backward] per step."""
    Xr = reverse_padded(X, lengths)
    W = np.stack([p[f"{prefix}.fw.W"], p[f"{prefix}.bw.W"]])
    U = np.stack([p[f"{prefix}.fw.U"], p[f"{prefix}.bw.U"]])
    b = np.stack([p[f"{prefix}.fw.b"], p[f"{prefix}.bw.b"]])
    hs, cache = lstm_forward(np.stack([X, Xr]), W, U, b)
    return np.concatenate([hs[0], reverse_padded(hs[1], lengths)], axis=2), (cache, lengths)


def bilstm_backward(dY, cache, g, prefix):
    cache, lengths = cache
    H = dY.shape[2] // 2
    W = cache[2]
    dW = np.zeros_like(W)
    dU = np.zeros_like(cache[3])
    db = np.zeros((2, dU.shape[2]), dY.dtype)
    dXs = lstm_backward(np.stack([dY[:, :, :H], reverse_padded(dY[:, :, H:], lengths)]), cache, dW, dU, db)
    for k, side in enumerate(("fw", "bw")):
        g[f"{prefix}.{side}.W"] += dW[k]
        g[f"{prefix}.{side}.U"] += dU[k]
        g[f"{prefix}.{side}.b"] += db[k]
    return dXs[0] + reverse_padded(dXs[1], lengths)


# ---------------------------------------------------------------------------
# GRU cell

def gru_step(gx, h, U):
    """One GRU update from a precomputed input projection ``gx = x W + b`` (B, 3H).

    Gates are ordered (reset, update, candidate); the reset gate scales the
    recurrent part of the candidate.
    """
    H = h.shape[1]
    gh = h @ U
    rz = sigmoid(gx[:, :2 * H] + gh[:, :2 * H])
    r, z = rz[:, :H], rz[:, H:]
    n = np.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
    h_new = (1.0 - z) * n + z * h
    return h_new, (h, gh, r, z, n)


def gru_step_backward(dh_new, cache, U, dU):
    h, gh, r, z, n = cache
    H = h.shape[1]
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dan = dn * (1.0 - n * n)
    dr = dan * gh[:, 2 * H:]
    dgx = np.empty((h.shape[0], 3 * H))
    dgx[:, :H] = dr * r * (1.0 - r)
    dgx[:, H:2 * H] = dz * z * (1.0 - z)
    dgx[:, 2 * H:] = dan
    dgh = dgx.copy()
    dgh[:, 2 * H:] = dan * r
    dU += h.T @ dgh
    dh += dgh @ U.T
    return dgx, dh


def gru_forward(X, W, U, b, h0=None):
    """GRU over a whole (B, T, D) sequence; returns (B, T, H) states."""
    B, T, _ = X.shape
    H = U.shape[0]
    gx = X @ W + b
    h = np.zeros((B, H), gx.dtype) if h0 is None else h0
    hs = np.empty((B, T, H), np.result_type(gx, h))
    caches = []
    for t in range(T):
        h, c = gru_step(gx[:, t], h, U)
        hs[:, t] = h
        caches.append(c)
    return hs, (X, W, U, caches)


def gru_backward(dHs, cache, dW, dU, db):
    """Returns gradients w.r.t. the inputs and the initial state."""
    X, W, U, caches = cache
    B, T, H = dHs.shape
    dgx = np.empty((B, T, 3 * H))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dgx[:, t], dh = gru_step_backward(dHs[:, t] + dh, caches[t], U, dU)
    flat = dgx.reshape(B * T, 3 * H)
    dW += X.reshape(B * T, -1).T @ flat
    db += flat.sum(axis=0)
    return dgx @ W.T, dh


# ---------------------------------------------------------------------------
# additive attention

def softmax_masked(e, mask):
    """Softmax over the last axis; positions where ``mask`` is False get exactly 0."""
    e = np.where(mask, e, -np.inf)
    m = np.max(e, axis=-1, keepdims=True)
    ex = np.exp(e - m)
    return ex / ex.sum(axis=-1, keepdims=True)


def attention_forward(u, keys, values, mask, W_s, v):
    """Bahdanau scoring e_i = v . tanh(W_s u + keys_i) with keys = values W_h precomputed."""
    q = u @ W_s
    E = np.tanh(keys + q[:, None, :])
    alpha = softmax_masked(E @ v, mask)
    ctx = np.einsum("bt,btc->bc", alpha, values)
    return ctx, alpha, (u, E, alpha)


def attention_backward(dctx, cache, values, W_s, v, dvalues, dkeys, dW_s, dv):
    u, E, alpha = cache
    dalpha = np.einsum("bc,btc->bt", dctx, values)
    dvalues += alpha[:, :, None] * dctx[:, None, :]
    de = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    dv += np.einsum("bt,bta->a", de, E)
    dpre = de[:, :, None] * v[None, None, :] * (1.0 - E * E)
    dkeys += dpre
    dq = dpre.sum(axis=1)
    dW_s += u.T @ dq
    return dq @ W_s.T


# ---------------------------------------------------------------------------
# early fusion projection

def fuse_forward(F, W_f, b_f):
    """f' = tanh(W_f f + b_f) for each row f of F (B, feature_dim); W_f is (hidden, feature)."""
    if F.ndim != 2 or F.shape[1] != W_f.shape[1]:
        raise ShapeError(f"visual feature of dim {F.shape[-1]} does not match projection input {W_f.shape[1]}")
    out = np.tanh(F @ W_f.T + b_f)
    return out, (F, out)


def fuse_backward(dout, cache, W_f, dW_f, db_f):
    """Accumulates parameter gradients and returns the gradient w.r.t. the features."""
    F, out = cache
    da = dout * (1.0 - out * out)
    dW_f += da.T @ F
    db_f += da.sum(axis=0)
    return da @ W_f
