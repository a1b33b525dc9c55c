"""Pure NumPy kernels; the reference backend and the import-time fallback.

All arrays are float64, C-contiguous, batch-first: sequences are (B, L, F).
Recurrent gate layouts follow the Keras convention: LSTM columns are
[input, forget, candidate, output]; GRU columns are [update, reset, candidate].
"""
import numpy as np

NAME = "numpy"


def _sigmoid(x):
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def conv1d_forward(x, w, b):
    B, L, F = x.shape
    K, _, M = w.shape
    Lo = L - K + 1
    cols = np.concatenate([x[:, k : k + Lo, :] for k in range(K)], axis=2)
    z = cols.reshape(B * Lo, K * F) @ w.reshape(K * F, M) + b
    return z.reshape(B, Lo, M)


def conv1d_backward(x, w, dz):
    B, L, F = x.shape
    K, _, M = w.shape
    Lo = L - K + 1
    cols = np.concatenate([x[:, k : k + Lo, :] for k in range(K)], axis=2).reshape(B * Lo, K * F)
    dz2 = dz.reshape(B * Lo, M)
    dw = (cols.T @ dz2).reshape(K, F, M)
    db = dz2.sum(axis=0)
    dcols = (dz2 @ w.reshape(K * F, M).T).reshape(B, Lo, K, F)
    dx = np.zeros_like(x)
    for k in range(K):
        dx[:, k : k + Lo, :] += dcols[:, :, k, :]
    return dx, dw, db


def maxpool1d_forward(x, pool):
    B, L, F = x.shape
    Lp = L // pool
    xr = x[:, : Lp * pool, :].reshape(B, Lp, pool, F)
    idx = xr.argmax(axis=2)  # first maximum on ties
    y = np.take_along_axis(xr, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return np.ascontiguousarray(y), idx.astype(np.int64)


def maxpool1d_backward(dy, idx, length, pool):
    B, Lp, F = dy.shape
    dx = np.zeros((B, length, F))
    rows = np.arange(Lp)[None, :, None] * pool + idx
    np.put_along_axis(dx, rows, dy, axis=1)
    return dx


def lstm_forward(x, wx, wh, b):
    """Returns hidden states (B,L,H), cell states (B,L,H), activated gates (B,L,4H)."""
    B, L, _ = x.shape
    H = wh.shape[0]
    xw = x @ wx + b
    hs = np.zeros((B, L, H))
    cs = np.zeros((B, L, H))
    gates = np.zeros((B, L, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(L):
        a = xw[:, t] + h @ wh
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = _sigmoid(a[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, t] = h
        cs[:, t] = c
        gates[:, t, :H] = i
        gates[:, t, H : 2 * H] = f
        gates[:, t, 2 * H : 3 * H] = g
        gates[:, t, 3 * H :] = o
    return hs, cs, gates


def lstm_backward(x, wx, wh, hs, cs, gates, dhs):
    B, L, F = x.shape
    H = wh.shape[0]
    da_all = np.zeros((B, L, 4 * H))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        g = gates[:, t, 2 * H : 3 * H]
        o = gates[:, t, 3 * H :]
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = da_all[:, t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        da[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dwh += h_prev.T @ da
        dh_next = da @ wh.T
        dc_next = dc * f
    flat = da_all.reshape(B * L, 4 * H)
    dx = (flat @ wx.T).reshape(B, L, F)
    dwx = x.reshape(B * L, F).T @ flat
    db = flat.sum(axis=0)
    return dx, dwx, dwh, db


def gru_forward(x, wx, wh, b_in, b_rec):
    """Reset-after GRU. Returns hidden states (B,L,H), gates z|r|n (B,L,3H), recurrent candidate term (B,L,H)."""
    B, L, _ = x.shape
    H = wh.shape[0]
    xw = x @ wx + b_in
    hs = np.zeros((B, L, H))
    gates = np.zeros((B, L, 3 * H))
    hn = np.zeros((B, L, H))
    h = np.zeros((B, H))
    for t in range(L):
        hw = h @ wh + b_rec
        z = _sigmoid(xw[:, t, :H] + hw[:, :H])
        r = _sigmoid(xw[:, t, H : 2 * H] + hw[:, H : 2 * H])
        n = np.tanh(xw[:, t, 2 * H :] + r * hw[:, 2 * H :])
        h = z * h + (1.0 - z) * n
        hs[:, t] = h
        gates[:, t, :H] = z
        gates[:, t, H : 2 * H] = r
        gates[:, t, 2 * H :] = n
        hn[:, t] = hw[:, 2 * H :]
    return hs, gates, hn


def gru_backward(x, wx, wh, hs, gates, hn, dhs):
    B, L, F = x.shape
    H = wh.shape[0]
    dxw_all = np.zeros((B, L, 3 * H))
    dwh = np.zeros_like(wh)
    db_rec = np.zeros(3 * H)
    dh_next = np.zeros((B, H))
    dhw = np.zeros((B, 3 * H))
    for t in range(L - 1, -1, -1):
        z = gates[:, t, :H]
        r = gates[:, t, H : 2 * H]
        n = gates[:, t, 2 * H :]
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
        dh = dhs[:, t] + dh_next
        dan = dh * (1.0 - z) * (1.0 - n * n)
        daz = dh * (h_prev - n) * z * (1.0 - z)
        dar = dan * hn[:, t] * r * (1.0 - r)
        dxw = dxw_all[:, t]
        dxw[:, :H] = daz
        dxw[:, H : 2 * H] = dar
        dxw[:, 2 * H :] = dan
        dhw[:, :H] = daz
        dhw[:, H : 2 * H] = dar
        dhw[:, 2 * H :] = dan * r
        dwh += h_prev.T @ dhw
        db_rec += dhw.sum(axis=0)
        dh_next = dh * z + dhw @ wh.T
    flat = dxw_all.reshape(B * L, 3 * H)
    dx = (flat @ wx.T).reshape(B, L, F)
    dwx = x.reshape(B * L, F).T @ flat
    db_in = flat.sum(axis=0)
    return dx, dwx, dwh, db_in, db_rec
