"""LSTM recurrence kernels (time-major).

Both kernels take the input projections ``gx = x @ Wx + b`` precomputed for
the whole sequence, so only the sequential part lives here. Gate order in
the last axis is (input, forget, cell, output).

``lstm_forward`` / ``lstm_backward`` are the dispatching entry points. The
``*_py`` variants are vectorized numpy; the ``*_jit`` variants are the
element-fused loop versions compiled by numba. Both are exported for
benchmarking and equivalence tests.
"""

import numpy as np

from .._accel import compile_kernel, select


def lstm_forward_py(gx, wh):
    """Run the recurrence over ``gx`` shaped ``(T, B, 4H)``.

    Returns ``(hs, cs, acts)``: hidden states and cell states ``(T, B, H)``
    and the activated gates ``(T, B, 4H)``.
    """
    T, B, G = gx.shape
    H = G // 4
    hs = np.zeros((T, B, H), dtype=gx.dtype)
    cs = np.zeros((T, B, H), dtype=gx.dtype)
    acts = np.zeros((T, B, G), dtype=gx.dtype)
    h = np.zeros((B, H), dtype=gx.dtype)
    c = np.zeros((B, H), dtype=gx.dtype)
    for t in range(T):
        z = gx[t] + np.dot(h, wh)
        i = 0.5 * (1.0 + np.tanh(0.5 * z[:, :H]))
        f = 0.5 * (1.0 + np.tanh(0.5 * z[:, H:2 * H]))
        g = np.tanh(z[:, 2 * H:3 * H])
        o = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        acts[t, :, :H] = i
        acts[t, :, H:2 * H] = f
        acts[t, :, 2 * H:3 * H] = g
        acts[t, :, 3 * H:] = o
        cs[t] = c
        hs[t] = h
    return hs, cs, acts


def lstm_backward_py(dhs, cs, acts, wh):
    """Backpropagate ``dhs`` (gradient w.r.t. every hidden state) through time.

    Returns ``dgx`` shaped ``(T, B, 4H)``, the gradient w.r.t. the gate
    pre-activations; weight gradients follow from it by plain matmuls.
    """
    T, B, H = dhs.shape
    dgx = np.zeros((T, B, 4 * H), dtype=dhs.dtype)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    dc_next = np.zeros((B, H), dtype=dhs.dtype)
    zero = np.zeros((B, H), dtype=dhs.dtype)
    wht = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        i = acts[t, :, :H]
        f = acts[t, :, H:2 * H]
        g = acts[t, :, 2 * H:3 * H]
        o = acts[t, :, 3 * H:]
        c_prev = cs[t - 1] if t > 0 else zero
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.empty((B, 4 * H), dtype=dhs.dtype)
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dgx[t] = dz
        dc_next = dc * f
        dh_next = np.dot(dz, wht)
    return dgx, dh_next


def _lstm_forward_loops(gx, wh):
    # same contract as lstm_forward_py; gate math fused per element, exp-based
    T, B, G = gx.shape
    H = G // 4
    hs = np.zeros((T, B, H), dtype=gx.dtype)
    cs = np.zeros((T, B, H), dtype=gx.dtype)
    acts = np.zeros((T, B, G), dtype=gx.dtype)
    h = np.zeros((B, H), dtype=gx.dtype)
    c = np.zeros((B, H), dtype=gx.dtype)
    for t in range(T):
        z = np.dot(h, wh)
        for b in range(B):
            for j in range(H):
                i = 1.0 / (1.0 + np.exp(-(z[b, j] + gx[t, b, j])))
                f = 1.0 / (1.0 + np.exp(-(z[b, H + j] + gx[t, b, H + j])))
                g = 2.0 / (1.0 + np.exp(-2.0 * (z[b, 2 * H + j] + gx[t, b, 2 * H + j]))) - 1.0
                o = 1.0 / (1.0 + np.exp(-(z[b, 3 * H + j] + gx[t, b, 3 * H + j])))
                cn = f * c[b, j] + i * g
                hn = o * (2.0 / (1.0 + np.exp(-2.0 * cn)) - 1.0)
                c[b, j] = cn
                h[b, j] = hn
                cs[t, b, j] = cn
                hs[t, b, j] = hn
                acts[t, b, j] = i
                acts[t, b, H + j] = f
                acts[t, b, 2 * H + j] = g
                acts[t, b, 3 * H + j] = o
    return hs, cs, acts


def _lstm_backward_loops(dhs, cs, acts, wh):
    T, B, H = dhs.shape
    dgx = np.zeros((T, B, 4 * H), dtype=dhs.dtype)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    dc_next = np.zeros((B, H), dtype=dhs.dtype)
    wht = np.ascontiguousarray(wh.T)
    dz = np.empty((B, 4 * H), dtype=dhs.dtype)
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                i = acts[t, b, j]
                f = acts[t, b, H + j]
                g = acts[t, b, 2 * H + j]
                o = acts[t, b, 3 * H + j]
                c_prev = cs[t - 1, b, j] if t > 0 else 0.0
                tc = 2.0 / (1.0 + np.exp(-2.0 * cs[t, b, j])) - 1.0
                dh = dhs[t, b, j] + dh_next[b, j]
                dc = dc_next[b, j] + dh * o * (1.0 - tc * tc)
                dz[b, j] = dc * g * i * (1.0 - i)
                dz[b, H + j] = dc * c_prev * f * (1.0 - f)
                dz[b, 2 * H + j] = dc * i * (1.0 - g * g)
                dz[b, 3 * H + j] = dh * tc * o * (1.0 - o)
                dc_next[b, j] = dc * f
        dgx[t] = dz
        dh_next = np.dot(dz, wht)
    return dgx, dh_next


lstm_forward_jit = compile_kernel(_lstm_forward_loops)
lstm_backward_jit = compile_kernel(_lstm_backward_loops)


def lstm_forward(gx, wh):
    fn = select(lstm_forward_py, lstm_forward_jit)
    return fn(np.ascontiguousarray(gx), np.ascontiguousarray(wh))


def lstm_backward(dhs, cs, acts, wh):
    fn = select(lstm_backward_py, lstm_backward_jit)
    return fn(np.ascontiguousarray(dhs), cs, acts, np.ascontiguousarray(wh))[0]
