"""Brute-force reference implementations used by the test suite.

These deliberately recompute results with naive index loops (ascending
order, plain Python accumulation) and never call into the package's
kernels or ops. Nonlinearities use numpy ufuncs on arrays, matching the
elementary functions the implementation uses.
"""

import numpy as np


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def conv2d_oracle(x, kern):
    """Sliding-window same-padded convolution, zero padding."""
    h, w, cin = x.shape
    kh, kw, _, cout = kern.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((h, w, cout))
    for i in range(h):
        for j in range(w):
            for co in range(cout):
                s = 0.0
                for dy in range(kh):
                    for dx in range(kw):
                        yy, xx = i + dy - ph, j + dx - pw
                        if 0 <= yy < h and 0 <= xx < w:
                            for ci in range(cin):
                                s += x[yy, xx, ci] * kern[dy, dx, ci, co]
                out[i, j, co] = s
    return out


def softmax_rows_oracle(x):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        e = np.exp(row - row.max())
        s = 0.0
        for v in e:
            s += v
        out[i] = e / s
    return out


def attention_oracle(t, m, w_q, w_k, w_v):
    """Scaled dot-product retrieval: queries t over memory m.

    Returns (context, attention weights), computed step by step with
    explicit loops.
    """
    q = matmul_oracle(t, w_q)
    k = matmul_oracle(m, w_k)
    v = matmul_oracle(m, w_v)
    d_m = w_q.shape[1]
    inv = 1.0 / np.sqrt(d_m)
    scores = matmul_oracle(q, k.T) * inv
    alpha = softmax_rows_oracle(scores)
    context = matmul_oracle(alpha, v)
    return context, alpha


def gated_update_oracle(e_row, m_prev, w_g, b_g, w_m, b_m):
    """Per-slot gated interpolation, scalar arithmetic throughout."""
    n_m, d_m = m_prev.shape
    out = np.zeros_like(m_prev)
    z = np.concatenate(
        [np.repeat(e_row.reshape(1, -1), n_m, axis=0), m_prev], axis=1)
    pre_g = matmul_oracle(z, w_g) + b_g[None, :]
    pre_c = matmul_oracle(z, w_m) + b_m[None, :]
    g = 1.0 / (1.0 + np.exp(-pre_g))
    cand = np.tanh(pre_c)
    for i in range(n_m):
        for j in range(d_m):
            out[i, j] = (1.0 - g[i, j]) * m_prev[i, j] + g[i, j] * cand[i, j]
    return out, g, cand
