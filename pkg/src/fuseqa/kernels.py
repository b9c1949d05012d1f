"""Hot numeric kernels with numba @njit and a pure-numpy fallback.

The numba path is used when numba imports successfully, unless the
environment variable FUSEQA_NUMBA is set to "0" (force numpy) before the
package is imported. Both paths compute identical math; only loop fusion
differs. `backend()` reports which one is active.

All kernels are float64 and row-major. They are free functions over plain
ndarrays; the autodiff layer wraps them into taped ops.
"""

import os

import numpy as np

_want_numba = os.environ.get("FUSEQA_NUMBA", "1") != "0"

if _want_numba:
    try:
        from numba import njit

        _HAS_NUMBA = True
    except ImportError:
        _HAS_NUMBA = False
else:
    _HAS_NUMBA = False


def backend() -> str:
    """Name of the active kernel backend: 'numba' or 'numpy'."""
    return "numba" if _HAS_NUMBA else "numpy"


# -----------------------------------------------------------------------------
# numpy reference implementations
# -----------------------------------------------------------------------------


def _softmax_rows_fwd_np(x):
    """Row softmax. x (r, c) -> y (r, c), rows sum to 1."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_rows_bwd_np(dy, y):
    """dx = y * (dy - sum(dy * y, row))."""
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def _layernorm_fwd_np(x, eps):
    """Row layer norm, unit gain / zero bias. Returns (y, inv_std (r,))."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (x - mu) * inv, inv[:, 0].copy()


def _layernorm_bwd_np(dy, y, inv_std):
    """dx = inv_std * (dy - mean(dy, row) - y * mean(dy * y, row))."""
    n = y.shape[1]
    dmean = dy.mean(axis=1, keepdims=True)
    ymean = (dy * y).mean(axis=1, keepdims=True)
    return inv_std[:, None] * (dy - dmean - y * ymean)


def _attn_core_fwd_np(qp, kp, vp, n_heads):
    """Per-head scaled dot-product attention on projected streams.

    qp (l, d), kp/vp (k, d), d = n_heads * dk. Returns (out (l, d),
    weights (n_heads, l, k)) with weights rows softmax-normalized.
    """
    l, d = qp.shape
    k = kp.shape[0]
    dk = d // n_heads
    scale = 1.0 / np.sqrt(dk)
    qh = qp.reshape(l, n_heads, dk).transpose(1, 0, 2)
    kh = kp.reshape(k, n_heads, dk).transpose(1, 0, 2)
    vh = vp.reshape(k, n_heads, dk).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) * scale
    m = scores.max(axis=2, keepdims=True)
    e = np.exp(scores - m)
    w = e / e.sum(axis=2, keepdims=True)
    out = (w @ vh).transpose(1, 0, 2).reshape(l, d)
    return out, w


def _attn_core_bwd_np(dout, qp, kp, vp, w):
    """Backward of _attn_core_fwd_np. Returns (dqp, dkp, dvp)."""
    l, d = qp.shape
    k = kp.shape[0]
    n_heads = w.shape[0]
    dk = d // n_heads
    scale = 1.0 / np.sqrt(dk)
    qh = qp.reshape(l, n_heads, dk).transpose(1, 0, 2)
    kh = kp.reshape(k, n_heads, dk).transpose(1, 0, 2)
    vh = vp.reshape(k, n_heads, dk).transpose(1, 0, 2)
    doh = dout.reshape(l, n_heads, dk).transpose(1, 0, 2)
    dw = doh @ vh.transpose(0, 2, 1)
    ds = w * (dw - (dw * w).sum(axis=2, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 2, 1) @ qh
    dvh = w.transpose(0, 2, 1) @ doh
    dqp = dqh.transpose(1, 0, 2).reshape(l, d)
    dkp = dkh.transpose(1, 0, 2).reshape(k, d)
    dvp = dvh.transpose(1, 0, 2).reshape(k, d)
    return dqp, dkp, dvp


def _adam_update_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam step on flat views. bc1/bc2 are 1-beta^t corrections."""
    m[:] = beta1 * m + (1.0 - beta1) * g
    v[:] = beta2 * v + (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -----------------------------------------------------------------------------
# numba kernels (same math, fused loops)
# -----------------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True)
    def _softmax_rows_fwd_nb(x):
        r, c = x.shape
        y = np.empty((r, c))
        for i in range(r):
            m = x[i, 0]
            for j in range(1, c):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(c):
                y[i, j] = np.exp(x[i, j] - m)
                s += y[i, j]
            for j in range(c):
                y[i, j] /= s
        return y

    @njit(cache=True)
    def _softmax_rows_bwd_nb(dy, y):
        r, c = y.shape
        dx = np.empty((r, c))
        for i in range(r):
            dot = 0.0
            for j in range(c):
                dot += dy[i, j] * y[i, j]
            for j in range(c):
                dx[i, j] = y[i, j] * (dy[i, j] - dot)
        return dx

    @njit(cache=True)
    def _layernorm_fwd_nb(x, eps):
        r, c = x.shape
        y = np.empty((r, c))
        inv = np.empty(r)
        for i in range(r):
            mu = 0.0
            for j in range(c):
                mu += x[i, j]
            mu /= c
            var = 0.0
            for j in range(c):
                d = x[i, j] - mu
                var += d * d
            var /= c
            s = 1.0 / np.sqrt(var + eps)
            inv[i] = s
            for j in range(c):
                y[i, j] = (x[i, j] - mu) * s
        return y, inv

    @njit(cache=True)
    def _layernorm_bwd_nb(dy, y, inv_std):
        r, c = y.shape
        dx = np.empty((r, c))
        for i in range(r):
            dmean = 0.0
            ymean = 0.0
            for j in range(c):
                dmean += dy[i, j]
                ymean += dy[i, j] * y[i, j]
            dmean /= c
            ymean /= c
            for i2 in range(c):
                dx[i, i2] = inv_std[i] * (dy[i, i2] - dmean - y[i, i2] * ymean)
        return dx

    @njit(cache=True)
    def _attn_core_fwd_nb(qp, kp, vp, n_heads):
        l, d = qp.shape
        k = kp.shape[0]
        dk = d // n_heads
        scale = 1.0 / np.sqrt(dk)
        out = np.zeros((l, d))
        w = np.empty((n_heads, l, k))
        for h in range(n_heads):
            hs = h * dk
            for i in range(l):
                m = -np.inf
                for j in range(k):
                    s = 0.0
                    for c in range(dk):
                        s += qp[i, hs + c] * kp[j, hs + c]
                    s *= scale
                    w[h, i, j] = s
                    if s > m:
                        m = s
                z = 0.0
                for j in range(k):
                    w[h, i, j] = np.exp(w[h, i, j] - m)
                    z += w[h, i, j]
                for j in range(k):
                    w[h, i, j] /= z
                for j in range(k):
                    for c in range(dk):
                        out[i, hs + c] += w[h, i, j] * vp[j, hs + c]
        return out, w

    @njit(cache=True)
    def _attn_core_bwd_nb(dout, qp, kp, vp, w):
        l, d = qp.shape
        k = kp.shape[0]
        n_heads = w.shape[0]
        dk = d // n_heads
        scale = 1.0 / np.sqrt(dk)
        dqp = np.zeros((l, d))
        dkp = np.zeros((k, d))
        dvp = np.zeros((k, d))
        dw = np.empty(k)
        for h in range(n_heads):
            hs = h * dk
            for i in range(l):
                dot = 0.0
                for j in range(k):
                    t = 0.0
                    for c in range(dk):
                        t += dout[i, hs + c] * vp[j, hs + c]
                    dw[j] = t
                    dot += t * w[h, i, j]
                for j in range(k):
                    ds = w[h, i, j] * (dw[j] - dot) * scale
                    for c in range(dk):
                        dqp[i, hs + c] += ds * kp[j, hs + c]
                        dkp[j, hs + c] += ds * qp[i, hs + c]
                        dvp[j, hs + c] += w[h, i, j] * dout[i, hs + c]
        return dqp, dkp, dvp

    @njit(cache=True)
    def _adam_update_nb(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
        for i in range(p.shape[0]):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)

    softmax_rows_fwd = _softmax_rows_fwd_nb
    softmax_rows_bwd = _softmax_rows_bwd_nb
    layernorm_fwd = _layernorm_fwd_nb
    layernorm_bwd = _layernorm_bwd_nb
    attn_core_fwd = _attn_core_fwd_nb
    attn_core_bwd = _attn_core_bwd_nb
    adam_update = _adam_update_nb
else:
    softmax_rows_fwd = _softmax_rows_fwd_np
    softmax_rows_bwd = _softmax_rows_bwd_np
    layernorm_fwd = _layernorm_fwd_np
    layernorm_bwd = _layernorm_bwd_np
    attn_core_fwd = _attn_core_fwd_np
    attn_core_bwd = _attn_core_bwd_np
    adam_update = _adam_update_np


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    x = np.ones((2, 4))
    y = softmax_rows_fwd(x)
    softmax_rows_bwd(x, y)
    ln, inv = layernorm_fwd(x, 1e-5)
    layernorm_bwd(x, ln, inv)
    qp = np.ones((2, 4))
    out, w = attn_core_fwd(qp, qp, qp, 2)
    attn_core_bwd(out, qp, qp, qp, w)
    p = np.ones(4)
    adam_update(p, p.copy(), np.zeros(4), np.zeros(4), 0.0, 0.9, 0.999, 1e-8, 0.1, 0.001)
