"""numba-compiled versions of the hot kernels (same contracts as ``_numpy``)."""

import numpy as np
from numba import njit


@njit(error_model="numpy")
def conv1d_forward(x, W, b):
    k, cin, cout = W.shape
    T = x.shape[0]
    pad = k // 2
    y = np.empty((T, cout))
    for t in range(T):
        y[t, :] = b
    for j in range(k):
        lo = max(0, pad - j)
        hi = min(T, T + pad - j)
        if hi <= lo:
            continue
        # rows t in [lo, hi) read input row t + j - pad
        y[lo:hi] += np.ascontiguousarray(x[lo + j - pad:hi + j - pad]) @ np.ascontiguousarray(W[j])
    return y


@njit(error_model="numpy")
def conv1d_backward(x, W, gy):
    k, cin, cout = W.shape
    T = x.shape[0]
    pad = k // 2
    gW = np.zeros((k, cin, cout))
    gx = np.zeros((T, cin))
    gb = np.zeros(cout)
    for t in range(T):
        gb += gy[t]
    for j in range(k):
        lo = max(0, pad - j)
        hi = min(T, T + pad - j)
        if hi <= lo:
            continue
        xs = np.ascontiguousarray(x[lo + j - pad:hi + j - pad])
        gs = np.ascontiguousarray(gy[lo:hi])
        gW[j] = xs.T.copy() @ gs
        gx[lo + j - pad:hi + j - pad] += gs @ np.ascontiguousarray(W[j].T)
    return gW, gb, gx


@njit(error_model="numpy")
def adam_update(params, grads, m, v, lr, beta1, beta2, eps, step):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(params.shape[0]):
        g = grads[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        params[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


@njit(error_model="numpy")
def peak_mask(curve, theta):
    n = curve.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    for t in range(n):
        c = curve[t]
        if not c > theta:
            continue
        if t > 0 and not c >= curve[t - 1]:
            continue
        if t < n - 1 and not c > curve[t + 1]:
            continue
        keep[t] = True
    return keep


@njit(error_model="numpy")
def greedy_match(p_start, p_end, p_vid, g_start, g_end, g_vid, thr):
    n_pred = p_start.shape[0]
    n_gt = g_start.shape[0]
    out = np.full(n_pred, -1, dtype=np.int64)
    used = np.zeros(n_gt, dtype=np.bool_)
    for i in range(n_pred):
        best = -1.0
        best_j = -1
        plen = p_end[i] - p_start[i] + 1
        for j in range(n_gt):
            if used[j] or g_vid[j] != p_vid[i]:
                continue
            inter = min(g_end[j], p_end[i]) - max(g_start[j], p_start[i]) + 1
            if inter < 0:
                inter = 0
            union = (g_end[j] - g_start[j] + 1) + plen - inter
            iou = inter / union
            if iou > best:
                best = iou
                best_j = j
        if best_j >= 0 and best >= thr and best > 0:
            out[i] = best_j
            used[best_j] = True
    return out


@njit(error_model="numpy")
def linear_resample(x, n_out):
    span, d = x.shape
    out = np.empty((n_out, d))
    if span == 1:
        for i in range(n_out):
            out[i] = x[0]
        return out
    step = (span - 1) / (n_out - 1)
    for i in range(n_out):
        pos = i * step
        lo = min(int(np.floor(pos)), span - 2)
        frac = pos - lo
        for c in range(d):
            out[i, c] = x[lo, c] * (1.0 - frac) + x[lo + 1, c] * frac
    return out
