"""Pure-numpy reference versions of the hot kernels.

Every function here has a twin in ``_numba`` with the same signature and
semantics; ``ptal.kernels`` picks one set at import time.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, k):
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    # (T, in, k) -> (T, k, in) -> (T, k*in)
    cols = sliding_window_view(xp, k, axis=0).transpose(0, 2, 1)
    return cols.reshape(x.shape[0], -1)


def conv1d_forward(x, W, b):
    k, cin, cout = W.shape
    return _im2col(x, k) @ W.reshape(k * cin, cout) + b


def conv1d_backward(x, W, gy):
    k, cin, cout = W.shape
    T = x.shape[0]
    pad = k // 2
    cols = _im2col(x, k)
    gW = (cols.T @ gy).reshape(k, cin, cout)
    gb = gy.sum(axis=0)
    gcols = (gy @ W.reshape(k * cin, cout).T).reshape(T, k, cin)
    gxp = np.zeros((T + 2 * pad, cin))
    for j in range(k):
        gxp[j:j + T] += gcols[:, j, :]
    return gW, gb, gxp[pad:pad + T]


def adam_update(params, grads, m, v, lr, beta1, beta2, eps, step):
    """In-place bias-corrected Adam update; ``step`` is the 1-based count."""
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * grads * grads
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    params -= lr * mhat / (np.sqrt(vhat) + eps)


def peak_mask(curve, theta):
    """Frames where ``curve`` exceeds ``theta``, is >= its left and > its right neighbour."""
    n = curve.shape[0]
    keep = curve > theta
    if n > 1:
        keep[1:] &= curve[1:] >= curve[:-1]
        keep[:-1] &= curve[:-1] > curve[1:]
    return keep


def greedy_match(p_start, p_end, p_vid, g_start, g_end, g_vid, thr):
    """Match score-sorted predictions to ground truths of one class.

    Returns, per prediction, the index of the matched ground truth or -1.
    Ties in IoU go to the lowest ground-truth index.
    """
    n_pred = p_start.shape[0]
    out = np.full(n_pred, -1, dtype=np.int64)
    used = np.zeros(g_start.shape[0], dtype=bool)
    g_len = g_end - g_start + 1
    for i in range(n_pred):
        inter = np.minimum(g_end, p_end[i]) - np.maximum(g_start, p_start[i]) + 1
        inter = np.maximum(inter, 0)
        union = g_len + (p_end[i] - p_start[i] + 1) - inter
        iou = inter / union
        iou[(g_vid != p_vid[i]) | used] = -1.0
        if iou.size == 0:
            continue
        j = int(np.argmax(iou))
        if iou[j] >= thr and iou[j] > 0:
            out[i] = j
            used[j] = True
    return out


def linear_resample(x, n_out):
    span = x.shape[0]
    if span == 1:
        return np.repeat(x, n_out, axis=0)
    pos = np.arange(n_out) * ((span - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), span - 2)
    frac = (pos - lo)[:, None]
    return x[lo] * (1.0 - frac) + x[lo + 1] * frac
