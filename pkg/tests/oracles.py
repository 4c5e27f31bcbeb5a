"""Independent brute-force references shared by the unit and acceptance tests."""

import math

import numpy as np

from ptal.metrics import ActionPrediction as P
from ptal.metrics import GroundTruth as G


def ref_iou(a, b):
    fa, fb = set(range(a[0], a[1] + 1)), set(range(b[0], b[1] + 1))
    return len(fa & fb) / len(fa | fb)


def ref_rank(preds):
    order = list(range(len(preds)))
    # insertion sort on (score desc, start asc, video asc)
    for i in range(1, len(order)):
        j = i
        while j > 0:
            a, b = preds[order[j - 1]], preds[order[j]]
            if (-b.score, b.start, b.video_id) < (-a.score, a.start, a.video_id):
                order[j - 1], order[j] = order[j], order[j - 1]
                j -= 1
            else:
                break
    return [preds[i] for i in order]


def ref_match(ranked, gts, thr):
    used = [False] * len(gts)
    out = []
    for p in ranked:
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if used[j] or g.video_id != p.video_id:
                continue
            iou = ref_iou((p.start, p.end), (g.start, g.end))
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= thr and best_iou > 0:
            used[best] = True
            out.append(best)
        else:
            out.append(-1)
    return out


def ref_ap(preds, gts, thr):
    """Precision and recall recomputed from scratch at every rank."""
    ranked = ref_rank(preds)
    if not gts or not ranked:
        return 0.0
    prec, rec = [], []
    for k in range(1, len(ranked) + 1):
        tp = sum(1 for m in ref_match(ranked[:k], gts, thr) if m >= 0)
        prec.append(tp / k)
        rec.append(tp / len(gts))
    ap, prev = 0.0, 0.0
    for k in range(len(ranked)):
        if rec[k] > prev:
            ap += (rec[k] - prev) * max(prec[k:])
            prev = rec[k]
    return ap


def random_instance(rng, n_pred, n_gt, n_vid=2, C=1):
    vids = [f"v{i}" for i in range(n_vid)]
    gts = []
    for _ in range(n_gt):
        s = int(rng.integers(0, 60))
        gts.append(G(str(rng.choice(vids)), s, s + int(rng.integers(0, 20)), int(rng.integers(C))))
    preds = []
    for _ in range(n_pred):
        s = int(rng.integers(0, 60))
        # coarse scores so ties are common
        preds.append(P(str(rng.choice(vids)), s, s + int(rng.integers(0, 20)), int(rng.integers(C)),
                       float(rng.integers(0, 5)) / 4))
    return preds, gts



def naive_keypoint_loss(heat, labels):
    T, C = heat.shape
    pos = {(t, c) for t, c in labels}
    s_pos = s_neg = 0.0
    n_pos = n_neg = 0
    for t in range(T):
        for c in range(C):
            p = min(max(heat[t, c], 1e-7), 1 - 1e-7)
            if (t, c) in pos:
                s_pos -= math.log(p)
                n_pos += 1
            else:
                s_neg -= math.log(1 - p)
                n_neg += 1
    return s_pos / n_pos + (s_neg / n_neg if n_neg else 0.0)


def brute_peaks(heat, theta):
    m = heat.max(axis=1)
    out = []
    for t in range(len(m)):
        left = t == 0 or m[t] >= m[t - 1]
        right = t == len(m) - 1 or m[t] > m[t + 1]
        if m[t] > theta and left and right:
            out.append((t, int(np.argmax(heat[t])), float(m[t])))
    return out


def fd_check(net, x, rng, n_probes=100, h=1e-4):
    """Central differences of sum(u * forward) at random parameter indices."""
    u = rng.normal(size=net.forward(x).shape)
    grads, _ = net.backward(x, u)
    idx = rng.choice(net.n_params, size=min(n_probes, net.n_params), replace=False)
    worst = 0.0
    for i in idx:
        old = net.params[i]
        net.params[i] = old + h
        up = float(np.sum(u * net.forward(x)))
        net.params[i] = old - h
        down = float(np.sum(u * net.forward(x)))
        net.params[i] = old
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(fd - grads[i]) / max(abs(fd), abs(grads[i]), 1e-4))
    return worst



def naive_mapper_loss(pred, target):
    total = 0.0
    for i in range(pred.shape[0]):
        sp = sn = 0.0
        npos = nneg = 0
        for t in range(pred.shape[1]):
            p = min(max(pred[i, t], 1e-7), 1 - 1e-7)
            if target[i, t] == 1:
                sp -= math.log(p)
                npos += 1
            else:
                sn -= math.log(1 - p)
                nneg += 1
        total += (sp / npos if npos else 0.0) + (sn / nneg if nneg else 0.0)
    return total / pred.shape[0]


def naive_pool(x, m):
    T_s, D = x.shape
    fg, bg = [0.0] * D, [0.0] * D
    for t in range(T_s):
        for d in range(D):
            fg[d] += m[t] * x[t, d]
            bg[d] += (1 - m[t]) * x[t, d]
    return np.array(fg) / T_s, np.array(bg) / T_s


def naive_classification_loss(y_fg, y_bg, c, beta, use_bg=True):
    fg = -math.log(min(max(y_fg[c], 1e-7), 1 - 1e-7))
    bg = -math.log(min(max(y_bg[-1], 1e-7), 1 - 1e-7))
    return beta * fg + (bg if use_bg else 0.0)
