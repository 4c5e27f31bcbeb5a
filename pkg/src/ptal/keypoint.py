"""Keypoint detection: detector training, heatmap smoothing, peak mining and
segmentation of a video into fixed-length short videos."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import savgol_filter

from . import kernels, nn
from .errors import AnnotationError, ConfigError, DimensionError, TrainingError

log = logging.getLogger(__name__)

THETA_PRESETS = {"thumos": 0.15, "beoid": 0.01, "gtea": 0.0, "synthetic": 0.15}


class Keypoint(NamedTuple):
    t: int
    class_id: int
    prob: float


@dataclass
class ShortVideo:
    features: np.ndarray  # (T_s, D)
    keypoint_pos: float  # in [0, 1] over the short video
    class_id: int
    video_id: str
    orig_start: int
    orig_end: int
    keypoint_t: int
    score: float = 0.0


def default_detector(D: int, C: int, hidden: int = 64, kernel: int = 3, head_kernel: int = 3,
                     seed: int = 0) -> nn.Network:
    return nn.Network(
        [nn.conv1d(D, hidden, kernel, "relu"), nn.conv1d(hidden, C, head_kernel, "sigmoid")],
        rng_seed=seed,
    )


def keypoint_targets(T: int, C: int, labels) -> np.ndarray:
    target = np.zeros((T, C))
    for t, c in labels:
        if not 0 <= c < C:
            raise AnnotationError(f"class id {c} outside [0, {C})")
        if not 0 <= t < T:
            raise AnnotationError(f"label frame {t} outside [0, {T})")
        target[t, c] = 1.0
    return target


def keypoint_loss_and_grad(heatmap, labels):
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if heatmap.ndim != 2:
        raise DimensionError(f"heatmap must be (T, C), got {heatmap.shape}")
    if len(labels) == 0:
        raise AnnotationError("keypoint loss needs at least one annotated frame")
    target = keypoint_targets(*heatmap.shape, labels)
    return nn.balanced_bce(heatmap, target)


def keypoint_loss(heatmap, labels) -> float:
    """Class-balanced BCE over the (T, C) grid.

    Positives are exactly the annotated ``(t, class)`` entries; every other
    entry, including other classes at an annotated frame, is a negative.
    """
    return keypoint_loss_and_grad(heatmap, labels)[0]


def train_keypoint_detector(videos, net: nn.Network, epochs: int = 50, lr: float = 1e-4,
                            seed: int = 0, progress=None) -> nn.Network:
    """Fit ``net`` (a per-frame sigmoid head) to point labels with Adam.

    One optimizer step per video, videos visited in a seeded random order.
    Returns a trained copy; ``net`` itself is left untouched.
    """
    net = net.copy()
    train = [v for v in videos if v.points]
    if epochs <= 0:
        return net
    if not train:
        raise AnnotationError("no video carries point labels")
    rng = np.random.default_rng(seed)
    opt = nn.AdamState.for_params(net.n_params, lr=lr)
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(train)):
            v = train[i]
            heat = net.forward(v.features)
            loss, g = keypoint_loss_and_grad(heat, v.points)
            if not np.isfinite(loss):
                raise TrainingError(f"keypoint loss diverged at epoch {epoch}")
            grads, _ = net.backward(v.features, g)
            nn.adam_step(opt, net.params, grads)
            total += loss
        if progress is not None:
            progress({"stage": "keypoint", "epoch": epoch, "loss": total / len(train)})
    return net


def smooth_heatmap(heatmap, window: int = 31, order: int = 2) -> np.ndarray:
    """Savitzky-Golay smoothing of each class row along time.

    Edges use mirror padding and the result is clamped to [0, 1]. When
    ``window`` exceeds the sequence length the heatmap is returned unchanged.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if window % 2 == 0 or window < 1:
        raise ConfigError(f"window must be odd and positive, got {window}")
    if order >= window:
        raise ConfigError(f"order {order} must be < window {window}")
    if window > heatmap.shape[0] or window == 1:
        return np.clip(heatmap, 0.0, 1.0)
    out = savgol_filter(heatmap, window, order, axis=0, mode="mirror")
    return np.clip(out, 0.0, 1.0)


def extract_keypoints(heatmap, theta: float = 0.15) -> list[Keypoint]:
    """Peaks of the class-wise max curve that exceed ``theta``.

    A frame survives if its value is >= the left neighbour and > the right
    neighbour (edge frames check only the neighbour they have). The class is
    the argmax over classes at that frame.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if not 0.0 <= theta < 1.0:
        raise ConfigError(f"theta must lie in [0, 1), got {theta}")
    curve = np.ascontiguousarray(heatmap.max(axis=1))
    idx = np.flatnonzero(kernels.peak_mask(curve, float(theta)))
    cls = heatmap.argmax(axis=1)
    return [Keypoint(int(t), int(cls[t]), float(curve[t])) for t in idx]


def resample(features, T_s: int) -> np.ndarray:
    """Linearly resample ``(span, D)`` features to ``(T_s, D)``.

    Output frame i reads source position ``i * (span - 1) / (T_s - 1)``.
    """
    if T_s < 2:
        raise ConfigError(f"T_s must be >= 2, got {T_s}")
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"cannot resample features of shape {x.shape}")
    return kernels.linear_resample(x, int(T_s))


def keypoint_spans(keypoints, T: int) -> list[tuple[int, int]]:
    """``[p_{j-1} + 1, p_{j+1} - 1]`` per keypoint, video ends as fallback."""
    ts = [int(k[0]) for k in keypoints]
    spans = []
    for j, t in enumerate(ts):
        lo = ts[j - 1] + 1 if j > 0 else 0
        hi = ts[j + 1] - 1 if j + 1 < len(ts) else T - 1
        spans.append((lo, hi))
    return spans


def segment_video(features, keypoints, T_s: int = 64, video_id: str = "") -> list[ShortVideo]:
    features = np.asarray(features, dtype=np.float64)
    T = features.shape[0]
    out = []
    for kp, (lo, hi) in zip(keypoints, keypoint_spans(keypoints, T)):
        pos = 0.5 if hi == lo else (kp.t - lo) / (hi - lo)
        out.append(ShortVideo(
            features=resample(features[lo:hi + 1], T_s),
            keypoint_pos=float(pos),
            class_id=int(kp.class_id),
            video_id=video_id,
            orig_start=lo,
            orig_end=hi,
            keypoint_t=int(kp.t),
            score=float(kp.prob),
        ))
    return out


def detect_keypoints(net: nn.Network, features, theta: float = 0.15, window: int = 31,
                     order: int = 2) -> tuple[np.ndarray, list[Keypoint]]:
    """Heatmap -> smoothing -> peaks. Returns the smoothed heatmap and keypoints."""
    heat = smooth_heatmap(net.forward(features), window, order)
    return heat, extract_keypoints(heat, theta)
