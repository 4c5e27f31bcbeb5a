"""Differentiable proposal-to-mask mapper.

A proposal is ``(center, length)`` in normalized short-video coordinates.
Its analytic mask marks every frame ``t`` whose coordinate ``t / (T_s - 1)``
lies inside ``[center - length/2, center + length/2]``. That mask is a step
function with no useful gradient, so a small MLP is fitted to it on
simulated pairs and then frozen; the MLP's soft output is what later stages
back-propagate through.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from . import nn
from .errors import ConfigError, DimensionError, TrainingError

log = logging.getLogger(__name__)

# affine encoding of (center, length) before the first dense layer
INPUT_SHIFT = 0.5
INPUT_SCALE = 16.0


class Proposal(NamedTuple):
    center: float
    length: float


def boundaries(center, length):
    """Left/right boundaries ``center -/+ length/2``, clipped to [0, 1]."""
    ra = np.clip(np.asarray(center) - 0.5 * np.asarray(length), 0.0, 1.0)
    rb = np.clip(np.asarray(center) + 0.5 * np.asarray(length), 0.0, 1.0)
    return ra, rb


def frame_coords(T_s: int) -> np.ndarray:
    return np.arange(T_s) / (T_s - 1)


def masks_from_proposals(centers, lengths, T_s: int) -> np.ndarray:
    """Vectorized analytic masks, shape ``(n, T_s)``."""
    if T_s < 2:
        raise ConfigError(f"T_s must be >= 2, got {T_s}")
    c = np.atleast_1d(np.asarray(centers, dtype=np.float64))
    half = 0.5 * np.atleast_1d(np.asarray(lengths, dtype=np.float64))
    x = frame_coords(T_s)
    ra = (c - half)[:, None]
    rb = (c + half)[:, None]
    return ((x >= ra) & (x <= rb)).astype(np.float64)


def mask_from_proposal(p, T_s: int) -> np.ndarray:
    return masks_from_proposals([p[0]], [p[1]], T_s)[0]


def simulate_pairs(n: int, T_s: int, seed=0):
    """``n`` random proposals and their analytic masks.

    Centers ~ U(0, 1), lengths ~ U(1/T_s, 1). Returns ``(proposals, masks)``
    with shapes ``(n, 2)`` and ``(n, T_s)``.
    """
    if n < 1:
        raise ConfigError("need at least one pair")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=n)
    lengths = rng.uniform(1.0 / T_s, 1.0, size=n)
    props = np.stack([centers, lengths], axis=1)
    return props, masks_from_proposals(centers, lengths, T_s)


def mapper_loss_and_grad(pred, target):
    """Per-pair balanced BCE averaged over the batch, plus its gradient."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    n, T_s = pred.shape
    pos = target > 0.5
    n_pos = pos.sum(axis=1, keepdims=True)
    n_neg = T_s - n_pos
    terms, dterms = nn.bce_terms(pred, target)
    # an empty side contributes nothing (its weight is irrelevant)
    w = np.where(pos, 1.0 / np.maximum(n_pos, 1), 1.0 / np.maximum(n_neg, 1))
    return float(np.sum(w * terms) / n), w * dterms / n


def _fused_loss(pred, target):
    """Loss plus gradient w.r.t. the sigmoid logits, for binary targets."""
    n, T_s = pred.shape
    pos = target > 0.5
    n_pos = pos.sum(axis=1, keepdims=True)
    w = np.where(pos, 1.0 / np.maximum(n_pos, 1), 1.0 / np.maximum(T_s - n_pos, 1)) / n
    p = np.clip(pred, nn.EPS, 1.0 - nn.EPS)
    loss = -np.sum(w * np.log(np.where(pos, p, 1.0 - p)))
    return float(loss), w * (pred - target)


def mapper_loss(pred, target) -> float:
    return mapper_loss_and_grad(pred, target)[0]


class Mapper:
    """A mapper network bound to its short-video length ``T_s``."""

    def __init__(self, net: nn.Network, T_s: int):
        if net.in_dim != 2 or net.out_dim != T_s:
            raise DimensionError(f"mapper net maps {net.in_dim} -> {net.out_dim}, expected 2 -> {T_s}")
        self.net = net
        self.T_s = int(T_s)

    @classmethod
    def build(cls, T_s: int = 64, hidden: int = 128, seed: int = 0) -> "Mapper":
        net = nn.Network(
            [nn.dense(2, hidden, "relu"), nn.dense(hidden, hidden, "relu"), nn.dense(hidden, T_s, "sigmoid")],
            rng_seed=seed,
        )
        return cls(net, T_s)

    @property
    def frozen(self) -> bool:
        return self.net.frozen

    @staticmethod
    def encode(props):
        return (np.atleast_2d(np.asarray(props, dtype=np.float64)) - INPUT_SHIFT) * INPUT_SCALE

    def forward(self, props) -> np.ndarray:
        """Soft masks for an ``(n, 2)`` batch of proposals."""
        return self.net.forward(self.encode(props))

    def backward(self, props, upstream):
        """``(param_grads, d/d(center, length))`` of ``sum(upstream * forward)``."""
        grads, gx = self.net.backward(self.encode(props), upstream)
        return grads, gx * INPUT_SCALE

    def accuracy(self, props, targets) -> float:
        """Per-frame agreement of the 0.5-thresholded output with ``targets``."""
        return float(np.mean((self.forward(props) > 0.5) == (np.asarray(targets) > 0.5)))

    def freeze(self) -> "Mapper":
        return Mapper(self.net.with_trainable(False), self.T_s)


def mapper_forward(mapper: Mapper, p) -> np.ndarray:
    """Soft mask for a single proposal."""
    return mapper.forward(np.asarray(p, dtype=np.float64)[None, :])[0]


def train_mapper(pairs, mapper: Mapper, lr: float = 1e-5, epochs: int = 400, batch_size: int = 64,
                 seed: int = 0, val_pairs=None, target_accuracy: float = 0.99,
                 stop_margin: float = 0.001, progress=None) -> Mapper:
    """Fit the mapper to simulated pairs with Adam, then freeze it.

    After each epoch the 0.5-thresholded per-frame accuracy is measured on
    ``val_pairs``; training stops once it reaches ``target_accuracy +
    stop_margin``. Raises :class:`TrainingError` if ``target_accuracy`` is
    still not met when ``epochs`` run out.
    """
    props, targets = pairs
    n = props.shape[0]
    if n == 0:
        raise ConfigError("no training pairs")
    if targets.shape != (n, mapper.T_s):
        raise DimensionError(f"targets {targets.shape} do not match T_s={mapper.T_s}")
    if val_pairs is None:
        val_pairs = simulate_pairs(min(n, 10_000), mapper.T_s, seed=[seed, 99])
    net = mapper.net.with_trainable(True)
    rng = np.random.default_rng(seed)
    opt = nn.AdamState.for_params(net.n_params, lr=lr)
    enc = Mapper.encode(props)
    acc = Mapper(net, mapper.T_s).accuracy(*val_pairs)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = perm[lo:lo + batch_size]
            y = targets[idx]
            loss, grads, _ = net.value_and_grad(enc[idx], lambda out: _fused_loss(out, y), wrt_logits=True)
            if not np.isfinite(loss):
                raise TrainingError(f"mapper loss diverged at epoch {epoch}")
            nn.adam_step(opt, net.params, grads)
            total += loss * len(idx)
        acc = Mapper(net, mapper.T_s).accuracy(*val_pairs)
        if progress is not None:
            progress({"stage": "mapper", "epoch": epoch, "loss": total / n, "val_accuracy": acc})
        if acc >= target_accuracy + stop_margin:
            break
    if epochs > 0 and acc < target_accuracy:
        raise TrainingError(
            f"mapper reached per-frame accuracy {acc:.4f} < {target_accuracy} after {epochs} epochs "
            f"(lr={lr}, batch={batch_size}, pairs={n})")
    return Mapper(net, mapper.T_s).freeze()
