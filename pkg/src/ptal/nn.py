"""A small neural-network engine with exact analytic gradients.

Supports dense and 1-D convolution layers (plus a parameter-free temporal
mean pool), relu/sigmoid/tanh/softmax activations, cross-entropy losses,
Adam, and a binary checkpoint format. Everything is float64.

Input conventions: ``dense`` maps an ``(N, in)`` matrix row by row,
``conv1d`` maps a ``(T, in)`` sequence with zero padding so ``T`` is
preserved, and ``meanpool`` reduces ``(T, d)`` to ``(1, d)``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import CheckpointError, ConfigError, DimensionError, NumericError

EPS = 1e-7

KINDS = ("dense", "conv1d", "meanpool")
ACTIVATIONS = ("none", "relu", "sigmoid", "tanh", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    kernel: int = 1
    activation: str = "none"
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("layer dimensions must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.kind == "meanpool" and self.in_dim != self.out_dim:
            raise ConfigError("meanpool must keep the feature dimension")
        if self.kind != "conv1d" and self.kernel != 1:
            raise ConfigError("only conv1d layers take a kernel size")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.in_dim, self.out_dim)
        if self.kind == "conv1d":
            return (self.kernel, self.in_dim, self.out_dim)
        return (0,)

    @property
    def n_params(self) -> int:
        if self.kind == "meanpool":
            return 0
        return math.prod(self.weight_shape) + self.out_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def dense(in_dim, out_dim, activation="none"):
    return LayerSpec("dense", in_dim, out_dim, 1, activation)


def conv1d(in_dim, out_dim, kernel=3, activation="none"):
    return LayerSpec("conv1d", in_dim, out_dim, kernel, activation)


def meanpool(dim):
    return LayerSpec("meanpool", dim, dim)


def _activate(z, kind):
    if kind == "none":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    if kind == "tanh":
        return np.tanh(z)
    # softmax, row-wise
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _activate_backward(g, z, a, kind):
    if kind == "none":
        return g
    if kind == "relu":
        return g * (z > 0)
    if kind == "sigmoid":
        return g * a * (1.0 - a)
    if kind == "tanh":
        return g * (1.0 - a * a)
    return a * (g - np.sum(g * a, axis=1, keepdims=True))


class Network:
    """An ordered stack of layers over one flat parameter vector.

    ``params`` is owned by the network; optimizers update it in place.
    """

    def __init__(self, layers, params=None, rng_seed: int = 0):
        self.layers = tuple(layers)
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        for spec in self.layers[:-1]:
            if spec.activation == "softmax":
                raise ConfigError("softmax is only allowed on the final layer")
        self.rng_seed = int(rng_seed)
        self._offsets = [0]
        for spec in self.layers:
            self._offsets.append(self._offsets[-1] + spec.n_params)
        # (start, weight count, end) per layer
        self._slices = [(lo, s.n_params - s.out_dim, lo + s.n_params)
                        for lo, s in zip(self._offsets, self.layers)]
        if params is None:
            params = self._init_params(np.random.default_rng(self.rng_seed))
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} params, got {params.shape}")
        self.params = params

    def _init_params(self, rng):
        chunks = []
        for spec in self.layers:
            if spec.kind == "meanpool":
                continue
            fan_in = spec.in_dim * spec.kernel
            fan_out = spec.out_dim * spec.kernel
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-lim, lim, size=int(np.prod(spec.weight_shape))))
            chunks.append(np.zeros(spec.out_dim))
        return np.concatenate(chunks) if chunks else np.zeros(0)

    @property
    def n_params(self) -> int:
        return int(self._offsets[-1])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def frozen(self) -> bool:
        return not any(s.trainable for s in self.layers)

    def layer_params(self, i):
        """(W, b) views into ``params`` for layer ``i``."""
        lo, nw, hi = self._slices[i]
        W = self.params[lo:lo + nw].reshape(self.layers[i].weight_shape)
        return W, self.params[lo + nw:hi]

    def copy(self) -> "Network":
        return Network(self.layers, self.params.copy(), self.rng_seed)

    def with_trainable(self, trainable: bool) -> "Network":
        """Copy with every layer's trainable flag set to ``trainable``."""
        layers = [replace(s, trainable=trainable) for s in self.layers]
        return Network(layers, self.params.copy(), self.rng_seed)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"expected input (n, {self.in_dim}), got {x.shape}")
        return x

    def _run(self, x):
        cache = []
        h = x
        for i, spec in enumerate(self.layers):
            if spec.kind == "meanpool":
                z = h.mean(axis=0, keepdims=True)
            else:
                W, b = self.layer_params(i)
                if spec.kind == "dense":
                    z = h @ W + b
                else:
                    z = kernels.conv1d_forward(np.ascontiguousarray(h), W, b)
            a = _activate(z, spec.activation)
            cache.append((h, z, a))
            h = a
        return h, cache

    def forward(self, x):
        out, _ = self._run(self._check_input(x))
        return out

    def backward(self, x, upstream):
        """Gradients of ``sum(upstream * forward(x))``.

        Returns ``(param_grads, input_grad)``; layers marked non-trainable
        get zero parameter gradients but still pass gradient through.
        """
        x = self._check_input(x)
        out, cache = self._run(x)
        return self._backprop(cache, out, upstream)

    def value_and_grad(self, x, loss_fn, wrt_logits: bool = False):
        """Single forward pass, then backprop of ``loss_fn``.

        ``loss_fn(output) -> (loss, gradient)``. The gradient is taken w.r.t.
        the network output, or w.r.t. the final pre-activation when
        ``wrt_logits`` is set (the usual fused sigmoid/softmax + CE shortcut).
        Returns ``(loss, param_grads, input_grad)``.
        """
        x = self._check_input(x)
        out, cache = self._run(x)
        loss, upstream = loss_fn(out)
        grads, gx = self._backprop(cache, out, upstream, skip_last_activation=wrt_logits)
        return loss, grads, gx

    def _backprop(self, cache, out, upstream, skip_last_activation=False):
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != out.shape:
            raise DimensionError(f"upstream grad {g.shape} does not match output {out.shape}")
        grads = np.zeros(self.n_params)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            spec = self.layers[i]
            h, z, a = cache[i]
            if not (skip_last_activation and i == last):
                g = _activate_backward(g, z, a, spec.activation)
            if spec.kind == "meanpool":
                g = np.broadcast_to(g / h.shape[0], h.shape).copy()
                continue
            W, _ = self.layer_params(i)
            lo, nw, hi = self._slices[i]
            if spec.kind == "dense":
                if spec.trainable:
                    grads[lo:lo + nw] = (h.T @ g).ravel()
                    grads[lo + nw:hi] = g.sum(axis=0)
                g = g @ W.T
            else:
                gW, gb, gx = kernels.conv1d_backward(np.ascontiguousarray(h), W, np.ascontiguousarray(g))
                if spec.trainable:
                    grads[lo:lo + nw] = gW.ravel()
                    grads[lo + nw:hi] = gb
                g = gx
        return grads, g

    def spec_dict(self) -> dict:
        return {
            "layers": [s.to_dict() for s in self.layers],
            "n_params": self.n_params,
            "rng_seed": self.rng_seed,
        }


# ---------------------------------------------------------------------------
# losses


def _clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def cross_entropy(pred, target, binary: bool = False) -> float:
    """Cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].

    Categorical: ``-sum(target * log(pred))``. Binary: the per-entry
    Bernoulli cross-entropy, summed over entries.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    p = _clamp(pred)
    if binary:
        return float(-np.sum(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))
    return float(-np.sum(target * np.log(p)))


def bce_terms(pred, target):
    """Elementwise binary cross-entropy and its derivative w.r.t. ``pred``.

    The derivative is that of the clamped loss, so it vanishes wherever the
    clamp is active.
    """
    raw = np.asarray(pred, dtype=np.float64)
    p = _clamp(raw)
    loss = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad = -target / p + (1.0 - target) / (1.0 - p)
    grad = np.where((raw < EPS) | (raw > 1.0 - EPS), 0.0, grad)
    return loss, grad


def categorical_ce_grad(pred, target):
    raw = np.asarray(pred, dtype=np.float64)
    p = _clamp(raw)
    grad = -np.asarray(target, dtype=np.float64) / p
    return np.where((raw < EPS) | (raw > 1.0 - EPS), 0.0, grad)


def balanced_bce(pred, target):
    """Mean BCE over positive entries plus mean BCE over negative entries.

    An empty positive (or negative) set contributes 0. Returns the loss and
    its gradient w.r.t. ``pred``.
    """
    target = np.asarray(target, dtype=np.float64)
    pos = target > 0.5
    n_pos = int(pos.sum())
    n_neg = target.size - n_pos
    terms, dterms = bce_terms(pred, target)
    w = np.where(pos, 1.0 / max(n_pos, 1), 1.0 / max(n_neg, 1))
    return float(np.sum(w * terms)), w * dterms


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def for_params(cls, n: int, **kw) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), **kw)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``params`` for convenience.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("params, grads and optimizer moments must have equal length")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient passed to adam_step")
    state.step += 1
    kernels.adam_update(params, np.ascontiguousarray(grads, dtype=np.float64), state.m, state.v,
                        state.lr, state.beta1, state.beta2, state.eps, state.step)
    return params


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"PTALNET1"


def save_networks(path, networks: dict, meta: dict | None = None) -> None:
    """Write named networks plus a JSON metadata block.

    Layout: the 8-byte magic, a little-endian uint64 header length, the UTF-8
    JSON header, then every network's params as little-endian float64 in
    header order.
    """
    header = {
        "meta": meta or {},
        "networks": [dict(name=name, **net.spec_dict()) for name, net in networks.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for net in networks.values():
            fh.write(net.params.astype("<f8").tobytes())


def load_networks(path):
    """Inverse of :func:`save_networks`; returns ``(networks, meta)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    specs = header["networks"]
    expected = 16 + hlen + 8 * sum(s["n_params"] for s in specs)
    if len(data) != expected:
        raise CheckpointError(f"{path}: size mismatch ({len(data)} bytes, expected {expected})")
    nets = {}
    pos = 16 + hlen
    for s in specs:
        n = s["n_params"]
        params = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        layers = [LayerSpec.from_dict(d) for d in s["layers"]]
        net = Network(layers, params, s["rng_seed"])
        if net.n_params != n:
            raise CheckpointError(f"{path}: layer specs imply {net.n_params} params, header says {n}")
        nets[s["name"]] = net
    return nets, header["meta"]
