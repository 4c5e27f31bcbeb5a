"""Location predictor, masked pooling through the frozen mapper, and the
shared foreground/background classifier.

For a short video with keypoint position ``p`` the predictor emits two raw
values; the proposal is ``center = clamp(p + tanh(r0)/2, 0, 1)`` and
``length = sigmoid(r1)``. The frozen mapper turns the proposal into a soft
mask, the mask pools foreground and background features, and one classifier
scores both against ``C + 1`` classes (index ``C`` is background).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from . import nn
from .errors import AnnotationError, ConfigError, DimensionError, TrainingError
from .mapper import Mapper, boundaries

log = logging.getLogger(__name__)

BETA_PRESETS = {"thumos": 1.25, "beoid": 1.25, "gtea": 2.0, "synthetic": 1.25}
POOL_DIVISORS = ("T_s", "mask_sum")


def pool_foreground(features, mask, divisor: str = "T_s") -> np.ndarray:
    """``sum_t m_t x_t`` divided by ``T_s`` (default) or by ``sum_t m_t``."""
    x = np.asarray(features, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if x.ndim != 2 or m.shape != (x.shape[0],):
        raise DimensionError(f"mask {m.shape} does not match features {x.shape}")
    if divisor == "T_s":
        return m @ x / x.shape[0]
    if divisor == "mask_sum":
        return m @ x / max(float(m.sum()), nn.EPS)
    raise ConfigError(f"unknown pooling divisor {divisor!r}")


def pool_background(features, mask, divisor: str = "T_s") -> np.ndarray:
    """Foreground pooling of the complement mask ``1 - m``."""
    return pool_foreground(features, 1.0 - np.asarray(mask, dtype=np.float64), divisor)


def class_targets(class_id: int, C: int):
    """One-hot foreground target at ``class_id`` and background target at ``C``."""
    if not 0 <= class_id < C:
        raise AnnotationError(f"class id {class_id} outside [0, {C})")
    y_fg = np.zeros(C + 1)
    y_fg[class_id] = 1.0
    y_bg = np.zeros(C + 1)
    y_bg[C] = 1.0
    return y_fg, y_bg


def classification_loss(y_fg_hat, y_bg_hat, target_class: int, beta: float = 1.25,
                        use_bg_loss: bool = True) -> float:
    """``H(y_bg, y_bg_hat) + beta * H(y_fg, y_fg_hat)`` with categorical CE."""
    y_fg_hat = np.asarray(y_fg_hat, dtype=np.float64)
    y_bg_hat = np.asarray(y_bg_hat, dtype=np.float64)
    if y_fg_hat.shape != y_bg_hat.shape or y_fg_hat.ndim != 1:
        raise DimensionError(f"prediction shapes {y_fg_hat.shape} and {y_bg_hat.shape}")
    y_fg, y_bg = class_targets(int(target_class), y_fg_hat.size - 1)
    loss = beta * nn.cross_entropy(y_fg_hat, y_fg)
    if use_bg_loss:
        loss += nn.cross_entropy(y_bg_hat, y_bg)
    return float(loss)


def default_predictor(D: int, hidden: int = 64, kernel: int = 3, seed: int = 0,
                      zero_head: bool = True) -> nn.Network:
    """conv1d -> temporal mean -> dense relu -> dense to 2 raw outputs.

    With ``zero_head`` the last layer starts at zero, so every short video
    starts from the proposal ``(keypoint_pos, 0.5)``.
    """
    net = nn.Network(
        [nn.conv1d(D, hidden, kernel, "relu"), nn.meanpool(hidden),
         nn.dense(hidden, hidden, "relu"), nn.dense(hidden, 2)],
        rng_seed=seed,
    )
    if zero_head:
        W, b = net.layer_params(3)
        W[...] = 0.0
        b[...] = 0.0
    return net


def default_classifier(D: int, C: int, hidden: int = 64, seed: int = 0) -> nn.Network:
    return nn.Network([nn.dense(D, hidden, "relu"), nn.dense(hidden, C + 1, "softmax")], rng_seed=seed)


@dataclass
class LocalizerConfig:
    beta: float = 1.25
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 1
    seed: int = 0
    hidden: int = 64
    use_offset: bool = True
    use_bg_loss: bool = True
    pool_divisor: str = "T_s"

    def validate(self) -> None:
        if self.beta < 0 or self.lr <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"invalid localizer config {self}")
        if self.pool_divisor not in POOL_DIVISORS:
            raise ConfigError(f"pool_divisor must be one of {POOL_DIVISORS}")

    def to_dict(self) -> dict:
        return asdict(self)


class LocalizerModel:
    def __init__(self, predictor: nn.Network, classifier: nn.Network, mapper: Mapper,
                 use_offset: bool = True, pool_divisor: str = "T_s"):
        if not mapper.frozen:
            raise ConfigError("the localizer needs a frozen mapper")
        if predictor.out_dim != 2:
            raise DimensionError(f"predictor must emit 2 values, got {predictor.out_dim}")
        if classifier.in_dim != predictor.in_dim:
            raise DimensionError(f"classifier takes {classifier.in_dim} features, predictor {predictor.in_dim}")
        if classifier.layers[-1].activation != "softmax":
            raise ConfigError("classifier must end in softmax")
        if pool_divisor not in POOL_DIVISORS:
            raise ConfigError(f"pool_divisor must be one of {POOL_DIVISORS}")
        self.predictor = predictor
        self.classifier = classifier
        self.mapper = mapper
        self.use_offset = bool(use_offset)
        self.pool_divisor = pool_divisor

    @classmethod
    def build(cls, D: int, C: int, mapper: Mapper, cfg: LocalizerConfig | None = None) -> "LocalizerModel":
        cfg = cfg or LocalizerConfig()
        return cls(default_predictor(D, cfg.hidden, seed=cfg.seed),
                   default_classifier(D, C, cfg.hidden, seed=cfg.seed + 1),
                   mapper, cfg.use_offset, cfg.pool_divisor)

    @property
    def D(self) -> int:
        return self.predictor.in_dim

    @property
    def C(self) -> int:
        return self.classifier.out_dim - 1

    @property
    def T_s(self) -> int:
        return self.mapper.T_s

    def copy(self) -> "LocalizerModel":
        return LocalizerModel(self.predictor.copy(), self.classifier.copy(), self.mapper,
                              self.use_offset, self.pool_divisor)

    def _check(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (self.T_s, self.D):
            raise DimensionError(f"short video features {x.shape}, expected ({self.T_s}, {self.D})")
        return x

    def head(self, raw, keypoint_pos: float):
        """Raw predictor outputs -> ``(center, length, offset)``."""
        offset = 0.5 * np.tanh(raw[0]) if self.use_offset else 0.0
        center = min(max(keypoint_pos + offset, 0.0), 1.0)
        length = expit(raw[1])
        return float(center), float(length), float(offset)

    def predict_proposal(self, sv):
        """``(center, length)`` for a short video."""
        x = self._check(sv.features)
        c, l, _ = self.head(self.predictor.forward(x)[0], sv.keypoint_pos)
        return c, l

    def proposal_boundaries(self, sv):
        c, l = self.predict_proposal(sv)
        ra, rb = boundaries(c, l)
        return float(ra), float(rb)

    def pool(self, x, mask):
        return pool_foreground(x, mask, self.pool_divisor), pool_background(x, mask, self.pool_divisor)

    def classify(self, sv) -> np.ndarray:
        """Class probabilities of the foreground-pooled feature, shape ``(C + 1,)``."""
        x = self._check(sv.features)
        c, l = self.predict_proposal(sv)
        mask = self.mapper.forward([[c, l]])[0]
        return self.classifier.forward(pool_foreground(x, mask, self.pool_divisor)[None, :])[0]

    def loss_and_grads(self, sv, class_id: int, beta: float = 1.25, use_bg_loss: bool = True):
        """Classification loss of one short video and its gradients.

        Returns ``(loss, predictor_grads, classifier_grads, parts)`` where
        ``parts`` holds the separate foreground and background terms.
        """
        x = self._check(sv.features)
        y_fg, y_bg = class_targets(int(class_id), self.C)
        p_out, p_cache = self.predictor._run(x)
        raw = p_out[0]
        center, length, _ = self.head(raw, sv.keypoint_pos)
        prop = np.array([[center, length]])
        mask = self.mapper.forward(prop)[0]
        x_fg, x_bg = self.pool(x, mask)
        feats = np.stack([x_fg, x_bg])
        probs, c_cache = self.classifier._run(feats)
        l_fg = nn.cross_entropy(probs[0], y_fg)
        l_bg = nn.cross_entropy(probs[1], y_bg)
        w_bg = 1.0 if use_bg_loss else 0.0
        loss = beta * l_fg + w_bg * l_bg
        up = np.stack([beta * nn.categorical_ce_grad(probs[0], y_fg),
                       w_bg * nn.categorical_ce_grad(probs[1], y_bg)])
        c_grads, g_feat = self.classifier._backprop(c_cache, probs, up)
        g_fg, g_bg = g_feat
        if self.pool_divisor == "T_s":
            g_mask = x @ (g_fg - g_bg) / self.T_s
        else:
            s_fg = max(float(mask.sum()), nn.EPS)
            s_bg = max(float((1.0 - mask).sum()), nn.EPS)
            g_mask = (x - x_fg) @ g_fg / s_fg - (x - x_bg) @ g_bg / s_bg
        _, g_prop = self.mapper.backward(prop, g_mask[None, :])
        g_c, g_l = g_prop[0]
        g_raw = np.zeros((1, 2))
        if self.use_offset and 0.0 < sv.keypoint_pos + 0.5 * np.tanh(raw[0]) < 1.0:
            g_raw[0, 0] = g_c * 0.5 * (1.0 - np.tanh(raw[0]) ** 2)
        g_raw[0, 1] = g_l * length * (1.0 - length)
        p_grads, _ = self.predictor._backprop(p_cache, p_out, g_raw)
        return float(loss), p_grads, c_grads, {"fg": float(l_fg), "bg": float(l_bg)}

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.update({"use_offset": self.use_offset, "pool_divisor": self.pool_divisor, "T_s": self.T_s})
        nn.save_networks(path, {"predictor": self.predictor, "classifier": self.classifier,
                                "mapper": self.mapper.net}, meta)

    @classmethod
    def load(cls, path) -> tuple["LocalizerModel", dict]:
        nets, meta = nn.load_networks(path)
        for key in ("predictor", "classifier", "mapper"):
            if key not in nets:
                raise DimensionError(f"{path}: checkpoint has no {key!r} network")
        mapper = Mapper(nets["mapper"].with_trainable(False), nets["mapper"].out_dim)
        model = cls(nets["predictor"], nets["classifier"], mapper,
                    meta.get("use_offset", True), meta.get("pool_divisor", "T_s"))
        return model, meta


def label_short_videos(short_videos, points):
    """Attach point-annotation classes to training short videos.

    A short video takes the class of the annotation inside its original span
    that lies nearest its keypoint (earlier frame on ties). Short videos whose
    span holds no annotation are dropped. Returns ``(kept, labels, n_skipped)``.
    """
    kept, labels = [], []
    for sv in short_videos:
        inside = [p for p in points if sv.orig_start <= p[0] <= sv.orig_end]
        if not inside:
            continue
        best = min(inside, key=lambda p: (abs(p[0] - sv.keypoint_t), p[0]))
        kept.append(sv)
        labels.append(int(best[1]))
    skipped = len(short_videos) - len(kept)
    if skipped:
        log.info("skipped %d short videos with no annotation in their span", skipped)
    return kept, labels, skipped


def train_localizer(short_videos, labels, mapper: Mapper, cfg: LocalizerConfig | None = None,
                    C: int | None = None, model: LocalizerModel | None = None,
                    progress=None) -> LocalizerModel:
    """Jointly fit predictor and classifier with Adam; the mapper stays frozen.

    Short videos are visited in a seeded random order and the gradients of
    ``cfg.batch_size`` consecutive videos are averaged per optimizer step.
    """
    cfg = cfg or LocalizerConfig()
    cfg.validate()
    if len(short_videos) != len(labels):
        raise DimensionError(f"{len(short_videos)} short videos but {len(labels)} labels")
    if not mapper.frozen:
        raise ConfigError("mapper must be frozen before localizer training")
    if model is None:
        if not short_videos:
            raise AnnotationError("no labelled short videos to train on")
        if C is None:
            raise ConfigError("C is required when no model is given")
        D = short_videos[0].features.shape[1]
        model = LocalizerModel.build(D, C, mapper, cfg)
    else:
        model = model.copy()
    if cfg.epochs == 0:
        return model
    if not short_videos:
        raise AnnotationError("no labelled short videos to train on")
    rng = np.random.default_rng(cfg.seed)
    opt_p = nn.AdamState.for_params(model.predictor.n_params, lr=cfg.lr)
    opt_c = nn.AdamState.for_params(model.classifier.n_params, lr=cfg.lr)
    n = len(short_videos)
    for epoch in range(cfg.epochs):
        totals = np.zeros(3)
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            gp = np.zeros(model.predictor.n_params)
            gc = np.zeros(model.classifier.n_params)
            for i in idx:
                loss, p_g, c_g, parts = model.loss_and_grads(short_videos[i], labels[i], cfg.beta, cfg.use_bg_loss)
                if not np.isfinite(loss):
                    raise TrainingError(f"localizer loss is not finite at epoch {epoch}")
                gp += p_g
                gc += c_g
                totals += (loss, parts["fg"], parts["bg"])
            nn.adam_step(opt_p, model.predictor.params, gp / len(idx))
            nn.adam_step(opt_c, model.classifier.params, gc / len(idx))
        if progress is not None:
            progress({"stage": "localizer", "epoch": epoch, "loss": totals[0] / n,
                      "loss_fg": totals[1] / n, "loss_bg": totals[2] / n})
    return model
