"""Synthetic feature corpora with ground-truth segments and point labels."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import AnnotationError, ConfigError, DimensionError


class Segment(NamedTuple):
    start: int
    end: int  # inclusive
    class_id: int


class PointLabel(NamedTuple):
    t: int
    class_id: int


@dataclass
class SyntheticConfig:
    num_videos: int = 40
    num_test: int = 10
    T: int = 256
    D: int = 32
    C: int = 5
    instances_per_video: tuple[int, int] = (1, 4)
    length_range: tuple[int, int] = (10, 24)
    gap_min: int = 20
    noise_sigma: float = 0.1
    label_distribution: str = "gaussian"
    seed: int = 7

    def validate(self) -> None:
        for name in ("num_videos", "T", "D", "C", "gap_min"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_test < 0:
            raise ConfigError("num_test must be >= 0")
        lo, hi = self.instances_per_video
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad instances_per_video {self.instances_per_video}")
        lmin, lmax = self.length_range
        if not 1 <= lmin <= lmax <= self.T:
            raise ConfigError(f"length_range {self.length_range} does not fit in T={self.T}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.label_distribution not in ("uniform", "gaussian"):
            raise ConfigError(f"unknown label distribution {self.label_distribution!r}")
        # every instance may need max length, plus a gap before, between and after
        need = hi * lmax + (hi + 1) * self.gap_min
        if need > self.T:
            raise ConfigError(
                f"infeasible packing: {hi} x {lmax} frames + {hi + 1} gaps of {self.gap_min} > T={self.T}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        for key in ("instances_per_video", "length_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Video:
    video_id: str
    features: np.ndarray
    segments: list[Segment]
    points: list[PointLabel] = field(default_factory=list)
    split: str = "train"

    @property
    def T(self) -> int:
        return self.features.shape[0]


@dataclass
class Corpus:
    videos: list[Video]
    T: int
    D: int
    C: int
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Video]:
        return [v for v in self.videos if v.split == name]


def _layout(rng, cfg: SyntheticConfig) -> list[Segment]:
    n = int(rng.integers(cfg.instances_per_video[0], cfg.instances_per_video[1] + 1))
    lengths = rng.integers(cfg.length_range[0], cfg.length_range[1] + 1, size=n)
    classes = rng.integers(0, cfg.C, size=n)
    slack = cfg.T - int(lengths.sum()) - (n + 1) * cfg.gap_min
    cuts = np.sort(rng.integers(0, slack + 1, size=n))
    extra = np.diff(np.concatenate([[0], cuts, [slack]]))
    segs = []
    pos = 0
    for i in range(n):
        pos += cfg.gap_min + int(extra[i])
        segs.append(Segment(pos, pos + int(lengths[i]) - 1, int(classes[i])))
        pos += int(lengths[i])
    return segs


def generate_dataset(cfg: SyntheticConfig) -> Corpus:
    """Build a corpus of prototype-plus-noise feature sequences.

    Each class has a fixed random prototype and the background has its own;
    every frame is its prototype plus isotropic Gaussian noise. Point labels
    are simulated for every segment with ``cfg.label_distribution``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    protos = rng.normal(size=(cfg.C, cfg.D))
    bg = rng.normal(size=cfg.D)
    videos = []
    total = cfg.num_videos + cfg.num_test
    for i in range(total):
        segs = _layout(rng, cfg)
        feats = np.repeat(bg[None, :], cfg.T, axis=0)
        for s in segs:
            feats[s.start:s.end + 1] = protos[s.class_id]
        if cfg.noise_sigma > 0:
            feats = feats + rng.normal(scale=cfg.noise_sigma, size=feats.shape)
        split = "train" if i < cfg.num_videos else "test"
        videos.append(Video(f"v{i:04d}", feats, segs, [], split))
    label_rng = np.random.default_rng([cfg.seed, 1])
    for v in videos:
        v.points = simulate_point_labels(v.segments, cfg.label_distribution, label_rng)
    meta = {
        "config": cfg.to_dict(),
        "prototypes": protos.tolist(),
        "background": bg.tolist(),
    }
    return Corpus(videos, cfg.T, cfg.D, cfg.C, meta)


def simulate_point_labels(segments, distribution: str = "gaussian", seed=0) -> list[PointLabel]:
    """One point label per segment, drawn inside the segment.

    ``uniform`` draws a frame uniformly from ``[start, end]``; ``gaussian``
    draws from Normal(mid, (end - start) / 6) rounded to the nearest frame,
    redrawing until it lands inside the segment. ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if len(segments) == 0:
        raise AnnotationError("cannot simulate labels for an empty segment list")
    if distribution not in ("uniform", "gaussian"):
        raise ConfigError(f"unknown label distribution {distribution!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for s in segments:
        start, end, c = int(s[0]), int(s[1]), int(s[2])
        if distribution == "uniform":
            t = int(rng.integers(start, end + 1))
        else:
            mid = 0.5 * (start + end)
            sd = (end - start) / 6.0
            while True:
                t = int(np.floor(rng.normal(mid, sd) + 0.5)) if sd > 0 else int(round(mid))
                if start <= t <= end:
                    break
        out.append(PointLabel(t, c))
    return out


# ---------------------------------------------------------------------------
# on-disk corpus


def save_corpus(corpus: Corpus, out_dir, run_config: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for v in corpus.videos:
        if v.features.shape != (corpus.T, corpus.D):
            raise DimensionError(f"{v.video_id}: features {v.features.shape}")
        fname = f"features-{v.video_id}.bin"
        (out / fname).write_bytes(np.ascontiguousarray(v.features, dtype="<f8").tobytes())
        records.append({
            "video_id": v.video_id,
            "split": v.split,
            "features": fname,
            "segments": [{"start": s.start, "end": s.end, "class_id": s.class_id} for s in v.segments],
            "points": [{"t": p.t, "class_id": p.class_id} for p in v.points],
        })
    manifest = {
        "T": corpus.T,
        "D": corpus.D,
        "C": corpus.C,
        "meta": corpus.meta,
        "run_config": run_config or {},
        "videos": records,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_corpus(data_dir) -> Corpus:
    root = Path(data_dir)
    path = root / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing corpus manifest: {path}")
    manifest = json.loads(path.read_text())
    T, D, C = manifest["T"], manifest["D"], manifest["C"]
    videos = []
    for rec in manifest["videos"]:
        fpath = root / rec["features"]
        if not fpath.is_file():
            raise FileNotFoundError(f"missing feature file: {fpath}")
        raw = np.frombuffer(fpath.read_bytes(), dtype="<f8")
        if raw.size != T * D:
            raise DimensionError(f"{fpath}: {raw.size} values, expected {T}x{D}")
        feats = raw.reshape(T, D).astype(np.float64)
        segs = [Segment(s["start"], s["end"], s["class_id"]) for s in rec["segments"]]
        pts = [PointLabel(p["t"], p["class_id"]) for p in rec["points"]]
        videos.append(Video(rec["video_id"], feats, segs, pts, rec.get("split", "train")))
    return Corpus(videos, T, D, C, manifest.get("meta", {}))
