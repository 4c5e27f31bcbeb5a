import json

import numpy as np
import pytest

from ptal import datagen
from ptal.datagen import Segment, SyntheticConfig
from ptal.errors import AnnotationError, ConfigError, DimensionError


def test_zero_noise_frames_equal_prototypes():
    corpus = datagen.generate_dataset(SyntheticConfig(num_videos=4, num_test=1, noise_sigma=0.0))
    protos = np.array(corpus.meta["prototypes"])
    bg = np.array(corpus.meta["background"])
    for v in corpus.videos:
        inside = np.zeros(v.T, dtype=bool)
        for s in v.segments:
            assert np.all(v.features[s.start:s.end + 1] == protos[s.class_id])
            inside[s.start:s.end + 1] = True
        assert np.all(v.features[~inside] == bg)


def test_single_instance_per_video():
    corpus = datagen.generate_dataset(SyntheticConfig(num_videos=10, num_test=0, instances_per_video=(1, 1)))
    assert all(len(v.segments) == 1 for v in corpus.videos)


def test_generation_is_deterministic():
    a = datagen.generate_dataset(SyntheticConfig(seed=11, num_videos=5, num_test=2))
    b = datagen.generate_dataset(SyntheticConfig(seed=11, num_videos=5, num_test=2))
    for va, vb in zip(a.videos, b.videos):
        assert va.features.tobytes() == vb.features.tobytes()
        assert va.segments == vb.segments and va.points == vb.points
    c = datagen.generate_dataset(SyntheticConfig(seed=12, num_videos=5, num_test=2))
    assert a.videos[0].features.tobytes() != c.videos[0].features.tobytes()


def test_segments_respect_gap_and_bounds():
    cfg = SyntheticConfig(num_videos=60, num_test=0, seed=4)
    for v in datagen.generate_dataset(cfg).videos:
        prev_end = -1
        for s in v.segments:
            assert 0 <= s.start <= s.end < cfg.T
            assert cfg.length_range[0] <= s.end - s.start + 1 <= cfg.length_range[1]
            assert s.start - prev_end - 1 >= cfg.gap_min if prev_end >= 0 else s.start >= cfg.gap_min
            prev_end = s.end
        assert cfg.T - 1 - prev_end >= cfg.gap_min
        assert len(v.points) == len(v.segments)
        for p, s in zip(v.points, v.segments):
            assert s.start <= p.t <= s.end and p.class_id == s.class_id


def test_corpus_is_learnable_by_nearest_prototype():
    corpus = datagen.generate_dataset(SyntheticConfig())
    protos = np.array(corpus.meta["prototypes"])
    for v in corpus.videos:
        for s in v.segments:
            x = v.features[s.start:s.end + 1]
            d = ((x[:, None, :] - protos[None]) ** 2).sum(-1)
            assert np.all(d.argmin(axis=1) == s.class_id)


def test_infeasible_packing_rejected():
    with pytest.raises(ConfigError):
        SyntheticConfig(T=50, instances_per_video=(3, 3), length_range=(10, 20), gap_min=5).validate()
    with pytest.raises(ConfigError):
        SyntheticConfig(label_distribution="poisson").validate()
    with pytest.raises(ConfigError):
        datagen.generate_dataset(SyntheticConfig(gap_min=0))


def test_degenerate_segment_labels():
    for dist in ("uniform", "gaussian"):
        pts = datagen.simulate_point_labels([Segment(42, 42, 3)], dist, seed=0)
        assert pts == [datagen.PointLabel(42, 3)]
    with pytest.raises(AnnotationError):
        datagen.simulate_point_labels([], "uniform")


def test_gaussian_labels_center_on_midpoint():
    rng = np.random.default_rng(0)
    ts = [datagen.simulate_point_labels([Segment(100, 200, 0)], "gaussian", rng)[0].t for _ in range(10_000)]
    assert abs(np.mean(ts) - 150) < 2
    assert min(ts) >= 100 and max(ts) <= 200


def test_uniform_labels_are_flat():
    rng = np.random.default_rng(1)
    segs = [Segment(100, 200, 0)] * 10_000
    ts = np.array([p.t for p in datagen.simulate_point_labels(segs, "uniform", rng)])
    counts = np.bincount(ts - 100, minlength=101)
    n, p = ts.size, 1 / 101
    sigma = np.sqrt(n * p * (1 - p))
    assert counts.size == 101
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_corpus_roundtrip(tmp_path):
    corpus = datagen.generate_dataset(SyntheticConfig(num_videos=3, num_test=1))
    path = datagen.save_corpus(corpus, tmp_path / "c", {"seed": 7})
    manifest = json.loads(path.read_text())
    assert manifest["run_config"] == {"seed": 7}
    raw = (tmp_path / "c" / "features-v0000.bin").read_bytes()
    assert len(raw) == corpus.T * corpus.D * 8
    np.testing.assert_array_equal(np.frombuffer(raw, "<f8").reshape(corpus.T, corpus.D), corpus.videos[0].features)
    back = datagen.load_corpus(tmp_path / "c")
    assert [v.video_id for v in back.videos] == [v.video_id for v in corpus.videos]
    assert back.split("test")[0].segments == corpus.split("test")[0].segments
    assert back.videos[2].points == corpus.videos[2].points


def test_load_corpus_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest.json"):
        datagen.load_corpus(tmp_path)
    corpus = datagen.generate_dataset(SyntheticConfig(num_videos=1, num_test=0))
    datagen.save_corpus(corpus, tmp_path)
    f = tmp_path / "features-v0000.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(DimensionError):
        datagen.load_corpus(tmp_path)
    f.unlink()
    with pytest.raises(FileNotFoundError, match="features-v0000.bin"):
        datagen.load_corpus(tmp_path)
