"""Inference without post-processing, plus prediction file I/O."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import keypoint as kp
from .errors import DimensionError
from .localizer import LocalizerModel
from .mapper import boundaries
from .metrics import ActionPrediction, GroundTruth


def to_frame(coord: float, orig_start: int, orig_end: int, T: int) -> int:
    """Normalized short-video coordinate -> original frame, rounded half-up and clamped."""
    f = math.floor(orig_start + coord * (orig_end - orig_start) + 0.5)
    return int(min(max(f, 0), T - 1))


def proposals_to_predictions(short_videos, proposals, classes, T: int) -> list[ActionPrediction]:
    out = []
    for sv, (c, l), cls in zip(short_videos, proposals, classes):
        ra, rb = boundaries(c, l)
        s = to_frame(float(ra), sv.orig_start, sv.orig_end, T)
        e = to_frame(float(rb), sv.orig_start, sv.orig_end, T)
        out.append(ActionPrediction(sv.video_id, s, max(s, e), int(cls), float(sv.score)))
    return out


def infer(video_id: str, features, kp_net, loc: LocalizerModel, theta: float = 0.15,
          sg_window: int = 31, sg_order: int = 2, fixed_length: float | None = None) -> list[ActionPrediction]:
    """One prediction per extracted keypoint.

    ``fixed_length`` replaces the learned proposal with one of that length
    centered on the keypoint (the degenerate baseline); the class still
    comes from the classifier.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != kp_net.in_dim or kp_net.in_dim != loc.D:
        raise DimensionError(f"features {x.shape} vs detector D={kp_net.in_dim}, localizer D={loc.D}")
    if kp_net.out_dim != loc.C:
        raise DimensionError(f"detector has {kp_net.out_dim} classes, localizer {loc.C}")
    _, kps = kp.detect_keypoints(kp_net, x, theta, sg_window, sg_order)
    svs = kp.segment_video(x, kps, loc.T_s, video_id)
    props, classes = [], []
    for sv in svs:
        prop = (sv.keypoint_pos, fixed_length) if fixed_length is not None else loc.predict_proposal(sv)
        props.append(prop)
        classes.append(int(np.argmax(loc.classify(sv)[:loc.C])))
    return proposals_to_predictions(svs, props, classes, x.shape[0])


def ground_truths(videos) -> list[GroundTruth]:
    return [GroundTruth(v.video_id, s.start, s.end, s.class_id) for v in videos for s in v.segments]


def save_predictions(path, preds, run_config: dict | None = None) -> None:
    """Predictions as a JSON array, wrapped in ``{"run_config", "predictions"}``
    when a run config is given. :func:`load_predictions` reads both forms."""
    rows = [{"video_id": p.video_id, "start": p.start, "end": p.end, "class_id": p.class_id,
             "score": p.score} for p in preds]
    doc = rows if run_config is None else {"run_config": run_config, "predictions": rows}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_predictions(path) -> list[ActionPrediction]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing predictions file: {p}")
    doc = json.loads(p.read_text())
    rows = doc["predictions"] if isinstance(doc, dict) else doc
    return [ActionPrediction(r["video_id"], int(r["start"]), int(r["end"]), int(r["class_id"]),
                             float(r["score"])) for r in rows]
