"""Temporal detection metrics: tIoU, AP / mAP over IoU thresholds, and
false-alarm / precision / recall / F-measure.

Segments are inclusive frame intervals. A prediction is a true positive when
its class is right and it is greedily matched (in score order) to an
unmatched ground truth of the same video with IoU >= the threshold.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

DEFAULT_IOUS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


class ActionPrediction(NamedTuple):
    video_id: str
    start: int
    end: int
    class_id: int
    score: float


class GroundTruth(NamedTuple):
    video_id: str
    start: int
    end: int
    class_id: int


def temporal_iou(a, b) -> float:
    """IoU of two inclusive ``(start, end)`` frame intervals."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def rank_predictions(preds):
    """Score descending; ties broken by earlier start, then video id."""
    return sorted(preds, key=lambda p: (-p.score, p.start, p.video_id))


def match_predictions(preds, gts, iou_thr: float):
    """Greedy matching of already-ranked predictions to ground truths.

    Both lists must hold a single class. Returns an int array giving, per
    prediction, the matched ground-truth index or -1.
    """
    vids = {v: i for i, v in enumerate(sorted({p.video_id for p in preds} | {g.video_id for g in gts}))}
    if not preds:
        return np.zeros(0, dtype=np.int64)
    p_start = np.array([p.start for p in preds], dtype=np.int64)
    p_end = np.array([p.end for p in preds], dtype=np.int64)
    p_vid = np.array([vids[p.video_id] for p in preds], dtype=np.int64)
    g_start = np.array([g.start for g in gts], dtype=np.int64)
    g_end = np.array([g.end for g in gts], dtype=np.int64)
    g_vid = np.array([vids[g.video_id] for g in gts], dtype=np.int64)
    return kernels.greedy_match(p_start, p_end, p_vid, g_start, g_end, g_vid, float(iou_thr))


def interpolated_ap(tp, n_gt: int) -> float:
    """All-point interpolated AP from a ranked true-positive indicator."""
    tp = np.asarray(tp, dtype=np.float64)
    if n_gt == 0 or tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    # monotone non-increasing envelope, right to left
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def average_precision(preds, gts, iou_thr: float) -> float:
    """AP for one class. Returns 0 (with a warning) when there is no ground truth."""
    if len(gts) == 0:
        warnings.warn("average_precision: no ground truth for this class, AP set to 0", stacklevel=2)
        return 0.0
    ranked = rank_predictions(preds)
    matched = match_predictions(ranked, list(gts), iou_thr)
    return interpolated_ap(matched >= 0, len(gts))


def _by_class(items, C):
    out = [[] for _ in range(C)]
    for it in items:
        out[it.class_id].append(it)
    return out


def mean_ap(preds, gts, thresholds=DEFAULT_IOUS, C: int | None = None):
    """Per-class AP for every threshold, mAP per threshold and their mean.

    Classes with no ground truth are left out of the mean (their AP row is
    NaN). Returns ``(ap, map_per_iou, avg_map)`` with ``ap`` of shape
    ``(C, len(thresholds))``.
    """
    thresholds = list(thresholds)
    if not thresholds or any(not 0.0 < t <= 1.0 for t in thresholds):
        raise ValueError(f"IoU thresholds must be non-empty and in (0, 1], got {thresholds}")
    if C is None:
        C = 1 + max([p.class_id for p in preds] + [g.class_id for g in gts], default=0)
    pc, gc = _by_class(preds, C), _by_class(gts, C)
    ap = np.full((C, len(thresholds)), np.nan)
    for c in range(C):
        if not gc[c]:
            continue
        ranked = rank_predictions(pc[c])
        for k, thr in enumerate(thresholds):
            ap[c, k] = interpolated_ap(match_predictions(ranked, gc[c], thr) >= 0, len(gc[c]))
    valid = ~np.isnan(ap[:, 0])
    map_per_iou = ap[valid].mean(axis=0) if valid.any() else np.zeros(len(thresholds))
    return ap, map_per_iou, float(np.mean(map_per_iou))


@dataclass
class DetectionStats:
    false_alarm: float
    precision: float
    recall: float
    f_measure: float
    true_positives: int
    n_predictions: int
    n_ground_truth: int
    no_predictions: bool = False


def detection_stats(preds, gts, iou_thr: float = 0.5, C: int | None = None) -> DetectionStats:
    """Counts every prediction (no score threshold) under greedy matching.

    ``false_alarm`` is computed as ``1 - precision`` so the two sum to
    exactly one. With no predictions both are reported as 0 and
    ``no_predictions`` is set.
    """
    if C is None:
        C = 1 + max([p.class_id for p in preds] + [g.class_id for g in gts], default=0)
    pc, gc = _by_class(preds, C), _by_class(gts, C)
    tp = 0
    for c in range(C):
        if pc[c]:
            tp += int(np.sum(match_predictions(rank_predictions(pc[c]), gc[c], iou_thr) >= 0))
    n_pred, n_gt = len(preds), len(gts)
    if n_pred == 0:
        return DetectionStats(0.0, 0.0, 0.0, 0.0, 0, 0, n_gt, no_predictions=True)
    precision = tp / n_pred
    recall = tp / n_gt if n_gt else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return DetectionStats(1.0 - precision, precision, recall, f, tp, n_pred, n_gt)


@dataclass
class EvalReport:
    iou_thresholds: list
    ap_per_class_per_iou: list
    map_per_iou: list
    avg_map: float
    stats_iou: float
    false_alarm: float
    precision: float
    recall: float
    f_measure: float
    n_predictions: int
    n_ground_truth: int
    no_predictions: bool

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(preds, gts, thresholds=DEFAULT_IOUS, C: int | None = None, stats_iou: float = 0.5) -> EvalReport:
    ap, per_iou, avg = mean_ap(preds, gts, thresholds, C)
    st = detection_stats(preds, gts, stats_iou, C)
    return EvalReport(
        iou_thresholds=[float(t) for t in thresholds],
        ap_per_class_per_iou=[[None if np.isnan(v) else float(v) for v in row] for row in ap],
        map_per_iou=[float(v) for v in per_iou],
        avg_map=avg,
        stats_iou=float(stats_iou),
        false_alarm=st.false_alarm,
        precision=st.precision,
        recall=st.recall,
        f_measure=st.f_measure,
        n_predictions=st.n_predictions,
        n_ground_truth=st.n_ground_truth,
        no_predictions=st.no_predictions,
    )
