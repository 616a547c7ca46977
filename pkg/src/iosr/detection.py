"""Detection geometry and metrics.

Boxes use (x, y, w, h) with (x, y) the top-left corner. The composite
detection loss couples a cross-entropy classification term, unsquared
Euclidean-norm regression terms for two box predictions, and two binary
objectness log-loss terms, each with its own weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

LOG_CLAMP = 1e-7  # log arguments clamped to [LOG_CLAMP, 1 - LOG_CLAMP]
PROB_SUM_TOL = 1e-3


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box fields must be finite, got {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h])


@dataclass(frozen=True)
class BoxTransform:
    tx: float
    ty: float
    tw: float
    th: float


@dataclass(frozen=True)
class AnchorConfig:
    image_w: int = 400
    image_h: int = 400
    stride: int = 16
    scales: tuple = (32.0, 64.0, 128.0)
    aspect_ratios: tuple = (1.0, 0.5, 2.0)  # w:h
    proposal_cap: int = 200

    def __post_init__(self):
        if self.stride <= 0 or self.image_w <= 0 or self.image_h <= 0:
            raise ValueError("image size and stride must be positive")
        if self.image_w % self.stride or self.image_h % self.stride:
            raise ValueError("stride must divide both image dimensions")
        if not self.scales or not self.aspect_ratios:
            raise ValueError("scales and aspect_ratios must be non-empty")
        if self.proposal_cap <= 0:
            raise ValueError("proposal_cap must be positive")


@dataclass(frozen=True)
class LossWeights:
    classification: float = 1.0
    bbox: float = 1.0
    objectness: float = 1.0

    def __post_init__(self):
        vals = (self.classification, self.bbox, self.objectness)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"loss weights must be finite and non-negative, got {vals}")


class Detection(NamedTuple):
    box: BoundingBox
    score: float
    label: int


class GroundTruth(NamedTuple):
    box: BoundingBox
    label: int


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area, in [0, 1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # rounding can push inter a hair past the union for (near-)identical boxes
    return min(inter / (a.area + b.area - inter), 1.0)


def encode_box_transform(anchor: BoundingBox, gt: BoundingBox) -> BoxTransform:
    """Center/log-size offsets taking the anchor onto the target box."""
    return BoxTransform(
        tx=(gt.cx - anchor.cx) / anchor.w,
        ty=(gt.cy - anchor.cy) / anchor.h,
        tw=math.log(gt.w / anchor.w),
        th=math.log(gt.h / anchor.h),
    )


def apply_box_transform(anchor: BoundingBox, t: BoxTransform) -> BoundingBox:
    """Exact inverse of encode_box_transform."""
    cx = anchor.cx + t.tx * anchor.w
    cy = anchor.cy + t.ty * anchor.h
    w = anchor.w * math.exp(t.tw)
    h = anchor.h * math.exp(t.th)
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)


def anchor_grid(cfg: AnchorConfig) -> list[BoundingBox]:
    """Multi-scale anchors centered on stride-grid cell centers.

    Order: row-major over cells, then scale, then aspect ratio. Anchors may
    extend beyond the image; no clipping happens here.
    """
    anchors = []
    for row in range(cfg.image_h // cfg.stride):
        cy = row * cfg.stride + cfg.stride / 2.0
        for col in range(cfg.image_w // cfg.stride):
            cx = col * cfg.stride + cfg.stride / 2.0
            for scale in cfg.scales:
                for ratio in cfg.aspect_ratios:
                    w = scale * math.sqrt(ratio)
                    h = scale / math.sqrt(ratio)
                    anchors.append(BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h))
    return anchors


def cap_proposals(boxes, scores, cap: int):
    """Keep the cap highest-scoring proposals (stable under score ties)."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))[:cap]
    return [boxes[i] for i in order], [scores[i] for i in order]


def bilinear_resample(featmap, box: BoundingBox, out_w: int, out_h: int) -> np.ndarray:
    """Resample a box region of a 2-D map onto a fixed (out_h, out_w) grid.

    Map sample (r, c) sits at continuous (c + 0.5, r + 0.5); output sample
    (i, j) reads the map at the center of output cell (i, j) mapped into
    the box, with coordinates clamped to the map border.
    """
    fmap = np.asarray(featmap, dtype=np.float64)
    if fmap.ndim != 2 or fmap.size == 0:
        raise ValueError("featmap must be a non-empty 2-D grid")
    if box.w <= 0 or box.h <= 0:
        raise ValueError("zero-area box")
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    h, w = fmap.shape
    xs = box.x + (np.arange(out_w) + 0.5) * (box.w / out_w)
    ys = box.y + (np.arange(out_h) + 0.5) * (box.h / out_h)
    u = np.clip(xs - 0.5, 0.0, w - 1.0)
    v = np.clip(ys - 0.5, 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[None, :]
    fv = (v - v0)[:, None]
    top = fmap[v0[:, None], u0[None, :]] * (1 - fu) + fmap[v0[:, None], u1[None, :]] * fu
    bot = fmap[v1[:, None], u0[None, :]] * (1 - fu) + fmap[v1[:, None], u1[None, :]] * fu
    return top * (1 - fv) + bot * fv


class DetectionBatch:
    """Per-proposal predictions and ground truth for the composite loss."""

    def __init__(
        self, pred_box1, pred_box2, pred_obj1, pred_obj2, pred_class,
        gt_box, gt_obj, gt_class,
    ):
        self.pred_box1 = np.asarray(pred_box1, dtype=np.float64)
        self.pred_box2 = np.asarray(pred_box2, dtype=np.float64)
        self.pred_obj1 = np.asarray(pred_obj1, dtype=np.float64)
        self.pred_obj2 = np.asarray(pred_obj2, dtype=np.float64)
        self.pred_class = np.asarray(pred_class, dtype=np.float64)
        self.gt_box = np.asarray(gt_box, dtype=np.float64)
        self.gt_obj = np.asarray(gt_obj, dtype=np.float64)
        self.gt_class = np.asarray(gt_class, dtype=np.float64)
        k = self.k
        if k < 1:
            raise ValueError("batch needs at least one proposal")
        for name in ("pred_box1", "pred_box2", "gt_box"):
            if getattr(self, name).shape != (k, 4):
                raise ValueError(f"{name} must have shape ({k}, 4)")
        for name in ("pred_obj1", "pred_obj2", "gt_obj"):
            if getattr(self, name).shape != (k,):
                raise ValueError(f"{name} must have shape ({k},)")
        if self.pred_class.ndim != 2 or self.pred_class.shape[0] != k:
            raise ValueError("pred_class must be (k, n_classes)")
        if self.gt_class.shape != self.pred_class.shape:
            raise ValueError("gt_class must match pred_class shape")
        sums = self.pred_class.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
            raise ValueError("class probability rows must sum to 1")
        if np.any((self.pred_obj1 <= 0) | (self.pred_obj1 >= 1)):
            raise ValueError("objectness probabilities must lie in (0, 1)")
        if np.any((self.pred_obj2 <= 0) | (self.pred_obj2 >= 1)):
            raise ValueError("objectness probabilities must lie in (0, 1)")

    @property
    def k(self) -> int:
        return self.pred_box1.shape[0]


@dataclass
class LossGradients:
    pred_box1: np.ndarray
    pred_box2: np.ndarray
    pred_obj1: np.ndarray
    pred_obj2: np.ndarray
    pred_class: np.ndarray


def _clamped_log(p):
    """log of p clamped into [LOG_CLAMP, 1-LOG_CLAMP], plus an in-range mask."""
    clamped = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    inside = (p > LOG_CLAMP) & (p < 1.0 - LOG_CLAMP)
    return np.log(clamped), clamped, inside


def _box_norm_terms(pred, gt):
    diff = pred - gt
    norms = np.linalg.norm(diff, axis=1)
    grad = np.zeros_like(diff)
    nz = norms > 0
    grad[nz] = diff[nz] / norms[nz, None]
    return norms.sum(), grad


def detection_loss(batch: DetectionBatch, w: LossWeights = LossWeights()):
    """Composite loss and analytic gradients for every prediction component.

    loss = w_c * sum_i CE(pred_class_i, gt_class_i)
         + w_bb * sum_i (|pred_box1_i - gt_box_i| + |pred_box2_i - gt_box_i|)
         + w_o * sum_i (BCE(pred_obj1_i, gt_obj_i) + BCE(pred_obj2_i, gt_obj_i))

    |.| is the unsquared Euclidean norm on (x, y, w, h) with subgradient 0
    at the origin; log arguments are clamped so the loss stays finite.
    """
    log_c, clamp_c, in_c = _clamped_log(batch.pred_class)
    cls_loss = -(batch.gt_class * log_c).sum()
    g_class = np.where(in_c, -batch.gt_class / clamp_c, 0.0) * w.classification

    bb1_loss, g_bb1 = _box_norm_terms(batch.pred_box1, batch.gt_box)
    bb2_loss, g_bb2 = _box_norm_terms(batch.pred_box2, batch.gt_box)

    def objectness(pred):
        log_p, clamp_p, in_p = _clamped_log(pred)
        log_q, clamp_q, in_q = _clamped_log(1.0 - pred)
        loss = -(batch.gt_obj * log_p + (1.0 - batch.gt_obj) * log_q).sum()
        grad = -(
            np.where(in_p, batch.gt_obj / clamp_p, 0.0)
            - np.where(in_q, (1.0 - batch.gt_obj) / clamp_q, 0.0)
        )
        return loss, grad * w.objectness

    o1_loss, g_o1 = objectness(batch.pred_obj1)
    o2_loss, g_o2 = objectness(batch.pred_obj2)

    total = (
        w.classification * cls_loss
        + w.bbox * (bb1_loss + bb2_loss)
        + w.objectness * (o1_loss + o2_loss)
    )
    grads = LossGradients(
        pred_box1=w.bbox * g_bb1,
        pred_box2=w.bbox * g_bb2,
        pred_obj1=g_o1,
        pred_obj2=g_o2,
        pred_class=g_class,
    )
    return float(total), grads


def _greedy_match(detections, ground_truths, iou_threshold):
    """True/false-positive flags in descending score order (stable ties).

    A detection matches the unclaimed ground truth of the same label with
    the highest IoU, provided IoU exceeds the threshold.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    claimed = [False] * len(ground_truths)
    flags = []
    for i in order:
        det = detections[i]
        best_j, best_iou = -1, iou_threshold
        for j, gt in enumerate(ground_truths):
            if claimed[j] or gt.label != det.label:
                continue
            overlap = iou(det.box, gt.box)
            if overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j >= 0:
            claimed[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(detections, ground_truths, iou_threshold: float = 0.5) -> float:
    """Area under the all-points interpolated precision-recall curve.

    Matching is greedy in score order; each ground truth is claimed at most
    once and a match needs IoU strictly above the threshold plus label
    equality.
    """
    if not ground_truths or not detections:
        return 0.0
    flags = _greedy_match(detections, ground_truths, iou_threshold)
    recalls, precisions = [], []
    tp = 0
    for rank, flag in enumerate(flags, start=1):
        tp += int(flag)
        recalls.append(tp / len(ground_truths))
        precisions.append(tp / rank)
    # interpolated precision: best precision at or beyond each recall level
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recalls, precisions):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def top1_accuracy(predictions, labels) -> float:
    """Fraction of positions where prediction equals label."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions, {len(labels)} labels")
    if len(labels) == 0:
        raise ValueError("empty input")
    matches = sum(1 for p, l in zip(predictions, labels) if p == l)
    return matches / len(labels)


def combined_precision(detections, ground_truths, iou_threshold: float = 0.5) -> float:
    """Fraction of detections that localize (IoU > threshold) and label correctly."""
    if not detections:
        return 0.0
    flags = _greedy_match(detections, ground_truths, iou_threshold)
    return sum(flags) / len(detections)
