"""COCO-protocol detection evaluation: greedy matching, 101-point AP, scale buckets."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .fusion import detection_sort_key
from .geometry import Detection, GroundTruth, iou_matrix

logger = logging.getLogger(__name__)

IOU_THRESHOLDS: tuple[float, ...] = tuple(t / 100 for t in range(50, 100, 5))
RECALL_THRESHOLDS: NDArray[np.float64] = np.arange(101, dtype=np.float64) / 100
DEFAULT_MAX_DETS = 500
SMALL_AREA = 32.0**2
LARGE_AREA = 96.0**2
AREA_RANGES: dict[str, tuple[float, float]] = {
    "all": (0.0, math.inf),
    "small": (0.0, SMALL_AREA),
    "medium": (SMALL_AREA, LARGE_AREA),
    "large": (LARGE_AREA, math.inf),
}

MatchKey = tuple[float, str, int]


@dataclass(frozen=True)
class EvalConfig:
    """IoU thresholds and the per-image detection cap."""

    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    max_dets: int = DEFAULT_MAX_DETS

    def __post_init__(self) -> None:
        """Validate thresholds and cap."""
        if not self.iou_thresholds:
            raise ValueError("At least one IoU threshold is required")
        if any(not 0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ValueError(f"IoU thresholds must be in (0, 1], got {self.iou_thresholds}")
        if self.max_dets < 1:
            raise ValueError(f"max_dets must be >= 1, got {self.max_dets}")


@dataclass
class Matching:
    """Per-detection outcome of matching one image's detections of one category."""

    scores: NDArray[np.float64]
    matched: NDArray[np.bool_]
    ignored: NDArray[np.bool_]
    num_gt: int
    # matched ground-truth index per detection, -1 when unmatched
    gt_index: NDArray[np.intp] = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    @property
    def true_positives(self) -> int:
        return int((self.matched & ~self.ignored).sum())

    @property
    def false_positives(self) -> int:
        return int((~self.matched & ~self.ignored).sum())


@dataclass
class EvalReport:
    """AP summary; ``None`` marks a bucket without ground truth."""

    ap: float | None = None
    ap50: float | None = None
    ap75: float | None = None
    ap_small: float | None = None
    ap_medium: float | None = None
    ap_large: float | None = None
    per_class: dict[int, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_class": {str(c): v for c, v in sorted(self.per_class.items())},
        }


def _as_array(boxes: Sequence[Any]) -> NDArray[np.float64]:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.box.as_tuple() for b in boxes], dtype=np.float64)


@dataclass
class _ImageStream:
    """Detections and ground truths of one (image, category), prepared once."""

    scores: NDArray[np.float64]
    det_areas: NDArray[np.float64]
    gt_areas: NDArray[np.float64]
    crowd: NDArray[np.bool_]
    ious: NDArray[np.float64]

    @classmethod
    def build(
        cls, dets: Sequence[Detection], gts: Sequence[GroundTruth], max_dets: int
    ) -> _ImageStream:
        ordered = sorted(dets, key=detection_sort_key)[:max_dets]
        det_boxes = _as_array(ordered)
        gt_boxes = _as_array(gts)
        crowd = np.array([g.ignore for g in gts], dtype=bool)
        return cls(
            scores=np.array([d.score for d in ordered], dtype=np.float64),
            det_areas=det_boxes[:, 2] * det_boxes[:, 3],
            gt_areas=gt_boxes[:, 2] * gt_boxes[:, 3],
            crowd=crowd,
            ious=iou_matrix(det_boxes, gt_boxes, crowd),
        )

    def match(self, iou_thresh: float, area_range: tuple[float, float]) -> Matching:
        lo, hi = area_range
        gt_ignore = self.crowd | (self.gt_areas < lo) | (self.gt_areas >= hi)
        # regular ground truths are tried before ignored ones, each group by index
        gt_order: list[int] = np.argsort(gt_ignore, kind="stable").tolist()
        is_ignore: list[bool] = gt_ignore.tolist()
        is_crowd: list[bool] = self.crowd.tolist()
        taken = [False] * len(gt_order)

        n = len(self.scores)
        matched = np.zeros(n, dtype=bool)
        ignored = np.zeros(n, dtype=bool)
        gt_index = np.full(n, -1, dtype=np.intp)
        threshold = min(iou_thresh, 1.0 - 1e-10)
        for d, row in enumerate(self.ious.tolist()):
            best, m = threshold, -1
            for g in gt_order:
                if taken[g] and not is_crowd[g]:
                    continue
                if m >= 0 and not is_ignore[m] and is_ignore[g]:
                    break
                value = row[g]
                if value < best or (m >= 0 and value == best):
                    continue
                best, m = value, g
            if m < 0:
                continue
            matched[d] = True
            ignored[d] = is_ignore[m]
            gt_index[d] = m
            taken[m] = True

        outside = (self.det_areas < lo) | (self.det_areas >= hi)
        ignored |= ~matched & outside
        return Matching(
            scores=self.scores,
            matched=matched,
            ignored=ignored,
            num_gt=int((~gt_ignore).sum()),
            gt_index=gt_index,
        )


def match(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thresh: float,
    area_range: tuple[float, float] = AREA_RANGES["all"],
    max_dets: int = DEFAULT_MAX_DETS,
) -> Matching:
    """Greedily match one image's detections of one category to its ground truths.

    Detections go in score order; each takes the still-free ground truth with the
    highest IoU >= ``iou_thresh`` (ties to the lower index), preferring regular over
    ignored ground truths. Matches to ignored ground truths, and unmatched detections
    whose area falls outside ``area_range``, are neither TP nor FP.
    """
    return _ImageStream.build(dets, gts, max_dets).match(iou_thresh, area_range)


def interpolated_ap(matchings: Sequence[Matching]) -> float | None:
    """101-point interpolated AP over matchings pooled across images.

    Returns:
        AP in [0, 1], or ``None`` when there is no non-ignored ground truth
    """
    num_gt = sum(m.num_gt for m in matchings)
    if num_gt == 0:
        return None
    scores = np.concatenate([m.scores for m in matchings])
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    matched = np.concatenate([m.matched for m in matchings])[order]
    ignored = np.concatenate([m.ignored for m in matchings])[order]

    tp = np.cumsum(matched & ~ignored).astype(np.float64)
    fp = np.cumsum(~matched & ~ignored).astype(np.float64)
    recall = tp / num_gt
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
    # precision envelope: best precision at any recall at least this high
    precision = np.maximum.accumulate(precision[::-1])[::-1]

    idx = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    q = np.zeros(len(RECALL_THRESHOLDS), dtype=np.float64)
    valid = idx < len(precision)
    q[valid] = precision[idx[valid]]
    return float(q.mean())


def _mean(values: Sequence[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def average_precision(
    matchings: Mapping[MatchKey, Sequence[Matching]],
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> EvalReport:
    """Summarize pooled matchings keyed by (IoU threshold, area bucket, category).

    AP averages over thresholds and categories; AP50/AP75 use one threshold; the scale
    buckets average over thresholds and categories within the bucket. Undefined
    entries (no ground truth) are left out of every mean.
    """
    categories = sorted({key[2] for key in matchings})
    table = {key: interpolated_ap(ms) for key, ms in matchings.items()}

    def bucket(area: str, thresholds: Sequence[float]) -> float | None:
        return _mean([table.get((t, area, c)) for t in thresholds for c in categories])

    report = EvalReport(
        ap=bucket("all", iou_thresholds),
        ap50=bucket("all", [0.5]) if 0.5 in iou_thresholds else None,
        ap75=bucket("all", [0.75]) if 0.75 in iou_thresholds else None,
        ap_small=bucket("small", iou_thresholds),
        ap_medium=bucket("medium", iou_thresholds),
        ap_large=bucket("large", iou_thresholds),
        per_class={
            c: _mean([table.get((t, "all", c)) for t in iou_thresholds]) for c in categories
        },
    )
    return report


def evaluate(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    cfg: EvalConfig | None = None,
) -> EvalReport:
    """Match every image and category, then summarize.

    Images are visited in sorted id order; detections on images without ground truth
    still count as false positives.
    """
    cfg = cfg or EvalConfig()
    matchings: dict[MatchKey, list[Matching]] = {}
    image_ids = sorted(set(dets_by_image) | set(gts_by_image))

    for image_id in image_ids:
        dets = dets_by_image.get(image_id, [])
        gts = gts_by_image.get(image_id, [])
        categories = sorted({d.category for d in dets} | {g.category for g in gts})
        for category in categories:
            stream = _ImageStream.build(
                [d for d in dets if d.category == category],
                [g for g in gts if g.category == category],
                cfg.max_dets,
            )
            for area, area_range in AREA_RANGES.items():
                for t in cfg.iou_thresholds:
                    matchings.setdefault((t, area, category), []).append(
                        stream.match(t, area_range)
                    )

    logger.info(f"Evaluated {len(image_ids)} images, {len(matchings)} match streams")
    return average_precision(matchings, cfg.iou_thresholds)
