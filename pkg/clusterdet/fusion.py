"""Merge crop detections back into the global result by region replacement (no NMS)."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence

from .geometry import Box, Detection
from .lsm import ClusterRegion, CropTransform

logger = logging.getLogger(__name__)

CropResult = tuple[CropTransform, Sequence[Detection]]


def detection_sort_key(det: Detection) -> tuple[float, int, float, float, float, float]:
    """Score descending, then category and box for a total order."""
    b = det.box
    return (-det.score, det.category, b.cx, b.cy, b.w, b.h)


def _unclamped_global(det: Detection, t: CropTransform) -> Box:
    cx, cy = t.inverse(det.box.cx, det.box.cy)
    return Box(cx, cy, det.box.w / t.scale[0], det.box.h / t.scale[1])


def _clamp_to(box: Box, region: ClusterRegion) -> Box:
    return box.clipped(region.left, region.top, region.right, region.bottom)


def to_global(dets: Iterable[Detection], t: CropTransform) -> list[Detection]:
    """Map crop-canvas detections into global pixels, clamped to the crop region."""
    return [
        Detection(
            box=_clamp_to(_unclamped_global(d, t), t.region),
            category=d.category,
            score=d.score,
        )
        for d in dets
    ]


def _owner(regions: Sequence[ClusterRegion], x: float, y: float) -> int | None:
    """Index of the last region containing the point."""
    for i in range(len(regions) - 1, -1, -1):
        if regions[i].contains(x, y):
            return i
    return None


def fuse(
    global_dets: Iterable[Detection],
    crop_results: Sequence[CropResult],
) -> list[Detection]:
    """Replace global detections inside crop regions with the refined crop detections.

    A global detection survives only if its center lies outside every crop region. A
    refined detection survives only if its mapped center lies in its own region and no
    later crop in the list also contains it. Nothing is suppressed by IoU.

    Args:
        global_dets: Detections from the full-image pass, global coordinates
        crop_results: (transform, detections in canvas coordinates) per crop

    Returns:
        Fused detections sorted by score descending
    """
    regions = [t.region for t, _ in crop_results]
    fused = [d for d in global_dets if _owner(regions, d.box.cx, d.box.cy) is None]
    n_global = len(fused)

    for index, (t, dets) in enumerate(crop_results):
        for d in dets:
            mapped = _unclamped_global(d, t)
            if _owner(regions, mapped.cx, mapped.cy) != index:
                continue
            fused.append(
                Detection(box=_clamp_to(mapped, t.region), category=d.category, score=d.score)
            )

    logger.debug(
        f"Fused {n_global} global + {len(fused) - n_global} refined detections "
        f"over {len(regions)} crops"
    )
    fused.sort(key=detection_sort_key)
    return fused
