"""Center heatmaps: Gaussian-blob encoding, smoothing, peak decoding and binarization."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .geometry import Box, Detection

logger = logging.getLogger(__name__)

# Values at or below this never count as peaks, so all-zero maps decode to nothing
PEAK_FLOOR = 1e-6
DEFAULT_SMOOTH_SIGMA = 1.0
DEFAULT_BINARIZE_THRESHOLD = 0.1
# Kernel half-width in units of sigma, for blobs and for smoothing
KERNEL_TRUNCATE = 3.0
# Penalty-reduced focal loss exponents
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
FOCAL_EPS = 1e-6

_EIGHT_NEIGHBORHOOD = np.ones((1, 3, 3), dtype=bool)
# ndimage.label needs size 3 on every axis; only the middle plane connects, so channels stay separate
_EIGHT_NEIGHBORHOOD_LABEL = np.pad(_EIGHT_NEIGHBORHOOD, ((1, 1), (0, 0), (0, 0)))


class HeatmapShapeError(ValueError):
    """Raised when two heatmaps that must align have different shapes."""


class SizeLookupError(KeyError):
    """Raised when a peak has no size in the supplied lookup."""


@dataclass(frozen=True, eq=False)
class Heatmap:
    """A C×H×W float32 grid of center scores in [0, 1]; read-only once built."""

    values: NDArray[np.float32]

    def __post_init__(self) -> None:
        """Validate shape and value range, then freeze the array."""
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"Heatmap must be C×H×W with every dim >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Heatmap values must be finite")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError(
                f"Heatmap values must lie in [0, 1], got [{values.min()}, {values.max()}]"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> Heatmap:
        return cls(np.zeros((channels, height, width), dtype=np.float32))

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class Peak:
    """A local maximum: category channel, integer pixel position and score."""

    channel: int
    x: int
    y: int
    score: float


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """An H×W boolean location mask."""

    bits: NDArray[np.bool_]

    def __post_init__(self) -> None:
        """Validate dimensionality and freeze the array."""
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2 or min(bits.shape) < 1:
            raise ValueError(f"BinaryMask must be H×W with every dim >= 1, got {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])


def blob_sigma(w: float, h: float) -> float:
    """Size-adaptive blob standard deviation: max(1, min(w, h) / 6)."""
    return max(1.0, min(w, h) / 6.0)


def encode(
    annotations: Iterable[tuple[Box, int]],
    size: tuple[int, int, int],
) -> Heatmap:
    """Render annotations as Gaussian blobs on a stride-1 heatmap.

    Each object puts a blob peaking at exactly 1.0 on its center pixel in its category
    channel; overlapping blobs combine by elementwise maximum. Centers outside the image
    are clamped onto the border pixel.

    Args:
        annotations: (box, category) pairs in image pixel coordinates
        size: (channels, height, width)

    Returns:
        The encoded heatmap
    """
    channels, height, width = size
    values = np.zeros((channels, height, width), dtype=np.float32)
    count = 0
    for box, category in annotations:
        if not 0 <= category < channels:
            raise ValueError(f"Category {category} outside [0, {channels})")
        sigma = blob_sigma(box.w, box.h)
        radius = math.ceil(KERNEL_TRUNCATE * sigma)
        px = min(max(int(math.floor(box.cx)), 0), width - 1)
        py = min(max(int(math.floor(box.cy)), 0), height - 1)

        x0, x1 = max(px - radius, 0), min(px + radius + 1, width)
        y0, y1 = max(py - radius, 0), min(py + radius + 1, height)
        xs = np.arange(x0, x1) - px
        ys = np.arange(y0, y1) - py
        blob = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))

        window = values[category, y0:y1, x0:x1]
        np.maximum(window, blob.astype(np.float32), out=window)
        count += 1

    logger.debug(f"Encoded {count} objects into a {channels}x{height}x{width} heatmap")
    return Heatmap(values)


def gaussian_filter(hm: Heatmap, sigma: float) -> Heatmap:
    """Smooth every channel with a truncated 2-D Gaussian, replicating edges.

    ``sigma == 0`` returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return hm
    smoothed = ndimage.gaussian_filter(
        hm.values.astype(np.float64),
        sigma=(0.0, sigma, sigma),
        mode="nearest",
        radius=(0, math.ceil(KERNEL_TRUNCATE * sigma), math.ceil(KERNEL_TRUNCATE * sigma)),
    )
    return Heatmap(np.clip(smoothed, 0.0, 1.0))


def find_peaks(values: NDArray[np.float32]) -> NDArray[np.intp]:
    """Locate 8-neighborhood local maxima as (channel, y, x) rows in raster order.

    A pixel qualifies if it is >= all its neighbors and above ``PEAK_FLOOR``. Tied
    maxima that touch form a plateau, and only its raster-first pixel is kept.
    """
    neighborhood_max = ndimage.maximum_filter(values, footprint=_EIGHT_NEIGHBORHOOD, mode="nearest")
    candidates = (values >= neighborhood_max) & (values > PEAK_FLOOR)
    if not candidates.any():
        return np.empty((0, 3), dtype=np.intp)

    # touching candidates are always equal-valued, so components are plateaus
    labels, n_plateaus = ndimage.label(candidates, structure=_EIGHT_NEIGHBORHOOD_LABEL)
    flat = labels.ravel()
    _, first = np.unique(flat, return_index=True)
    first = first[flat[first] > 0]
    logger.debug(f"{int(candidates.sum())} peak candidates in {n_plateaus} plateaus")
    return np.stack(np.unravel_index(np.sort(first), values.shape), axis=1)


def decode(
    hm: Heatmap,
    top_n: int,
    smooth_sigma: float = DEFAULT_SMOOTH_SIGMA,
) -> list[Peak]:
    """Decode peaks from a heatmap.

    Args:
        hm: Heatmap to decode
        top_n: Maximum number of peaks returned
        smooth_sigma: Gaussian pre-filter strength, 0 disables it

    Returns:
        Peaks by score descending, ties by (channel, y, x)
    """
    if top_n < 0:
        raise ValueError(f"top_n must be >= 0, got {top_n}")
    smoothed = gaussian_filter(hm, smooth_sigma)
    coords = find_peaks(smoothed.values)
    if len(coords) == 0 or top_n == 0:
        return []

    scores = smoothed.values[coords[:, 0], coords[:, 1], coords[:, 2]]
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], -scores))[:top_n]
    return [
        Peak(
            channel=int(coords[i, 0]),
            x=int(coords[i, 2]),
            y=int(coords[i, 1]),
            score=float(scores[i]),
        )
        for i in order
    ]


SizeLookup = Callable[[Peak], tuple[float, float]] | Mapping[Peak, tuple[float, float]]


def peaks_to_detections(peaks: Iterable[Peak], size_lookup: SizeLookup) -> list[Detection]:
    """Turn peaks into detections with externally supplied box sizes.

    The box is centered on the peak's pixel center. ``size_lookup`` is a mapping or a
    callable from peak to (w, h).

    Raises:
        SizeLookupError: if the lookup has no size for a peak
    """
    detections = []
    for peak in peaks:
        try:
            if callable(size_lookup):
                w, h = size_lookup(peak)
            else:
                w, h = size_lookup[peak]
        except KeyError as e:
            raise SizeLookupError(f"No size for peak {peak}") from e
        box = Box(peak.x + 0.5, peak.y + 0.5, float(w), float(h))
        detections.append(Detection(box=box, category=peak.channel, score=peak.score))
    return detections


def binarize(hm: Heatmap, threshold: float = DEFAULT_BINARIZE_THRESHOLD) -> BinaryMask:
    """Location mask: bit set where the max over channels reaches ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return BinaryMask(hm.values.max(axis=0) >= threshold)


def focal_loss(pred: Heatmap, gt: Heatmap) -> float:
    """Penalty-reduced pixelwise focal loss (alpha=2, beta=4), normalized by peak count.

    Ground-truth pixels equal to 1 are positives; every other pixel is a negative whose
    penalty shrinks by (1 - gt)^beta near the peaks.
    """
    if pred.shape != gt.shape:
        raise HeatmapShapeError(f"Shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    p = np.clip(pred.values.astype(np.float64), FOCAL_EPS, 1.0 - FOCAL_EPS)
    g = gt.values.astype(np.float64)
    positive = g == 1.0

    pos_loss = np.log(p) * (1.0 - p) ** FOCAL_ALPHA
    neg_loss = np.log(1.0 - p) * p**FOCAL_ALPHA * (1.0 - g) ** FOCAL_BETA
    total = pos_loss[positive].sum() + neg_loss[~positive].sum()
    num_pos = max(int(positive.sum()), 1)
    return float(-total / num_pos)
