"""Box geometry: center-format boxes, IoU family and Gaussian Wasserstein distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

# Relative slack when deciding that a tiny negative eigenvalue is rounding noise
PSD_TOLERANCE = 1e-12


class NotPositiveSemidefiniteError(ValueError):
    """Raised when a covariance matrix has a clearly negative eigenvalue."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in center form, pixel units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        """Validate box fields."""
        for name in ("cx", "cy", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Box.{name} must be finite, got {getattr(self, name)}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"Box size must be non-negative, got w={self.w}, h={self.h}")

    @classmethod
    def from_ltwh(cls, left: float, top: float, width: float, height: float) -> Box:
        """Build a box from top-left corner and size."""
        return cls(left + width / 2, top + height / 2, width, height)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> Box:
        """Build a box from corner coordinates (x2 >= x1, y2 >= y1)."""
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @property
    def left(self) -> float:
        return self.cx - self.w / 2

    @property
    def top(self) -> float:
        return self.cy - self.h / 2

    @property
    def right(self) -> float:
        return self.cx + self.w / 2

    @property
    def bottom(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        """Return (cx, cy, w, h)."""
        return (self.cx, self.cy, self.w, self.h)

    def clipped(self, left: float, top: float, right: float, bottom: float) -> Box:
        """Clip the box edges to a rectangle; boxes outside collapse onto its border."""
        x1 = min(max(self.left, left), right)
        y1 = min(max(self.top, top), bottom)
        x2 = min(max(self.right, left), right)
        y2 = min(max(self.bottom, top), bottom)
        return Box.from_corners(x1, y1, x2, y2)


@dataclass(frozen=True, eq=False)
class GaussianBox:
    """2-D Gaussian standing in for a box: mean vector and covariance matrix."""

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]


@dataclass(frozen=True)
class Detection:
    """A scored, categorized box in global pixel coordinates."""

    box: Box
    category: int
    score: float

    def __post_init__(self) -> None:
        """Validate score range."""
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    """An annotated box; ``ignore`` marks regions that never count as TP or FP."""

    box: Box
    category: int
    ignore: bool = False


def box_to_gaussian(b: Box) -> GaussianBox:
    """Convert a box into its Gaussian: mean at the center, diag(w²/4, h²/4) covariance."""
    mu = np.array([b.cx, b.cy], dtype=np.float64)
    sigma = np.diag([b.w * b.w / 4.0, b.h * b.h / 4.0]).astype(np.float64)
    return GaussianBox(mu=mu, sigma=sigma)


def _is_diagonal(m: NDArray[np.float64]) -> bool:
    return bool(m[0, 1] == 0.0 and m[1, 0] == 0.0)


def psd_sqrt(m: NDArray[np.float64]) -> NDArray[np.float64]:
    """Principal square root of a symmetric positive-semidefinite 2x2 matrix.

    Diagonal matrices take elementwise roots; others go through an eigendecomposition.

    Raises:
        NotPositiveSemidefiniteError: if ``m`` is asymmetric or has a negative eigenvalue
    """
    m = np.asarray(m, dtype=np.float64)
    scale = max(float(np.max(np.abs(m))), 1.0)
    if not np.allclose(m, m.T, rtol=0.0, atol=PSD_TOLERANCE * scale):
        raise NotPositiveSemidefiniteError(f"Covariance is not symmetric: {m.tolist()}")

    if _is_diagonal(m):
        diag = np.diag(m)
        if np.any(diag < -PSD_TOLERANCE * scale):
            raise NotPositiveSemidefiniteError(f"Negative variance on diagonal: {diag.tolist()}")
        return np.diag(np.sqrt(np.clip(diag, 0.0, None)))

    eigvals, eigvecs = np.linalg.eigh(m)
    if np.any(eigvals < -PSD_TOLERANCE * scale):
        raise NotPositiveSemidefiniteError(f"Negative eigenvalue: {eigvals.tolist()}")
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * roots) @ eigvecs.T


def wasserstein_general(g1: GaussianBox, g2: GaussianBox) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    W² = ‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½)
    """
    root1 = psd_sqrt(g1.sigma)
    # validates g2.sigma as well
    psd_sqrt(g2.sigma)
    inner = root1 @ g2.sigma @ root1
    cross = psd_sqrt((inner + inner.T) / 2.0)
    diff = g1.mu - g2.mu
    trace = float(np.trace(g1.sigma + g2.sigma - 2.0 * cross))
    return float(diff @ diff) + max(trace, 0.0)


def wasserstein_closed(b1: Box, b2: Box) -> float:
    """Closed-form squared Wasserstein distance between two axis-aligned boxes."""
    dx = b1.cx - b2.cx
    dy = b1.cy - b2.cy
    dw = b1.w - b2.w
    dh = b1.h - b2.h
    return dx * dx + dy * dy + (dw * dw + dh * dh) / 4.0


def _intersection(b1: Box, b2: Box) -> float:
    iw = min(b1.right, b2.right) - max(b1.left, b2.left)
    ih = min(b1.bottom, b2.bottom) - max(b1.top, b2.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(b1: Box, b2: Box) -> float:
    """Intersection over union; 0 when the union has zero area."""
    inter = _intersection(b1, b2)
    union = b1.area + b2.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(
    dets: NDArray[np.float64],
    gts: NDArray[np.float64],
    crowd: NDArray[np.bool_] | None = None,
) -> NDArray[np.float64]:
    """Pairwise IoU between (N, 4) and (M, 4) center-form box arrays.

    Columns flagged in ``crowd`` use intersection over detection area instead.
    """
    if len(dets) == 0 or len(gts) == 0:
        return np.zeros((len(dets), len(gts)), dtype=np.float64)
    d1 = dets[:, None, :2] - dets[:, None, 2:] / 2
    d2 = dets[:, None, :2] + dets[:, None, 2:] / 2
    g1 = gts[None, :, :2] - gts[None, :, 2:] / 2
    g2 = gts[None, :, :2] + gts[None, :, 2:] / 2
    wh = np.clip(np.minimum(d2, g2) - np.maximum(d1, g1), 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_d = (dets[:, 2] * dets[:, 3])[:, None]
    area_g = (gts[:, 2] * gts[:, 3])[None, :]
    union = area_d + area_g - inter
    if crowd is not None:
        union = np.where(crowd[None, :], np.broadcast_to(area_d, union.shape), union)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def _enclosing(b1: Box, b2: Box) -> tuple[float, float]:
    ew = max(b1.right, b2.right) - min(b1.left, b2.left)
    eh = max(b1.bottom, b2.bottom) - min(b1.top, b2.top)
    return ew, eh


def giou_loss(b_pred: Box, b_gt: Box) -> float:
    """1 − GIoU; in [0, 2]."""
    inter = _intersection(b_pred, b_gt)
    union = b_pred.area + b_gt.area - inter
    ew, eh = _enclosing(b_pred, b_gt)
    enclose = ew * eh
    if enclose <= 0:
        return 0.0 if b_pred == b_gt else 1.0
    value = (inter / union if union > 0 else 0.0) - (enclose - union) / enclose
    return 1.0 - value


def diou_loss(b_pred: Box, b_gt: Box) -> float:
    """1 − DIoU: IoU penalized by normalized center distance."""
    ew, eh = _enclosing(b_pred, b_gt)
    diag = ew * ew + eh * eh
    if diag <= 0:
        return 0.0
    dist = (b_pred.cx - b_gt.cx) ** 2 + (b_pred.cy - b_gt.cy) ** 2
    return 1.0 - iou(b_pred, b_gt) + dist / diag


def ciou_loss(b_pred: Box, b_gt: Box) -> float:
    """1 − CIoU: DIoU plus the aspect-ratio consistency term."""
    overlap = iou(b_pred, b_gt)
    base = diou_loss(b_pred, b_gt)
    if b_pred.h <= 0 or b_gt.h <= 0:
        return base
    v = (4.0 / math.pi**2) * (math.atan(b_gt.w / b_gt.h) - math.atan(b_pred.w / b_pred.h)) ** 2
    denom = 1.0 - overlap + v
    alpha = v / denom if denom > 0 else 0.0
    return base + alpha * v
