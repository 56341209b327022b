"""Local scale module: pick dense cluster regions from a binarized center heatmap.

The mask is cut into a grid (columns across the width, rows down the height), the
top-K densest cells are kept, 8-connected cells merge into components, components are
ranked by pixel area and the first k are enlarged about their centers and clamped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .heatmap import DEFAULT_BINARIZE_THRESHOLD, BinaryMask, Heatmap, binarize

logger = logging.getLogger(__name__)

DEFAULT_GRID_COLS = 16
DEFAULT_GRID_ROWS = 10
DEFAULT_TOP_K = 15
DEFAULT_MAX_CROPS = 2
DEFAULT_ENLARGE = 1.2
# Detector input canvas (width, height)
DEFAULT_TARGET_SIZE = (1024, 640)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class EmptyRegionError(ValueError):
    """Raised when a crop is requested for a region with zero area."""


@dataclass(frozen=True)
class LsmConfig:
    """Grid, top-K, crop count, enlargement and binarization threshold."""

    grid_cols: int = DEFAULT_GRID_COLS
    grid_rows: int = DEFAULT_GRID_ROWS
    top_k: int = DEFAULT_TOP_K
    k: int = DEFAULT_MAX_CROPS
    enlarge: float = DEFAULT_ENLARGE
    threshold: float = DEFAULT_BINARIZE_THRESHOLD

    def __post_init__(self) -> None:
        """Validate grid, counts and factors."""
        if self.grid_cols < 1 or self.grid_rows < 1:
            raise ValueError(f"Grid must be at least 1x1, got {self.grid_cols}x{self.grid_rows}")
        if not 0 <= self.top_k <= self.cell_count:
            raise ValueError(f"top_k must be in [0, {self.cell_count}], got {self.top_k}")
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if not self.enlarge >= 1.0:
            raise ValueError(f"enlarge must be >= 1, got {self.enlarge}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")

    @property
    def cell_count(self) -> int:
        return self.grid_cols * self.grid_rows


@dataclass(frozen=True)
class ClusterRegion:
    """A crop rectangle in image pixels with its aggregate mask density."""

    left: float
    top: float
    width: float
    height: float
    density: float
    cell_count: int

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x: float, y: float) -> bool:
        """Closed-rectangle membership test."""
        return self.left <= x <= self.right and self.top <= y <= self.bottom


@dataclass(frozen=True)
class CropTransform:
    """Affine map from global image pixels to a detector canvas: p' = scale·p + offset."""

    region: ClusterRegion
    scale: tuple[float, float]
    offset: tuple[float, float]

    def __post_init__(self) -> None:
        """Validate positive scales."""
        if not (self.scale[0] > 0 and self.scale[1] > 0):
            raise ValueError(f"CropTransform scales must be > 0, got {self.scale}")

    def forward(self, x: float, y: float) -> tuple[float, float]:
        """Global pixel → canvas pixel."""
        return (x * self.scale[0] + self.offset[0], y * self.scale[1] + self.offset[1])

    def inverse(self, x: float, y: float) -> tuple[float, float]:
        """Canvas pixel → global pixel."""
        return ((x - self.offset[0]) / self.scale[0], (y - self.offset[1]) / self.scale[1])


def grid_edges(length: int, parts: int) -> NDArray[np.intp]:
    """Cell boundaries along one axis; the last cell absorbs the remainder."""
    step = length // parts
    edges = np.arange(parts + 1, dtype=np.intp) * step
    edges[-1] = length
    return edges


def grid_densities(mask: BinaryMask, cfg: LsmConfig) -> NDArray[np.int64]:
    """Count set bits per grid cell.

    Returns:
        Array of shape (grid_cols, grid_rows) indexed [col, row]
    """
    xs = grid_edges(mask.width, cfg.grid_cols)
    ys = grid_edges(mask.height, cfg.grid_rows)
    integral = np.zeros((mask.height + 1, mask.width + 1), dtype=np.int64)
    integral[1:, 1:] = mask.bits.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    corners = integral[np.ix_(ys, xs)]
    per_row_col = corners[1:, 1:] - corners[:-1, 1:] - corners[1:, :-1] + corners[:-1, :-1]
    return per_row_col.T


def select_cells(densities: NDArray[np.int64], top_k: int) -> list[tuple[int, int]]:
    """The ``top_k`` densest non-empty cells as (col, row), ties by (col, row)."""
    cols, rows = np.nonzero(densities > 0)
    values = densities[cols, rows]
    order = np.lexsort((rows, cols, -values))[:top_k]
    return [(int(cols[i]), int(rows[i])) for i in order]


def _components(
    densities: NDArray[np.int64],
    cells: list[tuple[int, int]],
    xs: NDArray[np.intp],
    ys: NDArray[np.intp],
) -> list[ClusterRegion]:
    selected = np.zeros(densities.shape, dtype=bool)
    for col, row in cells:
        selected[col, row] = True
    labels, n_components = ndimage.label(selected, structure=_EIGHT_CONNECTED)

    regions = []
    for label in range(1, n_components + 1):
        cols, rows = np.nonzero(labels == label)
        left, right = int(xs[cols.min()]), int(xs[cols.max() + 1])
        top, bottom = int(ys[rows.min()]), int(ys[rows.max() + 1])
        regions.append(
            ClusterRegion(
                left=float(left),
                top=float(top),
                width=float(right - left),
                height=float(bottom - top),
                density=float(densities[cols, rows].sum()),
                cell_count=len(cols),
            )
        )
    return regions


def enlarge_region(
    region: ClusterRegion, factor: float, width: int, height: int
) -> ClusterRegion:
    """Scale a region about its center by ``factor`` and clamp it to the image."""
    cx = region.left + region.width / 2
    cy = region.top + region.height / 2
    half_w = region.width * factor / 2
    half_h = region.height * factor / 2
    left = max(cx - half_w, 0.0)
    top = max(cy - half_h, 0.0)
    right = min(cx + half_w, float(width))
    bottom = min(cy + half_h, float(height))
    return ClusterRegion(
        left=left,
        top=top,
        width=right - left,
        height=bottom - top,
        density=region.density,
        cell_count=region.cell_count,
    )


def select_regions(mask: BinaryMask, cfg: LsmConfig | None = None) -> list[ClusterRegion]:
    """Select at most ``cfg.k`` cluster regions from a location mask.

    Args:
        mask: Binarized heatmap
        cfg: LSM hyperparameters

    Returns:
        Regions by pixel area descending (then density descending, then top-left),
        enlarged and clamped to the image
    """
    cfg = cfg or LsmConfig()
    densities = grid_densities(mask, cfg)
    cells = select_cells(densities, cfg.top_k)
    if not cells:
        return []

    xs = grid_edges(mask.width, cfg.grid_cols)
    ys = grid_edges(mask.height, cfg.grid_rows)
    regions = _components(densities, cells, xs, ys)
    regions.sort(key=lambda r: (-r.area, -r.density, r.left, r.top))
    kept = regions[: cfg.k]
    logger.debug(
        f"{len(cells)} dense cells -> {len(regions)} components, keeping {len(kept)}"
    )
    return [enlarge_region(r, cfg.enlarge, mask.width, mask.height) for r in kept]


def lsm_pipeline(hm: Heatmap, cfg: LsmConfig | None = None) -> list[ClusterRegion]:
    """Binarize a heatmap and select its cluster regions."""
    cfg = cfg or LsmConfig()
    return select_regions(binarize(hm, cfg.threshold), cfg)


def crop_and_rescale(
    region: ClusterRegion,
    target: tuple[int, int] = DEFAULT_TARGET_SIZE,
    keep_aspect: bool = False,
) -> CropTransform:
    """Map a region onto the detector canvas.

    Each axis is scaled independently by default; ``keep_aspect`` uses one scale
    (the smaller) for both axes, anchored at the top-left corner.

    Raises:
        EmptyRegionError: if the region has zero width or height
    """
    if region.width <= 0 or region.height <= 0:
        raise EmptyRegionError(f"Cannot crop a zero-area region: {region}")
    sx = target[0] / region.width
    sy = target[1] / region.height
    if keep_aspect:
        sx = sy = min(sx, sy)
    return CropTransform(region=region, scale=(sx, sy), offset=(-region.left * sx, -region.top * sy))


def full_image_region(width: int, height: int) -> ClusterRegion:
    """The whole image as a region."""
    return ClusterRegion(0.0, 0.0, float(width), float(height), density=0.0, cell_count=0)
