"""Vector figures of regions and detections over a blank canvas."""

from __future__ import annotations

import io
import logging
from collections.abc import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .geometry import Detection  # noqa: E402
from .lsm import ClusterRegion  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed id salt so repeated renders are byte-identical
SVG_HASH_SALT = "clusterdet"
FIGURE_DPI = 100
REGION_COLOR = "tab:red"
DETECTION_CMAP = "tab10"


def render_svg(
    image_size: tuple[int, int],
    regions: Sequence[ClusterRegion] = (),
    detections: Sequence[Detection] = (),
) -> bytes:
    """Draw regions (dashed) and detections (colored by category) as an SVG document.

    The y axis points down so the figure matches image coordinates.
    """
    width, height = image_size
    if width < 1 or height < 1:
        raise ValueError(f"image_size must be >= 1x1, got {image_size}")

    cmap = matplotlib.colormaps[DETECTION_CMAP]
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(width / FIGURE_DPI, height / FIGURE_DPI), dpi=FIGURE_DPI)
        try:
            ax.set_xlim(0, width)
            ax.set_ylim(height, 0)
            ax.set_aspect("equal")
            ax.set_facecolor("white")
            for r in regions:
                ax.add_patch(
                    Rectangle(
                        (r.left, r.top),
                        r.width,
                        r.height,
                        fill=False,
                        linestyle="--",
                        linewidth=1.5,
                        edgecolor=REGION_COLOR,
                    )
                )
            for d in detections:
                ax.add_patch(
                    Rectangle(
                        (d.box.left, d.box.top),
                        d.box.w,
                        d.box.h,
                        fill=False,
                        linewidth=0.8,
                        edgecolor=cmap(d.category % cmap.N),
                        alpha=max(d.score, 0.2),
                    )
                )
            buffer = io.BytesIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)

    logger.debug(f"Rendered {len(regions)} regions and {len(detections)} detections")
    return buffer.getvalue()
