"""Seeded clustered scenes, a size-sensitive pseudo-detector and the end-to-end pipeline.

The pseudo-detector stands in for a trained network: an object whose smaller side
covers ``s`` pixels on the detector canvas is found with probability
``clamp(s / size_floor, 0, 1)`` and its center is jittered by Gaussian noise that shrinks
as the object grows. Zooming into a crop therefore never hurts an object's odds.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Literal

import numpy as np

from .evaluation import EvalConfig, EvalReport, evaluate
from .fusion import fuse, to_global
from .geometry import Box, Detection, GroundTruth
from .heatmap import encode
from .lsm import (
    DEFAULT_TARGET_SIZE,
    ClusterRegion,
    CropTransform,
    LsmConfig,
    crop_and_rescale,
    full_image_region,
    grid_edges,
    lsm_pipeline,
)

logger = logging.getLogger(__name__)

DEFAULT_IMAGE_SIZE = (1024, 640)
DEFAULT_N_CLUSTERS = 2
DEFAULT_CLUSTER_SPREAD = 30.0
DEFAULT_OBJECTS_PER_CLUSTER = (20, 40)
DEFAULT_N_SPARSE = 15
DEFAULT_SMALL_SIZE = (6, 14)
DEFAULT_LARGE_SIZE = (32, 64)
DEFAULT_SMALL_SHARE = 1.0
DEFAULT_CATEGORIES = 3

DEFAULT_SIZE_FLOOR = 16.0
DEFAULT_NOISE_COEFF = 4.0
DEFAULT_SCORE_JITTER = 0.05
DEFAULT_UNIFORM_CROPS = 4
DEFAULT_SUITE_SCENES = 20

# Grid shapes and top-K shares (percent of cells) explored by lsm_sweep
SWEEP_GRIDS: tuple[tuple[int, int], ...] = ((16, 10), (32, 20), (128, 80))
SWEEP_TOP_K_PERCENTS: tuple[float, ...] = (5.0, 10.0, 20.0)

ModeKind = Literal["global", "uniform", "lsm"]
MODE_KINDS: tuple[ModeKind, ...] = ("global", "uniform", "lsm")


def _check_range(name: str, bounds: tuple[int, int], minimum: int) -> None:
    lo, hi = bounds
    if lo < minimum or hi < lo:
        raise ValueError(f"{name} must satisfy {minimum} <= lo <= hi, got {bounds}")


@dataclass(frozen=True)
class SceneConfig:
    """Layout of a synthetic scene; every draw comes from ``default_rng(seed)``."""

    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    n_clusters: int = DEFAULT_N_CLUSTERS
    cluster_spread: float = DEFAULT_CLUSTER_SPREAD
    objects_per_cluster: tuple[int, int] = DEFAULT_OBJECTS_PER_CLUSTER
    n_sparse: int = DEFAULT_N_SPARSE
    small_size: tuple[int, int] = DEFAULT_SMALL_SIZE
    large_size: tuple[int, int] = DEFAULT_LARGE_SIZE
    small_share: float = DEFAULT_SMALL_SHARE
    categories: int = DEFAULT_CATEGORIES
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate counts, ranges and shares."""
        width, height = self.image_size
        if width < 1 or height < 1:
            raise ValueError(f"image_size must be >= 1x1, got {self.image_size}")
        if self.n_clusters < 0 or self.n_sparse < 0:
            raise ValueError(
                f"Object counts must be >= 0, got n_clusters={self.n_clusters}, "
                f"n_sparse={self.n_sparse}"
            )
        if not self.cluster_spread >= 0:
            raise ValueError(f"cluster_spread must be >= 0, got {self.cluster_spread}")
        _check_range("objects_per_cluster", self.objects_per_cluster, 0)
        _check_range("small_size", self.small_size, 1)
        _check_range("large_size", self.large_size, 1)
        if max(self.small_size[1], self.large_size[1]) > min(width, height):
            raise ValueError("Object sizes must fit inside the image")
        if not 0.0 <= self.small_share <= 1.0:
            raise ValueError(f"small_share must be in [0, 1], got {self.small_share}")
        if self.categories < 1:
            raise ValueError(f"categories must be >= 1, got {self.categories}")


@dataclass(frozen=True)
class PseudoDetectorConfig:
    """Recall floor, localization noise, score jitter and canvas size of the oracle."""

    size_floor: float = DEFAULT_SIZE_FLOOR
    noise_coeff: float = DEFAULT_NOISE_COEFF
    score_jitter: float = DEFAULT_SCORE_JITTER
    input_size: tuple[int, int] = DEFAULT_TARGET_SIZE
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate oracle parameters."""
        if not self.size_floor > 0:
            raise ValueError(f"size_floor must be > 0, got {self.size_floor}")
        if not self.noise_coeff >= 0:
            raise ValueError(f"noise_coeff must be >= 0, got {self.noise_coeff}")
        if not 0.0 <= self.score_jitter < 1.0:
            raise ValueError(f"score_jitter must be in [0, 1), got {self.score_jitter}")
        if self.input_size[0] < 1 or self.input_size[1] < 1:
            raise ValueError(f"input_size must be >= 1x1, got {self.input_size}")


@dataclass(frozen=True)
class Scene:
    """Ground truths of one generated image plus the layout that produced them."""

    image_size: tuple[int, int]
    ground_truths: list[GroundTruth]
    cluster_centers: list[tuple[float, float]] = field(default_factory=list)
    # cluster index per ground truth, -1 for sparse singletons
    cluster_ids: list[int] = field(default_factory=list)

    @property
    def categories(self) -> int:
        return max((g.category for g in self.ground_truths), default=-1) + 1


def _place_box(
    rng: np.random.Generator, cfg: SceneConfig, cx: float, cy: float
) -> tuple[int, int, int, int]:
    """Integer (left, top, w, h) of a box drawn around a center, clamped in-bounds."""
    width, height = cfg.image_size
    lo, hi = cfg.small_size if rng.random() < cfg.small_share else cfg.large_size
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    left = min(max(round(cx - w / 2), 0), width - w)
    top = min(max(round(cy - h / 2), 0), height - h)
    return left, top, w, h


def build_scene(cfg: SceneConfig) -> Scene:
    """Generate a scene: Gaussian clusters around uniform centers plus sparse singletons.

    Args:
        cfg: Scene layout

    Returns:
        Scene whose boxes have integer left/top/size, so they survive the annotation
        text format unchanged
    """
    rng = np.random.default_rng(cfg.seed)
    width, height = cfg.image_size
    gts: list[GroundTruth] = []
    centers: list[tuple[float, float]] = []
    ids: list[int] = []

    def add(cx: float, cy: float, cluster: int) -> None:
        left, top, w, h = _place_box(rng, cfg, cx, cy)
        category = int(rng.integers(cfg.categories))
        gts.append(GroundTruth(Box.from_ltwh(left, top, w, h), category))
        ids.append(cluster)

    for cluster in range(cfg.n_clusters):
        center = (float(rng.uniform(0, width)), float(rng.uniform(0, height)))
        centers.append(center)
        members = int(rng.integers(cfg.objects_per_cluster[0], cfg.objects_per_cluster[1] + 1))
        offsets = rng.normal(0.0, cfg.cluster_spread, size=(members, 2))
        for dx, dy in offsets:
            add(center[0] + float(dx), center[1] + float(dy), cluster)

    for _ in range(cfg.n_sparse):
        add(float(rng.uniform(0, width)), float(rng.uniform(0, height)), -1)

    logger.debug(f"Scene seed={cfg.seed}: {len(gts)} objects in {cfg.n_clusters} clusters")
    return Scene(image_size=cfg.image_size, ground_truths=gts, cluster_centers=centers, cluster_ids=ids)


def generate_scene(cfg: SceneConfig) -> list[GroundTruth]:
    """Ground truths of ``build_scene(cfg)``."""
    return build_scene(cfg).ground_truths


def global_view(image_size: tuple[int, int], cfg: PseudoDetectorConfig) -> CropTransform:
    """The whole image mapped onto the detector canvas."""
    return crop_and_rescale(full_image_region(*image_size), cfg.input_size)


def pseudo_detect(
    gts: Sequence[GroundTruth],
    view: CropTransform,
    cfg: PseudoDetectorConfig | None = None,
) -> list[Detection]:
    """Simulate one detector pass over a view of the image.

    Random numbers are drawn once per call for every ground truth in order, so an
    object gets the same draws in every view and detection odds only depend on its
    on-canvas size. Only objects whose center lies in the view's region are seen;
    ignore regions are never reported.

    Args:
        gts: Ground truths in global coordinates
        view: Global-to-canvas transform of this pass
        cfg: Oracle parameters

    Returns:
        Detections in canvas coordinates
    """
    cfg = cfg or PseudoDetectorConfig()
    rng = np.random.default_rng(cfg.seed)
    n = len(gts)
    draws = rng.random(n)
    noise = rng.standard_normal((n, 2))
    jitter = rng.random(n)

    sx, sy = view.scale
    detections = []
    for i, gt in enumerate(gts):
        b = gt.box
        if gt.ignore or not view.region.contains(b.cx, b.cy):
            continue
        s_eff = min(b.w * sx, b.h * sy)
        if s_eff <= 0:
            continue
        p = min(max(s_eff / cfg.size_floor, 0.0), 1.0)
        if not draws[i] < p:
            continue
        sigma = cfg.noise_coeff / s_eff
        cx, cy = view.forward(b.cx, b.cy)
        box = Box(
            cx + sigma * float(noise[i, 0]),
            cy + sigma * float(noise[i, 1]),
            b.w * sx,
            b.h * sy,
        )
        score = p * (1.0 - cfg.score_jitter * float(jitter[i]))
        detections.append(Detection(box=box, category=gt.category, score=score))
    return detections


def uniform_regions(image_size: tuple[int, int], n: int) -> list[ClusterRegion]:
    """Partition the image into ``n`` equal tiles, more columns along the longer side."""
    if n < 1:
        raise ValueError(f"Uniform cropping needs n >= 1 tiles, got {n}")
    width, height = image_size
    short = int(math.isqrt(n))
    while n % short:
        short -= 1
    long_ = n // short
    cols, rows = (long_, short) if width >= height else (short, long_)
    xs = grid_edges(width, cols)
    ys = grid_edges(height, rows)
    return [
        ClusterRegion(
            left=float(xs[c]),
            top=float(ys[r]),
            width=float(xs[c + 1] - xs[c]),
            height=float(ys[r + 1] - ys[r]),
            density=0.0,
            cell_count=1,
        )
        for r in range(rows)
        for c in range(cols)
    ]


@dataclass(frozen=True)
class PipelineMode:
    """How a scene is cut before detection: not at all, into tiles, or by LSM."""

    kind: ModeKind = "lsm"
    n_crops: int = DEFAULT_UNIFORM_CROPS
    lsm: LsmConfig = field(default_factory=LsmConfig)
    keep_aspect: bool = False

    def __post_init__(self) -> None:
        """Validate mode name and tile count."""
        if self.kind not in MODE_KINDS:
            raise ValueError(f"Unknown mode {self.kind!r}, expected one of {MODE_KINDS}")
        if self.n_crops < 1:
            raise ValueError(f"n_crops must be >= 1, got {self.n_crops}")

    @classmethod
    def global_only(cls) -> PipelineMode:
        return cls(kind="global")

    @classmethod
    def uniform(cls, n: int = DEFAULT_UNIFORM_CROPS) -> PipelineMode:
        return cls(kind="uniform", n_crops=n)

    @classmethod
    def cluster(cls, cfg: LsmConfig | None = None) -> PipelineMode:
        return cls(kind="lsm", lsm=cfg or LsmConfig())

    @property
    def label(self) -> str:
        if self.kind == "uniform":
            return f"uniform(n={self.n_crops})"
        if self.kind == "lsm":
            return f"lsm(k={self.lsm.k})"
        return "global"


@dataclass
class PipelineRun:
    """Outcome of one scene through one mode."""

    report: EvalReport
    detections: list[Detection]
    regions: list[ClusterRegion]
    detector_passes: int
    timings: dict[str, float] = field(default_factory=dict)


def _crop_regions(scene: Scene, mode: PipelineMode) -> list[ClusterRegion]:
    if mode.kind == "uniform":
        return uniform_regions(scene.image_size, mode.n_crops)
    if mode.kind == "lsm":
        width, height = scene.image_size
        channels = max(scene.categories, 1)
        annotations = [(g.box, g.category) for g in scene.ground_truths if not g.ignore]
        hm = encode(annotations, (channels, height, width))
        return lsm_pipeline(hm, mode.lsm)
    return []


def run_pipeline(
    scene: Scene,
    mode: PipelineMode,
    detector: PseudoDetectorConfig | None = None,
    eval_cfg: EvalConfig | None = None,
) -> PipelineRun:
    """Detect globally, optionally re-detect crops, fuse and evaluate against the scene.

    The same pseudo-detector serves the global image and every crop.
    """
    detector = detector or PseudoDetectorConfig()
    gts = scene.ground_truths
    timings: dict[str, float] = {}

    start = time.perf_counter()
    regions = _crop_regions(scene, mode)
    timings["regions"] = time.perf_counter() - start

    start = time.perf_counter()
    view = global_view(scene.image_size, detector)
    global_dets = to_global(pseudo_detect(gts, view, detector), view)
    crop_results = []
    for region in regions:
        t = crop_and_rescale(region, detector.input_size, keep_aspect=mode.keep_aspect)
        crop_results.append((t, pseudo_detect(gts, t, detector)))
    timings["detect"] = time.perf_counter() - start

    start = time.perf_counter()
    fused = fuse(global_dets, crop_results)
    timings["fuse"] = time.perf_counter() - start

    start = time.perf_counter()
    report = evaluate({"scene": fused}, {"scene": gts}, eval_cfg)
    timings["evaluate"] = time.perf_counter() - start

    logger.info(
        f"{mode.label}: {len(regions)} crops, {len(fused)} detections, "
        f"AP={report.ap if report.ap is not None else float('nan'):.4f}"
    )
    return PipelineRun(
        report=report,
        detections=fused,
        regions=regions,
        detector_passes=1 + len(regions),
        timings=timings,
    )


def _mean_or_none(values: Sequence[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


@dataclass
class SuiteResult:
    """Per-scene runs of one mode and their means."""

    mode: PipelineMode
    runs: list[PipelineRun]

    def mean(self, metric: str) -> float | None:
        """Mean of one report metric (e.g. ``"ap_small"``) over scenes that define it."""
        return _mean_or_none([getattr(r.report, metric) for r in self.runs])

    @property
    def max_passes(self) -> int:
        return max((r.detector_passes for r in self.runs), default=0)

    @property
    def mean_passes(self) -> float:
        return float(np.mean([r.detector_passes for r in self.runs])) if self.runs else 0.0

    @property
    def seconds_per_image(self) -> float:
        if not self.runs:
            return 0.0
        return sum(sum(r.timings.values()) for r in self.runs) / len(self.runs)

    def to_dict(self) -> dict[str, Any]:
        """Timing-free summary, stable across runs."""
        return {
            "mode": self.mode.kind,
            "label": self.mode.label,
            "scenes": len(self.runs),
            "detector_passes_max": self.max_passes,
            "detector_passes_mean": self.mean_passes,
            "ap": self.mean("ap"),
            "ap50": self.mean("ap50"),
            "ap75": self.mean("ap75"),
            "ap_small": self.mean("ap_small"),
            "ap_medium": self.mean("ap_medium"),
            "ap_large": self.mean("ap_large"),
        }


def suite_scenes(scene_cfg: SceneConfig, n_scenes: int = DEFAULT_SUITE_SCENES) -> list[Scene]:
    """Scenes seeded ``scene_cfg.seed``, ``seed + 1``, ..."""
    return [build_scene(replace(scene_cfg, seed=scene_cfg.seed + i)) for i in range(n_scenes)]


def run_suite(
    scenes: Sequence[Scene],
    mode: PipelineMode,
    detector: PseudoDetectorConfig | None = None,
    workers: int = 1,
) -> SuiteResult:
    """Run every scene through one mode; scene ``i`` gets detector seed ``seed + i``.

    Scenes are independent, so ``workers > 1`` runs them on a thread pool; results
    keep scene order and do not depend on the worker count.
    """
    detector = detector or PseudoDetectorConfig()
    jobs = [(scene, replace(detector, seed=detector.seed + i)) for i, scene in enumerate(scenes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda job: run_pipeline(job[0], mode, job[1]), jobs))
    else:
        runs = [run_pipeline(scene, mode, det) for scene, det in jobs]
    return SuiteResult(mode=mode, runs=runs)


@dataclass
class SweepRow:
    """One LSM grid / top-K setting of a sweep."""

    grid: tuple[int, int]
    top_k_percent: float
    top_k: int
    result: SuiteResult

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "grid": f"{self.grid[0]}x{self.grid[1]}",
            "top_k_percent": self.top_k_percent,
            "top_k": self.top_k,
            **{k: v for k, v in self.result.to_dict().items() if k not in ("mode", "label")},
        }


def lsm_sweep(
    scenes: Sequence[Scene],
    base: LsmConfig | None = None,
    grids: Sequence[tuple[int, int]] = SWEEP_GRIDS,
    top_k_percents: Sequence[float] = SWEEP_TOP_K_PERCENTS,
    detector: PseudoDetectorConfig | None = None,
) -> list[SweepRow]:
    """Evaluate LSM over grid shapes and top-K shares of the cell count.

    Args:
        scenes: Scenes to evaluate on
        base: Settings kept fixed (k, enlargement, threshold)
        grids: (columns, rows) per setting
        top_k_percents: top-K as a percentage of the grid's cells
        detector: Oracle parameters

    Returns:
        One row per (grid, percentage), grids outermost
    """
    base = base or LsmConfig()
    rows = []
    for cols, grid_rows in grids:
        grid = replace(base, grid_cols=cols, grid_rows=grid_rows, top_k=0)
        for pct in top_k_percents:
            top_k = min(max(round(grid.cell_count * pct / 100), 1), grid.cell_count)
            cfg = replace(grid, top_k=top_k)
            result = run_suite(scenes, PipelineMode.cluster(cfg), detector)
            rows.append(SweepRow(grid=(cols, grid_rows), top_k_percent=pct, top_k=top_k, result=result))
            logger.info(f"Sweep grid={cols}x{grid_rows} top_k={top_k}: AP={result.mean('ap')}")
    return rows
