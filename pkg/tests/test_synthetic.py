"""Tests for synthetic scenes, the pseudo-detector and the end-to-end pipeline."""

from __future__ import annotations

import math

import numpy as np
import pytest

from clusterdet.fusion import to_global
from clusterdet.geometry import Box, GroundTruth
from clusterdet.lsm import ClusterRegion, LsmConfig, crop_and_rescale
from clusterdet.synthetic import (
    PipelineMode,
    PseudoDetectorConfig,
    Scene,
    SceneConfig,
    build_scene,
    generate_scene,
    global_view,
    lsm_sweep,
    pseudo_detect,
    run_pipeline,
    run_suite,
    suite_scenes,
    uniform_regions,
)

IMAGE = (1024, 640)


def large_object_scene() -> Scene:
    """Four well separated 40x40 objects, one per image quadrant."""
    centers = [(256, 160), (768, 160), (256, 480), (768, 480)]
    return Scene(
        image_size=IMAGE,
        ground_truths=[GroundTruth(Box(cx, cy, 40, 40), i % 2) for i, (cx, cy) in enumerate(centers)],
    )


class TestSceneConfig:
    """Tests for SceneConfig validation."""

    def test_defaults(self) -> None:
        """Test the default layout is a 1024x640 image with two clusters."""
        cfg = SceneConfig()
        assert cfg.image_size == (1024, 640)
        assert cfg.n_clusters == 2

    def test_bad_size_range_raises(self) -> None:
        """Test zero-pixel object sizes are rejected."""
        with pytest.raises(ValueError, match="small_size"):
            SceneConfig(small_size=(0, 5))

    def test_bad_share_raises(self) -> None:
        """Test shares outside [0, 1] are rejected."""
        with pytest.raises(ValueError, match="small_share"):
            SceneConfig(small_share=1.5)

    def test_objects_larger_than_image_raise(self) -> None:
        """Test object sizes must fit inside the image."""
        with pytest.raises(ValueError, match="fit"):
            SceneConfig(image_size=(32, 32), large_size=(40, 50))


class TestBuildScene:
    """Tests for scene generation."""

    def test_deterministic(self) -> None:
        """Test the same seed gives the same scene."""
        assert generate_scene(SceneConfig(seed=5)) == generate_scene(SceneConfig(seed=5))
        assert generate_scene(SceneConfig(seed=5)) != generate_scene(SceneConfig(seed=6))

    def test_empty_scene(self) -> None:
        """Test zero clusters and zero singletons give no objects."""
        scene = build_scene(SceneConfig(n_clusters=0, n_sparse=0))
        assert scene.ground_truths == []
        assert scene.categories == 0

    def test_boxes_inside_image_with_integer_corners(self) -> None:
        """Test every box lies in the image with integer left, top and size."""
        for seed in range(20):
            for g in generate_scene(SceneConfig(seed=seed, small_share=0.5)):
                b = g.box
                assert 0 <= b.left and b.right <= IMAGE[0]
                assert 0 <= b.top and b.bottom <= IMAGE[1]
                assert float(b.left).is_integer() and float(b.top).is_integer()
                assert float(b.w).is_integer() and float(b.h).is_integer()

    def test_counts(self) -> None:
        """Test cluster members and singletons add up to the object count."""
        scene = build_scene(SceneConfig(seed=3, objects_per_cluster=(10, 10), n_sparse=7))
        assert len(scene.ground_truths) == 27
        assert scene.cluster_ids.count(-1) == 7
        assert len(scene.cluster_centers) == 2

    def test_members_near_their_cluster(self) -> None:
        """Test at least 90% of cluster members lie within three spreads of their center."""
        spread = 50.0
        near = total = 0
        for seed in range(10):
            scene = build_scene(SceneConfig(seed=seed, cluster_spread=spread))
            for g, cid in zip(scene.ground_truths, scene.cluster_ids):
                if cid < 0:
                    continue
                cx, cy = scene.cluster_centers[cid]
                total += 1
                near += math.hypot(g.box.cx - cx, g.box.cy - cy) <= 3 * spread
        assert near / total >= 0.9


class TestPseudoDetect:
    """Tests for the size-sensitive pseudo-detector."""

    def test_large_objects_always_found(self) -> None:
        """Test objects at or above the size floor are detected with score near 1."""
        scene = large_object_scene()
        cfg = PseudoDetectorConfig()
        dets = pseudo_detect(scene.ground_truths, global_view(IMAGE, cfg), cfg)
        assert len(dets) == 4
        assert all(1.0 - cfg.score_jitter <= d.score <= 1.0 for d in dets)

    def test_deterministic(self) -> None:
        """Test one seed gives identical detections."""
        gts = generate_scene(SceneConfig(seed=1))
        cfg = PseudoDetectorConfig(seed=9)
        view = global_view(IMAGE, cfg)
        assert pseudo_detect(gts, view, cfg) == pseudo_detect(gts, view, cfg)

    def test_zoom_never_loses_objects(self) -> None:
        """Test a 2x crop finds every object the global pass found inside it."""
        region = ClusterRegion(0, 0, 512, 320, density=0, cell_count=1)
        for seed in range(20):
            cfg = PseudoDetectorConfig(seed=seed)
            view = global_view(IMAGE, cfg)
            crop = crop_and_rescale(region, cfg.input_size)
            for g in generate_scene(SceneConfig(seed=seed)):
                if not region.contains(g.box.cx, g.box.cy):
                    continue
                # a one-object list gets the same draw in both views
                if pseudo_detect([g], view, cfg):
                    assert pseudo_detect([g], crop, cfg)

    def test_detections_map_back_near_objects(self) -> None:
        """Test global detections land within a pixel of their object."""
        gts = generate_scene(SceneConfig(seed=8, small_size=(12, 14)))
        cfg = PseudoDetectorConfig(noise_coeff=1.0)
        view = global_view(IMAGE, cfg)
        for d in to_global(pseudo_detect(gts, view, cfg), view):
            nearest = min(math.hypot(d.box.cx - g.box.cx, d.box.cy - g.box.cy) for g in gts)
            assert nearest < 1.0

    def test_outside_region_not_seen(self) -> None:
        """Test objects outside the view's region are not reported."""
        gts = [GroundTruth(Box(900, 600, 40, 40), 0)]
        crop = crop_and_rescale(ClusterRegion(0, 0, 256, 160, 0, 1))
        assert pseudo_detect(gts, crop) == []

    def test_ignore_regions_skipped(self) -> None:
        """Test ignore regions are never detected."""
        gts = [GroundTruth(Box(100, 100, 40, 40), 0, ignore=True)]
        assert pseudo_detect(gts, global_view(IMAGE, PseudoDetectorConfig())) == []

    def test_invalid_config_raises(self) -> None:
        """Test a non-positive size floor is rejected."""
        with pytest.raises(ValueError, match="size_floor"):
            PseudoDetectorConfig(size_floor=0)


class TestUniformRegions:
    """Tests for uniform tiling."""

    def test_four_tiles(self) -> None:
        """Test n=4 gives 2x2 tiles of 512x320."""
        regions = uniform_regions(IMAGE, 4)
        assert [(r.left, r.top, r.width, r.height) for r in regions] == [
            (0.0, 0.0, 512.0, 320.0),
            (512.0, 0.0, 512.0, 320.0),
            (0.0, 320.0, 512.0, 320.0),
            (512.0, 320.0, 512.0, 320.0),
        ]

    def test_more_columns_on_wide_images(self) -> None:
        """Test six tiles on a wide image form three columns and two rows."""
        regions = uniform_regions(IMAGE, 6)
        assert {r.width for r in regions} == {1024 // 3, 1024 - 2 * (1024 // 3)}
        assert {r.height for r in regions} == {320.0}

    def test_prime_count_is_one_strip(self) -> None:
        """Test a prime count tiles along the longer side only."""
        regions = uniform_regions(IMAGE, 5)
        assert {r.height for r in regions} == {640.0}
        assert len(regions) == 5

    def test_zero_tiles_raises(self) -> None:
        """Test n < 1 is rejected."""
        with pytest.raises(ValueError, match="n >= 1"):
            uniform_regions(IMAGE, 0)


class TestPipelineMode:
    """Tests for PipelineMode."""

    def test_labels(self) -> None:
        """Test human-readable labels per kind."""
        assert PipelineMode.global_only().label == "global"
        assert PipelineMode.uniform(6).label == "uniform(n=6)"
        assert PipelineMode.cluster(LsmConfig(k=3)).label == "lsm(k=3)"

    def test_unknown_kind_raises(self) -> None:
        """Test unknown mode names are rejected."""
        with pytest.raises(ValueError, match="Unknown mode"):
            PipelineMode(kind="tiles")  # type: ignore[arg-type]


class TestRunPipeline:
    """Tests for single-scene pipeline runs."""

    def test_detector_passes(self) -> None:
        """Test passes are one global pass plus one per crop."""
        scene = build_scene(SceneConfig(seed=2))
        assert run_pipeline(scene, PipelineMode.global_only()).detector_passes == 1
        assert run_pipeline(scene, PipelineMode.uniform(4)).detector_passes == 5
        lsm = run_pipeline(scene, PipelineMode.cluster(LsmConfig(k=2)))
        assert 1 <= lsm.detector_passes <= 3
        assert lsm.detector_passes == 1 + len(lsm.regions)

    def test_empty_scene(self) -> None:
        """Test a scene without objects runs with no crops and no detections."""
        scene = build_scene(SceneConfig(n_clusters=0, n_sparse=0))
        run = run_pipeline(scene, PipelineMode.cluster())
        assert run.regions == []
        assert run.detections == []
        assert run.report.ap is None

    def test_deterministic(self) -> None:
        """Test repeated runs give the same detections and report."""
        scene = build_scene(SceneConfig(seed=4))
        a = run_pipeline(scene, PipelineMode.cluster(), PseudoDetectorConfig(seed=1))
        b = run_pipeline(scene, PipelineMode.cluster(), PseudoDetectorConfig(seed=1))
        assert a.detections == b.detections
        assert a.report == b.report

    def test_no_small_objects_modes_agree(self) -> None:
        """Test cropping changes AP by under one point when every object is large."""
        scene = large_object_scene()
        modes = [PipelineMode.global_only(), PipelineMode.uniform(4), PipelineMode.cluster()]
        aps = [run_pipeline(scene, mode).report.ap for mode in modes]
        assert all(ap is not None for ap in aps)
        assert max(aps) - min(aps) <= 0.01  # type: ignore[operator]

    def test_cluster_regions_cover_dense_objects(self) -> None:
        """Test top_k 48 on the 16x10 grid puts 95% of cluster members inside an unenlarged crop."""
        covered = total = 0
        for seed in range(20):
            scene = build_scene(SceneConfig(seed=seed, n_sparse=2))
            run = run_pipeline(scene, PipelineMode.cluster(LsmConfig(top_k=48, enlarge=1.0)))
            for g, cid in zip(scene.ground_truths, scene.cluster_ids):
                if cid < 0:
                    continue
                total += 1
                covered += any(r.contains(g.box.cx, g.box.cy) for r in run.regions)
        assert covered / total >= 0.95


class TestSuite:
    """Tests for multi-scene suites and sweeps."""

    def test_suite_scene_seeds(self) -> None:
        """Test suite scenes are seeded consecutively."""
        scenes = suite_scenes(SceneConfig(seed=10), 3)
        assert scenes[2] == build_scene(SceneConfig(seed=12))

    def test_workers_do_not_change_results(self) -> None:
        """Test a thread pool gives the same summary as a serial run."""
        scenes = suite_scenes(SceneConfig(), 4)
        serial = run_suite(scenes, PipelineMode.cluster())
        pooled = run_suite(scenes, PipelineMode.cluster(), workers=3)
        assert serial.to_dict() == pooled.to_dict()

    def test_summary_fields(self) -> None:
        """Test the summary reports passes and every AP metric."""
        result = run_suite(suite_scenes(SceneConfig(), 2), PipelineMode.uniform(4))
        data = result.to_dict()
        assert data["detector_passes_max"] == 5
        assert data["detector_passes_mean"] == 5.0
        assert data["scenes"] == 2
        assert {"ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large"} <= set(data)

    def test_sweep_rows(self) -> None:
        """Test one row per (grid, share) with top-K rounded from the cell count."""
        rows = lsm_sweep(suite_scenes(SceneConfig(), 2), grids=((16, 10),), top_k_percents=(5.0, 10.0))
        assert [(r.grid, r.top_k) for r in rows] == [((16, 10), 8), ((16, 10), 16)]
        assert rows[0].to_dict()["grid"] == "16x10"

    @pytest.mark.slow
    def test_cluster_crops_beat_global_on_small_objects(self) -> None:
        """Test LSM with k=2 gains at least five AP_small points over a single pass."""
        scenes = suite_scenes(SceneConfig())
        global_ap = run_suite(scenes, PipelineMode.global_only()).mean("ap_small")
        lsm_ap = run_suite(scenes, PipelineMode.cluster(LsmConfig(k=2))).mean("ap_small")
        assert global_ap is not None and lsm_ap is not None
        assert lsm_ap - global_ap >= 0.05

    @pytest.mark.slow
    def test_gains_saturate_with_more_regions(self) -> None:
        """Test the second region adds at least as much as the third."""
        scenes = suite_scenes(SceneConfig())
        ap = {
            k: run_suite(scenes, PipelineMode.cluster(LsmConfig(k=k))).mean("ap_small")
            for k in (1, 2, 3)
        }
        assert ap[2] - ap[1] >= ap[3] - ap[2] - 1e-9  # type: ignore[operator]

    @pytest.mark.slow
    def test_lsm_uses_fewer_passes_than_uniform(self) -> None:
        """Test LSM never exceeds k+1 passes while uniform tiling always takes five."""
        scenes = suite_scenes(SceneConfig())
        lsm = run_suite(scenes, PipelineMode.cluster(LsmConfig(k=2)))
        uniform = run_suite(scenes, PipelineMode.uniform(4))
        assert lsm.max_passes <= 3
        assert uniform.max_passes == 5
        assert np.isclose(uniform.mean_passes, 5.0)
