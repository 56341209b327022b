"""Tests for CLI module."""

from __future__ import annotations

import argparse
import json
import re
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from clusterdet.cli import (
    EXIT_FORMAT,
    EXIT_MISSING_FILE,
    EXIT_OK,
    EXIT_USAGE,
    main,
    parse_categories,
    parse_pair,
)
from clusterdet.formats import (
    read_annotations,
    read_detections_json,
    read_heatmap,
    read_regions_json,
    write_detections_json,
    write_heatmap,
    write_regions_json,
)
from clusterdet.geometry import Box, Detection
from clusterdet.heatmap import Heatmap
from clusterdet.lsm import ClusterRegion, LsmConfig
from clusterdet.synthetic import (
    DEFAULT_SUITE_SCENES,
    DEFAULT_UNIFORM_CROPS,
    PseudoDetectorConfig,
    SceneConfig,
    build_scene,
)

SAMPLE_DATA = Path(__file__).resolve().parent.parent / "sample_data"
PR_FIXTURE = SAMPLE_DATA / "pr_fixture"
HAND_AP50 = (51 * 1.0 + 50 * (2 / 3)) / 101


def help_text(capsys: pytest.CaptureFixture[str], command: str) -> str:
    """Help output of one subcommand with whitespace collapsed."""
    assert main([command, "--help"]) == EXIT_OK
    return " ".join(capsys.readouterr().out.split())


def assert_default(text: str, flag: str, default: object) -> None:
    """Assert ``flag`` is listed with ``default`` in collapsed help text."""
    pattern = rf"{re.escape(flag)} \S+ [^()]*\(default: {re.escape(str(default))}\)"
    assert re.search(pattern, text), f"{flag} default {default} not in help"


class TestParsers:
    """Tests for flag value parsers."""

    def test_parse_pair(self) -> None:
        """Test WxH parsing is case-insensitive."""
        assert parse_pair("1024x640") == (1024, 640)
        assert parse_pair("16X10") == (16, 10)

    @pytest.mark.parametrize("text", ["1024", "0x5", "axb", "1x2x3"])
    def test_parse_pair_rejects(self, text: str) -> None:
        """Test malformed or non-positive pairs are rejected."""
        with pytest.raises(argparse.ArgumentTypeError):
            parse_pair(text)

    def test_parse_categories(self) -> None:
        """Test comma lists, including the empty list."""
        assert parse_categories("0,11") == frozenset({0, 11})
        assert parse_categories("") == frozenset()


class TestCLI:
    """Tests for CLI commands."""

    def test_main_no_args(self) -> None:
        """Test main with no arguments shows help."""
        with patch("sys.stdout", new_callable=StringIO):
            assert main([]) == EXIT_OK

    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test --version prints the package version."""
        assert main(["--version"]) == EXIT_OK
        assert "clusterdet" in capsys.readouterr().out

    def test_unknown_flag(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test an unknown flag exits with the usage code."""
        assert main(["lsm", "--heatmap", "h.bin", "--out", "r.json", "--bogus"]) == EXIT_USAGE
        assert "unrecognized arguments" in capsys.readouterr().err

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test a missing input exits with the missing-file code."""
        code = main(["lsm", "--heatmap", str(tmp_path / "none.bin"), "--out", str(tmp_path / "r.json")])
        assert code == EXIT_MISSING_FILE

    def test_format_error(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test a corrupt heatmap exits with the format code and one diagnostic line."""
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOPE" + bytes(16))
        assert main(["lsm", "--heatmap", str(bad), "--out", str(tmp_path / "r.json")]) == EXIT_FORMAT
        assert "magic" in capsys.readouterr().err

    def test_oversized_annotation_is_format_error(self, tmp_path: Path) -> None:
        """Test eval on an annotation with a 400-digit width exits with the format code."""
        gt = tmp_path / "scene.txt"
        gt.write_text(f"0,0,1{'0' * 400},1,1,1,0,0\n")
        dets = tmp_path / "dets.json"
        dets.write_text("[]\n")
        assert main(["eval", "--gt", str(gt), "--dets", str(dets)]) == EXIT_FORMAT

    def test_invalid_config_is_usage_error(self, tmp_path: Path) -> None:
        """Test out-of-range hyperparameters exit with the usage code."""
        hm = tmp_path / "hm.bin"
        write_heatmap(Heatmap.zeros(1, 40, 64), hm)
        code = main(["lsm", "--heatmap", str(hm), "--enlarge", "0.5", "--out", str(tmp_path / "r.json")])
        assert code == EXIT_USAGE

    def test_bad_log_level_env(self, monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
        """Test an unknown log level from the environment is a usage error."""
        monkeypatch.setenv("CLUSTERDET_LOG_LEVEL", "LOUD")
        assert main(["synth", "--out-dir", str(tmp_path)]) == EXIT_USAGE


class TestHelp:
    """Tests for --help defaults."""

    def test_bench_help_lists_defaults(
        self, capsys: pytest.CaptureFixture[str], monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test bench help shows every default equal to the library defaults."""
        monkeypatch.setenv("COLUMNS", "200")
        text = help_text(capsys, "bench")
        lsm, scene, det = LsmConfig(), SceneConfig(), PseudoDetectorConfig()
        expected = {
            "--grid": f"{lsm.grid_cols}x{lsm.grid_rows}",
            "--top-k": lsm.top_k,
            "--k": lsm.k,
            "--threshold": lsm.threshold,
            "--enlarge": lsm.enlarge,
            "--seed": scene.seed,
            "--image-size": f"{scene.image_size[0]}x{scene.image_size[1]}",
            "--n-clusters": scene.n_clusters,
            "--cluster-spread": scene.cluster_spread,
            "--n-sparse": scene.n_sparse,
            "--small-share": scene.small_share,
            "--categories": scene.categories,
            "--size-floor": det.size_floor,
            "--noise-coeff": det.noise_coeff,
            "--target": f"{det.input_size[0]}x{det.input_size[1]}",
            "--mode": "lsm",
            "--n-crops": DEFAULT_UNIFORM_CROPS,
            "--scenes": DEFAULT_SUITE_SCENES,
            "--workers": 1,
        }
        for flag, default in expected.items():
            assert_default(text, flag, default)

    def test_lsm_help_lists_defaults(
        self, capsys: pytest.CaptureFixture[str], monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test lsm help shows the region-selection defaults."""
        monkeypatch.setenv("COLUMNS", "200")
        text = help_text(capsys, "lsm")
        assert_default(text, "--grid", "16x10")
        assert_default(text, "--top-k", 15)
        assert_default(text, "--image-id", "image")

    def test_sweep_help_lists_scene_count(
        self, capsys: pytest.CaptureFixture[str], monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test sweep help shows the suite scene count."""
        monkeypatch.setenv("COLUMNS", "200")
        assert_default(help_text(capsys, "sweep"), "--scenes", DEFAULT_SUITE_SCENES)


class TestCommands:
    """End-to-end tests of each subcommand."""

    def test_lsm_zero_heatmap_writes_empty_array(self, tmp_path: Path) -> None:
        """Test the all-zero heatmap yields an empty region list."""
        hm, out = tmp_path / "zero.bin", tmp_path / "regions.json"
        write_heatmap(Heatmap.zeros(3, 40, 64), hm)
        assert main(["lsm", "--heatmap", str(hm), "--out", str(out)]) == EXIT_OK
        assert out.read_text() == "[]\n"

    def test_encode_then_lsm(self, tmp_path: Path) -> None:
        """Test the sample annotations encode and produce regions over the dense group."""
        hm, out = tmp_path / "hm.bin", tmp_path / "regions.json"
        sample = SAMPLE_DATA / "visdrone_sample.txt"
        assert main(["encode", str(sample), "--size", "1024x640", "--out", str(hm)]) == EXIT_OK
        heatmap = read_heatmap(hm)
        assert heatmap.shape == (6, 640, 1024)
        assert main(["lsm", "--heatmap", str(hm), "--image-id", "s", "--out", str(out)]) == EXIT_OK
        regions = read_regions_json(out)["s"]
        assert 1 <= len(regions) <= 2
        assert any(r.contains(500, 360) for r in regions)

    def test_decode_table_and_json(self, tmp_path: Path) -> None:
        """Test decode prints a table or writes detections with the given box size."""
        values = np.zeros((1, 20, 30), dtype=np.float32)
        values[0, 5, 7] = 1.0
        hm, out = tmp_path / "hm.bin", tmp_path / "dets.json"
        write_heatmap(Heatmap(values), hm)
        with patch("sys.stdout", new_callable=StringIO):
            assert main(["decode", "--heatmap", str(hm)]) == EXIT_OK
        code = main(
            ["decode", "--heatmap", str(hm), "--smooth-sigma", "0", "--box-size", "8x4", "--out", str(out)]
        )
        assert code == EXIT_OK
        (d,) = read_detections_json(out)["image"]
        assert d.box.as_tuple() == (7.5, 5.5, 8.0, 4.0)

    def test_fuse(self, tmp_path: Path) -> None:
        """Test fuse replaces globals inside the region with mapped crop detections."""
        global_path, regions_path = tmp_path / "global.json", tmp_path / "regions.json"
        crop_path, out = tmp_path / "crop0.json", tmp_path / "fused.json"
        write_detections_json(
            {"img": [Detection(Box(50, 50, 10, 10), 0, 0.5), Detection(Box(700, 500, 10, 10), 0, 0.6)]},
            global_path,
        )
        write_regions_json({"img": [ClusterRegion(0, 0, 256, 160, 5, 1)]}, regions_path)
        write_detections_json({"img": [Detection(Box(200, 200, 40, 40), 0, 0.9)]}, crop_path)
        args = ["fuse", "--global", str(global_path), "--regions", str(regions_path)]
        assert main([*args, "--crop-dets", str(crop_path), "--out", str(out)]) == EXIT_OK
        fused = read_detections_json(out)["img"]
        assert [d.score for d in fused] == [0.9, 0.6]
        assert fused[0].box.as_tuple() == pytest.approx((50.0, 50.0, 10.0, 10.0))

    def test_fuse_crop_count_mismatch(self, tmp_path: Path) -> None:
        """Test a missing crop detection file is a usage error."""
        global_path, regions_path = tmp_path / "global.json", tmp_path / "regions.json"
        write_detections_json({"img": []}, global_path)
        write_regions_json({"img": [ClusterRegion(0, 0, 256, 160, 5, 1)]}, regions_path)
        code = main(
            ["fuse", "--global", str(global_path), "--regions", str(regions_path), "--out", str(tmp_path / "o.json")]
        )
        assert code == EXIT_USAGE

    def test_eval_pr_fixture(self, tmp_path: Path) -> None:
        """Test eval reproduces the hand-computed AP50 of the fixture."""
        report = tmp_path / "report.json"
        code = main(
            [
                "eval",
                "--gt",
                str(PR_FIXTURE / "scene.txt"),
                "--dets",
                str(PR_FIXTURE / "dets.json"),
                "--report",
                str(report),
            ]
        )
        assert code == EXIT_OK
        data = json.loads(report.read_text())
        assert data["ap50"] == pytest.approx(HAND_AP50, abs=1e-6)
        assert data["ap_small"] is None
        assert data["per_class"]["1"] == pytest.approx(data["ap"])

    def test_synth_writes_scenes(self, tmp_path: Path) -> None:
        """Test synth writes one annotation file per seed, matching the generator."""
        code = main(["synth", "--seed", "3", "--scenes", "2", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        assert sorted(p.name for p in tmp_path.iterdir()) == ["scene_00003.txt", "scene_00004.txt"]
        records = read_annotations(tmp_path / "scene_00004.txt")
        assert len(records) == len(build_scene(SceneConfig(seed=4)).ground_truths)

    def test_bench_reports_identical(self, tmp_path: Path) -> None:
        """Test two bench runs with one seed write byte-identical reports."""
        reports = [tmp_path / "a.json", tmp_path / "b.json"]
        for report in reports:
            with patch("sys.stdout", new_callable=StringIO):
                code = main(
                    ["bench", "--mode", "lsm", "--k", "2", "--seed", "7", "--scenes", "3", "--report", str(report)]
                )
            assert code == EXIT_OK
        assert reports[0].read_bytes() == reports[1].read_bytes()
        data = json.loads(reports[0].read_text())
        assert data["seed"] == 7
        assert data["detector_passes_max"] <= 3

    def test_sweep_report(self, tmp_path: Path) -> None:
        """Test sweep writes one row per grid and top-K share."""
        report = tmp_path / "sweep.json"
        with patch("sys.stdout", new_callable=StringIO):
            code = main(["sweep", "--scenes", "1", "--report", str(report)])
        assert code == EXIT_OK
        rows = json.loads(report.read_text())
        assert len(rows) == 9
        assert rows[0]["grid"] == "16x10"

    def test_plot_is_deterministic(self, tmp_path: Path) -> None:
        """Test plot writes the same SVG twice."""
        regions_path, dets_path = tmp_path / "regions.json", tmp_path / "dets.json"
        write_regions_json({"img": [ClusterRegion(10, 20, 100, 80, 3, 2)]}, regions_path)
        write_detections_json({"img": [Detection(Box(50, 50, 12, 8), 1, 0.7)]}, dets_path)
        outputs = [tmp_path / "a.svg", tmp_path / "b.svg"]
        for out in outputs:
            args = ["plot", "--regions", str(regions_path), "--dets", str(dets_path), "--out", str(out)]
            assert main(args) == EXIT_OK
        assert outputs[0].read_bytes() == outputs[1].read_bytes()
        assert b"<svg" in outputs[0].read_bytes()

    def test_plot_empty_canvas(self, tmp_path: Path) -> None:
        """Test plot without inputs draws an empty canvas."""
        out = tmp_path / "empty.svg"
        assert main(["plot", "--image-size", "64x40", "--out", str(out)]) == EXIT_OK
        assert out.stat().st_size > 0
