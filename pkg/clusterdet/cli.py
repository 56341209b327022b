"""Command-line interface for clusterdet."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import fields, replace
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.markup import escape
from rich.table import Table

from . import __version__
from .evaluation import DEFAULT_MAX_DETS, EvalConfig, EvalReport, evaluate
from .formats import (
    DEFAULT_IGNORE_CATEGORIES,
    FormatError,
    atomic_write_bytes,
    ground_truths_from_records,
    read_annotations,
    read_detections_json,
    read_heatmap,
    read_regions_json,
    records_from_ground_truths,
    write_annotations,
    write_detections_json,
    write_heatmap,
    write_json,
    write_regions_json,
)
from .fusion import fuse, to_global
from .geometry import Detection
from .heatmap import DEFAULT_SMOOTH_SIGMA, decode, encode, peaks_to_detections
from .logging_setup import LOG_LEVELS, configure_logging
from .lsm import DEFAULT_TARGET_SIZE, LsmConfig, crop_and_rescale, full_image_region, lsm_pipeline
from .plotting import render_svg
from .synthetic import (
    DEFAULT_SUITE_SCENES,
    DEFAULT_UNIFORM_CROPS,
    MODE_KINDS,
    PipelineMode,
    PseudoDetectorConfig,
    SceneConfig,
    SuiteResult,
    build_scene,
    lsm_sweep,
    run_suite,
    suite_scenes,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_FORMAT = 4

DEFAULT_TOP_N = 100
DEFAULT_BOX_SIZE = (16, 16)
DEFAULT_IMAGE_ID = "image"

_LSM = {f.name: f.default for f in fields(LsmConfig)}
_SCENE = {f.name: f.default for f in fields(SceneConfig)}
_DETECTOR = {f.name: f.default for f in fields(PseudoDetectorConfig)}


def parse_pair(text: str) -> tuple[int, int]:
    """Parse ``"WxH"`` (or ``"CxR"``) into two positive integers."""
    parts = text.lower().split("x")
    try:
        a, b = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AxB with integers, got {text!r}") from None
    if a < 1 or b < 1:
        raise argparse.ArgumentTypeError(f"both values must be >= 1, got {text!r}")
    return a, b


def parse_categories(text: str) -> frozenset[int]:
    """Parse a comma-separated category list; empty means none."""
    try:
        return frozenset(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _fmt_pair(pair: tuple[int, int]) -> str:
    return f"{pair[0]}x{pair[1]}"


def _fmt_ap(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.2f}"


def _pick_image(available: Sequence[str], requested: str | None) -> str:
    if requested is not None:
        return requested
    if len(available) == 1:
        return available[0]
    raise ValueError(
        f"Input holds {len(available)} images ({', '.join(available[:5])}...), pass --image-id"
    )


# ============== Commands ==============


def cmd_encode(args: argparse.Namespace) -> int:
    """Handle encode command."""
    records = read_annotations(args.annotations)
    gts = [g for g in ground_truths_from_records(records, args.ignore_categories) if not g.ignore]
    channels = args.channels or max((g.category for g in gts), default=0) + 1
    width, height = args.size
    hm = encode([(g.box, g.category) for g in gts], (channels, height, width))
    write_heatmap(hm, args.out)
    Console(stderr=True).print(
        f"[green]Encoded {len(gts)} objects into {channels}x{height}x{width} -> {args.out}[/green]"
    )
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    """Handle decode command."""
    hm = read_heatmap(args.heatmap)
    peaks = decode(hm, args.top_n, args.smooth_sigma)
    w, h = args.box_size
    dets = peaks_to_detections(peaks, lambda _peak: (float(w), float(h)))
    if args.out:
        write_detections_json({args.image_id: dets}, args.out)
        return EXIT_OK

    table = Table(title=f"Peaks ({len(peaks)})")
    table.add_column("#", style="dim", width=4)
    table.add_column("Channel", style="cyan")
    table.add_column("x", style="green")
    table.add_column("y", style="green")
    table.add_column("Score", style="magenta")
    for i, p in enumerate(peaks, 1):
        table.add_row(str(i), str(p.channel), str(p.x), str(p.y), f"{p.score:.4f}")
    Console().print(table)
    return EXIT_OK


def _lsm_config(args: argparse.Namespace) -> LsmConfig:
    cols, rows = args.grid
    return LsmConfig(
        grid_cols=cols,
        grid_rows=rows,
        top_k=args.top_k,
        k=args.k,
        enlarge=args.enlarge,
        threshold=args.threshold,
    )


def cmd_lsm(args: argparse.Namespace) -> int:
    """Handle lsm command."""
    cfg = _lsm_config(args)
    hm = read_heatmap(args.heatmap)
    regions = lsm_pipeline(hm, cfg)
    write_regions_json({args.image_id: regions} if regions else {}, args.out)
    logger.info(f"{len(regions)} regions -> {args.out}")
    return EXIT_OK


def cmd_fuse(args: argparse.Namespace) -> int:
    """Handle fuse command."""
    global_by_image = read_detections_json(args.global_dets)
    regions_by_image = read_regions_json(args.regions)
    image_id = _pick_image(sorted(set(global_by_image) | set(regions_by_image)), args.image_id)
    regions = regions_by_image.get(image_id, [])
    crop_files = args.crop_dets or []
    if len(crop_files) != len(regions):
        raise ValueError(
            f"Got {len(crop_files)} --crop-dets files for {len(regions)} regions of {image_id!r}"
        )

    crop_results = []
    for region, path in zip(regions, crop_files):
        t = crop_and_rescale(region, args.target, keep_aspect=args.keep_aspect)
        dets = [d for ds in read_detections_json(path).values() for d in ds]
        crop_results.append((t, dets))

    fused = fuse(global_by_image.get(image_id, []), crop_results)
    write_detections_json({image_id: fused}, args.out)
    logger.info(f"Fused {len(fused)} detections for {image_id!r} -> {args.out}")
    return EXIT_OK


def _report_table(title: str, report: EvalReport) -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="magenta", justify="right")
    for name, value in (
        ("AP", report.ap),
        ("AP50", report.ap50),
        ("AP75", report.ap75),
        ("AP_small", report.ap_small),
        ("AP_medium", report.ap_medium),
        ("AP_large", report.ap_large),
    ):
        table.add_row(name, _fmt_ap(value))
    for category, value in sorted(report.per_class.items()):
        table.add_row(f"class {category}", _fmt_ap(value))
    return table


def cmd_eval(args: argparse.Namespace) -> int:
    """Handle eval command."""
    cfg = EvalConfig(max_dets=args.max_dets)
    gts_by_image = {
        Path(p).stem: ground_truths_from_records(read_annotations(p), args.ignore_categories)
        for p in args.gt
    }
    dets_by_image = read_detections_json(args.dets)
    unknown = sorted(set(dets_by_image) - set(gts_by_image))
    if unknown:
        logger.warning(f"Detections for {len(unknown)} images without ground truth: {unknown[:5]}")

    report = evaluate(dets_by_image, gts_by_image, cfg)
    if args.report:
        write_json(report.to_dict(), args.report)
    Console().print(_report_table(f"Evaluation ({len(gts_by_image)} images)", report))
    return EXIT_OK


def _scene_config(args: argparse.Namespace) -> SceneConfig:
    return SceneConfig(
        image_size=args.image_size,
        n_clusters=args.n_clusters,
        cluster_spread=args.cluster_spread,
        n_sparse=args.n_sparse,
        small_share=args.small_share,
        categories=args.categories,
        seed=args.seed,
    )


def _detector_config(args: argparse.Namespace) -> PseudoDetectorConfig:
    return PseudoDetectorConfig(
        size_floor=args.size_floor,
        noise_coeff=args.noise_coeff,
        input_size=args.target,
        seed=args.seed,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    """Handle synth command."""
    base = _scene_config(args)
    if args.scenes < 1:
        raise ValueError(f"--scenes must be >= 1, got {args.scenes}")
    out_dir = Path(args.out_dir)
    for i in range(args.scenes):
        scene = build_scene(replace(base, seed=base.seed + i))
        write_annotations(
            records_from_ground_truths(scene.ground_truths), out_dir / f"scene_{base.seed + i:05d}.txt"
        )
    Console(stderr=True).print(f"[green]Wrote {args.scenes} scenes to {out_dir}[/green]")
    return EXIT_OK


def _bench_table(results: Sequence[SuiteResult]) -> Table:
    table = Table(title="Synthetic benchmark")
    table.add_column("Mode", style="cyan")
    table.add_column("Passes/img", style="yellow", justify="right")
    table.add_column("AP", style="magenta", justify="right")
    table.add_column("AP50", justify="right")
    table.add_column("AP_small", style="green", justify="right")
    table.add_column("s/img", style="dim", justify="right")
    for r in results:
        table.add_row(
            r.mode.label,
            f"{r.mean_passes:.2f}",
            _fmt_ap(r.mean("ap")),
            _fmt_ap(r.mean("ap50")),
            _fmt_ap(r.mean("ap_small")),
            f"{r.seconds_per_image:.3f}",
        )
    return table


def cmd_bench(args: argparse.Namespace) -> int:
    """Handle bench command."""
    lsm_cfg = _lsm_config(args)
    scene_cfg = _scene_config(args)
    detector = _detector_config(args)
    mode = PipelineMode(kind=args.mode, n_crops=args.n_crops, lsm=lsm_cfg)
    if args.scenes < 1:
        raise ValueError(f"--scenes must be >= 1, got {args.scenes}")

    result = run_suite(suite_scenes(scene_cfg, args.scenes), mode, detector, workers=args.workers)
    if args.report:
        write_json(
            {
                "seed": args.seed,
                "detector": {
                    "size_floor": detector.size_floor,
                    "noise_coeff": detector.noise_coeff,
                    "input_size": list(detector.input_size),
                },
                **result.to_dict(),
            },
            args.report,
        )
    Console().print(_bench_table([result]))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Handle sweep command."""
    base = LsmConfig(k=args.k, enlarge=args.enlarge, threshold=args.threshold)
    scene_cfg = _scene_config(args)
    detector = _detector_config(args)
    if args.scenes < 1:
        raise ValueError(f"--scenes must be >= 1, got {args.scenes}")

    rows = lsm_sweep(suite_scenes(scene_cfg, args.scenes), base, detector=detector)
    if args.report:
        write_json([r.to_dict() for r in rows], args.report)

    table = Table(title="LSM sweep")
    table.add_column("Grid", style="cyan")
    table.add_column("Top-K", style="yellow", justify="right")
    table.add_column("Passes/img", justify="right")
    table.add_column("AP", style="magenta", justify="right")
    table.add_column("AP_small", style="green", justify="right")
    for r in rows:
        table.add_row(
            _fmt_pair(r.grid),
            f"{r.top_k} ({r.top_k_percent:g}%)",
            f"{r.result.mean_passes:.2f}",
            _fmt_ap(r.result.mean("ap")),
            _fmt_ap(r.result.mean("ap_small")),
        )
    Console().print(table)
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    """Handle plot command."""
    regions_by_image = read_regions_json(args.regions) if args.regions else {}
    dets_by_image = read_detections_json(args.dets) if args.dets else {}
    available = sorted(set(regions_by_image) | set(dets_by_image))
    image_id = _pick_image(available, args.image_id) if available else DEFAULT_IMAGE_ID

    # global detections are clamped to the image like any other pass
    view = crop_and_rescale(full_image_region(*args.image_size), args.image_size)
    dets: list[Detection] = to_global(dets_by_image.get(image_id, []), view)
    svg = render_svg(args.image_size, regions_by_image.get(image_id, []), dets)
    atomic_write_bytes(Path(args.out), svg)
    return EXIT_OK


# ============== Parser ==============


def _add_lsm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--grid",
        type=parse_pair,
        default=f"{_LSM['grid_cols']}x{_LSM['grid_rows']}",
        help="Grid as COLUMNSxROWS",
    )
    p.add_argument("--top-k", type=int, default=_LSM["top_k"], help="Densest cells kept")
    p.add_argument("--k", type=int, default=_LSM["k"], help="Maximum number of crops")
    p.add_argument(
        "--threshold", type=float, default=_LSM["threshold"], help="Binarization threshold"
    )
    p.add_argument("--enlarge", type=float, default=_LSM["enlarge"], help="Region enlargement")


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=_SCENE["seed"], help="Random seed")
    p.add_argument(
        "--image-size",
        type=parse_pair,
        default=_fmt_pair(_SCENE["image_size"]),
        help="Scene size as WIDTHxHEIGHT",
    )
    p.add_argument("--n-clusters", type=int, default=_SCENE["n_clusters"], help="Clusters per scene")
    p.add_argument(
        "--cluster-spread",
        type=float,
        default=_SCENE["cluster_spread"],
        help="Cluster standard deviation in pixels",
    )
    p.add_argument("--n-sparse", type=int, default=_SCENE["n_sparse"], help="Sparse objects per scene")
    p.add_argument(
        "--small-share", type=float, default=_SCENE["small_share"], help="Share of small objects"
    )
    p.add_argument("--categories", type=int, default=_SCENE["categories"], help="Category count")


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--size-floor",
        type=float,
        default=_DETECTOR["size_floor"],
        help="On-canvas size in pixels at which recall saturates",
    )
    p.add_argument(
        "--noise-coeff",
        type=float,
        default=_DETECTOR["noise_coeff"],
        help="Center noise coefficient in pixels",
    )
    p.add_argument(
        "--target",
        type=parse_pair,
        default=_fmt_pair(_DETECTOR["input_size"]),
        help="Detector input size as WIDTHxHEIGHT",
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with every subcommand."""
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="clusterdet",
        description="Cluster-guided tiny object detection tooling",
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        default=None,
        help="Log verbosity (falls back to CLUSTERDET_LOG_LEVEL, then WARNING)",
    )
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    def sub(name: str, func: Callable[[argparse.Namespace], int], help_text: str) -> Any:
        p = subparsers.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        return p

    ignore_default = ",".join(str(c) for c in sorted(DEFAULT_IGNORE_CATEGORIES))

    p = sub("encode", cmd_encode, "Render annotations as a center heatmap")
    p.add_argument("annotations", help="Annotation text file")
    p.add_argument(
        "--size", type=parse_pair, default=_fmt_pair(DEFAULT_TARGET_SIZE), help="WIDTHxHEIGHT"
    )
    p.add_argument("--channels", type=int, default=0, help="Channel count, 0 = max category + 1")
    p.add_argument(
        "--ignore-categories",
        type=parse_categories,
        default=ignore_default,
        help="Categories treated as ignore regions",
    )
    p.add_argument("--out", required=True, help="Output heatmap file")

    p = sub("decode", cmd_decode, "Decode peaks from a heatmap")
    p.add_argument("--heatmap", required=True, help="Heatmap file")
    p.add_argument("--top-n", type=int, default=DEFAULT_TOP_N, help="Maximum peaks")
    p.add_argument(
        "--smooth-sigma", type=float, default=DEFAULT_SMOOTH_SIGMA, help="Pre-filter sigma, 0 = off"
    )
    p.add_argument(
        "--box-size",
        type=parse_pair,
        default=_fmt_pair(DEFAULT_BOX_SIZE),
        help="Box size assigned to every peak, WIDTHxHEIGHT",
    )
    p.add_argument("--image-id", default=DEFAULT_IMAGE_ID, help="Image id in the output")
    p.add_argument("--out", default=None, help="Detections JSON (prints a table if omitted)")

    p = sub("lsm", cmd_lsm, "Select cluster regions from a heatmap")
    p.add_argument("--heatmap", required=True, help="Heatmap file")
    _add_lsm_flags(p)
    p.add_argument("--image-id", default=DEFAULT_IMAGE_ID, help="Image id in the output")
    p.add_argument("--out", required=True, help="Regions JSON")

    p = sub("fuse", cmd_fuse, "Fuse global and crop detections")
    p.add_argument("--global", dest="global_dets", required=True, help="Global detections JSON")
    p.add_argument("--regions", required=True, help="Regions JSON")
    p.add_argument(
        "--crop-dets", nargs="*", default=None, help="Canvas detections JSON, one per region"
    )
    p.add_argument(
        "--target",
        type=parse_pair,
        default=_fmt_pair(DEFAULT_TARGET_SIZE),
        help="Detector input size as WIDTHxHEIGHT",
    )
    p.add_argument("--keep-aspect", action="store_true", help="Crops were letterboxed")
    p.add_argument("--image-id", default=None, help="Image to fuse (needed with several)")
    p.add_argument("--out", required=True, help="Fused detections JSON")

    p = sub("eval", cmd_eval, "COCO-style AP of detections against annotations")
    p.add_argument("--gt", nargs="+", required=True, help="Annotation files, image id = file stem")
    p.add_argument("--dets", required=True, help="Detections JSON")
    p.add_argument("--max-dets", type=int, default=DEFAULT_MAX_DETS, help="Detections per image")
    p.add_argument(
        "--ignore-categories",
        type=parse_categories,
        default=ignore_default,
        help="Categories treated as ignore regions",
    )
    p.add_argument("--report", default=None, help="Report JSON")

    p = sub("synth", cmd_synth, "Generate synthetic annotated scenes")
    _add_scene_flags(p)
    p.add_argument("--scenes", type=int, default=1, help="Number of scenes")
    p.add_argument("--out-dir", required=True, help="Output directory")

    p = sub("bench", cmd_bench, "Run the synthetic benchmark for one mode")
    p.add_argument("--mode", choices=MODE_KINDS, default="lsm", help="Cropping mode")
    p.add_argument("--n-crops", type=int, default=DEFAULT_UNIFORM_CROPS, help="Tiles in uniform mode")
    _add_lsm_flags(p)
    _add_scene_flags(p)
    _add_detector_flags(p)
    p.add_argument("--scenes", type=int, default=DEFAULT_SUITE_SCENES, help="Number of scenes")
    p.add_argument("--workers", type=int, default=1, help="Scenes run in parallel")
    p.add_argument("--report", default=None, help="Report JSON")

    p = sub("sweep", cmd_sweep, "Sweep LSM grid size and top-K on synthetic scenes")
    p.add_argument("--k", type=int, default=_LSM["k"], help="Maximum number of crops")
    p.add_argument("--threshold", type=float, default=_LSM["threshold"], help="Binarization threshold")
    p.add_argument("--enlarge", type=float, default=_LSM["enlarge"], help="Region enlargement")
    _add_scene_flags(p)
    _add_detector_flags(p)
    p.add_argument("--scenes", type=int, default=DEFAULT_SUITE_SCENES, help="Number of scenes")
    p.add_argument("--report", default=None, help="Report JSON")

    p = sub("plot", cmd_plot, "Draw regions and detections as SVG")
    p.add_argument(
        "--image-size",
        type=parse_pair,
        default=_fmt_pair(DEFAULT_TARGET_SIZE),
        help="Canvas size as WIDTHxHEIGHT",
    )
    p.add_argument("--regions", default=None, help="Regions JSON")
    p.add_argument("--dets", default=None, help="Detections JSON")
    p.add_argument("--image-id", default=None, help="Image to draw (needed with several)")
    p.add_argument("--out", required=True, help="Output SVG")

    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    console = Console(stderr=True)
    try:
        configure_logging(args.log_level)
        return int(args.func(args))
    except FileNotFoundError as e:
        console.print(f"[red]Error: File not found: {escape(str(e.filename or e))}[/red]")
        return EXIT_MISSING_FILE
    except FormatError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        return EXIT_FORMAT
    except ValueError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
