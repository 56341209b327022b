"""File formats: VisDrone-style annotation text, detection/region JSON, binary heatmaps.

Annotations are stored top-left (``left,top,width,height,score,category,truncation,
occlusion``); everything past this module works in center form.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .fusion import detection_sort_key
from .geometry import Box, Detection, GroundTruth
from .heatmap import Heatmap
from .lsm import ClusterRegion

logger = logging.getLogger(__name__)

HEATMAP_MAGIC = b"YHM1"
HEATMAP_HEADER = struct.Struct("<4sIII")
# Largest payload a reader will allocate, in float32 elements
MAX_HEATMAP_ELEMENTS = 2**31 - 1
ANNOTATION_FIELDS = 8
# Integer annotation fields must fit in a signed 32-bit value
MAX_ANNOTATION_INT = 2**31 - 1
# VisDrone "ignored regions" and "others"
DEFAULT_IGNORE_CATEGORIES: frozenset[int] = frozenset({0, 11})


class FormatError(ValueError):
    """Base class for every malformed-input error raised by the readers."""


class AnnotationParseError(FormatError):
    """A line of an annotation file could not be parsed."""

    def __init__(self, line_number: int, message: str) -> None:
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class HeatmapFormatError(FormatError):
    """A heatmap file is not a valid container."""


class BadMagicError(HeatmapFormatError):
    """The file does not start with the heatmap magic bytes."""


class TruncatedPayloadError(HeatmapFormatError):
    """Header or payload is shorter than the header promises."""


class TrailingDataError(HeatmapFormatError):
    """Bytes follow the payload."""


class InvalidDimensionsError(HeatmapFormatError):
    """A header dimension is zero."""


class DimensionOverflowError(HeatmapFormatError):
    """The header dimensions describe an unreasonably large payload."""


class HeatmapValueError(HeatmapFormatError):
    """The payload holds values outside [0, 1] or non-finite values."""


class RecordSchemaError(FormatError):
    """A JSON record violates its schema."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


# ============== Annotation text ==============


@dataclass(frozen=True)
class AnnotationRecord:
    """One VisDrone annotation line."""

    bbox_left: int
    bbox_top: int
    bbox_width: int
    bbox_height: int
    score: float
    category: int
    truncation: int = 0
    occlusion: int = 0

    def __post_init__(self) -> None:
        """Validate box size."""
        if self.bbox_width < 0 or self.bbox_height < 0:
            raise ValueError(
                f"Annotation size must be non-negative, got {self.bbox_width}x{self.bbox_height}"
            )

    def to_box(self) -> Box:
        return Box.from_ltwh(self.bbox_left, self.bbox_top, self.bbox_width, self.bbox_height)

    def to_line(self) -> str:
        """Canonical comma-separated form without a trailing comma."""
        score = int(self.score) if float(self.score).is_integer() else repr(float(self.score))
        return ",".join(
            str(v)
            for v in (
                self.bbox_left,
                self.bbox_top,
                self.bbox_width,
                self.bbox_height,
                score,
                self.category,
                self.truncation,
                self.occlusion,
            )
        )


def _parse_int(token: str, name: str, line_number: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise AnnotationParseError(line_number, f"{name} is not an integer: {token!r}") from None
    if abs(value) > MAX_ANNOTATION_INT:
        raise AnnotationParseError(line_number, f"{name} is out of range: {token[:20]}...")
    return value


def parse_annotation_line(line: str, line_number: int) -> AnnotationRecord:
    """Parse one annotation line; a single trailing comma is tolerated."""
    tokens = [t.strip() for t in line.strip().split(",")]
    if tokens and tokens[-1] == "":
        tokens.pop()
    if len(tokens) != ANNOTATION_FIELDS:
        raise AnnotationParseError(
            line_number, f"expected {ANNOTATION_FIELDS} fields, got {len(tokens)}"
        )
    left, top, width, height = (
        _parse_int(tokens[i], name, line_number)
        for i, name in enumerate(("bbox_left", "bbox_top", "bbox_width", "bbox_height"))
    )
    try:
        score = float(tokens[4])
    except ValueError:
        raise AnnotationParseError(line_number, f"score is not a number: {tokens[4]!r}") from None
    if not math.isfinite(score):
        raise AnnotationParseError(line_number, f"score is not finite: {tokens[4]!r}")
    category = _parse_int(tokens[5], "category", line_number)
    truncation = _parse_int(tokens[6], "truncation", line_number)
    occlusion = _parse_int(tokens[7], "occlusion", line_number)
    if width < 0 or height < 0:
        raise AnnotationParseError(line_number, f"negative box size {width}x{height}")
    return AnnotationRecord(left, top, width, height, score, category, truncation, occlusion)


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: not UTF-8 text") from e


def read_annotations(path: Path | str) -> list[AnnotationRecord]:
    """Read an annotation file; blank lines are skipped.

    Raises:
        FileNotFoundError: if the file does not exist
        AnnotationParseError: on the first malformed line
    """
    path = Path(path)
    records = []
    for number, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        records.append(parse_annotation_line(line, number))
    logger.debug(f"Read {len(records)} annotations from {path}")
    return records


def write_annotations(records: Iterable[AnnotationRecord], path: Path | str) -> None:
    """Write records one per line in canonical form."""
    text = "".join(f"{r.to_line()}\n" for r in records)
    atomic_write_bytes(Path(path), text.encode("utf-8"))


def ground_truths_from_records(
    records: Iterable[AnnotationRecord],
    ignore_categories: frozenset[int] = DEFAULT_IGNORE_CATEGORIES,
) -> list[GroundTruth]:
    """Center-form ground truths; categories in ``ignore_categories`` become ignore regions."""
    return [
        GroundTruth(r.to_box(), r.category, ignore=r.category in ignore_categories)
        for r in records
    ]


def records_from_ground_truths(gts: Iterable[GroundTruth]) -> list[AnnotationRecord]:
    """Annotation records for ground truths whose boxes lie on integer pixels."""
    records = []
    for g in gts:
        left, top = g.box.left, g.box.top
        values = (left, top, g.box.w, g.box.h)
        if any(not float(v).is_integer() for v in values):
            raise ValueError(f"Box is not on integer pixels: {g.box}")
        records.append(
            AnnotationRecord(int(left), int(top), int(g.box.w), int(g.box.h), 1.0, g.category)
        )
    return records


# ============== Binary heatmap ==============


def heatmap_to_bytes(hm: Heatmap) -> bytes:
    """Header followed by the float32 little-endian payload, channel-major."""
    header = HEATMAP_HEADER.pack(HEATMAP_MAGIC, hm.channels, hm.height, hm.width)
    return header + hm.values.astype("<f4", copy=False).tobytes(order="C")


def heatmap_from_bytes(data: bytes) -> Heatmap:
    """Parse a heatmap container.

    Raises:
        HeatmapFormatError: one subclass per failure kind
    """
    if len(data) < HEATMAP_HEADER.size:
        if not HEATMAP_MAGIC.startswith(data[: len(HEATMAP_MAGIC)]):
            raise BadMagicError(f"Bad magic {data[:4]!r}")
        raise TruncatedPayloadError(f"Header needs {HEATMAP_HEADER.size} bytes, got {len(data)}")
    magic, channels, height, width = HEATMAP_HEADER.unpack_from(data)
    if magic != HEATMAP_MAGIC:
        raise BadMagicError(f"Bad magic {magic!r}, expected {HEATMAP_MAGIC!r}")
    if min(channels, height, width) < 1:
        raise InvalidDimensionsError(f"Dimensions must be >= 1, got {channels}x{height}x{width}")
    count = channels * height * width
    if count > MAX_HEATMAP_ELEMENTS:
        raise DimensionOverflowError(f"{channels}x{height}x{width} exceeds {MAX_HEATMAP_ELEMENTS}")

    expected = HEATMAP_HEADER.size + 4 * count
    if len(data) < expected:
        raise TruncatedPayloadError(f"Payload needs {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise TrailingDataError(f"{len(data) - expected} bytes after the payload")

    values = np.frombuffer(data, dtype="<f4", count=count, offset=HEATMAP_HEADER.size)
    try:
        return Heatmap(values.reshape(channels, height, width))
    except ValueError as e:
        raise HeatmapValueError(str(e)) from e


def read_heatmap(path: Path | str) -> Heatmap:
    """Read a heatmap file."""
    return heatmap_from_bytes(Path(path).read_bytes())


def write_heatmap(hm: Heatmap, path: Path | str) -> None:
    """Write a heatmap file atomically."""
    atomic_write_bytes(Path(path), heatmap_to_bytes(hm))


# ============== JSON records ==============


class DetectionRecord(BaseModel):
    """JSON shape of one detection; unknown fields are ignored."""

    model_config = ConfigDict(extra="ignore", strict=True)

    image_id: str
    category: int
    cx: float
    cy: float
    w: float = Field(ge=0)
    h: float = Field(ge=0)
    score: float = Field(ge=0, le=1)

    @field_validator("cx", "cy", "w", "h", "score", mode="before")
    @classmethod
    def _finite_number(cls, v: Any) -> Any:
        # strict mode rejects bools as floats but still allows ints
        if isinstance(v, int) and not isinstance(v, bool):
            try:
                return float(v)
            except OverflowError:
                raise ValueError("must be finite") from None
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError("must be finite")
        return v

    def to_detection(self) -> Detection:
        return Detection(Box(self.cx, self.cy, self.w, self.h), self.category, self.score)


class RegionRecord(BaseModel):
    """JSON shape of one cluster region; unknown fields are ignored."""

    model_config = ConfigDict(extra="ignore", strict=True)

    image_id: str = ""
    left: float = Field(ge=0)
    top: float = Field(ge=0)
    width: float = Field(ge=0)
    height: float = Field(ge=0)
    density: float = Field(ge=0)
    cell_count: int = Field(default=1, ge=0)

    @field_validator("left", "top", "width", "height", "density", mode="before")
    @classmethod
    def _finite_number(cls, v: Any) -> Any:
        if isinstance(v, int) and not isinstance(v, bool):
            try:
                return float(v)
            except OverflowError:
                raise ValueError("must be finite") from None
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError("must be finite")
        return v

    def to_region(self) -> ClusterRegion:
        return ClusterRegion(
            self.left, self.top, self.width, self.height, self.density, self.cell_count
        )


def _load_json_array(path: Path) -> list[Any]:
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, list):
        raise RecordSchemaError("$", f"expected a JSON array, got {type(data).__name__}")
    return data


def _validate(model: type[BaseModel], items: list[Any]) -> list[Any]:
    out = []
    for index, item in enumerate(items):
        try:
            out.append(model.model_validate(item))
        except ValidationError as e:
            first = e.errors()[0]
            name = ".".join(str(p) for p in first["loc"]) or "$"
            raise RecordSchemaError(f"[{index}].{name}", first["msg"]) from e
    return out


def read_detections_json(path: Path | str) -> dict[str, list[Detection]]:
    """Read detections grouped by image id, each list in file order."""
    grouped: dict[str, list[Detection]] = {}
    for record in _validate(DetectionRecord, _load_json_array(Path(path))):
        grouped.setdefault(record.image_id, []).append(record.to_detection())
    return grouped


def write_detections_json(dets_by_image: Mapping[str, Sequence[Detection]], path: Path | str) -> None:
    """Write detections sorted by image id, then score descending and box."""
    rows = []
    for image_id in sorted(dets_by_image):
        for d in sorted(dets_by_image[image_id], key=detection_sort_key):
            rows.append(
                {
                    "image_id": image_id,
                    "category": d.category,
                    "cx": d.box.cx,
                    "cy": d.box.cy,
                    "w": d.box.w,
                    "h": d.box.h,
                    "score": d.score,
                }
            )
    write_json(rows, Path(path))


def read_regions_json(path: Path | str) -> dict[str, list[ClusterRegion]]:
    """Read regions grouped by image id, each list in file (selection) order."""
    grouped: dict[str, list[ClusterRegion]] = {}
    for record in _validate(RegionRecord, _load_json_array(Path(path))):
        grouped.setdefault(record.image_id, []).append(record.to_region())
    return grouped


def write_regions_json(
    regions_by_image: Mapping[str, Sequence[ClusterRegion]], path: Path | str
) -> None:
    """Write regions sorted by image id, keeping each image's selection order."""
    rows = [
        {
            "image_id": image_id,
            "left": r.left,
            "top": r.top,
            "width": r.width,
            "height": r.height,
            "density": r.density,
            "cell_count": r.cell_count,
        }
        for image_id in sorted(regions_by_image)
        for r in regions_by_image[image_id]
    ]
    write_json(rows, Path(path))


# ============== Writing ==============


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_json(data: Any, path: Path | str) -> None:
    """Pretty JSON with a trailing newline; floats keep full precision."""
    text = json.dumps(data, indent=2, ensure_ascii=False, allow_nan=False)
    atomic_write_bytes(Path(path), f"{text}\n".encode())
