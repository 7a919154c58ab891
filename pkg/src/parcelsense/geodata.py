"""Raster, parcel map and label-table loading.

File formats (all lossless, bit-exact on round-trip):
  * raster: 8-bit PNG, grayscale or RGB
  * parcel map: single-channel 16-bit PNG, id 0 = background
  * labels: CSV with header ``parcel_id,label``

Pixel convention: x = column, y = row, origin at the top-left corner.
Loaded structures are immutable (the pixel buffers are marked read-only)
and safe to share across threads.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataFormatError

log = logging.getLogger(__name__)

# Closed set of land-use classes, in the fixed tie-break order used throughout.
LAND_USE_CLASSES = ("M", "I", "G", "C", "R", "P", "U")


def validate_label(label: str) -> str:
    if label not in LAND_USE_CLASSES:
        raise DataFormatError(
            f"unknown land-use label {label!r}; expected one of {','.join(LAND_USE_CLASSES)}"
        )
    return label


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RasterGrid:
    """Multi-band 8-bit pixel grid, shape (height, width, bands), band-interleaved."""

    width: int
    height: int
    bands: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be at least 1x1")
        if self.bands not in (1, 3):
            raise ValueError(f"band count must be 1 or 3, got {self.bands}")
        px = self.pixels
        if px.dtype != np.uint8 or px.shape != (self.height, self.width, self.bands):
            raise ValueError("pixel buffer must be uint8 with shape (height, width, bands)")
        _freeze(px)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "RasterGrid":
        if pixels.ndim == 2:
            pixels = pixels[:, :, np.newaxis]
        h, w, b = pixels.shape
        return cls(width=w, height=h, bands=b, pixels=np.ascontiguousarray(pixels, dtype=np.uint8))


@dataclass(frozen=True)
class ParcelMap:
    """Per-pixel parcel identifiers (uint16), 0 = background."""

    width: int
    height: int
    ids: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.ids.shape != (self.height, self.width):
            raise ValueError("id buffer shape must be (height, width)")
        if self.ids.dtype != np.uint16:
            raise ValueError("parcel ids must be uint16")
        _freeze(self.ids)

    @classmethod
    def from_array(cls, ids: np.ndarray) -> "ParcelMap":
        h, w = ids.shape
        return cls(width=w, height=h, ids=np.ascontiguousarray(ids, dtype=np.uint16))

    def parcel_ids(self) -> np.ndarray:
        """Distinct nonzero ids present in the map, ascending."""
        ids = np.unique(self.ids)
        return ids[ids != 0]


@dataclass(frozen=True)
class ParcelRecord:
    """One parcel: tight bounding box, pixel count and optional ground-truth label.

    ``bbox`` is (x_min, x_max, y_min, y_max) in pixel coordinates, bounds inclusive.
    """

    id: int
    bbox: tuple[int, int, int, int]
    pixel_count: int
    label: str | None = None

    def __post_init__(self):
        x_min, x_max, y_min, y_max = self.bbox
        if not (0 <= x_min <= x_max and 0 <= y_min <= y_max):
            raise ValueError(f"invalid bbox {self.bbox} for parcel {self.id}")
        if self.id <= 0:
            raise ValueError("parcel id must be positive")
        if self.pixel_count < 1:
            raise ValueError("parcel must cover at least one pixel")
        if self.label is not None:
            validate_label(self.label)


def load_raster(path: str | Path) -> RasterGrid:
    """Load an 8-bit grayscale or RGB PNG as a RasterGrid.

    Raises DataFormatError for unsupported bit depths or band counts,
    FileNotFoundError for a missing file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster file not found: {path}")
    try:
        image = Image.open(path)
        image.load()
    except UnidentifiedImageError as exc:
        raise DataFormatError(f"malformed image file: {path}") from exc
    if image.mode in ("I", "I;16", "I;16B", "I;16L"):
        raise DataFormatError(f"unsupported bit depth (expected 8-bit): {path}")
    if image.mode not in ("L", "RGB"):
        raise DataFormatError(
            f"unsupported band count or mode {image.mode!r} (expected L or RGB): {path}"
        )
    return RasterGrid.from_array(np.asarray(image, dtype=np.uint8))


def write_raster(path: str | Path, raster: RasterGrid) -> None:
    arr = raster.pixels[:, :, 0] if raster.bands == 1 else raster.pixels
    Image.fromarray(np.asarray(arr)).save(Path(path), format="PNG")


def load_parcel_map(path: str | Path, raster: RasterGrid) -> ParcelMap:
    """Load a single-channel 16-bit PNG parcel-id map matching ``raster``'s size."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"parcel map not found: {path}")
    try:
        image = Image.open(path)
        image.load()
    except UnidentifiedImageError as exc:
        raise DataFormatError(f"malformed image file: {path}") from exc
    if image.mode in ("RGB", "RGBA", "P"):
        raise DataFormatError(f"parcel map must be single-channel, got {image.mode!r}: {path}")
    if image.mode not in ("I", "I;16", "I;16B", "I;16L"):
        raise DataFormatError(f"parcel map must be 16-bit, got {image.mode!r}: {path}")
    ids = np.asarray(image)
    if ids.min() < 0 or ids.max() > np.iinfo(np.uint16).max:
        raise DataFormatError(f"parcel ids out of uint16 range: {path}")
    if ids.shape != (raster.height, raster.width):
        raise DataFormatError(
            f"parcel map is {ids.shape[1]}x{ids.shape[0]} but raster is "
            f"{raster.width}x{raster.height}: {path}"
        )
    return ParcelMap.from_array(ids.astype(np.uint16))


def write_parcel_map(path: str | Path, parcel_map: ParcelMap) -> None:
    Image.fromarray(np.asarray(parcel_map.ids)).save(Path(path), format="PNG")


def load_labels(path: str | Path) -> dict[int, str]:
    """Read a ``parcel_id,label`` CSV into an id -> label dict."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label table not found: {path}")
    labels: dict[int, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["parcel_id", "label"]:
            raise DataFormatError(f"label CSV must start with header 'parcel_id,label': {path}")
        for row in reader:
            if not row:
                continue
            try:
                parcel_id = int(row[0])
            except ValueError as exc:
                raise DataFormatError(f"non-integer parcel_id {row[0]!r} in {path}") from exc
            labels[parcel_id] = validate_label(row[1].strip())
    return labels


def write_labels(path: str | Path, labels: dict[int, str]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_id", "label"])
        for parcel_id in sorted(labels):
            writer.writerow([parcel_id, labels[parcel_id]])


def build_parcel_records(
    parcel_map: ParcelMap, labels: dict[int, str] | None = None
) -> list[ParcelRecord]:
    """One record per distinct nonzero id, with tight bbox and pixel count.

    Label-table entries whose id never appears in the map are reported at
    warning level and skipped.
    """
    ys, xs = np.nonzero(parcel_map.ids)
    records: list[ParcelRecord] = []
    if xs.size:
        vals = parcel_map.ids[ys, xs].astype(np.int64)
        top = int(vals.max()) + 1
        x_min = np.full(top, parcel_map.width, dtype=np.int64)
        x_max = np.full(top, -1, dtype=np.int64)
        y_min = np.full(top, parcel_map.height, dtype=np.int64)
        y_max = np.full(top, -1, dtype=np.int64)
        np.minimum.at(x_min, vals, xs)
        np.maximum.at(x_max, vals, xs)
        np.minimum.at(y_min, vals, ys)
        np.maximum.at(y_max, vals, ys)
        counts = np.bincount(vals, minlength=top)
        labels = labels or {}
        for parcel_id in np.nonzero(counts)[0]:
            pid = int(parcel_id)
            if pid == 0:
                continue
            records.append(
                ParcelRecord(
                    id=pid,
                    bbox=(int(x_min[pid]), int(x_max[pid]), int(y_min[pid]), int(y_max[pid])),
                    pixel_count=int(counts[pid]),
                    label=labels.get(pid),
                )
            )
    if labels:
        present = {r.id for r in records}
        for missing in sorted(set(labels) - present):
            log.warning("label table references parcel id %d absent from the map", missing)
    return records
