"""Random square-window sampling inside irregular parcels.

One sampling attempt works in three steps:
  1. draw a seed point uniformly inside the parcel's bounding box,
  2. pick the window width: with l = min(x_max - x_seed, y_max - y_seed),
     the width is w_min whenever l < w_min, else uniform in [w_min, l],
  3. accept the window at (x_seed, y_seed) iff it lies fully inside the
     raster and more than ``membership_threshold`` of its pixels carry the
     parcel's id.

``attempts`` counts draws, not accepted samples, so a parcel may legally
yield anywhere between 0 and ``attempts`` patches.  Windows that overflow
the raster (possible when w_min is forced near the image edge) are invalid
rather than clipped.

Each parcel is sampled from an independent RNG stream derived from
(config.seed, parcel id), so parallel and serial runs produce identical
sample lists.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geodata import ParcelMap, ParcelRecord, RasterGrid, write_raster

Seed = int | tuple[int, ...]


def _seed_key(seed: Seed, *extra: int) -> list[int]:
    parts = list(seed) if isinstance(seed, tuple) else [seed]
    return parts + list(extra)


@dataclass(frozen=True)
class SampleWindow:
    """Square window with top-left corner (x, y) and side w."""

    x: int
    y: int
    w: int

    def __post_init__(self):
        if self.w < 1:
            raise ValueError("window side must be at least 1")


@dataclass(frozen=True)
class SamplerConfig:
    w_min: int = 20
    attempts: int = 300
    membership_threshold: float = 0.80
    seed: Seed = 0

    def __post_init__(self):
        if self.w_min < 1:
            raise ValueError("w_min must be at least 1")
        if self.attempts < 1:
            raise ValueError("attempts must be at least 1")
        if not 0.0 < self.membership_threshold <= 1.0:
            raise ValueError("membership_threshold must be in (0, 1]")


@dataclass(frozen=True)
class PatchSample:
    """A pixel block cut from the raster, attributed to one parcel.

    ``pixels`` has shape (height, width, bands); square for random samples,
    possibly rectangular for bounding-box patches.  parcel_id 0 marks crops
    that belong to no parcel (augmentation crops).
    """

    parcel_id: int
    x: int
    y: int
    pixels: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def bands(self) -> int:
        return self.pixels.shape[2]


def draw_seed(bbox: tuple[int, int, int, int], rng: np.random.Generator) -> tuple[int, int]:
    """Uniform integer seed point inside the (inclusive) bounding box."""
    x_min, x_max, y_min, y_max = bbox
    x_seed = int(rng.integers(x_min, x_max + 1))
    y_seed = int(rng.integers(y_min, y_max + 1))
    return x_seed, y_seed


def window_width(
    bbox: tuple[int, int, int, int],
    seed: tuple[int, int],
    w_min: int,
    rng: np.random.Generator,
) -> int:
    """Window side for a seed point: w_min if l < w_min, else uniform in [w_min, l]."""
    _, x_max, _, y_max = bbox
    x_seed, y_seed = seed
    l = min(x_max - x_seed, y_max - y_seed)
    if l < w_min:
        return w_min
    return int(rng.integers(w_min, l + 1))


def membership_fraction(parcel_map: ParcelMap, parcel_id: int, window: SampleWindow) -> float:
    """Fraction of window pixels carrying ``parcel_id`` (0.0 if out of bounds)."""
    x, y, w = window.x, window.y, window.w
    if x < 0 or y < 0 or x + w > parcel_map.width or y + w > parcel_map.height:
        return 0.0
    block = parcel_map.ids[y : y + w, x : x + w]
    return int(np.count_nonzero(block == parcel_id)) / (w * w)


def is_valid_window(
    parcel_map: ParcelMap, parcel_id: int, window: SampleWindow, threshold: float
) -> bool:
    """True iff the window is fully in bounds and its membership exceeds threshold."""
    x, y, w = window.x, window.y, window.w
    if x < 0 or y < 0 or x + w > parcel_map.width or y + w > parcel_map.height:
        return False
    return membership_fraction(parcel_map, parcel_id, window) > threshold


def sample_parcel(
    raster: RasterGrid,
    parcel_map: ParcelMap,
    record: ParcelRecord,
    config: SamplerConfig,
) -> list[PatchSample]:
    """Run ``config.attempts`` draws for one parcel and return the valid patches.

    Draws are batched (all seeds, then all widths) from the parcel's RNG
    stream; each attempt still follows the seed -> width -> validity order
    and the per-attempt distributions of the scalar operations.
    """
    rng = np.random.default_rng(_seed_key(config.seed, record.id))
    x_min, x_max, y_min, y_max = record.bbox
    n = config.attempts
    w_min = config.w_min

    xs = rng.integers(x_min, x_max + 1, size=n)
    ys = rng.integers(y_min, y_max + 1, size=n)
    l = np.minimum(x_max - xs, y_max - ys)
    # one width draw per attempt; the interval collapses to w_min when l < w_min
    ws = rng.integers(w_min, np.maximum(l, w_min) + 1)

    in_bounds = (xs + ws <= parcel_map.width) & (ys + ws <= parcel_map.height)

    # integral image of the parcel mask over the reachable region only
    max_w = int(ws.max())
    rx0, ry0 = x_min, y_min
    rx1 = min(parcel_map.width, x_max + max_w)
    ry1 = min(parcel_map.height, y_max + max_w)
    mask = (parcel_map.ids[ry0:ry1, rx0:rx1] == record.id).astype(np.int64)
    integral = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    integral[1:, 1:] = mask.cumsum(axis=0).cumsum(axis=1)

    samples: list[PatchSample] = []
    idx = np.nonzero(in_bounds)[0]
    lx = xs[idx] - rx0
    ly = ys[idx] - ry0
    lw = ws[idx]
    counts = (
        integral[ly + lw, lx + lw]
        - integral[ly, lx + lw]
        - integral[ly + lw, lx]
        + integral[ly, lx]
    )
    valid = counts / (lw * lw) > config.membership_threshold
    for i, x, y, w in zip(idx[valid], lx[valid] + rx0, ly[valid] + ry0, lw[valid]):
        samples.append(
            PatchSample(
                parcel_id=record.id,
                x=int(x),
                y=int(y),
                pixels=raster.pixels[y : y + w, x : x + w].copy(),
            )
        )
    return samples


def rect_patch(raster: RasterGrid, record: ParcelRecord) -> PatchSample:
    """Axis-aligned bounding-box crop of the parcel (not square, not filtered)."""
    x_min, x_max, y_min, y_max = record.bbox
    return PatchSample(
        parcel_id=record.id,
        x=x_min,
        y=y_min,
        pixels=raster.pixels[y_min : y_max + 1, x_min : x_max + 1].copy(),
    )


def multiscale_crops(
    image: RasterGrid,
    count: int,
    scale_lo: float = 0.5,
    scale_hi: float = 1.0,
    rng: np.random.Generator | None = None,
) -> list[PatchSample]:
    """Random square crops with side = round(s * min(width, height)), s ~ U[lo, hi]."""
    if scale_lo <= 0.0:
        raise ValueError("scale_lo must be positive")
    if scale_hi > 1.0:
        raise ValueError("scale_hi must not exceed 1.0")
    if scale_lo > scale_hi:
        raise ValueError("scale_lo must not exceed scale_hi")
    if image.width < 2 or image.height < 2:
        raise ValueError("image must be at least 2x2")
    rng = rng if rng is not None else np.random.default_rng()

    base = min(image.width, image.height)
    crops: list[PatchSample] = []
    for s in rng.uniform(scale_lo, scale_hi, size=count):
        side = max(1, int(np.rint(s * base)))
        x = int(rng.integers(0, image.width - side + 1))
        y = int(rng.integers(0, image.height - side + 1))
        crops.append(
            PatchSample(parcel_id=0, x=x, y=y, pixels=image.pixels[y : y + side, x : x + side].copy())
        )
    return crops


def export_patches(samples: list[PatchSample], out_dir: str | Path) -> Path:
    """Write one PNG per square sample plus a ``parcel_id,x,y,w,path`` manifest CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_id", "x", "y", "w", "path"])
        for i, sample in enumerate(samples):
            if sample.width != sample.height:
                raise ValueError("patch export is defined for square samples only")
            name = f"patch_{i:06d}.png"
            write_raster(out_dir / name, RasterGrid.from_array(sample.pixels))
            writer.writerow([sample.parcel_id, sample.x, sample.y, sample.width, name])
    return manifest
