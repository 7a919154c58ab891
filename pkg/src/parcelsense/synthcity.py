"""Synthetic scenes with exactly known word textures.

Every land-use class paints its parcels with a word texture; every word
owns one well-separated base color (plus bounded pixel noise), so the
native softmax labeler can recover words from colors and the pipeline is
tested rather than image recognition.

Two texture families:
  * CellTexture: the parcel is tiled with cell_size x cell_size cells and
    each cell's word is drawn iid from the class mixture.  cell_size 1
    gives per-pixel mixing; large cells give blob mosaics.
  * StripeTexture: deterministic diagonal two-word bands in global
    coordinates; every parcel of the class gets the exact same word share
    with zero sampling variance.

The generator keeps the painted per-pixel word map, which powers the
oracle labeler (majority ground-truth word of a patch) and the exact
per-parcel word fractions returned with the scene.
"""

from __future__ import annotations

import colorsys
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataFormatError
from .evaluation import Scene
from .geodata import (
    LAND_USE_CLASSES,
    ParcelMap,
    RasterGrid,
    build_parcel_records,
    write_labels,
    write_parcel_map,
    write_raster,
)
from .sampler import PatchSample


@dataclass(frozen=True)
class CellTexture:
    mixture: tuple[tuple[str, float], ...]
    cell_size: int = 1

    def __post_init__(self):
        total = sum(w for _, w in self.mixture)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {total}, expected 1")
        if self.cell_size < 1:
            raise ValueError("cell_size must be at least 1")

    def words(self) -> tuple[str, ...]:
        return tuple(w for w, _ in self.mixture)

    def shares(self) -> dict[str, float]:
        return dict(self.mixture)

    def paint(self, x0, y0, height, width, word_index, rng):
        c = self.cell_size
        rows = -(-height // c)
        cols = -(-width // c)
        ids = np.asarray([word_index[w] for w, _ in self.mixture])
        probs = np.asarray([p for _, p in self.mixture])
        cells = rng.choice(ids, size=(rows, cols), p=probs)
        return np.repeat(np.repeat(cells, c, axis=0), c, axis=1)[:height, :width]


@dataclass(frozen=True)
class StripeTexture:
    stripe_words: tuple[str, str]
    cell_size: int = 12
    on_cells: int = 5
    period: int = 8

    def __post_init__(self):
        if not 0 < self.on_cells < self.period:
            raise ValueError("on_cells must lie strictly between 0 and period")
        if self.cell_size < 1:
            raise ValueError("cell_size must be at least 1")

    def words(self) -> tuple[str, ...]:
        return self.stripe_words

    def shares(self) -> dict[str, float]:
        on = self.on_cells / self.period
        return {self.stripe_words[0]: on, self.stripe_words[1]: 1.0 - on}

    def paint(self, x0, y0, height, width, word_index, rng):
        ys = (y0 + np.arange(height))[:, None] // self.cell_size
        xs = (x0 + np.arange(width))[None, :] // self.cell_size
        on = (ys + xs) % self.period < self.on_cells
        a, b = (word_index[w] for w in self.stripe_words)
        return np.where(on, a, b)


Texture = CellTexture | StripeTexture


@dataclass(frozen=True)
class ParcelShape:
    """Axis-aligned rectangle, optionally with one corner cut away (L-shape).

    Thin strips are rectangles with one small side.  cut_corner is one of
    ne/nw/se/sw in image orientation (n = small y).
    """

    id: int
    label: str
    x: int
    y: int
    w: int
    h: int
    cut_w: int = 0
    cut_h: int = 0
    cut_corner: str = "se"

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("shape must be at least 1x1")
        if not 0 <= self.cut_w < self.w or not 0 <= self.cut_h < self.h:
            raise ValueError("cut must be strictly smaller than the shape")
        if self.cut_corner not in ("ne", "nw", "se", "sw"):
            raise ValueError("cut_corner must be ne, nw, se or sw")

    def mask(self) -> np.ndarray:
        m = np.ones((self.h, self.w), dtype=bool)
        if self.cut_w and self.cut_h:
            ys = slice(0, self.cut_h) if self.cut_corner in ("ne", "nw") else slice(self.h - self.cut_h, self.h)
            xs = slice(0, self.cut_w) if self.cut_corner in ("nw", "sw") else slice(self.w - self.cut_w, self.w)
            m[ys, xs] = False
        return m


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    parcels: tuple[ParcelShape, ...]
    textures: Mapping[str, Texture]
    background: Texture
    noise: int = 8
    seed: int = 0

    def __post_init__(self):
        for shape in self.parcels:
            if shape.x < 0 or shape.y < 0 or shape.x + shape.w > self.width or shape.y + shape.h > self.height:
                raise ValueError(f"parcel {shape.id} extends outside the canvas")
            if shape.label not in self.textures:
                raise ValueError(f"parcel {shape.id} has no texture for label {shape.label!r}")


@dataclass(frozen=True)
class GeneratedScene:
    spec: SceneSpec
    raster: RasterGrid
    parcel_map: ParcelMap
    records: tuple
    vocabulary: tuple[str, ...]
    word_map: np.ndarray = field(repr=False)
    word_fractions: dict[int, np.ndarray] = field(repr=False)
    word_class_map: dict[str, str]
    word_colors: dict[str, tuple[int, int, int]]

    @property
    def scene(self) -> Scene:
        return Scene(
            raster=self.raster,
            parcel_map=self.parcel_map,
            records=self.records,
            word_class_map=self.word_class_map,
        )


def word_palette(vocabulary: Sequence[str]) -> dict[str, tuple[int, int, int]]:
    """Deterministic well-separated base colors, one per word."""
    colors = {}
    n = len(vocabulary)
    for i, word in enumerate(sorted(vocabulary)):
        hue = i / max(n, 1)
        value = 0.95 if i % 2 == 0 else 0.55
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, value)
        colors[word] = (int(r * 223) + 16, int(g * 223) + 16, int(b * 223) + 16)
    return colors


def _class_word_map(spec: SceneSpec, vocabulary: Sequence[str]) -> dict[str, str]:
    """word -> land-use class of heaviest usage; leftovers go to the first class."""
    present = tuple(c for c in LAND_USE_CLASSES if c in spec.textures) or tuple(sorted(spec.textures))
    usage: dict[str, dict[str, float]] = {w: {} for w in vocabulary}
    for cls in present:
        for word, share in spec.textures[cls].shares().items():
            usage[word][cls] = usage[word].get(cls, 0.0) + share
    mapping = {}
    for word in vocabulary:
        by_class = usage[word]
        if by_class:
            mapping[word] = max(present, key=lambda c: (by_class.get(c, -1.0), -present.index(c)))
        else:
            mapping[word] = present[0]
    return mapping


def generate_scene(spec: SceneSpec) -> GeneratedScene:
    """Paint the scene; bit-identical output for identical (spec, seed)."""
    words = set(spec.background.words())
    for texture in spec.textures.values():
        words.update(texture.words())
    vocabulary = tuple(sorted(words))
    word_index = {w: i for i, w in enumerate(vocabulary)}
    rng = np.random.default_rng(spec.seed)

    ids = np.zeros((spec.height, spec.width), dtype=np.uint16)
    word_map = spec.background.paint(0, 0, spec.height, spec.width, word_index, rng).astype(np.int16)

    labels: dict[int, str] = {}
    for shape in spec.parcels:
        mask = shape.mask()
        region = ids[shape.y : shape.y + shape.h, shape.x : shape.x + shape.w]
        if (region[mask] != 0).any():
            raise ValueError(f"parcel {shape.id} overlaps an earlier parcel")
        if shape.id in labels:
            raise ValueError(f"duplicate parcel id {shape.id}")
        region[mask] = shape.id
        texture = spec.textures[shape.label]
        block = texture.paint(shape.x, shape.y, shape.h, shape.w, word_index, rng)
        target = word_map[shape.y : shape.y + shape.h, shape.x : shape.x + shape.w]
        target[mask] = block[mask]
        labels[shape.id] = shape.label

    colors = word_palette(vocabulary)
    lut = np.asarray([colors[w] for w in vocabulary], dtype=np.int16)
    pixels = lut[word_map]
    if spec.noise:
        pixels = pixels + rng.integers(-spec.noise, spec.noise + 1, size=pixels.shape, dtype=np.int16)
    raster = RasterGrid.from_array(np.clip(pixels, 0, 255).astype(np.uint8))
    parcel_map = ParcelMap.from_array(ids)
    records = tuple(build_parcel_records(parcel_map, labels))

    fractions = {}
    for record in records:
        x0, x1, y0, y1 = record.bbox
        block_ids = parcel_map.ids[y0 : y1 + 1, x0 : x1 + 1]
        block_words = word_map[y0 : y1 + 1, x0 : x1 + 1]
        counts = np.bincount(block_words[block_ids == record.id], minlength=len(vocabulary))
        fractions[record.id] = counts / counts.sum()

    return GeneratedScene(
        spec=spec,
        raster=raster,
        parcel_map=parcel_map,
        records=records,
        vocabulary=vocabulary,
        word_map=word_map,
        word_fractions=fractions,
        word_class_map=_class_word_map(spec, vocabulary),
        word_colors=colors,
    )


class OracleLabeler:
    """Labels a patch with the majority ground-truth word of its pixels."""

    def __init__(self, generated: GeneratedScene):
        self.vocabulary = generated.vocabulary
        self._word_map = generated.word_map

    def label_batch(self, patches: Sequence[PatchSample]) -> list[str]:
        out = []
        for p in patches:
            block = self._word_map[p.y : p.y + p.height, p.x : p.x + p.width]
            counts = np.bincount(block.ravel(), minlength=len(self.vocabulary))
            out.append(self.vocabulary[int(np.argmax(counts))])
        return out


def oracle_labeler(generated: GeneratedScene) -> OracleLabeler:
    return OracleLabeler(generated)


def export_scene(
    generated: GeneratedScene,
    out_dir: str | Path,
    patches_per_word: int = 12,
    patch_size: int = 64,
) -> Path:
    """Write the geodata file formats plus ground truth and a word-patch
    training set (one directory of noisy single-word images per word)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_raster(out_dir / "raster.png", generated.raster)
    write_parcel_map(out_dir / "parcels.png", generated.parcel_map)
    write_labels(out_dir / "labels.csv", {r.id: r.label for r in generated.records if r.label})

    with open(out_dir / "word_fractions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_id", *generated.vocabulary])
        for record in generated.records:
            row = generated.word_fractions[record.id]
            writer.writerow([record.id, *(f"{v:.15g}" for v in row)])

    with open(out_dir / "word_class_map.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "label"])
        for word in generated.vocabulary:
            writer.writerow([word, generated.word_class_map[word]])

    rng = np.random.default_rng([generated.spec.seed, 0xFACE])
    noise = generated.spec.noise
    for word in generated.vocabulary:
        word_dir = out_dir / "word_patches" / word
        word_dir.mkdir(parents=True, exist_ok=True)
        base = np.asarray(generated.word_colors[word], dtype=np.int16)
        for i in range(patches_per_word):
            img = np.full((patch_size, patch_size, 3), base, dtype=np.int16)
            if noise:
                img = img + rng.integers(-noise, noise + 1, size=img.shape, dtype=np.int16)
            write_raster(word_dir / f"{word}_{i:03d}.png", RasterGrid.from_array(np.clip(img, 0, 255).astype(np.uint8)))
    return out_dir


def load_word_class_map(path: str | Path) -> dict[str, str]:
    mapping = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["word", "label"]:
            raise DataFormatError(f"word map CSV must start with header 'word,label': {path}")
        for row in reader:
            if row:
                mapping[row[0]] = row[1].strip()
    return mapping


def default_benchmark(seed: int = 2024) -> SceneSpec:
    """Fixed 1024x1024 scene: 7 land-use classes, 144 parcels (>= 20 each)
    mixing bbox-filling rectangles, L-shapes and thin strips, including a
    5-pixel strip that yields zero valid samples at w_min = 20."""
    pitch, margin = 85, 4
    cols = rows = 12
    shapes = []
    # shape cycle tuned so bounding boxes of L-shapes are mostly foreign pixels
    kinds = ("fat", "l_se", "strip_v", "tall", "l_nw", "fat", "strip_h", "l_se")
    idx = 0
    for r in range(rows):
        for c in range(cols):
            x0 = margin + c * pitch
            y0 = margin + r * pitch
            label = LAND_USE_CLASSES[idx % 7]
            kind = kinds[idx % len(kinds)]
            pid = idx + 1
            if idx in (40, 90):  # unsampleable at w_min 20: 5-pixel strips
                shapes.append(ParcelShape(pid, label, x0 + 30, y0, 5, 76))
            elif kind == "fat":
                shapes.append(ParcelShape(pid, label, x0, y0, 72, 72))
            elif kind == "tall":
                shapes.append(ParcelShape(pid, label, x0 + 20, y0, 34, 76))
            elif kind == "strip_v":
                shapes.append(ParcelShape(pid, label, x0 + 28, y0, 18, 76))
            elif kind == "strip_h":
                shapes.append(ParcelShape(pid, label, x0, y0 + 28, 76, 18))
            elif kind == "l_se":
                shapes.append(ParcelShape(pid, label, x0, y0, 76, 76, cut_w=54, cut_h=54, cut_corner="se"))
            else:
                shapes.append(ParcelShape(pid, label, x0, y0, 76, 76, cut_w=54, cut_h=54, cut_corner="nw"))
            idx += 1

    textures: dict[str, Texture] = {
        "M": CellTexture(mixture=(("w0", 0.70), ("w7", 0.30)), cell_size=48),
        "I": CellTexture(mixture=(("w1", 0.70), ("w7", 0.30)), cell_size=48),
        "G": CellTexture(mixture=(("w2", 0.70), ("w8", 0.30)), cell_size=48),
        "C": CellTexture(mixture=(("w3", 0.70), ("w8", 0.30)), cell_size=48),
        # R and P share their dominant word: a plain vote cannot tell them apart
        "R": CellTexture(mixture=(("w4", 0.55), ("w5", 0.45)), cell_size=24),
        "P": CellTexture(mixture=(("w4", 0.55), ("w6", 0.45)), cell_size=24),
        "U": CellTexture(mixture=(("w9", 1.0),), cell_size=48),
    }
    background = CellTexture(mixture=(("bg", 1.0),), cell_size=32)
    return SceneSpec(
        width=1024,
        height=1024,
        parcels=tuple(shapes),
        textures=textures,
        background=background,
        noise=8,
        seed=seed,
    )


def sweep_benchmark(seed: int = 512) -> SceneSpec:
    """Thin-parcel-heavy scene for the w_min sensitivity sweep.

    Classes M (fine iid mixing) and I (deterministic stripes with the same
    small-window word share) collide through small windows and separate as
    windows grow; strips of graded widths stop being sampleable as w_min
    passes their width, so accuracy rises first and then falls.
    """
    shapes = []
    widths = (28, 34, 40, 46)
    pitch_y, pitch_x = 54, 170
    idx = 0
    for r in range(18):
        for c in range(6):
            label = LAND_USE_CLASSES[idx % 7]
            strip_w = widths[idx % len(widths)]
            x0 = 6 + c * pitch_x
            y0 = 6 + r * pitch_y + (50 - strip_w) // 2
            shapes.append(ParcelShape(idx + 1, label, x0, y0, 150, strip_w))
            idx += 1

    textures: dict[str, Texture] = {
        "M": CellTexture(mixture=(("s0", 0.53), ("s1", 0.47)), cell_size=1),
        "I": StripeTexture(stripe_words=("s0", "s1"), cell_size=8, on_cells=10, period=12),
        "G": CellTexture(mixture=(("s2", 0.53), ("s3", 0.47)), cell_size=1),
        "C": StripeTexture(stripe_words=("s2", "s3"), cell_size=8, on_cells=10, period=12),
        "R": CellTexture(mixture=(("s4", 1.0),), cell_size=1),
        "P": CellTexture(mixture=(("s5", 1.0),), cell_size=1),
        "U": CellTexture(mixture=(("s6", 1.0),), cell_size=1),
    }
    background = CellTexture(mixture=(("bg", 1.0),), cell_size=32)
    return SceneSpec(
        width=1024,
        height=1024,
        parcels=tuple(shapes),
        textures=textures,
        background=background,
        noise=8,
        seed=seed,
    )
