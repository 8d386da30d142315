"""Raster containers, mask algebra, and crop extraction.

Coordinates use a top-left origin with y growing downward; arrays are
row-major, indexed ``[y, x]``. Containers are frozen after construction and
every operation here is pure, so values can be shared across threads.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyRegionError, FormatError, SchemaError, ShapeError

__all__ = [
    "SemanticMask",
    "DiffMask",
    "RgbImage",
    "PixelRect",
    "ClassMap",
    "diff_mask",
    "crop",
    "load_mask_png",
    "save_mask_png",
    "load_image_png",
    "save_image_png",
    "encode_image_png",
    "load_class_map",
    "save_class_map",
]


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SemanticMask:
    """Per-pixel class-index raster for one timestamp.

    ``labels`` has shape (height, width); every value lies in
    ``0..num_classes-1``.
    """

    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeError(f"mask labels must be 2-D, got shape {labels.shape}")
        if labels.size == 0:
            raise ShapeError("mask must have at least one pixel")
        if not np.issubdtype(labels.dtype, np.integer):
            labels = labels.astype(np.int64)
        if self.num_classes < 1:
            raise SchemaError(f"num_classes must be >= 1, got {self.num_classes}")
        lo, hi = int(labels.min()), int(labels.max())
        if lo < 0 or hi >= self.num_classes:
            raise SchemaError(
                f"label values must lie in 0..{self.num_classes - 1}, found range [{lo}, {hi}]"
            )
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True, eq=False)
class DiffMask:
    """Binary raster marking pixels whose class labels differ across time."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ShapeError(f"diff bits must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit RGB raster, shape (height, width, 3), row-major interleaved."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeError(f"image must have shape (h, w, 3), got {pixels.shape}")
        if pixels.size == 0:
            raise ShapeError("image must have at least one pixel")
        if pixels.dtype != np.uint8:
            if np.issubdtype(pixels.dtype, np.integer) and pixels.min() >= 0 and pixels.max() <= 255:
                pixels = pixels.astype(np.uint8)
            else:
                raise FormatError(f"image samples must be 8-bit, got dtype {pixels.dtype}")
        object.__setattr__(self, "pixels", _freeze(np.ascontiguousarray(pixels)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        """Canonical byte serialization: little-endian (w, h) header + raw samples.

        Used as the deterministic content key for embedding caches and mocks.
        """
        return struct.pack("<II", self.width, self.height) + self.pixels.tobytes()


@dataclass(frozen=True)
class PixelRect:
    """Axis-aligned pixel rectangle: top-left corner (x0, y0), extent (w, h)."""

    x0: int
    y0: int
    w: int
    h: int

    def area(self) -> int:
        return self.w * self.h

    def expanded(self, margin: int) -> "PixelRect":
        return PixelRect(self.x0 - margin, self.y0 - margin, self.w + 2 * margin, self.h + 2 * margin)

    def clamped(self, width: int, height: int) -> "PixelRect":
        x0 = max(0, self.x0)
        y0 = max(0, self.y0)
        x1 = min(width, self.x0 + self.w)
        y1 = min(height, self.y0 + self.h)
        return PixelRect(x0, y0, max(0, x1 - x0), max(0, y1 - y0))

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "w": self.w, "h": self.h}


@dataclass(frozen=True)
class ClassMap:
    """Ordered class names; index in the tuple is the class index."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names:
            raise SchemaError("class map must declare at least one class")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("class names must be unique")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def name(self, index: int) -> str:
        return self.names[index]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown class name {name!r}") from None


def diff_mask(before: SemanticMask, after: SemanticMask) -> DiffMask:
    """Pointwise inequality indicator between two co-dimensional masks.

    Symmetric under argument swap. Raises ShapeError on dimension mismatch
    and SchemaError when the masks declare different class counts.
    """
    if (before.height, before.width) != (after.height, after.width):
        raise ShapeError(
            f"mask dimensions differ: {before.width}x{before.height} vs {after.width}x{after.height}"
        )
    if before.num_classes != after.num_classes:
        raise SchemaError(
            f"masks declare different class counts: {before.num_classes} vs {after.num_classes}"
        )
    return DiffMask(before.labels != after.labels)


def crop(image: RgbImage, rect: PixelRect, margin: int = 0) -> RgbImage:
    """Copy of ``rect`` expanded by ``margin`` pixels and clamped to the image.

    Raises EmptyRegionError when the clamped window has zero area.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    window = rect.expanded(margin).clamped(image.width, image.height)
    if window.area() == 0:
        raise EmptyRegionError(f"crop window {rect} (margin {margin}) has zero area")
    view = image.pixels[window.y0 : window.y0 + window.h, window.x0 : window.x0 + window.w]
    return RgbImage(view.copy())


# ---------------------------------------------------------------------------
# PNG and class-map I/O
# ---------------------------------------------------------------------------


def load_mask_png(path: str | Path, num_classes: int) -> SemanticMask:
    """Decode a single-channel 8-bit PNG whose pixel values are class indices."""
    with Image.open(path) as img:
        if img.format != "PNG":
            raise FormatError(f"{path}: expected PNG, got {img.format}")
        if img.mode != "L":
            raise FormatError(f"{path}: masks must be single-channel 8-bit (mode L), got mode {img.mode}")
        labels = np.asarray(img, dtype=np.uint8)
    if labels.size and int(labels.max()) >= num_classes:
        raise SchemaError(
            f"{path}: pixel value {int(labels.max())} >= declared class count {num_classes}"
        )
    return SemanticMask(labels, num_classes)


def save_mask_png(mask: SemanticMask, path: str | Path) -> None:
    if mask.num_classes > 256:
        raise SchemaError("8-bit mask PNG cannot encode more than 256 classes")
    Image.fromarray(mask.labels.astype(np.uint8), mode="L").save(path, format="PNG")


def load_image_png(path: str | Path) -> RgbImage:
    """Decode an 8-bit 3-channel PNG."""
    with Image.open(path) as img:
        if img.format != "PNG":
            raise FormatError(f"{path}: expected PNG, got {img.format}")
        if img.mode != "RGB":
            raise FormatError(f"{path}: images must be 8-bit RGB, got mode {img.mode}")
        pixels = np.asarray(img, dtype=np.uint8)
    return RgbImage(pixels)


def save_image_png(image: RgbImage, path: str | Path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


def encode_image_png(image: RgbImage) -> bytes:
    """PNG bytes for wire payloads (deterministic for identical pixels)."""
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_class_map(path: str | Path) -> ClassMap:
    """Parse the sidecar class-map file: one ``index<TAB>name`` line per class.

    Indices must be contiguous from 0.
    """
    entries: list[tuple[int, str]] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'index<TAB>name', got {line!r}")
        try:
            index = int(parts[0])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: class index {parts[0]!r} is not an integer") from None
        entries.append((index, parts[1]))
    if not entries:
        raise SchemaError(f"{path}: class map is empty")
    entries.sort(key=lambda item: item[0])
    indices = [index for index, _ in entries]
    if indices != list(range(len(entries))):
        raise SchemaError(f"{path}: class indices must be contiguous from 0, got {indices}")
    return ClassMap(tuple(name for _, name in entries))


def save_class_map(class_map: ClassMap, path: str | Path) -> None:
    lines = [f"{i}\t{name}" for i, name in enumerate(class_map.names)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
