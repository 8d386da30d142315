"""Per-class connected-component extraction and threshold gating over mask pairs.

The gates work per region: a minimum pixel count, a minimum changed-pixel
ratio, and a temporal-IoU test whose direction is configurable because low
temporal IoU can indicate either noise or a genuine appearance/disappearance,
depending on how the thresholds were calibrated.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .raster import DiffMask, PixelRect, SemanticMask

__all__ = [
    "ChangeRegion",
    "RegionThresholds",
    "connected_components",
    "region_stats",
    "extract_candidates",
]

_STEPS_4 = ((0, -1), (-1, 0), (1, 0), (0, 1))
_STEPS_8 = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))


@dataclass(frozen=True, eq=False)
class ChangeRegion:
    """One connected component of a class's temporal union support.

    ``pixels`` are (x, y) tuples sorted in row-major order. ``iou`` is the
    temporal overlap of the class inside the region and ``changed_ratio`` the
    fraction of region pixels flagged by the difference mask.
    """

    class_id: int
    pixels: tuple[tuple[int, int], ...]
    bbox: PixelRect
    iou: float
    changed_ratio: float

    def __post_init__(self) -> None:
        if not self.pixels:
            raise ValueError("a change region must contain at least one pixel")
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou must lie in [0, 1], got {self.iou}")
        if not 0.0 <= self.changed_ratio <= 1.0:
            raise ValueError(f"changed_ratio must lie in [0, 1], got {self.changed_ratio}")

    @property
    def size(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class RegionThresholds:
    """Per-class gates applied to extracted regions.

    ``min_size_per_class`` / ``changed_per_class`` override the defaults for
    individual class indices. ``iou_direction`` selects which side of
    ``iou_threshold`` is rejected: ``reject_below`` keeps regions with
    iou >= threshold, ``reject_above`` keeps regions with iou <= threshold.
    """

    min_size: int = 50
    changed_threshold: float = 0.3
    iou_threshold: float = 0.18
    iou_direction: str = "reject_below"
    min_size_per_class: Mapping[int, int] = field(default_factory=dict)
    changed_per_class: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.min_size < 1:
            raise ValueError(f"min_size must be >= 1, got {self.min_size}")
        for name, value in (("changed_threshold", self.changed_threshold), ("iou_threshold", self.iou_threshold)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.iou_direction not in ("reject_below", "reject_above"):
            raise ValueError(f"iou_direction must be reject_below or reject_above, got {self.iou_direction!r}")
        for k, size in self.min_size_per_class.items():
            if size < 1:
                raise ValueError(f"min_size override for class {k} must be >= 1, got {size}")
        for k, ratio in self.changed_per_class.items():
            if not 0.0 <= ratio <= 1.0:
                raise ValueError(f"changed override for class {k} must lie in [0, 1], got {ratio}")

    def min_size_for(self, class_id: int) -> int:
        return self.min_size_per_class.get(class_id, self.min_size)

    def changed_for(self, class_id: int) -> float:
        return self.changed_per_class.get(class_id, self.changed_threshold)

    def iou_passes(self, iou: float) -> bool:
        if self.iou_direction == "reject_below":
            return iou >= self.iou_threshold
        return iou <= self.iou_threshold


def connected_components(bits: np.ndarray, connectivity: int = 8) -> list[list[tuple[int, int]]]:
    """Partition the set pixels of a binary raster into connected components.

    Components are returned in order of their first pixel in a row-major scan;
    pixels within a component are sorted row-major. An empty raster yields an
    empty list.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim != 2:
        raise ValueError(f"binary raster must be 2-D, got shape {bits.shape}")
    steps = _STEPS_4 if connectivity == 4 else _STEPS_8
    height, width = bits.shape
    visited = np.zeros_like(bits)
    components: list[list[tuple[int, int]]] = []
    # np.argwhere scans in row-major order, which fixes the component order.
    for y, x in np.argwhere(bits):
        if visited[y, x]:
            continue
        queue: deque[tuple[int, int]] = deque()
        queue.append((int(x), int(y)))
        visited[y, x] = True
        pixels: list[tuple[int, int]] = []
        while queue:
            cx, cy = queue.popleft()
            pixels.append((cx, cy))
            for dx, dy in steps:
                nx, ny = cx + dx, cy + dy
                if 0 <= nx < width and 0 <= ny < height and bits[ny, nx] and not visited[ny, nx]:
                    visited[ny, nx] = True
                    queue.append((nx, ny))
        pixels.sort(key=lambda p: (p[1], p[0]))
        components.append(pixels)
    return components


def region_stats(
    pixels: list[tuple[int, int]] | tuple[tuple[int, int], ...],
    class_id: int,
    before: SemanticMask,
    after: SemanticMask,
    diff: DiffMask,
) -> ChangeRegion:
    """Temporal IoU, changed-pixel ratio, and bounding box for one region.

    iou = |{p in C: before=k and after=k}| / |{p in C: before=k or after=k}|,
    changed_ratio = |{p in C: D=1}| / |C|.
    """
    if not pixels:
        raise ValueError("region_stats requires a nonempty pixel set")
    xs = np.fromiter((p[0] for p in pixels), dtype=np.intp, count=len(pixels))
    ys = np.fromiter((p[1] for p in pixels), dtype=np.intp, count=len(pixels))
    b = before.labels[ys, xs] == class_id
    a = after.labels[ys, xs] == class_id
    union = int(np.count_nonzero(b | a))
    inter = int(np.count_nonzero(b & a))
    iou = inter / union if union else 0.0
    changed = int(np.count_nonzero(diff.bits[ys, xs]))
    bbox = PixelRect(
        int(xs.min()),
        int(ys.min()),
        int(xs.max() - xs.min() + 1),
        int(ys.max() - ys.min() + 1),
    )
    ordered = tuple(sorted((int(x), int(y)) for x, y in zip(xs, ys)))
    ordered = tuple(sorted(ordered, key=lambda p: (p[1], p[0])))
    return ChangeRegion(
        class_id=class_id,
        pixels=ordered,
        bbox=bbox,
        iou=iou,
        changed_ratio=changed / len(pixels),
    )


def extract_candidates(
    before: SemanticMask,
    after: SemanticMask,
    diff: DiffMask,
    thresholds: RegionThresholds,
    connectivity: int = 8,
) -> list[ChangeRegion]:
    """Gate the per-class components of the temporal union support.

    For each class k the components of {before=k} | {after=k} are extracted;
    a region survives iff size >= min_size(k), changed_ratio >= changed(k),
    and the IoU test passes in the configured direction. Output is ordered by
    class ascending, then by first pixel in row-major order.
    """
    if (before.height, before.width) != (after.height, after.width):
        raise ValueError("masks must be co-dimensional")
    survivors: list[ChangeRegion] = []
    for class_id in range(before.num_classes):
        support = (before.labels == class_id) | (after.labels == class_id)
        if not support.any():
            continue
        for pixels in connected_components(support, connectivity):
            if len(pixels) < thresholds.min_size_for(class_id):
                continue
            region = region_stats(pixels, class_id, before, after, diff)
            if region.changed_ratio < thresholds.changed_for(class_id):
                continue
            if not thresholds.iou_passes(region.iou):
                continue
            survivors.append(region)
    return survivors
