"""Connected components and region gating against independent oracles."""

import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from changeqa.raster import DiffMask, SemanticMask, diff_mask
from changeqa.regions import (
    RegionThresholds,
    connected_components,
    extract_candidates,
    region_stats,
)
from conftest import make_mask

# ---------------------------------------------------------------------------
# Oracles (written before the implementations they check)
# ---------------------------------------------------------------------------


def flood_fill_components(bits: np.ndarray, connectivity: int) -> list[list[tuple[int, int]]]:
    """Recursive flood fill; the textbook reference implementation."""
    bits = np.asarray(bits, dtype=bool)
    height, width = bits.shape
    seen = np.zeros_like(bits)
    if connectivity == 4:
        steps = ((0, -1), (-1, 0), (1, 0), (0, 1))
    else:
        steps = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))

    def fill(x: int, y: int, acc: list[tuple[int, int]]) -> None:
        seen[y, x] = True
        acc.append((x, y))
        for dx, dy in steps:
            nx, ny = x + dx, y + dy
            if 0 <= nx < width and 0 <= ny < height and bits[ny, nx] and not seen[ny, nx]:
                fill(nx, ny, acc)

    components = []
    for y in range(height):
        for x in range(width):
            if bits[y, x] and not seen[y, x]:
                acc: list[tuple[int, int]] = []
                fill(x, y, acc)
                acc.sort(key=lambda p: (p[1], p[0]))
                components.append(acc)
    return components


def gate_oracle(
    before: SemanticMask, after: SemanticMask, diff: DiffMask, th: RegionThresholds, connectivity: int
):
    """Exhaustive per-region application of the three gate predicates."""
    survivors = []
    for class_id in range(before.num_classes):
        support = (before.labels == class_id) | (after.labels == class_id)
        for pixels in flood_fill_components(support, connectivity):
            if len(pixels) < th.min_size_for(class_id):
                continue
            stats = region_stats(pixels, class_id, before, after, diff)
            if stats.changed_ratio < th.changed_for(class_id):
                continue
            if th.iou_direction == "reject_below" and stats.iou < th.iou_threshold:
                continue
            if th.iou_direction == "reject_above" and stats.iou > th.iou_threshold:
                continue
            survivors.append(stats)
    return survivors


def random_mask_pair(rng: np.random.Generator, size: int = 12, num_classes: int = 4):
    before = SemanticMask(rng.integers(0, num_classes, size=(size, size), dtype=np.uint8), num_classes)
    after_labels = before.labels.copy()
    # perturb a random block so pairs have correlated structure
    x0, y0 = rng.integers(0, size - 3, size=2)
    w, h = rng.integers(2, 4, size=2)
    after_labels[y0 : y0 + h, x0 : x0 + w] = rng.integers(0, num_classes)
    after = SemanticMask(after_labels, num_classes)
    return before, after


# ---------------------------------------------------------------------------
# connected_components
# ---------------------------------------------------------------------------


class TestConnectedComponents:
    def test_all_ones_single_component(self):
        comps = connected_components(np.ones((3, 3), dtype=bool), connectivity=4)
        assert len(comps) == 1
        assert len(comps[0]) == 9

    def test_diagonal_pixels_split_under_4_join_under_8(self):
        bits = np.zeros((3, 3), dtype=bool)
        bits[0, 0] = True
        bits[1, 1] = True
        assert len(connected_components(bits, connectivity=4)) == 2
        assert len(connected_components(bits, connectivity=8)) == 1

    def test_empty_raster_yields_empty_list(self):
        assert connected_components(np.zeros((4, 4), dtype=bool), 8) == []

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_flood_fill_oracle_on_random_rasters(self, connectivity):
        rng = np.random.default_rng(21)
        sys.setrecursionlimit(10_000)
        for _ in range(100):
            bits = rng.random((16, 16)) < 0.45
            assert connected_components(bits, connectivity) == flood_fill_components(
                bits, connectivity
            )

    @given(
        bits=arrays(dtype=bool, shape=st.tuples(st.integers(1, 10), st.integers(1, 10))),
        connectivity=st.sampled_from([4, 8]),
    )
    @settings(max_examples=60)
    def test_partition_property(self, bits, connectivity):
        comps = connected_components(bits, connectivity)
        all_pixels = [p for comp in comps for p in comp]
        # disjoint and exhaustive over the set pixels
        assert len(all_pixels) == len(set(all_pixels))
        expected = {(int(x), int(y)) for y, x in np.argwhere(bits)}
        assert set(all_pixels) == expected


# ---------------------------------------------------------------------------
# region_stats
# ---------------------------------------------------------------------------


class TestRegionStats:
    def test_identical_support_gives_iou_one(self):
        before = make_mask([[1, 1], [0, 0]], num_classes=2)
        diff = diff_mask(before, before)
        stats = region_stats([(0, 0), (1, 0)], 1, before, before, diff)
        assert stats.iou == 1.0
        assert stats.changed_ratio == 0.0

    def test_appearing_class_gives_iou_zero_ratio_one(self):
        before = make_mask([[0, 0], [0, 0]], num_classes=2)
        after = make_mask([[1, 1], [0, 0]], num_classes=2)
        diff = diff_mask(before, after)
        stats = region_stats([(0, 0), (1, 0)], 1, before, after, diff)
        assert stats.iou == 0.0
        assert stats.changed_ratio == 1.0

    def test_hand_counted_fixture_quarter_iou(self):
        # before has class 1 on the first 7 raster-order cells, after on
        # cells 4..11: intersection 3, union 12, so iou = 0.25; the 9
        # symmetric-difference cells are the changed ones: ratio 9/12.
        before_labels = np.zeros(16, dtype=np.uint8)
        before_labels[0:7] = 1
        after_labels = np.zeros(16, dtype=np.uint8)
        after_labels[4:12] = 1
        before = make_mask(before_labels.reshape(4, 4), num_classes=2)
        after = make_mask(after_labels.reshape(4, 4), num_classes=2)
        diff = diff_mask(before, after)
        pixels = [(i % 4, i // 4) for i in range(12)]
        stats = region_stats(pixels, 1, before, after, diff)
        assert stats.iou == pytest.approx(3 / 12)
        assert stats.changed_ratio == pytest.approx(9 / 12)
        assert (stats.bbox.x0, stats.bbox.y0, stats.bbox.w, stats.bbox.h) == (0, 0, 4, 3)

    def test_empty_region_rejected(self):
        m = make_mask([[0]], num_classes=1)
        with pytest.raises(ValueError):
            region_stats([], 0, m, m, diff_mask(m, m))


# ---------------------------------------------------------------------------
# extract_candidates
# ---------------------------------------------------------------------------


class TestExtractCandidates:
    def test_size_gate(self):
        before = make_mask(np.zeros((4, 4), dtype=np.uint8), num_classes=2)
        after_labels = np.zeros((4, 4), dtype=np.uint8)
        after_labels[0, 0:2] = 1  # 2-pixel region
        after = make_mask(after_labels, num_classes=2)
        th = RegionThresholds(min_size=3, changed_threshold=0.0, iou_threshold=1.0)
        assert extract_candidates(before, after, diff_mask(before, after), th) == []

    def test_iou_gate_direction(self):
        # iou = 2/4 is impossible to hit 0.10 exactly; build iou = 0.10 via
        # intersection 1 / union 10
        before_labels = np.zeros(16, dtype=np.uint8)
        before_labels[0:6] = 1
        after_labels = np.zeros(16, dtype=np.uint8)
        after_labels[5:10] = 1
        before = make_mask(before_labels.reshape(4, 4), num_classes=2)
        after = make_mask(after_labels.reshape(4, 4), num_classes=2)
        diff = diff_mask(before, after)
        common = dict(min_size=1, changed_threshold=0.0, iou_threshold=0.18)
        rejected = extract_candidates(
            before, after, diff, RegionThresholds(iou_direction="reject_below", **common)
        )
        retained = extract_candidates(
            before, after, diff, RegionThresholds(iou_direction="reject_above", **common)
        )
        assert [r.class_id for r in rejected if r.class_id == 1] == []
        kept = [r for r in retained if r.class_id == 1]
        assert len(kept) == 1
        assert kept[0].iou == pytest.approx(0.10)

    def test_matches_predicate_oracle_on_synthetic_scenes(self):
        rng = np.random.default_rng(33)
        th = RegionThresholds(
            min_size=3, changed_threshold=0.2, iou_threshold=0.18, iou_direction="reject_above"
        )
        for _ in range(60):
            before, after = random_mask_pair(rng)
            diff = diff_mask(before, after)
            got = extract_candidates(before, after, diff, th, connectivity=8)
            expected = gate_oracle(before, after, diff, th, connectivity=8)
            assert [(r.class_id, r.pixels) for r in got] == [
                (r.class_id, r.pixels) for r in expected
            ]
            for g, e in zip(got, expected):
                assert g.iou == pytest.approx(e.iou)
                assert g.changed_ratio == pytest.approx(e.changed_ratio)

    def test_monotone_in_thresholds(self):
        rng = np.random.default_rng(7)
        before, after = random_mask_pair(rng)
        diff = diff_mask(before, after)

        def survivor_keys(th):
            return {(r.class_id, r.pixels) for r in extract_candidates(before, after, diff, th)}

        base = RegionThresholds(min_size=2, changed_threshold=0.1, iou_threshold=0.5)
        tighter_size = RegionThresholds(min_size=5, changed_threshold=0.1, iou_threshold=0.5)
        tighter_changed = RegionThresholds(min_size=2, changed_threshold=0.4, iou_threshold=0.5)
        assert survivor_keys(tighter_size) <= survivor_keys(base)
        assert survivor_keys(tighter_changed) <= survivor_keys(base)

    def test_deterministic_ordering(self):
        rng = np.random.default_rng(13)
        before, after = random_mask_pair(rng)
        diff = diff_mask(before, after)
        th = RegionThresholds(
            min_size=1, changed_threshold=0.0, iou_threshold=1.0, iou_direction="reject_above"
        )
        first = extract_candidates(before, after, diff, th)
        second = extract_candidates(before, after, diff, th)
        assert [(r.class_id, r.pixels) for r in first] == [(r.class_id, r.pixels) for r in second]
        # ordered by class, then row-major first pixel
        keys = [(r.class_id, r.pixels[0][1], r.pixels[0][0]) for r in first]
        assert keys == sorted(keys)

    def test_per_class_override(self):
        before = make_mask(np.zeros((6, 6), dtype=np.uint8), num_classes=3)
        after_labels = np.zeros((6, 6), dtype=np.uint8)
        after_labels[0:2, 0:2] = 1  # 4 px of class 1
        after_labels[4:6, 4:6] = 2  # 4 px of class 2
        after = make_mask(after_labels, num_classes=3)
        th = RegionThresholds(
            min_size=1,
            changed_threshold=0.0,
            iou_threshold=1.0,
            iou_direction="reject_above",
            min_size_per_class={2: 5},
        )
        got = extract_candidates(before, after, diff_mask(before, after), th)
        assert {r.class_id for r in got if r.class_id in (1, 2)} == {1}
