"""Shared fixtures: synthetic scenes, deterministic backends, tiny oracles."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from changeqa.config import PipelineConfig, config_from_mapping, parse_config_text
from changeqa.raster import ClassMap, RgbImage, SemanticMask, save_class_map, save_image_png, save_mask_png

CLASS_NAMES = ("background", "building", "tree", "water", "road")
PALETTE = np.array(
    [
        [120, 120, 120],  # background
        [180, 60, 60],  # building
        [60, 180, 60],  # tree
        [60, 60, 180],  # water
        [90, 90, 30],  # road
    ],
    dtype=np.int16,
)
PROMPT_TEMPLATE = "a satellite photo of a {name}"

FIXTURE_CONFIG_TEXT = """
seed = 7
jobs = 1
crop.margin = 4

regions.connectivity = 8
regions.min_size = 30
regions.changed_threshold = 0.3
regions.iou_threshold = 0.18
regions.iou_direction = reject_above

patch_filter.enabled = false

screen.k = 5
screen.tau_enc = 0.5
screen.tau_sim = 0.9
screen.prompt_template = a satellite photo of a {name}

judge.context_size = 4
judge.tau = 4.0
judge.n = 1
judge.mode = threshold

qa.types = yes_no,mcq,open
qa.generator = template
qa.no_change_per_pair = 1

audit.crop_size = 16
"""


def make_mask(rows, num_classes: int = len(CLASS_NAMES)) -> SemanticMask:
    return SemanticMask(np.asarray(rows, dtype=np.uint8), num_classes)


def render_image(mask: SemanticMask, noise_seed: int | None = None) -> RgbImage:
    """Palette rendering of a mask, optionally with small deterministic noise.

    The noise keeps every window's pixel content unique without moving any
    pixel off its nearest palette color.
    """
    pixels = PALETTE[mask.labels].astype(np.int16)
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        pixels = pixels + rng.integers(-2, 3, size=pixels.shape, dtype=np.int16)
    return RgbImage(np.clip(pixels, 0, 255).astype(np.uint8))


class ColorClassEncoder:
    """Truthful mock encoder for palette-rendered scenes.

    Each pixel is assigned its nearest palette class; the image embedding is
    the normalized presence vector of classes covering at least
    ``presence_px`` pixels. Class prompts map to one-hot vectors, so cosine
    similarity against a prompt reads off whether that class is visible.
    """

    def __init__(self, class_map: ClassMap, presence_px: int = 40) -> None:
        self.class_map = class_map
        self.presence_px = presence_px
        self.prompt_to_class = {
            PROMPT_TEMPLATE.format(name=name): i for i, name in enumerate(class_map.names)
        }

    def _pixel_classes(self, image: RgbImage) -> np.ndarray:
        flat = image.pixels.reshape(-1, 1, 3).astype(np.int16)
        dist = np.abs(flat - PALETTE.reshape(1, -1, 3)).sum(axis=2)
        return dist.argmin(axis=1)

    def embed_image(self, image: RgbImage) -> np.ndarray:
        counts = np.bincount(self._pixel_classes(image), minlength=len(CLASS_NAMES))
        presence = (counts >= self.presence_px).astype(np.float64)
        if presence.sum() == 0:
            presence[int(counts.argmax())] = 1.0
        return presence / np.linalg.norm(presence)

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(len(CLASS_NAMES))
        vec[self.prompt_to_class[text]] = 1.0
        return vec


def changed_crops_judge_rule(prompt) -> int:
    """Truthful judge: 5 when the two query crops differ, 1 when identical."""
    before, after = prompt.images[-2], prompt.images[-1]
    return 5 if before.tobytes() != after.tobytes() else 1


@dataclass
class PlantedScene:
    """On-disk synthetic fixture suite plus its expectations."""

    manifest: Path
    class_map_path: Path
    class_map: ClassMap
    config: PipelineConfig
    planted_changes: int
    expected_stats: dict


def _square(mask: np.ndarray, class_id: int, x0: int, y0: int, w: int, h: int) -> None:
    mask[y0 : y0 + h, x0 : x0 + w] = class_id


def build_planted_scene(root: Path) -> PlantedScene:
    """Ten 64x64 pairs exercising every filter path.

    Eight true appearance changes (kept), one mask false positive visible in
    both images (judge-rejected), one mask false positive visible in neither
    (encoder-rejected), and pure no-change pairs.
    """
    root.mkdir(parents=True, exist_ok=True)
    class_map = ClassMap(CLASS_NAMES)
    class_map_path = root / "classes.tsv"
    save_class_map(class_map, class_map_path)

    size = 64
    rows = []

    def empty() -> np.ndarray:
        return np.zeros((size, size), dtype=np.uint8)

    def emit(
        pair_id: str,
        before_labels,
        after_labels,
        before_render=None,
        after_render=None,
        seed=0,
        identical_images=False,
    ):
        before_mask = make_mask(before_labels)
        after_mask = make_mask(after_labels)
        before_img = render_image(before_render if before_render is not None else before_mask, seed)
        after_img = render_image(
            after_render if after_render is not None else after_mask,
            seed if identical_images else seed + 1,
        )
        paths = {
            "before_image": f"{pair_id}_before.png",
            "after_image": f"{pair_id}_after.png",
            "before_mask": f"{pair_id}_before_mask.png",
            "after_mask": f"{pair_id}_after_mask.png",
        }
        save_image_png(before_img, root / paths["before_image"])
        save_image_png(after_img, root / paths["after_image"])
        save_mask_png(before_mask, root / paths["before_mask"])
        save_mask_png(after_mask, root / paths["after_mask"])
        rows.append({"pair_id": pair_id, **paths})

    # Pairs 1-4: one appearing 12x12 square each, distinct classes/locations.
    for i, (class_id, x0, y0) in enumerate(
        [(1, 24, 24), (2, 10, 40), (3, 40, 8), (4, 30, 30)], start=1
    ):
        before = empty()
        after = empty()
        _square(after, class_id, x0, y0, 12, 12)
        emit(f"p{i:02d}", before, after, seed=i * 10)

    # Pairs 5-6: appearing square plus a persistent same-class neighbor that
    # intrudes into the crop window, making the candidate ambiguous.
    for i, class_id in ((5, 1), (6, 2)):
        before = empty()
        after = empty()
        _square(before, class_id, 7, 20, 16, 20)  # persistent neighbor
        _square(after, class_id, 7, 20, 16, 20)
        _square(after, class_id, 24, 24, 12, 12)  # the appearing change
        emit(f"p{i:02d}", before, after, seed=i * 10)

    # Pair 7: masks claim an appearance but the object is visible in both
    # images (a no-change false positive the judge must reject).
    before = empty()
    after = empty()
    _square(after, 1, 24, 24, 12, 12)
    visible = empty()
    _square(visible, 1, 24, 24, 12, 12)
    emit(
        "p07",
        before,
        after,
        before_render=make_mask(visible),
        after_render=make_mask(visible),
        seed=70,
        identical_images=True,
    )

    # Pair 8: masks claim an appearance but neither image shows the class
    # (rejected by the encoder screen).
    before = empty()
    after = empty()
    _square(after, 2, 24, 24, 12, 12)
    emit("p08", before, after, before_render=make_mask(empty()), after_render=make_mask(empty()), seed=80)

    # Pair 9: pure no-change pair.
    before = empty()
    _square(before, 3, 8, 8, 12, 12)
    emit("p09", before, before.copy(), seed=90)

    # Pair 10: two appearing squares of different classes in one pair.
    before = empty()
    after = empty()
    _square(after, 1, 6, 6, 12, 12)
    _square(after, 3, 40, 40, 12, 12)
    emit("p10", before, after, seed=100)

    manifest = root / "pairs.jsonl"
    manifest.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")

    config = config_from_mapping(parse_config_text(FIXTURE_CONFIG_TEXT), root)
    expected_stats = {
        "total_candidates": 10,
        "rejected_patch": 0,
        "rejected_encoder": 1,
        "accepted_encoder": 6,
        "forwarded_to_judge": 3,
        "accepted_judge": 2,
        "rejected_judge": 1,
        "change_rows": 24,
        "no_change_rows": 9,
    }
    return PlantedScene(
        manifest=manifest,
        class_map_path=class_map_path,
        class_map=class_map,
        config=config,
        planted_changes=8,
        expected_stats=expected_stats,
    )


@pytest.fixture(scope="session")
def planted_scene(tmp_path_factory) -> PlantedScene:
    return build_planted_scene(tmp_path_factory.mktemp("planted"))


@pytest.fixture()
def color_encoder(planted_scene) -> ColorClassEncoder:
    return ColorClassEncoder(planted_scene.class_map)
