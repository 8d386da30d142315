#!/usr/bin/env python3
"""Generate a small synthetic workspace so the CLI can run end to end.

Creates demo/ with ten before/after pairs (PNG images + masks), a class map,
a pairs manifest, and a pipeline config wired to the deterministic mock
backends. Usage:

    python3 scripts/make_demo.py [--out demo]
    changeqa --config demo/pipeline.conf --out demo/dataset.jsonl run --pairs demo/pairs.jsonl
    changeqa stats --dataset demo/dataset.jsonl
    changeqa --config demo/pipeline.conf review-serve --dataset demo/dataset.jsonl \
        --store demo/annotations.jsonl --pairs demo/pairs.jsonl --static frontend/dist
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from changeqa.raster import ClassMap, RgbImage, SemanticMask, save_class_map, save_image_png, save_mask_png

CLASS_NAMES = ("background", "building", "tree", "water", "road")
PALETTE = np.array(
    [[120, 120, 120], [180, 60, 60], [60, 180, 60], [60, 60, 180], [90, 90, 30]],
    dtype=np.int16,
)

CONFIG = """\
# pipeline config for the synthetic demo scene
seed = 7
jobs = 1
crop.margin = 4
classes.file = classes.tsv

regions.connectivity = 8
regions.min_size = 30
regions.changed_threshold = 0.3
regions.iou_threshold = 0.18
# appearing objects have temporal IoU 0: keep LOW-IoU regions
regions.iou_direction = reject_above

patch_filter.enabled = false

screen.k = 5
# the hash mock encoder cannot rank real content, so the demo disables the
# similarity floor and lets every candidate flow to the judge stage instead
screen.tau_enc = -1.0
screen.tau_sim = 0.9
screen.prompt_template = a satellite photo of a {name}

judge.context_size = 4
judge.tau = 4.0
judge.mode = threshold

qa.types = yes_no,mcq,open
qa.generator = template
qa.no_change_per_pair = 1

audit.crop_size = 16
backends.encoder = mock
backends.judge = mock
backends.judge_default = 5
"""


def render(mask: SemanticMask, seed: int) -> RgbImage:
    rng = np.random.default_rng(seed)
    pixels = PALETTE[mask.labels].astype(np.int16)
    pixels = pixels + rng.integers(-2, 3, size=pixels.shape, dtype=np.int16)
    return RgbImage(np.clip(pixels, 0, 255).astype(np.uint8))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo", help="output directory")
    parser.add_argument("--size", type=int, default=64, help="scene edge length in pixels")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_class_map(ClassMap(CLASS_NAMES), out / "classes.tsv")
    (out / "pipeline.conf").write_text(CONFIG, encoding="utf-8")

    rng = np.random.default_rng(2026)
    rows = []
    for index in range(10):
        pair_id = f"demo{index:02d}"
        before = np.zeros((args.size, args.size), dtype=np.uint8)
        after = before.copy()
        if index % 3 != 2:  # two of three pairs plant an appearing object
            class_id = 1 + index % 4
            side = 12
            x0 = int(rng.integers(0, args.size - side))
            y0 = int(rng.integers(0, args.size - side))
            after[y0 : y0 + side, x0 : x0 + side] = class_id
        before_mask = SemanticMask(before, len(CLASS_NAMES))
        after_mask = SemanticMask(after, len(CLASS_NAMES))
        names = {
            "before_image": f"{pair_id}_before.png",
            "after_image": f"{pair_id}_after.png",
            "before_mask": f"{pair_id}_before_mask.png",
            "after_mask": f"{pair_id}_after_mask.png",
        }
        save_image_png(render(before_mask, index * 2), out / names["before_image"])
        save_image_png(render(after_mask, index * 2 + 1), out / names["after_image"])
        save_mask_png(before_mask, out / names["before_mask"])
        save_mask_png(after_mask, out / names["after_mask"])
        rows.append({"pair_id": pair_id, **names})

    (out / "pairs.jsonl").write_text(
        "".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8"
    )
    print(f"demo scene written to {out}/ ({len(rows)} pairs)")
    print(f"next: changeqa --config {out}/pipeline.conf --out {out}/dataset.jsonl run --pairs {out}/pairs.jsonl")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
