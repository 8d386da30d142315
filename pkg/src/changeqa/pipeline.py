"""End-to-end orchestration: masks in, validated localized change-QA rows out.

Per pair: difference mask, per-class region extraction, optional patch
filtering, encoder screening, and judge validation for ambiguous or
no-change-suspect candidates. Pairs are processed by a worker pool but
results are emitted in manifest order, so output is deterministic for a
fixed seed and deterministic backends.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .embedding import (
    DECISION_ACCEPT,
    DECISION_DISCARD,
    EncoderBackend,
    MockEncoder,
    RemoteEncoder,
    ScreenConfig,
    rank_classes,
    screen,
)
from .errors import ChangeQAError
from .gallery import Gallery
from .judge import (
    Hypothesis,
    JudgeBackend,
    JudgeQuery,
    JudgeRequest,
    MockJudge,
    RemoteJudge,
    best_of_n,
)
from .patchfilter import keep_patch
from .qagen import (
    DIRECTION_APPEARED,
    DIRECTION_REMOVED,
    QARecord,
    QATask,
    RemoteTextGenerator,
    TextGenBackend,
    generate_qa,
)
from .raster import (
    ClassMap,
    PixelRect,
    RgbImage,
    SemanticMask,
    crop,
    diff_mask,
    load_image_png,
    load_mask_png,
)
from .regions import ChangeRegion, extract_candidates

__all__ = [
    "PairSpec",
    "TrailEntry",
    "CandidateChange",
    "StageStats",
    "PipelineResult",
    "AuditReport",
    "DatasetReport",
    "load_pairs_manifest",
    "run_pipeline",
    "write_dataset",
    "read_dataset",
    "dataset_stats",
    "random_crop_audit",
    "build_encoder",
    "build_judge",
]

logger = logging.getLogger(__name__)

STAGE_EXTRACT = "extract"
STAGE_PATCH = "patch_filter"
STAGE_ENCODER = "encoder"
STAGE_JUDGE = "judge"

KEPT = "kept"
DISCARDED = "discarded"


@dataclass(frozen=True)
class PairSpec:
    pair_id: str
    before_image: Path
    after_image: Path
    before_mask: Path
    after_mask: Path


@dataclass(frozen=True)
class TrailEntry:
    stage: str
    decision: str
    detail: str = ""


@dataclass(eq=False)
class CandidateChange:
    """One extracted region plus the provenance of every filter decision."""

    pair_id: str
    region: ChangeRegion
    before_crop: RgbImage
    after_crop: RgbImage
    expected_class: int
    class_name: str
    trail: list[TrailEntry] = field(default_factory=list)

    @property
    def kept(self) -> bool:
        return any(entry.decision == KEPT for entry in self.trail)

    def terminal(self) -> TrailEntry:
        finals = [e for e in self.trail if e.decision in (KEPT, DISCARDED)]
        if len(finals) != 1:
            raise ValueError(f"candidate has {len(finals)} terminal decisions, expected 1")
        return finals[0]


@dataclass
class StageStats:
    """Filter-funnel counters; ``validate`` asserts the conservation identities."""

    total_candidates: int = 0
    rejected_patch: int = 0
    rejected_encoder: int = 0
    accepted_encoder: int = 0
    forwarded_to_judge: int = 0
    accepted_judge: int = 0
    rejected_judge: int = 0
    change_rows: int = 0
    no_change_rows: int = 0

    def validate(self) -> None:
        counters = (
            self.total_candidates,
            self.rejected_patch,
            self.rejected_encoder,
            self.accepted_encoder,
            self.forwarded_to_judge,
            self.accepted_judge,
            self.rejected_judge,
            self.change_rows,
            self.no_change_rows,
        )
        if any(c < 0 for c in counters):
            raise ValueError(f"stage counters must be >= 0: {self}")
        if (
            self.total_candidates
            != self.rejected_patch + self.rejected_encoder + self.accepted_encoder + self.forwarded_to_judge
        ):
            raise ValueError(f"candidate conservation violated: {self}")
        if self.forwarded_to_judge != self.accepted_judge + self.rejected_judge:
            raise ValueError(f"judge conservation violated: {self}")

    def merge(self, other: "StageStats") -> "StageStats":
        return StageStats(
            *(getattr(self, f) + getattr(other, f) for f in self.__dataclass_fields__)
        )

    def to_json_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class PipelineResult:
    records: list[QARecord]
    stats: StageStats
    candidates: list[CandidateChange]
    errors: list[tuple[str, str]]


def load_pairs_manifest(path: str | Path) -> list[PairSpec]:
    """JSONL manifest of image/mask pairs; paths resolve against the manifest dir."""
    manifest = Path(path)
    base = manifest.parent
    pairs: list[PairSpec] = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        row = json.loads(line)
        try:
            pairs.append(
                PairSpec(
                    pair_id=str(row["pair_id"]),
                    before_image=base / row["before_image"],
                    after_image=base / row["after_image"],
                    before_mask=base / row["before_mask"],
                    after_mask=base / row["after_mask"],
                )
            )
        except KeyError as exc:
            raise ChangeQAError(f"{path}:{lineno}: pair row missing {exc}") from exc
    return pairs


def build_encoder(config: PipelineConfig) -> EncoderBackend:
    if config.backends.encoder == "mock":
        return MockEncoder(dim=config.backends.encoder_dim)
    if config.backends.encoder == "remote":
        return RemoteEncoder(config.backends.encoder_url, cache_dir=config.backends.cache_dir or None)
    raise ChangeQAError(f"unknown encoder backend {config.backends.encoder!r}")


def build_judge(config: PipelineConfig) -> JudgeBackend:
    if config.backends.judge == "mock":
        if config.backends.judge_table:
            return MockJudge.from_table(config.backends.judge_table, default=config.backends.judge_default)
        return MockJudge(default=config.backends.judge_default)
    if config.backends.judge == "remote":
        return RemoteJudge(config.backends.judge_url)
    raise ChangeQAError(f"unknown judge backend {config.backends.judge!r}")


def _change_direction(region: ChangeRegion, before: SemanticMask, after: SemanticMask) -> str:
    xs = np.fromiter((p[0] for p in region.pixels), dtype=np.intp, count=region.size)
    ys = np.fromiter((p[1] for p in region.pixels), dtype=np.intp, count=region.size)
    before_count = int(np.count_nonzero(before.labels[ys, xs] == region.class_id))
    after_count = int(np.count_nonzero(after.labels[ys, xs] == region.class_id))
    return DIRECTION_APPEARED if after_count >= before_count else DIRECTION_REMOVED


@dataclass
class _PairOutcome:
    pair_id: str
    candidates: list[CandidateChange]
    records: list[QARecord]
    stats: StageStats
    error: str | None = None


def _judge_candidate(
    before_crop: RgbImage,
    after_crop: RgbImage,
    expected_class: int,
    screen_result,
    config: PipelineConfig,
    class_map: ClassMap,
    encoder: EncoderBackend,
    judge_backend: JudgeBackend,
    gallery: Gallery | None,
) -> tuple[bool, str]:
    """Score the expected class (plus competing hypotheses); (kept, detail)."""
    hypotheses = [Hypothesis(expected_class, class_map.name(expected_class))]
    if config.judge.n > 1:
        for cls, _sim in screen_result.after_ranking:
            if cls != expected_class:
                hypotheses.append(Hypothesis(cls, class_map.name(cls)))
            if len(hypotheses) == config.judge.n:
                break
    embedding = encoder.embed_image(after_crop) if gallery is not None else None
    request = JudgeRequest(
        query=JudgeQuery(
            before=before_crop,
            after=after_crop,
            class_id=expected_class,
            class_name=class_map.name(expected_class),
            embedding=embedding,
        ),
        n=len(hypotheses),
        tau=config.judge.tau,
        temperature=config.qa.temperature,
    )
    result = best_of_n(
        hypotheses,
        request,
        judge_backend,
        gallery=gallery,
        mode="threshold",
        context_size=config.judge.context_size,
    )
    expected_score = result.scores[0]
    kept = config.judge.passes(expected_score)
    if config.judge.mode == "argmax" and result.best_index != 0:
        kept = False
    detail = f"score={expected_score} scores={list(result.scores)}"
    return kept, detail


def _process_pair(
    pair: PairSpec,
    config: PipelineConfig,
    class_map: ClassMap,
    screen_cfg: ScreenConfig,
    encoder: EncoderBackend,
    judge_backend: JudgeBackend,
    qa_backend: TextGenBackend | None,
    gallery: Gallery | None,
) -> _PairOutcome:
    stats = StageStats()
    outcome = _PairOutcome(pair.pair_id, [], [], stats)
    try:
        before_img = load_image_png(pair.before_image)
        after_img = load_image_png(pair.after_image)
        before_mask = load_mask_png(pair.before_mask, class_map.num_classes)
        after_mask = load_mask_png(pair.after_mask, class_map.num_classes)
        diff = diff_mask(before_mask, after_mask)
        regions = extract_candidates(
            before_mask,
            after_mask,
            diff,
            config.region_thresholds(class_map),
            connectivity=config.regions.connectivity,
        )
    except (ChangeQAError, OSError, json.JSONDecodeError, ValueError) as exc:
        outcome.error = f"{type(exc).__name__}: {exc}"
        logger.error("pair %s skipped: %s", pair.pair_id, outcome.error)
        return outcome

    kept_candidates: list[tuple[int, CandidateChange, str]] = []
    for index, region in enumerate(regions):
        stats.total_candidates += 1
        candidate = CandidateChange(
            pair_id=pair.pair_id,
            region=region,
            before_crop=crop(before_img, region.bbox, config.crop_margin),
            after_crop=crop(after_img, region.bbox, config.crop_margin),
            expected_class=region.class_id,
            class_name=class_map.name(region.class_id),
        )
        candidate.trail.append(
            TrailEntry(
                STAGE_EXTRACT,
                "pass",
                f"size={region.size} iou={region.iou:.4f} changed={region.changed_ratio:.4f}",
            )
        )
        outcome.candidates.append(candidate)

        if config.patch_filter_enabled:
            rejected = None
            for which, patch in (("before", candidate.before_crop), ("after", candidate.after_crop)):
                decision = keep_patch(patch, config.patch_filter)
                if not decision.keep:
                    rejected = f"{which}:{decision.reason}"
                    break
            if rejected:
                candidate.trail.append(TrailEntry(STAGE_PATCH, DISCARDED, rejected))
                stats.rejected_patch += 1
                continue
            candidate.trail.append(TrailEntry(STAGE_PATCH, "pass"))

        result = screen(
            candidate.before_crop,
            candidate.after_crop,
            candidate.expected_class,
            screen_cfg,
            encoder,
        )
        suspect = " no_change_suspect" if result.no_change_suspect else ""
        if config.screen.invert_gate:
            # Inverted gating: keep encoder misses outright, judge the rest.
            if result.decision == DECISION_DISCARD:
                candidate.trail.append(TrailEntry(STAGE_ENCODER, KEPT, "inverted gate: class not in top-k"))
                stats.accepted_encoder += 1
                kept_candidates.append((index, candidate, _change_direction(region, before_mask, after_mask)))
                continue
            candidate.trail.append(TrailEntry(STAGE_ENCODER, "forward", f"{result.decision}{suspect}"))
        elif result.decision == DECISION_DISCARD:
            candidate.trail.append(TrailEntry(STAGE_ENCODER, DISCARDED, "class not in after top-k"))
            stats.rejected_encoder += 1
            continue
        elif result.decision == DECISION_ACCEPT and not result.no_change_suspect:
            candidate.trail.append(TrailEntry(STAGE_ENCODER, KEPT, "class in after top-k only"))
            stats.accepted_encoder += 1
            kept_candidates.append((index, candidate, _change_direction(region, before_mask, after_mask)))
            continue
        else:
            candidate.trail.append(TrailEntry(STAGE_ENCODER, "forward", f"{result.decision}{suspect}"))

        stats.forwarded_to_judge += 1
        kept, detail = _judge_candidate(
            candidate.before_crop,
            candidate.after_crop,
            candidate.expected_class,
            result,
            config,
            class_map,
            encoder,
            judge_backend,
            gallery,
        )
        if kept:
            candidate.trail.append(TrailEntry(STAGE_JUDGE, KEPT, detail))
            stats.accepted_judge += 1
            kept_candidates.append((index, candidate, _change_direction(region, before_mask, after_mask)))
        else:
            reason = "no_change_false_positive" if result.no_change_suspect else "low_score"
            candidate.trail.append(TrailEntry(STAGE_JUDGE, DISCARDED, f"{reason} {detail}"))
            stats.rejected_judge += 1

    for index, candidate, direction in kept_candidates:
        for qtype in config.qa.types:
            task = QATask(
                sample_id=f"{pair.pair_id}:r{index:03d}:{qtype}",
                pair_id=pair.pair_id,
                bbox=candidate.region.bbox,
                image_width=before_img.width,
                image_height=before_img.height,
                is_change=True,
                all_classes=class_map.names,
                class_name=candidate.class_name,
                direction=direction,
                before=candidate.before_crop,
                after=candidate.after_crop,
            )
            outcome.records.append(
                generate_qa(
                    task,
                    qtype,
                    generator=config.qa.generator,
                    seed=config.seed,
                    backend=qa_backend,
                    temperature=config.qa.temperature,
                )
            )
            stats.change_rows += 1

    if not kept_candidates:
        full = PixelRect(0, 0, before_img.width, before_img.height)
        for j in range(config.qa.no_change_per_pair):
            for qtype in config.qa.types:
                task = QATask(
                    sample_id=f"{pair.pair_id}:nc{j}:{qtype}",
                    pair_id=pair.pair_id,
                    bbox=full,
                    image_width=before_img.width,
                    image_height=before_img.height,
                    is_change=False,
                    all_classes=class_map.names,
                    before=before_img,
                    after=after_img,
                )
                outcome.records.append(
                    generate_qa(
                        task,
                        qtype,
                        generator=config.qa.generator,
                        seed=config.seed,
                        backend=qa_backend,
                        temperature=config.qa.temperature,
                    )
                )
                stats.no_change_rows += 1
    return outcome


def run_pipeline(
    pairs: list[PairSpec] | str | Path,
    config: PipelineConfig,
    class_map: ClassMap | None = None,
    encoder: EncoderBackend | None = None,
    judge_backend: JudgeBackend | None = None,
    qa_backend: TextGenBackend | None = None,
    gallery: Gallery | None = None,
) -> PipelineResult:
    """Run the full curation pipeline over a pairs manifest.

    Malformed pairs are skipped and reported in ``result.errors``; everything
    else is deterministic for a fixed seed and deterministic backends.
    """
    if not isinstance(pairs, list):
        pairs = load_pairs_manifest(pairs)
    if class_map is None:
        class_map = config.load_class_map()
    if encoder is None:
        encoder = build_encoder(config)
    if judge_backend is None:
        judge_backend = build_judge(config)
    if qa_backend is None and config.qa.generator == "remote":
        if not config.backends.qa_url:
            raise ChangeQAError("qa.generator = remote requires backends.qa_url")
        qa_backend = RemoteTextGenerator(config.backends.qa_url)
    if gallery is None and config.gallery_file:
        gallery = Gallery.from_manifest(config.gallery_file, encoder)
    screen_cfg = ScreenConfig(
        class_prompts=config.class_prompts(class_map),
        k=config.screen.k,
        tau_enc=config.screen.tau_enc,
        tau_sim=config.screen.tau_sim,
    )

    def work(pair: PairSpec) -> _PairOutcome:
        return _process_pair(
            pair, config, class_map, screen_cfg, encoder, judge_backend, qa_backend, gallery
        )

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(work, pairs))
    else:
        outcomes = [work(pair) for pair in pairs]

    result = PipelineResult(records=[], stats=StageStats(), candidates=[], errors=[])
    for outcome in outcomes:  # manifest order preserved by map()
        result.records.extend(outcome.records)
        result.candidates.extend(outcome.candidates)
        result.stats = result.stats.merge(outcome.stats)
        if outcome.error:
            result.errors.append((outcome.pair_id, outcome.error))
    result.stats.validate()
    return result


# ---------------------------------------------------------------------------
# Dataset serialization and statistics
# ---------------------------------------------------------------------------


def write_dataset(records: list[QARecord], path: str | Path) -> None:
    """One QARecord per line, UTF-8 JSONL, fixed key order."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json_dict(), ensure_ascii=False))
            handle.write("\n")


def read_dataset(path: str | Path) -> tuple[list[QARecord], int]:
    """Parse a dataset file; returns (records, malformed_row_count)."""
    records: list[QARecord] = []
    malformed = 0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            records.append(QARecord.from_json_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            malformed += 1
    return records, malformed


@dataclass
class DatasetReport:
    total_rows: int
    change_rows: int
    no_change_rows: int
    class_counts: dict[str, int]
    class_proportions: dict[str, float]
    question_word_hist: dict[int, int]
    question_char_hist: dict[int, int]
    malformed_rows: int = 0

    def to_json_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "change_rows": self.change_rows,
            "no_change_rows": self.no_change_rows,
            "class_counts": self.class_counts,
            "class_proportions": self.class_proportions,
            "question_word_hist": {str(k): v for k, v in self.question_word_hist.items()},
            "question_char_hist": {str(k): v for k, v in self.question_char_hist.items()},
            "malformed_rows": self.malformed_rows,
        }

    def format_table(self) -> str:
        lines = ["class\tcount\tproportion"]
        for name, count in sorted(self.class_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            lines.append(f"{name}\t{count}\t{self.class_proportions[name]:.2f}")
        lines.append(f"change rows: {self.change_rows}")
        lines.append(f"no-change rows: {self.no_change_rows}")
        if self.malformed_rows:
            lines.append(f"malformed rows excluded: {self.malformed_rows}")
        return "\n".join(lines)


def dataset_stats(records: list[QARecord], malformed_rows: int = 0) -> DatasetReport:
    """Per-class counts/proportions, change split, and question-length histograms."""
    class_counts: dict[str, int] = {}
    word_hist: dict[int, int] = {}
    char_hist: dict[int, int] = {}
    change_rows = 0
    for record in records:
        if record.is_change and record.class_name:
            class_counts[record.class_name] = class_counts.get(record.class_name, 0) + 1
        if record.is_change:
            change_rows += 1
        words = len(record.question.split())
        word_hist[words] = word_hist.get(words, 0) + 1
        chars = len(record.question)
        char_hist[chars] = char_hist.get(chars, 0) + 1
    total_classed = sum(class_counts.values())
    proportions = {
        name: (100.0 * count / total_classed if total_classed else 0.0)
        for name, count in class_counts.items()
    }
    return DatasetReport(
        total_rows=len(records),
        change_rows=change_rows,
        no_change_rows=len(records) - change_rows,
        class_counts=class_counts,
        class_proportions=proportions,
        question_word_hist=dict(sorted(word_hist.items())),
        question_char_hist=dict(sorted(char_hist.items())),
        malformed_rows=malformed_rows,
    )


# ---------------------------------------------------------------------------
# Random-crop audit
# ---------------------------------------------------------------------------


@dataclass
class AuditReport:
    n_crops: int
    passed: int
    rejected_patch: int
    rejected_encoder: int
    rejected_judge: int
    accepted_encoder: int
    accepted_judge: int

    @property
    def pass_rate(self) -> float:
        return self.passed / self.n_crops if self.n_crops else 0.0

    def to_json_dict(self) -> dict:
        return {
            "n_crops": self.n_crops,
            "passed": self.passed,
            "pass_rate": self.pass_rate,
            "rejected_patch": self.rejected_patch,
            "rejected_encoder": self.rejected_encoder,
            "rejected_judge": self.rejected_judge,
            "accepted_encoder": self.accepted_encoder,
            "accepted_judge": self.accepted_judge,
        }


def random_crop_audit(
    pairs: list[PairSpec] | str | Path,
    n_crops: int,
    config: PipelineConfig,
    class_map: ClassMap | None = None,
    encoder: EncoderBackend | None = None,
    judge_backend: JudgeBackend | None = None,
    gallery: Gallery | None = None,
) -> AuditReport:
    """Push seeded uniform crops (ignoring masks) through screen + judge.

    The hypothesized class for each crop is the top-ranked class of its
    after crop. Reports the retained fraction and per-stage rejections.
    """
    if n_crops < 1:
        raise ValueError(f"n_crops must be >= 1, got {n_crops}")
    if not isinstance(pairs, list):
        pairs = load_pairs_manifest(pairs)
    if not pairs:
        raise ChangeQAError("random_crop_audit needs at least one pair")
    if class_map is None:
        class_map = config.load_class_map()
    if encoder is None:
        encoder = build_encoder(config)
    if judge_backend is None:
        judge_backend = build_judge(config)
    if gallery is None and config.gallery_file:
        gallery = Gallery.from_manifest(config.gallery_file, encoder)
    screen_cfg = ScreenConfig(
        class_prompts=config.class_prompts(class_map),
        k=config.screen.k,
        tau_enc=config.screen.tau_enc,
        tau_sim=config.screen.tau_sim,
    )
    images = [(load_image_png(p.before_image), load_image_png(p.after_image)) for p in pairs]
    rng = np.random.default_rng(config.seed)
    report = AuditReport(n_crops, 0, 0, 0, 0, 0, 0)
    for _ in range(n_crops):
        before_img, after_img = images[int(rng.integers(len(images)))]
        size = min(config.audit_crop_size, before_img.width, before_img.height)
        x0 = int(rng.integers(0, before_img.width - size + 1))
        y0 = int(rng.integers(0, before_img.height - size + 1))
        window = PixelRect(x0, y0, size, size)
        before_crop = crop(before_img, window)
        after_crop = crop(after_img, window)
        if config.patch_filter_enabled:
            if not keep_patch(before_crop, config.patch_filter).keep or not keep_patch(
                after_crop, config.patch_filter
            ).keep:
                report.rejected_patch += 1
                continue
        expected = rank_classes(after_crop, screen_cfg, encoder)[0][0]
        result = screen(before_crop, after_crop, expected, screen_cfg, encoder)
        if result.decision == DECISION_DISCARD:
            report.rejected_encoder += 1
            continue
        if result.decision == DECISION_ACCEPT and not result.no_change_suspect:
            report.accepted_encoder += 1
            report.passed += 1
            continue
        kept, _detail = _judge_candidate(
            before_crop, after_crop, expected, result, config, class_map, encoder, judge_backend, gallery
        )
        if kept:
            report.accepted_judge += 1
            report.passed += 1
        else:
            report.rejected_judge += 1
    return report
