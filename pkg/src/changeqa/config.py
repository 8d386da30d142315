"""Pipeline configuration: typed settings plus a dotted key-value file format.

The config file is UTF-8 text, one ``section.key = value`` assignment per
line, ``#`` comments. Values are parsed as int, float, bool (true/false), or
string; the qa.types list is comma-separated. Per-class region overrides use
a third segment keyed by class name, e.g. ``regions.min_size.building = 80``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import SchemaError
from .patchfilter import PatchFilterConfig
from .raster import ClassMap, load_class_map

__all__ = [
    "RegionSettings",
    "ScreenSettings",
    "JudgeSettings",
    "QASettings",
    "BackendSettings",
    "PipelineConfig",
    "parse_config_text",
    "load_config",
]


@dataclass(frozen=True)
class RegionSettings:
    connectivity: int = 8
    min_size: int = 50
    changed_threshold: float = 0.3
    iou_threshold: float = 0.18
    iou_direction: str = "reject_below"
    min_size_per_class: dict[str, int] = field(default_factory=dict)
    changed_per_class: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ScreenSettings:
    k: int = 5
    tau_enc: float = 0.5
    tau_sim: float = 0.9
    prompt_template: str = "a satellite photo of a {name}"
    # Inverts the encoder gate: keep candidates whose class misses the top-k
    # and drop the rest. Off by default; exists to reproduce the inverted
    # gating variant of the end-to-end algorithm.
    invert_gate: bool = False


@dataclass(frozen=True)
class JudgeSettings:
    context_size: int = 4
    tau: float = 4.0
    # Strict comparison (score > tau) accepts only 5s at tau=4; accept_equal
    # widens acceptance to scores >= tau.
    accept_equal: bool = False
    n: int = 1
    mode: str = "threshold"

    def passes(self, score: int) -> bool:
        return score >= self.tau if self.accept_equal else score > self.tau


@dataclass(frozen=True)
class QASettings:
    types: tuple[str, ...] = ("yes_no", "mcq", "open")
    generator: str = "template"
    no_change_per_pair: int = 1
    temperature: float = 0.9


@dataclass(frozen=True)
class BackendSettings:
    encoder: str = "mock"
    encoder_url: str = ""
    encoder_dim: int = 64
    cache_dir: str = ""
    judge: str = "mock"
    judge_url: str = ""
    judge_default: int = 5
    judge_table: str = ""
    qa_url: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    jobs: int = 1
    crop_margin: int = 16
    class_file: str = ""
    gallery_file: str = ""
    audit_crop_size: int = 64
    regions: RegionSettings = field(default_factory=RegionSettings)
    patch_filter: PatchFilterConfig = field(default_factory=PatchFilterConfig)
    patch_filter_enabled: bool = False
    screen: ScreenSettings = field(default_factory=ScreenSettings)
    judge: JudgeSettings = field(default_factory=JudgeSettings)
    qa: QASettings = field(default_factory=QASettings)
    backends: BackendSettings = field(default_factory=BackendSettings)

    def load_class_map(self) -> ClassMap:
        if not self.class_file:
            raise SchemaError("config does not name a class map (classes.file)")
        return load_class_map(self.class_file)

    def class_prompts(self, class_map: ClassMap) -> tuple[str, ...]:
        return tuple(self.screen.prompt_template.format(name=name) for name in class_map.names)

    def region_thresholds(self, class_map: ClassMap):
        from .regions import RegionThresholds

        by_index_size = {
            class_map.index(name): size for name, size in self.regions.min_size_per_class.items()
        }
        by_index_changed = {
            class_map.index(name): ratio for name, ratio in self.regions.changed_per_class.items()
        }
        return RegionThresholds(
            min_size=self.regions.min_size,
            changed_threshold=self.regions.changed_threshold,
            iou_threshold=self.regions.iou_threshold,
            iou_direction=self.regions.iou_direction,
            min_size_per_class=by_index_size,
            changed_per_class=by_index_changed,
        )


def _parse_value(raw: str) -> object:
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict[str, object]:
    """Flat mapping of dotted keys to typed values."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise SchemaError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise SchemaError(f"config line {lineno}: empty key")
        if key in values:
            raise SchemaError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(raw)
    return values


def _take(values: dict[str, object], key: str, default: object) -> object:
    if key not in values:
        return default
    value = values.pop(key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise SchemaError(f"config key {key!r} must be true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"config key {key!r} must be numeric, got {value!r}")
        return float(value)
    if isinstance(default, str):
        return str(value)
    if isinstance(default, int):
        raise SchemaError(f"config key {key!r} must be an integer, got {value!r}")
    return value


def config_from_mapping(values: dict[str, object], base_dir: Path | None = None) -> PipelineConfig:
    values = dict(values)

    def resolve(path_value: str) -> str:
        if not path_value or base_dir is None:
            return path_value
        candidate = Path(path_value)
        return str(candidate if candidate.is_absolute() else base_dir / candidate)

    min_size_per_class: dict[str, int] = {}
    changed_per_class: dict[str, float] = {}
    for key in list(values):
        if key.startswith("regions.min_size."):
            min_size_per_class[key.split(".", 2)[2]] = int(values.pop(key))  # type: ignore[arg-type]
        elif key.startswith("regions.changed_threshold."):
            changed_per_class[key.split(".", 2)[2]] = float(values.pop(key))  # type: ignore[arg-type]

    regions = RegionSettings(
        connectivity=_take(values, "regions.connectivity", 8),
        min_size=_take(values, "regions.min_size", 50),
        changed_threshold=_take(values, "regions.changed_threshold", 0.3),
        iou_threshold=_take(values, "regions.iou_threshold", 0.18),
        iou_direction=_take(values, "regions.iou_direction", "reject_below"),
        min_size_per_class=min_size_per_class,
        changed_per_class=changed_per_class,
    )
    patch_filter = PatchFilterConfig(
        tau_std=_take(values, "patch_filter.tau_std", 0.08),
        tau_sat=_take(values, "patch_filter.tau_sat", 0.15),
        tau_exg=_take(values, "patch_filter.tau_exg", 0.35),
        value_scale=_take(values, "patch_filter.value_scale", "byte"),
    )
    patch_filter_enabled = _take(values, "patch_filter.enabled", False)
    screen = ScreenSettings(
        k=_take(values, "screen.k", 5),
        tau_enc=_take(values, "screen.tau_enc", 0.5),
        tau_sim=_take(values, "screen.tau_sim", 0.9),
        prompt_template=_take(values, "screen.prompt_template", "a satellite photo of a {name}"),
        invert_gate=_take(values, "screen.invert_gate", False),
    )
    judge = JudgeSettings(
        context_size=_take(values, "judge.context_size", 4),
        tau=_take(values, "judge.tau", 4.0),
        accept_equal=_take(values, "judge.accept_equal", False),
        n=_take(values, "judge.n", 1),
        mode=_take(values, "judge.mode", "threshold"),
    )
    qa_types_raw = str(_take(values, "qa.types", "yes_no,mcq,open"))
    qa = QASettings(
        types=tuple(part.strip() for part in qa_types_raw.split(",") if part.strip()),
        generator=_take(values, "qa.generator", "template"),
        no_change_per_pair=_take(values, "qa.no_change_per_pair", 1),
        temperature=_take(values, "qa.temperature", 0.9),
    )
    backends = BackendSettings(
        encoder=_take(values, "backends.encoder", "mock"),
        encoder_url=_take(values, "backends.encoder_url", ""),
        encoder_dim=_take(values, "backends.encoder_dim", 64),
        cache_dir=resolve(_take(values, "backends.cache_dir", "")),
        judge=_take(values, "backends.judge", "mock"),
        judge_url=_take(values, "backends.judge_url", ""),
        judge_default=_take(values, "backends.judge_default", 5),
        judge_table=resolve(_take(values, "backends.judge_table", "")),
        qa_url=_take(values, "backends.qa_url", ""),
    )
    config = PipelineConfig(
        seed=_take(values, "seed", 0),
        jobs=_take(values, "jobs", 1),
        crop_margin=_take(values, "crop.margin", 16),
        class_file=resolve(_take(values, "classes.file", "")),
        gallery_file=resolve(_take(values, "gallery.file", "")),
        audit_crop_size=_take(values, "audit.crop_size", 64),
        regions=regions,
        patch_filter=patch_filter,
        patch_filter_enabled=patch_filter_enabled,
        screen=screen,
        judge=judge,
        qa=qa,
        backends=backends,
    )
    if values:
        raise SchemaError(f"unknown config keys: {sorted(values)}")
    if judge.mode not in ("threshold", "argmax"):
        raise SchemaError(f"judge.mode must be threshold or argmax, got {judge.mode!r}")
    for qtype in qa.types:
        if qtype not in ("yes_no", "mcq", "open"):
            raise SchemaError(f"qa.types entry {qtype!r} is not a question type")
    return config


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    return config_from_mapping(parse_config_text(path.read_text(encoding="utf-8")), path.parent)


def with_overrides(config: PipelineConfig, seed: int | None = None, jobs: int | None = None) -> PipelineConfig:
    if seed is not None:
        config = replace(config, seed=seed)
    if jobs is not None:
        config = replace(config, jobs=jobs)
    return config
