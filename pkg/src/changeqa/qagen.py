"""Question-answer extraction for validated changes and no-change pairs.

The class label is always the vision-pipeline label; generation only phrases
it. Template mode is fully deterministic given the seed. Remote mode prompts
a text backend at the configured temperature and parses the fixed reply
format, falling back to the template after three unparseable replies.
"""

from __future__ import annotations

import base64
import json
import logging
import random
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .errors import BackendError, GenerationError
from .raster import PixelRect, RgbImage, encode_image_png

__all__ = [
    "QARecord",
    "QATask",
    "TextGenBackend",
    "MockTextGenerator",
    "RemoteTextGenerator",
    "generate_qa",
    "quadrant",
]

logger = logging.getLogger(__name__)

QTYPES = ("yes_no", "mcq", "open")
LETTERS = ("A", "B", "C", "D")

DIRECTION_APPEARED = "appeared"
DIRECTION_REMOVED = "removed"

MCQ_CHANGE_PROMPT = (
    "You are an expert in generating multiple-choice questions based on visual changes "
    "in satellite imagery. The image pair below shows a change related to {cls} in the "
    "red bounding box. Generate one multiple-choice question with 4 answer options "
    "(A, B, C, D) to describe this change. One option must correctly describe the "
    "change, and the other 3 must be incorrect. Ignore the red bounding box in your "
    "answers-it is only for you to understand the local change. Focus strictly on the "
    "change inside the red bounding box; all other differences are not correct. "
    "Format the output as: Question:\nA.\nB.\nC.\nD.\nThe correct answer is:"
)

MCQ_NO_CHANGE_PROMPT = (
    "You are an expert in generating multiple-choice questions about visual comparisons "
    "in satellite imagery. The two images below show no visible change. Generate one "
    "multiple-choice question where the correct answer states that there was no change, "
    "and the other three options must be incorrect changes (e.g., suggesting false "
    "changes). Format the output as: Question:\nA.\nB.\nC.\nD.\nThe correct answer is:"
)

YES_NO_CHANGE_PROMPT = (
    "You are an expert in analyzing visual changes in satellite imagery. The image pair "
    "below shows a change related to {cls} in the red bounding box. Generate one yes/no "
    "question about this change whose correct answer is Yes. Focus strictly on the "
    "change inside the red bounding box. "
    "Format the output as: Question:\nThe correct answer is:"
)

YES_NO_NO_CHANGE_PROMPT = (
    "You are an expert in analyzing visual comparisons in satellite imagery. The two "
    "images below show no visible change. Generate one yes/no question asking whether "
    "some specific change occurred, whose correct answer is No. "
    "Format the output as: Question:\nThe correct answer is:"
)

OPEN_CHANGE_PROMPT = (
    "You are an expert in describing visual changes in satellite imagery. The image "
    "pair below shows a change related to {cls} in the red bounding box. Generate one "
    "open-ended question about this change together with its correct answer. Focus "
    "strictly on the change inside the red bounding box. "
    "Format the output as: Question:\nAnswer:"
)

OPEN_NO_CHANGE_PROMPT = (
    "You are an expert in describing visual comparisons in satellite imagery. The two "
    "images below show no visible change. Generate one open-ended question about "
    "possible changes together with an answer stating that nothing changed. "
    "Format the output as: Question:\nAnswer:"
)


@dataclass(frozen=True)
class QARecord:
    """One emitted dataset row."""

    sample_id: str
    pair_id: str
    bbox: PixelRect
    qtype: str
    question: str
    options: tuple[str, ...]
    answer: str
    class_name: str | None
    is_change: bool

    def __post_init__(self) -> None:
        if self.qtype not in QTYPES:
            raise ValueError(f"qtype must be one of {QTYPES}, got {self.qtype!r}")
        if self.qtype == "mcq":
            if len(self.options) != 4:
                raise ValueError(f"mcq records need exactly 4 options, got {len(self.options)}")
            if self.answer not in LETTERS:
                raise ValueError(f"mcq answer must be one of {LETTERS}, got {self.answer!r}")
        else:
            if self.options:
                raise ValueError(f"{self.qtype} records carry no options")
        if self.qtype == "yes_no" and self.answer not in ("Yes", "No"):
            raise ValueError(f"yes_no answer must be Yes or No, got {self.answer!r}")

    def to_json_dict(self) -> dict:
        row = {
            "sample_id": self.sample_id,
            "pair_id": self.pair_id,
            "bbox": self.bbox.to_dict(),
            "qtype": self.qtype,
            "question": self.question,
        }
        if self.qtype == "mcq":
            row["options"] = list(self.options)
        row["answer"] = self.answer
        row["class"] = self.class_name
        row["is_change"] = self.is_change
        return row

    @classmethod
    def from_json_dict(cls, row: dict) -> "QARecord":
        bbox = row["bbox"]
        return cls(
            sample_id=str(row["sample_id"]),
            pair_id=str(row["pair_id"]),
            bbox=PixelRect(int(bbox["x0"]), int(bbox["y0"]), int(bbox["w"]), int(bbox["h"])),
            qtype=str(row["qtype"]),
            question=str(row["question"]),
            options=tuple(row.get("options", ())),
            answer=str(row["answer"]),
            class_name=row["class"],
            is_change=bool(row["is_change"]),
        )


@dataclass(frozen=True, eq=False)
class QATask:
    """Inputs for one generated row.

    ``direction`` is appeared/removed for change tasks and None for no-change
    tasks; ``all_classes`` feeds the distractor rotation and must name every
    class the pipeline knows about.
    """

    sample_id: str
    pair_id: str
    bbox: PixelRect
    image_width: int
    image_height: int
    is_change: bool
    all_classes: tuple[str, ...]
    class_name: str | None = None
    direction: str | None = None
    before: RgbImage | None = None
    after: RgbImage | None = None


class TextGenBackend(Protocol):
    def generate(self, prompt: str, images: Sequence[RgbImage], temperature: float) -> str: ...


class MockTextGenerator:
    """Wraps a deterministic callable for tests."""

    def __init__(self, fn: Callable[[str], str]) -> None:
        self.fn = fn

    def generate(self, prompt: str, images: Sequence[RgbImage], temperature: float) -> str:
        return self.fn(prompt)


class RemoteTextGenerator:
    """HTTP text generator: POST {url}/generate {"prompt", "images", "temperature"}."""

    def __init__(self, url: str, timeout: float = 120.0) -> None:
        self.url = url.rstrip("/")
        self.timeout = timeout

    def generate(self, prompt: str, images: Sequence[RgbImage], temperature: float) -> str:
        payload = json.dumps(
            {
                "prompt": prompt,
                "images": [
                    base64.b64encode(encode_image_png(img)).decode("ascii") for img in images
                ],
                "temperature": temperature,
            }
        ).encode("utf-8")
        request = urllib.request.Request(
            self.url + "/generate", data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                if response.status != 200:
                    raise BackendError(f"generator returned HTTP {response.status}")
                reply = json.loads(response.read().decode("utf-8"))
            return str(reply["text"])
        except (urllib.error.URLError, OSError, json.JSONDecodeError, KeyError) as exc:
            raise BackendError(f"generator request failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Deterministic templates
# ---------------------------------------------------------------------------


def quadrant(bbox: PixelRect, width: int, height: int) -> str:
    """Coarse location of the bbox center; ties fall to the upper/left side."""
    cx = bbox.x0 + bbox.w / 2.0
    cy = bbox.y0 + bbox.h / 2.0
    vertical = "upper" if cy <= height / 2.0 else "lower"
    horizontal = "left" if cx <= width / 2.0 else "right"
    return f"{vertical} {horizontal}"


def _task_rng(task: QATask, seed: int) -> random.Random:
    return random.Random(f"{seed}:{task.sample_id}")


def _rotated_distractors(task: QATask, rng: random.Random, count: int) -> list[str]:
    pool = [name for name in task.all_classes if name != task.class_name]
    if len(pool) < count:
        raise ValueError(
            f"need at least {count} distractor classes, class map offers {len(pool)}"
        )
    start = rng.randrange(len(pool))
    return [pool[(start + j) % len(pool)] for j in range(count)]


def _change_statement(class_name: str, direction: str, where: str) -> str:
    if direction == DIRECTION_REMOVED:
        return f"A {class_name} was removed from the {where} part of the scene."
    return f"A new {class_name} appeared in the {where} part of the scene."


def _template_parts(task: QATask, qtype: str, rng: random.Random) -> tuple[str, str, list[str]]:
    """(question, correct answer text, distractor texts) before letter layout."""
    where = quadrant(task.bbox, task.image_width, task.image_height)
    if qtype == "yes_no":
        if task.is_change:
            verb = (
                f"Was a {task.class_name} removed from"
                if task.direction == DIRECTION_REMOVED
                else f"Did a new {task.class_name} appear in"
            )
            return f"{verb} the {where} part of the scene?", "Yes", []
        probe = _rotated_distractors(task, rng, 1)[0]
        return (
            f"Did a new {probe} appear anywhere in the scene between the two images?",
            "No",
            [],
        )
    if qtype == "mcq":
        if task.is_change:
            question = f"What change occurred in the {where} part of the image pair?"
            correct = _change_statement(task.class_name, task.direction or DIRECTION_APPEARED, where)
            names = _rotated_distractors(task, rng, 3)
            alt = (DIRECTION_APPEARED, DIRECTION_REMOVED)
            distractors = [_change_statement(name, alt[j % 2], where) for j, name in enumerate(names)]
        else:
            question = "Which statement correctly describes the difference between the two images?"
            correct = "There is no visible change between the two images."
            names = _rotated_distractors(task, rng, 3)
            distractors = [
                _change_statement(name, (DIRECTION_APPEARED, DIRECTION_REMOVED)[j % 2], "central")
                for j, name in enumerate(names)
            ]
        return question, correct, distractors
    # open
    if task.is_change:
        return (
            "Describe the change visible in the highlighted region of the image pair.",
            _change_statement(task.class_name, task.direction or DIRECTION_APPEARED, where),
            [],
        )
    return (
        "Describe any change between the two images.",
        "There is no visible change between the two images.",
        [],
    )


def _layout_record(
    task: QATask, qtype: str, question: str, correct: str, distractors: list[str], rng: random.Random
) -> QARecord:
    if qtype == "mcq":
        slot = rng.randrange(4)
        options = list(distractors)
        options.insert(slot, correct)
        answer = LETTERS[slot]
        options_tuple = tuple(options)
    else:
        answer = correct
        options_tuple = ()
    return QARecord(
        sample_id=task.sample_id,
        pair_id=task.pair_id,
        bbox=task.bbox,
        qtype=qtype,
        question=question,
        options=options_tuple,
        answer=answer,
        class_name=task.class_name if task.is_change else None,
        is_change=task.is_change,
    )


# ---------------------------------------------------------------------------
# Remote generation
# ---------------------------------------------------------------------------

_MCQ_REPLY = re.compile(
    r"Question:\s*(?P<q>.+?)\s*"
    r"A\.\s*(?P<a>.+?)\s*B\.\s*(?P<b>.+?)\s*C\.\s*(?P<c>.+?)\s*D\.\s*(?P<d>.+?)\s*"
    r"The correct answer is:?\s*(?P<ans>[ABCD])\b",
    re.DOTALL,
)

_SHORT_REPLY = re.compile(
    r"Question:\s*(?P<q>.+?)\s*(?:The correct answer is|Answer):?\s*(?P<ans>.+?)\s*$",
    re.DOTALL,
)


def _remote_prompt(task: QATask, qtype: str) -> str:
    prompts = {
        ("mcq", True): MCQ_CHANGE_PROMPT,
        ("mcq", False): MCQ_NO_CHANGE_PROMPT,
        ("yes_no", True): YES_NO_CHANGE_PROMPT,
        ("yes_no", False): YES_NO_NO_CHANGE_PROMPT,
        ("open", True): OPEN_CHANGE_PROMPT,
        ("open", False): OPEN_NO_CHANGE_PROMPT,
    }
    template = prompts[(qtype, task.is_change)]
    return template.format(cls=task.class_name) if task.is_change else template


def _parse_remote_reply(qtype: str, text: str) -> tuple[str, str, list[str]]:
    """Return (question, correct text, distractors); raises GenerationError."""
    if qtype == "mcq":
        match = _MCQ_REPLY.search(text)
        if not match:
            raise GenerationError("reply does not match the multiple-choice format")
        options = [match.group(g).strip() for g in ("a", "b", "c", "d")]
        answer_idx = LETTERS.index(match.group("ans"))
        correct = options.pop(answer_idx)
        return match.group("q").strip(), correct, options
    match = _SHORT_REPLY.search(text)
    if not match:
        raise GenerationError("reply does not match the question/answer format")
    answer = match.group("ans").strip()
    if qtype == "yes_no":
        normalized = answer.rstrip(".").capitalize()
        if normalized not in ("Yes", "No"):
            raise GenerationError(f"yes/no reply answered {answer!r}")
        answer = normalized
    return match.group("q").strip(), answer, []


def generate_qa(
    task: QATask,
    qtype: str,
    generator: str = "template",
    seed: int = 0,
    backend: TextGenBackend | None = None,
    temperature: float = 0.9,
    attempts: int = 3,
) -> QARecord:
    """Produce one QARecord for the task.

    Template mode is a deterministic fill-in; remote mode prompts ``backend``
    and parses the fixed output format, falling back to the template when
    every attempt fails. The answer letter position for multiple choice is
    randomized by an RNG seeded from (seed, sample_id).
    """
    if qtype not in QTYPES:
        raise ValueError(f"qtype must be one of {QTYPES}, got {qtype!r}")
    if task.is_change and not task.class_name:
        raise ValueError("change tasks carry the validated class name")
    rng = _task_rng(task, seed)
    if generator == "remote":
        if backend is None:
            raise ValueError("remote generation requires a text backend")
        images = [img for img in (task.before, task.after) if img is not None]
        prompt = _remote_prompt(task, qtype)
        for attempt in range(attempts):
            try:
                reply = backend.generate(prompt, images, temperature)
                question, correct, distractors = _parse_remote_reply(qtype, reply)
                return _layout_record(task, qtype, question, correct, distractors, rng)
            except (GenerationError, BackendError) as exc:
                logger.warning(
                    "generation attempt %d/%d for %s failed: %s",
                    attempt + 1,
                    attempts,
                    task.sample_id,
                    exc,
                )
        logger.warning("falling back to template for %s", task.sample_id)
    elif generator != "template":
        raise ValueError(f"generator must be template or remote, got {generator!r}")
    question, correct, distractors = _template_parts(task, qtype, rng)
    return _layout_record(task, qtype, question, correct, distractors, rng)
