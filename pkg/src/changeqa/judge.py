"""Retrieval-augmented judging, Best-of-N selection, and preference weighting.

The judge scores a (before, after, class) query on a 1-5 scale against
retrieved in-class exemplars. Best-of-N scores several candidate class
hypotheses with the same retrieved context and either keeps the argmax or
filters by a score threshold. The preference helpers implement the
closed-form reweighting pi*(y) ~ pi_ref(y) * exp(r(y) / beta) that Best-of-N
approximates at inference time.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .errors import BackendError, ProtocolError
from .gallery import Exemplar, Gallery
from .raster import RgbImage, encode_image_png, load_image_png

__all__ = [
    "JudgeQuery",
    "JudgeRequest",
    "JudgePrompt",
    "Hypothesis",
    "BestOfNResult",
    "PreferenceModel",
    "JudgeBackend",
    "MockJudge",
    "RemoteJudge",
    "assemble_prompt",
    "judge_query",
    "best_of_n",
    "preference_distribution",
    "sample_preference",
    "acceptance_probability",
    "monte_carlo_acceptance",
]

SCORE_SCALE = (1, 2, 3, 4, 5)

JUDGE_INSTRUCTION = (
    "You are an expert in recognizing objects from satellite images. "
    "Your task is to score a query image patch from 1 to 5. "
    "You need to specify if {selected_class} appears in the image. "
    "All images are satellite images. "
    "Return only the numerical score (1, 2, 3, 4, or 5)."
)

SCORING_GUIDE = (
    "5: There is definitely a {selected_class} in the last image. "
    "The object's shape, shadow, and features are clearly visible from above.\n"
    "4: Very likely that the image contains a {selected_class}. Features are mostly clear.\n"
    "3: Probably the image contains a {selected_class}, but visibility or details are ambiguous.\n"
    "2: Unlikely that a {selected_class} appears in the image.\n"
    "1: Definitely does not contain a {selected_class}."
)

IMAGE_SLOT = "{image}"


@dataclass(frozen=True, eq=False)
class JudgeQuery:
    """Ambiguous candidate to validate: temporal crops plus the hypothesized class.

    ``embedding`` is the retrieval key (the after crop's image embedding);
    it is required when the context set must be retrieved from a gallery.
    """

    before: RgbImage
    after: RgbImage
    class_id: int
    class_name: str
    embedding: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class JudgeRequest:
    query: JudgeQuery
    context: tuple[Exemplar, ...] = ()
    n: int = 1
    tau: float = 4.0
    temperature: float = 0.9

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"hypothesis count must be >= 1, got {self.n}")
        if not SCORE_SCALE[0] <= self.tau <= SCORE_SCALE[-1]:
            raise ValueError(f"tau must lie on the score scale {SCORE_SCALE}, got {self.tau}")
        object.__setattr__(self, "context", tuple(self.context))


@dataclass(frozen=True, eq=False)
class JudgePrompt:
    """Assembled prompt: text with one ``{image}`` slot per attached image."""

    text: str
    images: tuple[RgbImage, ...]

    def content_hash(self) -> str:
        digest = hashlib.sha256(self.text.encode("utf-8"))
        for image in self.images:
            digest.update(b"\x00")
            digest.update(image.tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class Hypothesis:
    class_id: int
    class_name: str


@dataclass(frozen=True)
class BestOfNResult:
    scores: tuple[int, ...]
    mode: str
    best_index: int
    selected: tuple[int, ...]

    @property
    def best_score(self) -> int:
        return self.scores[self.best_index]


class JudgeBackend(Protocol):
    def score(self, prompt: JudgePrompt) -> int: ...


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------


def assemble_prompt(req: JudgeRequest) -> JudgePrompt:
    """Instruction, scoring guide, numbered exemplars, then the query.

    Exemplars appear in context order as ``Example (i): {image} Score = s``
    (score defaults to 5 for unscored reference exemplars); the query is the
    final example with both temporal crops and ``Score = ?``. Output is
    byte-stable for identical inputs.
    """
    cls = req.query.class_name
    lines = [
        JUDGE_INSTRUCTION.format(selected_class=cls),
        "",
        SCORING_GUIDE.format(selected_class=cls),
        "",
    ]
    images: list[RgbImage] = []
    for i, exemplar in enumerate(req.context, start=1):
        score = exemplar.score if exemplar.score is not None else 5
        lines.append(f"Example ({i}): {IMAGE_SLOT} Score = {score}")
        if exemplar.image_path:
            images.append(load_image_png(exemplar.image_path))
    query_index = len(req.context) + 1
    lines.append(f"Example ({query_index}): {IMAGE_SLOT} {IMAGE_SLOT} Score = ?")
    images.extend([req.query.before, req.query.after])
    return JudgePrompt(text="\n".join(lines), images=tuple(images))


def _resolve_context(
    req: JudgeRequest, gallery: Gallery | None, context_size: int, restrict_group: bool
) -> tuple[Exemplar, ...]:
    if req.context:
        return req.context
    if gallery is None:
        return ()
    if req.query.embedding is None:
        raise ValueError("retrieval from a gallery requires the query embedding")
    group = req.query.class_id if restrict_group else None
    return tuple(gallery.retrieve_topk(req.query.embedding, context_size, restrict_group=group))


def judge_query(
    req: JudgeRequest,
    backend: JudgeBackend,
    gallery: Gallery | None = None,
    context_size: int = 4,
    restrict_group: bool = True,
) -> int:
    """Retrieve the context set (group-restricted by default), prompt, score."""
    context = _resolve_context(req, gallery, context_size, restrict_group)
    prompt = assemble_prompt(replace(req, context=context))
    score = backend.score(prompt)
    if not isinstance(score, (int, np.integer)) or score not in SCORE_SCALE:
        raise ProtocolError(f"judge returned {score!r}, expected an integer in 1..5")
    return int(score)


def best_of_n(
    hypotheses: Sequence[Hypothesis],
    req: JudgeRequest,
    backend: JudgeBackend,
    gallery: Gallery | None = None,
    mode: str = "argmax",
    context_size: int = 4,
    restrict_group: bool = True,
) -> BestOfNResult:
    """Score every hypothesis with a shared retrieved context and select.

    ``argmax`` keeps the best-scoring hypothesis (ties resolve to the lowest
    index); ``threshold`` keeps every hypothesis scoring strictly above
    ``req.tau``, possibly none. The context set is retrieved once, for the
    original query, and reused across hypotheses.
    """
    if not hypotheses:
        raise ValueError("best_of_n requires at least one hypothesis")
    if mode not in ("argmax", "threshold"):
        raise ValueError(f"mode must be argmax or threshold, got {mode!r}")
    context = _resolve_context(req, gallery, context_size, restrict_group)
    scores: list[int] = []
    for hyp in hypotheses:
        query = replace(req.query, class_id=hyp.class_id, class_name=hyp.class_name)
        scores.append(judge_query(replace(req, query=query, context=context), backend))
    best_index = max(range(len(scores)), key=lambda j: (scores[j], -j))
    if mode == "argmax":
        selected: tuple[int, ...] = (best_index,)
    else:
        selected = tuple(j for j, s in enumerate(scores) if s > req.tau)
    return BestOfNResult(scores=tuple(scores), mode=mode, best_index=best_index, selected=selected)


# ---------------------------------------------------------------------------
# Preference weighting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PreferenceModel:
    """Reference distribution + per-candidate rewards + regularization strength."""

    reference: np.ndarray
    rewards: np.ndarray
    beta: float

    def __post_init__(self) -> None:
        reference = np.asarray(self.reference, dtype=np.float64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        if reference.ndim != 1 or reference.size == 0:
            raise ValueError("reference must be a nonempty 1-D distribution")
        if reference.shape != rewards.shape:
            raise ValueError("reference and rewards must cover the same candidate set")
        if np.any(reference < 0.0) or not np.isclose(reference.sum(), 1.0, atol=1e-9):
            raise ValueError("reference must be a probability distribution")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "rewards", rewards)


def preference_distribution(pm: PreferenceModel) -> np.ndarray:
    """Closed-form reweighting pi*(y) ~ pi_ref(y) * exp(r(y) / beta), normalized."""
    exponent = pm.rewards / pm.beta
    exponent = exponent - exponent.max()  # stabilize before exponentiating
    weights = pm.reference * np.exp(exponent)
    return weights / weights.sum()


def sample_preference(
    distribution: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Inverse-CDF sampling of candidate indices from a finite distribution."""
    distribution = np.asarray(distribution, dtype=np.float64)
    cdf = np.cumsum(distribution)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right")


def acceptance_probability(p_tau: float, n: int) -> float:
    """Probability that at least one of n independent draws clears the threshold."""
    if not 0.0 <= p_tau <= 1.0:
        raise ValueError(f"p_tau must lie in [0, 1], got {p_tau}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1.0 - (1.0 - p_tau) ** n


def monte_carlo_acceptance(
    p_tau: float, n: int, trials: int, rng: np.random.Generator
) -> float:
    """Empirical acceptance rate over i.i.d. Bernoulli(p_tau) batches of size n."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    draws = rng.random((trials, n)) < p_tau
    return float(draws.any(axis=1).mean())


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class MockJudge:
    """Deterministic judge for tests and dry runs.

    Resolution order: fixture table entry by prompt content hash, then the
    ``rule`` callable, then the pinned default score.
    """

    def __init__(
        self,
        default: int | None = 5,
        table: Mapping[str, int] | None = None,
        rule: Callable[[JudgePrompt], int] | None = None,
    ) -> None:
        self.default = default
        self.table = dict(table or {})
        self.rule = rule

    @classmethod
    def from_table(cls, path: str | Path, default: int | None = None) -> "MockJudge":
        """Load a JSONL fixture table of {"query_hash", "score"} rows."""
        table: dict[str, int] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            table[str(row["query_hash"])] = int(row["score"])
        return cls(default=default, table=table)

    def score(self, prompt: JudgePrompt) -> int:
        key = prompt.content_hash()
        if key in self.table:
            return self.table[key]
        if self.rule is not None:
            return int(self.rule(prompt))
        if self.default is None:
            raise BackendError(f"mock judge has no entry for prompt {key[:12]}...")
        return self.default


class RemoteJudge:
    """HTTP judge client: POST {url}/judge {"prompt_text", "images"} -> {"score"}.

    Failures are retried 3 times with exponential backoff; replies are parsed
    as the first integer token and must land in 1..5.
    """

    RETRIES = 3

    def __init__(self, url: str, timeout: float = 60.0, backoff: float = 1.0) -> None:
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.backoff = backoff

    def score(self, prompt: JudgePrompt) -> int:
        payload = json.dumps(
            {
                "prompt_text": prompt.text,
                "images": [
                    base64.b64encode(encode_image_png(img)).decode("ascii")
                    for img in prompt.images
                ],
            }
        ).encode("utf-8")
        last_error: Exception | None = None
        for attempt in range(self.RETRIES):
            try:
                request = urllib.request.Request(
                    self.url + "/judge", data=payload, headers={"Content-Type": "application/json"}
                )
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    if response.status != 200:
                        raise BackendError(f"judge returned HTTP {response.status}")
                    reply = json.loads(response.read().decode("utf-8"))
                return _parse_score(reply)
            except ProtocolError:
                raise
            except (urllib.error.URLError, OSError, json.JSONDecodeError, BackendError) as exc:
                last_error = exc
                if attempt + 1 < self.RETRIES:
                    time.sleep(self.backoff * (2**attempt))
        raise BackendError(f"judge failed after {self.RETRIES} attempts: {last_error}")


def _parse_score(reply: object) -> int:
    if not isinstance(reply, dict) or "score" not in reply:
        raise ProtocolError(f"judge reply missing score field: {reply!r}")
    raw = reply["score"]
    if isinstance(raw, str):
        match = re.search(r"-?\d+", raw)
        if match is None:
            raise ProtocolError(f"judge reply has no integer token: {raw!r}")
        raw = int(match.group())
    if not isinstance(raw, int) or isinstance(raw, bool) or raw not in SCORE_SCALE:
        raise ProtocolError(f"judge score {raw!r} outside 1..5")
    return raw
