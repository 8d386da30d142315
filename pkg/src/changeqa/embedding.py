"""Embedding backends, similarity metrics, and encoder-stage semantic screening.

Two backends are provided: a deterministic mock that derives a unit vector
from a content hash (with an override table for fixtures), and an HTTP client
for a remote encoder service with an on-disk response cache so reruns are
deterministic. Metric functions are pure.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import BackendError, UndefinedSimilarityError
from .raster import RgbImage, encode_image_png

__all__ = [
    "EncoderBackend",
    "MockEncoder",
    "RemoteEncoder",
    "ScreenConfig",
    "ScreenResult",
    "cosine",
    "distance",
    "rank_classes",
    "screen",
]

DECISION_DISCARD = "discard"
DECISION_ACCEPT = "accept"
DECISION_AMBIGUOUS = "ambiguous"


def as_embedding(values: Sequence[float] | np.ndarray) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ValueError(f"embedding must be a nonempty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("embedding entries must be finite")
    return vec


class EncoderBackend(Protocol):
    """Image/text embedding capability; implementations must be deterministic
    for identical input within one session."""

    def embed_image(self, image: RgbImage) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Similarity metrics
# ---------------------------------------------------------------------------


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero vectors are rejected."""
    a = as_embedding(a)
    b = as_embedding(b)
    if a.shape != b.shape:
        raise ValueError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def distance(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    """Distance/similarity between two equal-dim vectors.

    ``l1`` sums absolute coordinate differences, ``l2`` is Euclidean,
    ``wasserstein1d`` is the mean absolute difference of the sorted
    coordinates (1-D empirical optimal transport), and ``cosine_sim``
    delegates to :func:`cosine`.
    """
    a = as_embedding(a)
    b = as_embedding(b)
    if a.shape != b.shape:
        raise ValueError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    if metric == "l1":
        return float(np.abs(a - b).sum())
    if metric == "l2":
        # scaled norm: plain sum-of-squares underflows for tiny differences
        diff = np.abs(a - b)
        peak = float(diff.max())
        if peak == 0.0:
            return 0.0
        scaled = diff / peak
        return float(peak * np.sqrt(np.dot(scaled, scaled)))
    if metric == "wasserstein1d":
        return float(np.abs(np.sort(a) - np.sort(b)).mean())
    if metric == "cosine_sim":
        return cosine(a, b)
    raise ValueError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class MockEncoder:
    """Deterministic encoder: hash-seeded pseudorandom unit vectors.

    Identical bytes always map to the identical vector. ``image_overrides``
    keys are the sha256 hexdigest of ``RgbImage.tobytes()``; ``text_overrides``
    keys are the raw prompt strings.
    """

    def __init__(
        self,
        dim: int = 64,
        image_overrides: Mapping[str, Sequence[float]] | None = None,
        text_overrides: Mapping[str, Sequence[float]] | None = None,
    ) -> None:
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self._image_overrides = {k: as_embedding(v) for k, v in (image_overrides or {}).items()}
        self._text_overrides = {k: as_embedding(v) for k, v in (text_overrides or {}).items()}

    @staticmethod
    def image_key(image: RgbImage) -> str:
        return hashlib.sha256(image.tobytes()).hexdigest()

    def _hash_vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def embed_image(self, image: RgbImage) -> np.ndarray:
        key = self.image_key(image)
        if key in self._image_overrides:
            return self._image_overrides[key]
        return self._hash_vector(b"image\x00" + image.tobytes())

    def embed_text(self, text: str) -> np.ndarray:
        if text in self._text_overrides:
            return self._text_overrides[text]
        return self._hash_vector(b"text\x00" + text.encode("utf-8"))


class RemoteEncoder:
    """HTTP encoder client with an on-disk cache keyed by content hash.

    Protocol: POST {url}/embed with JSON {"kind": "image"|"text", "data":
    base64 PNG or UTF-8 text} -> 200 {"dim": N, "values": [...]}. Cache files
    hold a ``dim N`` header line and one line of space-separated floats;
    writes go through a temp file + rename so concurrent writers are safe.
    """

    def __init__(self, url: str, cache_dir: str | Path | None = None, timeout: float = 30.0) -> None:
        self.url = url.rstrip("/")
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.timeout = timeout
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    def embed_image(self, image: RgbImage) -> np.ndarray:
        png = encode_image_png(image)
        key = hashlib.sha256(b"image\x00" + image.tobytes()).hexdigest()
        return self._embed(key, {"kind": "image", "data": base64.b64encode(png).decode("ascii")})

    def embed_text(self, text: str) -> np.ndarray:
        key = hashlib.sha256(b"text\x00" + text.encode("utf-8")).hexdigest()
        return self._embed(key, {"kind": "text", "data": text})

    def _embed(self, key: str, payload: dict) -> np.ndarray:
        cached = self._cache_read(key)
        if cached is not None:
            return cached
        body = json.dumps(payload).encode("utf-8")
        request = urllib.request.Request(
            self.url + "/embed", data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                if response.status != 200:
                    raise BackendError(f"encoder returned HTTP {response.status}")
                reply = json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise BackendError(f"encoder request failed: {exc}") from exc
        try:
            vec = as_embedding(reply["values"])
            if int(reply["dim"]) != vec.size:
                raise ValueError("declared dim disagrees with values length")
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"encoder reply malformed: {exc}") from exc
        self._cache_write(key, vec)
        return vec

    def _cache_read(self, key: str) -> np.ndarray | None:
        if not self.cache_dir:
            return None
        path = self.cache_dir / key
        if not path.exists():
            return None
        lines = path.read_text(encoding="ascii").splitlines()
        dim = int(lines[0].split()[1])
        vec = np.array([float(v) for v in lines[1].split()], dtype=np.float64)
        if vec.size != dim:
            raise BackendError(f"corrupt cache entry {path}")
        return vec

    def _cache_write(self, key: str, vec: np.ndarray) -> None:
        if not self.cache_dir:
            return
        payload = f"dim {vec.size}\n" + " ".join(repr(float(v)) for v in vec) + "\n"
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="ascii") as handle:
                handle.write(payload)
            os.replace(tmp, self.cache_dir / key)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


# ---------------------------------------------------------------------------
# Encoder-stage screening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScreenConfig:
    """Settings for the encoder screening stage.

    ``class_prompts`` holds one text prompt per class index; ``k`` is the
    ranking depth, ``tau_enc`` the minimum similarity for a top-k hit, and
    ``tau_sim`` the before/after similarity above which a candidate is
    suspected to be a no-change false positive.
    """

    class_prompts: tuple[str, ...]
    k: int = 5
    tau_enc: float = 0.5
    tau_sim: float = 0.9

    def __post_init__(self) -> None:
        if not self.class_prompts:
            raise ValueError("at least one class prompt is required")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        for name, value in (("tau_enc", self.tau_enc), ("tau_sim", self.tau_sim)):
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1], got {value}")
        object.__setattr__(self, "class_prompts", tuple(self.class_prompts))


@dataclass(frozen=True)
class ScreenResult:
    decision: str
    no_change_suspect: bool
    before_ranking: tuple[tuple[int, float], ...]
    after_ranking: tuple[tuple[int, float], ...]
    pair_similarity: float


def rank_classes(
    image: RgbImage, cfg: ScreenConfig, encoder: EncoderBackend
) -> list[tuple[int, float]]:
    """Classes ordered by descending cosine similarity to the image embedding.

    Ties break on ascending class index, so the ranking is stable under
    permutation of equal-similarity prompts.
    """
    image_vec = encoder.embed_image(image)
    sims = [cosine(image_vec, encoder.embed_text(prompt)) for prompt in cfg.class_prompts]
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    return [(i, sims[i]) for i in order]


def _in_topk(ranking: Sequence[tuple[int, float]], class_id: int, k: int, tau: float) -> bool:
    return any(cls == class_id and sim >= tau for cls, sim in ranking[:k])


def screen(
    before: RgbImage,
    after: RgbImage,
    expected_class: int,
    cfg: ScreenConfig,
    encoder: EncoderBackend,
) -> ScreenResult:
    """Semantic screening of a candidate change.

    Discards the candidate when the expected class misses the after crop's
    top-k at similarity >= tau_enc. When the class ranks in the top-k of both
    crops the candidate is ambiguous. Non-discarded candidates are
    additionally flagged as no-change suspects when the two crop embeddings
    are more similar than tau_sim.
    """
    if not 0 <= expected_class < len(cfg.class_prompts):
        raise ValueError(f"expected_class {expected_class} has no prompt")
    before_vec = encoder.embed_image(before)
    after_vec = encoder.embed_image(after)
    text_vecs = [encoder.embed_text(prompt) for prompt in cfg.class_prompts]

    def ranking(image_vec: np.ndarray) -> tuple[tuple[int, float], ...]:
        sims = [cosine(image_vec, t) for t in text_vecs]
        order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
        return tuple((i, sims[i]) for i in order)

    before_ranking = ranking(before_vec)
    after_ranking = ranking(after_vec)
    pair_similarity = cosine(before_vec, after_vec)

    if not _in_topk(after_ranking, expected_class, cfg.k, cfg.tau_enc):
        return ScreenResult(DECISION_DISCARD, False, before_ranking, after_ranking, pair_similarity)
    suspect = pair_similarity >= cfg.tau_sim
    if _in_topk(before_ranking, expected_class, cfg.k, cfg.tau_enc):
        return ScreenResult(DECISION_AMBIGUOUS, suspect, before_ranking, after_ranking, pair_similarity)
    return ScreenResult(DECISION_ACCEPT, suspect, before_ranking, after_ranking, pair_similarity)
