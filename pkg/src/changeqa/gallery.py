"""Exemplar store with exact top-R retrieval and context-shift diagnostics.

Retrieval similarity is cosine; the group diagnostics use the Euclidean norm
because the in-group/mixed-set shift bounds are stated in L2. Galleries are
desk-scale, so retrieval is an exact linear scan. A gallery is immutable
after load and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import EncoderBackend, as_embedding, cosine
from .errors import DiagnosticsUnavailableError, NoExemplarsError, SchemaError
from .raster import load_image_png

__all__ = ["Exemplar", "GroupDiagnostics", "Gallery", "pooled_context", "context_shift"]


@dataclass(frozen=True, eq=False)
class Exemplar:
    """One annotated reference patch.

    ``group`` is the semantic class index; ``score`` is an optional 1-5
    supervision signal shown to the judge alongside the exemplar.
    """

    id: str
    group: int
    embedding: np.ndarray
    caption: str = ""
    score: int | None = None
    image_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "embedding", as_embedding(self.embedding))
        if self.group < 0:
            raise SchemaError(f"exemplar group must be >= 0, got {self.group}")
        if self.score is not None and self.score not in (1, 2, 3, 4, 5):
            raise SchemaError(f"exemplar score must lie in 1..5, got {self.score}")


@dataclass(frozen=True)
class GroupDiagnostics:
    delta_in: float
    delta_out: float
    context_shift: float


def pooled_context(exemplars: Sequence[Exemplar]) -> np.ndarray:
    """Coordinate-wise mean of the exemplar embeddings."""
    if not exemplars:
        raise ValueError("pooled_context requires a nonempty exemplar set")
    return np.mean([e.embedding for e in exemplars], axis=0)


def context_shift(query: np.ndarray, exemplars: Sequence[Exemplar]) -> float:
    """L2 distance between the pooled retrieved context and the query."""
    return float(np.linalg.norm(pooled_context(exemplars) - as_embedding(query)))


class Gallery:
    def __init__(self, exemplars: Iterable[Exemplar]) -> None:
        items = tuple(exemplars)
        if items:
            dim = items[0].embedding.size
            for e in items:
                if e.embedding.size != dim:
                    raise SchemaError(
                        f"exemplar {e.id!r} has dim {e.embedding.size}, gallery dim is {dim}"
                    )
        self._exemplars = items

    def __len__(self) -> int:
        return len(self._exemplars)

    @property
    def exemplars(self) -> tuple[Exemplar, ...]:
        return self._exemplars

    @property
    def dim(self) -> int | None:
        return self._exemplars[0].embedding.size if self._exemplars else None

    def groups(self) -> set[int]:
        return {e.group for e in self._exemplars}

    def retrieve_topk(
        self, query: np.ndarray, r: int, restrict_group: int | None = None
    ) -> list[Exemplar]:
        """Top-R exemplars by descending cosine similarity, ties broken by id.

        With ``restrict_group`` only exemplars of that group are candidates;
        an empty pool raises NoExemplarsError.
        """
        if r < 1:
            raise ValueError(f"retrieval depth must be >= 1, got {r}")
        query = as_embedding(query)
        pool = [
            e for e in self._exemplars if restrict_group is None or e.group == restrict_group
        ]
        if not pool:
            raise NoExemplarsError(
                "gallery is empty"
                if restrict_group is None
                else f"no exemplars for group {restrict_group}"
            )
        ranked = sorted(pool, key=lambda e: (-cosine(query, e.embedding), e.id))
        return ranked[:r]

    def group_diagnostics(
        self,
        query: np.ndarray,
        group: int,
        retrieved: Sequence[Exemplar] | None = None,
    ) -> GroupDiagnostics:
        """Within-group diameter, out-group margin, and pooled-context shift.

        delta_in = max L2 distance from the query to its group's exemplars,
        delta_out = min L2 distance to any other group's exemplar. The shift
        is computed for ``retrieved`` when given, else for the whole in-group
        set.
        """
        query = as_embedding(query)
        in_group = [e for e in self._exemplars if e.group == group]
        out_group = [e for e in self._exemplars if e.group != group]
        if not in_group or not out_group:
            raise DiagnosticsUnavailableError(
                f"group diagnostics need exemplars inside and outside group {group}"
            )
        delta_in = max(float(np.linalg.norm(query - e.embedding)) for e in in_group)
        delta_out = min(float(np.linalg.norm(query - e.embedding)) for e in out_group)
        pool = retrieved if retrieved is not None else in_group
        return GroupDiagnostics(
            delta_in=delta_in,
            delta_out=delta_out,
            context_shift=context_shift(query, pool),
        )

    @classmethod
    def from_manifest(
        cls, path: str | Path, encoder: EncoderBackend, root: str | Path | None = None
    ) -> "Gallery":
        """Load a JSONL manifest of exemplars and embed their images.

        Each line holds {"id", "class", "image": path, "caption", "score"?};
        image paths resolve against ``root`` (default: the manifest's
        directory). Embeddings come from the encoder backend, which caches.
        """
        manifest = Path(path)
        base = Path(root) if root is not None else manifest.parent
        exemplars: list[Exemplar] = []
        for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                image_path = base / row["image"]
                exemplars.append(
                    Exemplar(
                        id=str(row["id"]),
                        group=int(row["class"]),
                        embedding=encoder.embed_image(load_image_png(image_path)),
                        caption=str(row.get("caption", "")),
                        score=int(row["score"]) if row.get("score") is not None else None,
                        image_path=str(image_path),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad exemplar row: {exc}") from exc
        return cls(exemplars)
