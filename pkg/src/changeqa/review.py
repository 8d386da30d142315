"""Annotation review loop: task queue, append-only verdict store, agreement.

The HTTP service serves dataset rows as blind tasks (no pipeline provenance
in the payload), records Agree/Disagree verdicts with a difficulty score, and
reports unanimity agreement plus precision over retained change rows. The
store is append-only JSONL with an fsync per record, so replaying it always
reproduces the same report.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.parse
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DuplicateAnnotationError, SchemaError
from .pipeline import PairSpec, load_pairs_manifest, read_dataset
from .qagen import QARecord

__all__ = [
    "AnnotationRecord",
    "AnnotationStore",
    "AgreementReport",
    "unanimity_agreement",
    "ReviewService",
    "serve",
]

logger = logging.getLogger(__name__)

VERDICTS = ("agree", "disagree")
DIFFICULTY_LABELS = {1: "Very simple", 2: "Simple", 3: "Hard"}


@dataclass(frozen=True)
class AnnotationRecord:
    sample_id: str
    annotator_id: str
    verdict: str
    difficulty: int
    alternative: str | None = None
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise SchemaError(f"verdict must be agree or disagree, got {self.verdict!r}")
        if self.difficulty not in (1, 2, 3):
            raise SchemaError(f"difficulty must lie in 1..3, got {self.difficulty!r}")
        if not self.sample_id or not self.annotator_id:
            raise SchemaError("sample_id and annotator_id are required")

    def to_json_dict(self) -> dict:
        row = {
            "sample_id": self.sample_id,
            "annotator_id": self.annotator_id,
            "verdict": self.verdict,
            "difficulty": self.difficulty,
        }
        if self.alternative is not None:
            row["alternative"] = self.alternative
        row["timestamp"] = self.timestamp
        return row

    @classmethod
    def from_json_dict(cls, row: Mapping) -> "AnnotationRecord":
        return cls(
            sample_id=str(row["sample_id"]),
            annotator_id=str(row["annotator_id"]),
            verdict=str(row["verdict"]),
            difficulty=int(row["difficulty"]),
            alternative=row.get("alternative"),
            timestamp=float(row.get("timestamp", 0.0)),
        )


class AnnotationStore:
    """Append-only JSONL store with one fsync per record.

    Uniqueness of (sample_id, annotator_id) is enforced on append; replaying
    the file reproduces the in-memory state exactly.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: list[AnnotationRecord] = []
        self._seen: set[tuple[str, str]] = set()
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._admit(AnnotationRecord.from_json_dict(json.loads(line)))

    def _admit(self, record: AnnotationRecord) -> None:
        key = (record.sample_id, record.annotator_id)
        if key in self._seen:
            raise DuplicateAnnotationError(
                f"sample {record.sample_id} already annotated by {record.annotator_id}"
            )
        self._seen.add(key)
        self._records.append(record)

    def append(self, record: AnnotationRecord) -> None:
        with self._lock:
            self._admit(record)
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(record.to_json_dict(), ensure_ascii=False))
                handle.write("\n")
                handle.flush()
                os.fsync(handle.fileno())

    def records(self) -> tuple[AnnotationRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def has(self, sample_id: str, annotator_id: str) -> bool:
        with self._lock:
            return (sample_id, annotator_id) in self._seen

    def export_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_json_dict(), ensure_ascii=False) + "\n" for r in self.records()
        )


@dataclass(frozen=True)
class AgreementReport:
    """Unanimity agreement over fully annotated samples.

    ``per_sample`` maps sample_id to 1 when every assigned annotator agreed,
    else 0. ``p_ha`` restricts the average to retained samples (the pipeline's
    kept change rows) per the retained indicator supplied by the caller.
    """

    per_sample: dict[str, int]
    human_agreement: float
    p_ha: float
    complete_samples: int
    incomplete_samples: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "human_agreement": self.human_agreement,
            "p_ha": self.p_ha,
            "complete_samples": self.complete_samples,
            "incomplete_samples": list(self.incomplete_samples),
            "per_sample": self.per_sample,
        }


def unanimity_agreement(
    records: Iterable[AnnotationRecord],
    panel_size: int = 3,
    retained: Mapping[str, bool] | None = None,
) -> AgreementReport:
    """Per-sample unanimity, its mean, and precision over retained samples.

    A sample counts only once every one of ``panel_size`` annotators filed a
    verdict; incomplete samples are excluded and reported. A sample agrees
    (A_n = 1) only when every filed verdict is agree.
    """
    if panel_size < 1:
        raise ValueError(f"panel_size must be >= 1, got {panel_size}")
    by_sample: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        by_sample.setdefault(record.sample_id, []).append(record)
    per_sample: dict[str, int] = {}
    incomplete: list[str] = []
    for sample_id in sorted(by_sample):
        verdicts = by_sample[sample_id]
        if len({r.annotator_id for r in verdicts}) < panel_size:
            incomplete.append(sample_id)
            continue
        per_sample[sample_id] = int(all(r.verdict == "agree" for r in verdicts))
    human_agreement = (
        sum(per_sample.values()) / len(per_sample) if per_sample else 0.0
    )
    if retained is None:
        retained_ids = list(per_sample)
    else:
        retained_ids = [s for s in per_sample if retained.get(s, False)]
    p_ha = (
        sum(per_sample[s] for s in retained_ids) / len(retained_ids) if retained_ids else 0.0
    )
    return AgreementReport(
        per_sample=per_sample,
        human_agreement=human_agreement,
        p_ha=p_ha,
        complete_samples=len(per_sample),
        incomplete_samples=tuple(incomplete),
    )


# ---------------------------------------------------------------------------
# HTTP service
# ---------------------------------------------------------------------------


class ReviewService:
    """In-process review service; ``serve`` binds it to an HTTP address.

    Task payloads are blind: they expose only the sample id, image URLs, the
    bbox, and the question/answer text, never the filter trail or any other
    pipeline provenance.
    """

    def __init__(
        self,
        records: list[QARecord],
        store: AnnotationStore,
        pairs: list[PairSpec] | None = None,
        static_dir: str | Path | None = None,
        panel_size: int = 3,
    ) -> None:
        self.records = records
        self.by_sample = {r.sample_id: r for r in records}
        self.store = store
        self.pairs = {p.pair_id: p for p in (pairs or [])}
        self.static_dir = Path(static_dir) if static_dir else None
        self.panel_size = panel_size

    @classmethod
    def from_paths(
        cls,
        dataset_path: str | Path,
        store_path: str | Path,
        pairs_path: str | Path | None = None,
        static_dir: str | Path | None = None,
        panel_size: int = 3,
    ) -> "ReviewService":
        records, malformed = read_dataset(dataset_path)
        if malformed:
            logger.warning("dataset %s: %d malformed rows ignored", dataset_path, malformed)
        pairs = load_pairs_manifest(pairs_path) if pairs_path else None
        return cls(records, AnnotationStore(store_path), pairs, static_dir, panel_size)

    def task_payload(self, record: QARecord) -> dict:
        payload = {
            "sample_id": record.sample_id,
            "before_image_url": f"/img/{record.pair_id}/before.png",
            "after_image_url": f"/img/{record.pair_id}/after.png",
            "bbox": record.bbox.to_dict(),
            "question": record.question,
        }
        if record.qtype == "mcq":
            payload["options"] = list(record.options)
        payload["answer"] = record.answer
        return payload

    def next_task(self, annotator_id: str) -> dict | None:
        for record in self.records:
            if not self.store.has(record.sample_id, annotator_id):
                return self.task_payload(record)
        return None

    def submit(self, body: Mapping) -> AnnotationRecord:
        try:
            record = AnnotationRecord(
                sample_id=str(body["sample_id"]),
                annotator_id=str(body["annotator_id"]),
                verdict=str(body["verdict"]),
                difficulty=int(body["difficulty"]),
                alternative=body.get("alternative"),
                timestamp=time.time(),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad annotation payload: {exc}") from exc
        if record.sample_id not in self.by_sample:
            raise SchemaError(f"unknown sample {record.sample_id!r}")
        self.store.append(record)
        return record

    def agreement(self) -> AgreementReport:
        retained = {r.sample_id: r.is_change for r in self.records}
        return unanimity_agreement(self.store.records(), self.panel_size, retained)

    def image_bytes(self, pair_id: str, which: str) -> bytes | None:
        pair = self.pairs.get(pair_id)
        if pair is None:
            return None
        path = pair.before_image if which == "before" else pair.after_image
        try:
            return Path(path).read_bytes()
        except OSError:
            return None


class _Handler(BaseHTTPRequestHandler):
    service: ReviewService  # assigned by serve()

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("review-server: " + fmt, *args)

    def _send_json(self, status: int, payload: object) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, status: int, content_type: str, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:  # noqa: N802 (http.server naming)
        parsed = urllib.parse.urlparse(self.path)
        if parsed.path == "/api/tasks/next":
            query = urllib.parse.parse_qs(parsed.query)
            annotator = query.get("annotator", [""])[0]
            if not annotator:
                self._send_json(400, {"error": "annotator query parameter required"})
                return
            task = self.service.next_task(annotator)
            if task is None:
                self.send_response(204)
                self.send_header("Content-Length", "0")
                self.end_headers()
                return
            self._send_json(200, task)
            return
        if parsed.path == "/api/agreement":
            self._send_json(200, self.service.agreement().to_json_dict())
            return
        if parsed.path == "/api/export":
            self._send_bytes(
                200, "application/jsonl; charset=utf-8", self.service.store.export_jsonl().encode("utf-8")
            )
            return
        if parsed.path.startswith("/img/"):
            parts = parsed.path.split("/")
            if len(parts) == 4 and parts[3] in ("before.png", "after.png"):
                body = self.service.image_bytes(parts[2], parts[3].removesuffix(".png"))
                if body is not None:
                    self._send_bytes(200, "image/png", body)
                    return
            self._send_json(404, {"error": "image not found"})
            return
        self._serve_static(parsed.path)

    def _serve_static(self, path: str) -> None:
        if self.service.static_dir is None:
            self._send_json(404, {"error": "no static bundle configured"})
            return
        relative = path.lstrip("/") or "index.html"
        target = (self.service.static_dir / relative).resolve()
        root = self.service.static_dir.resolve()
        if root not in target.parents and target != root:
            self._send_json(404, {"error": "not found"})
            return
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            self._send_json(404, {"error": "not found"})
            return
        content_types = {
            ".html": "text/html; charset=utf-8",
            ".js": "text/javascript; charset=utf-8",
            ".css": "text/css; charset=utf-8",
            ".png": "image/png",
            ".svg": "image/svg+xml",
            ".map": "application/json",
        }
        self._send_bytes(
            200, content_types.get(target.suffix, "application/octet-stream"), target.read_bytes()
        )

    def do_POST(self) -> None:  # noqa: N802
        parsed = urllib.parse.urlparse(self.path)
        if parsed.path != "/api/annotations":
            self._send_json(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            self._send_json(400, {"error": "body must be JSON"})
            return
        try:
            record = self.service.submit(body)
        except DuplicateAnnotationError as exc:
            self._send_json(409, {"error": str(exc)})
            return
        except SchemaError as exc:
            self._send_json(400, {"error": str(exc)})
            return
        self._send_json(201, record.to_json_dict())


def serve(service: ReviewService, host: str = "127.0.0.1", port: int = 8765) -> ThreadingHTTPServer:
    """Bind the service; the caller owns the returned server's lifecycle.

    Call ``serve_forever()`` on the result (or drive it from a thread in
    tests) and ``shutdown()`` to stop. Binding failures raise OSError.
    """
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)
