"""Threshold calibration and simulation lab.

Covers ROC sweeps with Youden's J operating point (used to calibrate the
temporal-IoU gate against human change/no-change labels), top-k retrieval
consistency curves, per-metric human agreement rates, and an ERM simulation
of learning from high-confidence noisy pseudo-labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateDataError, FormatError, IncompleteAnnotationError, SchemaError

__all__ = [
    "LabeledScore",
    "RocResult",
    "ConvergencePoint",
    "load_labeled_scores",
    "roc_sweep",
    "topk_consistency",
    "metric_agreement",
    "simulate_convergence",
    "topk_flags_from_annotations",
    "metric_approvals_from_annotations",
]

LABEL_POSITIVE = "pos"
LABEL_NEGATIVE = "neg"


@dataclass(frozen=True)
class LabeledScore:
    sample_id: str
    score: float
    label: str

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")
        if self.label not in (LABEL_POSITIVE, LABEL_NEGATIVE):
            raise ValueError(f"label must be pos or neg, got {self.label!r}")


@dataclass(frozen=True)
class RocResult:
    points: tuple[tuple[float, float], ...]  # (fpr, tpr), fpr nondecreasing
    auc: float
    best_threshold: float
    youden_j: float

    def points_csv(self) -> str:
        lines = ["fpr,tpr"]
        lines.extend(f"{fpr:.10g},{tpr:.10g}" for fpr, tpr in self.points)
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "auc": self.auc,
            "best_threshold": self.best_threshold,
            "youden_j": self.youden_j,
            "points": [list(p) for p in self.points],
        }


def load_labeled_scores(path: str | Path) -> list[LabeledScore]:
    """CSV reader for ``sample_id,score,label`` rows (label pos/neg)."""
    rows: list[LabeledScore] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and row[:1] == ["sample_id"]):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected sample_id,score,label")
            try:
                rows.append(LabeledScore(row[0], float(row[1]), row[2].strip()))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return rows


def roc_sweep(data: Sequence[LabeledScore], direction: str = "higher_is_positive") -> RocResult:
    """ROC over thresholds at all distinct scores, trapezoid AUC, Youden's J.

    ``higher_is_positive`` predicts positive when score >= threshold;
    ``lower_is_positive`` predicts positive when score <= threshold. The
    returned threshold maximizes tpr - fpr, with ties resolved to the
    smaller threshold value.
    """
    if direction not in ("higher_is_positive", "lower_is_positive"):
        raise ValueError(f"unknown direction {direction!r}")
    pos = np.array([d.score for d in data if d.label == LABEL_POSITIVE], dtype=np.float64)
    neg = np.array([d.score for d in data if d.label == LABEL_NEGATIVE], dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise DegenerateDataError("ROC needs at least one positive and one negative")
    thresholds = np.unique(np.concatenate([pos, neg]))
    if direction == "higher_is_positive":
        sweep = thresholds[::-1]  # loosening the cut as the threshold drops

        def predict_positive(scores: np.ndarray, threshold: float) -> np.ndarray:
            return scores >= threshold

    else:
        sweep = thresholds

        def predict_positive(scores: np.ndarray, threshold: float) -> np.ndarray:
            return scores <= threshold

    n_pos, n_neg = pos.size, neg.size
    points: list[tuple[float, float]] = [(0.0, 0.0)]
    stats: list[tuple[float, int, int]] = []  # (threshold, tp, fp)
    for threshold in sweep:
        tp = int(np.count_nonzero(predict_positive(pos, threshold)))
        fp = int(np.count_nonzero(predict_positive(neg, threshold)))
        points.append((fp / n_neg, tp / n_pos))
        stats.append((float(threshold), tp, fp))
    auc = float(np.trapezoid([p[1] for p in points], [p[0] for p in points]))
    # Youden's J compared in exact integer arithmetic so ties break on the
    # smaller threshold rather than on float rounding noise.
    best_threshold, best_tp, best_fp = min(
        stats, key=lambda item: (-(item[1] * n_neg - item[2] * n_pos), item[0])
    )
    return RocResult(
        points=tuple(points),
        auc=auc,
        best_threshold=best_threshold,
        youden_j=best_tp / n_pos - best_fp / n_neg,
    )


def topk_consistency(
    agree_flags: Sequence[Sequence[bool]], k_max: int
) -> list[tuple[int, float]]:
    """A(k) = fraction of queries with an agreed item within the top k.

    ``agree_flags[q][r]`` says whether the item retrieved at rank r+1 for
    query q was judged a correct match. Nondecreasing in k by construction.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    if not agree_flags:
        raise IncompleteAnnotationError("no annotated queries")
    for q, flags in enumerate(agree_flags):
        if len(flags) < k_max:
            raise IncompleteAnnotationError(
                f"query {q} has {len(flags)} ranks annotated, need {k_max}"
            )
    curve: list[tuple[int, float]] = []
    for k in range(1, k_max + 1):
        hits = sum(1 for flags in agree_flags if any(flags[:k]))
        curve.append((k, hits / len(agree_flags)))
    return curve


def metric_agreement(approvals: Mapping[str, Mapping[str, bool]]) -> dict[str, float]:
    """Per-metric fraction of queries whose retrieved set was human-approved.

    Every metric must cover the same query set.
    """
    if not approvals:
        raise SchemaError("no metrics supplied")
    query_sets = {metric: frozenset(queries) for metric, queries in approvals.items()}
    reference = next(iter(query_sets.values()))
    if not reference:
        raise SchemaError("metric agreement needs at least one query")
    for metric, queries in query_sets.items():
        if queries != reference:
            raise SchemaError(f"metric {metric!r} covers a different query set")
    return {
        metric: sum(1 for ok in queries.values() if ok) / len(queries)
        for metric, queries in approvals.items()
    }


# ---------------------------------------------------------------------------
# Adapters for review-server annotation exports
# ---------------------------------------------------------------------------
#
# Retrieval-review tasks encode their target in the sample id after the last
# "@": an integer rank for top-k consistency ("q07@3") or a metric name for
# the metric comparison ("q07@cosine_sim"). A rank or metric counts as agreed
# only when every filed verdict is agree.


def _split_sample_id(sample_id: str) -> tuple[str, str]:
    if "@" not in sample_id:
        raise SchemaError(f"sample id {sample_id!r} lacks an '@<rank-or-metric>' suffix")
    query, _, suffix = sample_id.rpartition("@")
    if not query or not suffix:
        raise SchemaError(f"sample id {sample_id!r} lacks an '@<rank-or-metric>' suffix")
    return query, suffix


def _unanimous(verdicts: Sequence[str]) -> bool:
    return all(v == "agree" for v in verdicts)


def topk_flags_from_annotations(records, k_max: int) -> list[list[bool]]:
    """Per-query agree flags for ranks 1..k_max from review annotations."""
    verdicts: dict[tuple[str, int], list[str]] = {}
    for record in records:
        query, suffix = _split_sample_id(record.sample_id)
        try:
            rank = int(suffix)
        except ValueError:
            raise SchemaError(f"sample id {record.sample_id!r} rank {suffix!r} is not an integer") from None
        verdicts.setdefault((query, rank), []).append(record.verdict)
    queries = sorted({query for query, _rank in verdicts})
    if not queries:
        raise IncompleteAnnotationError("no annotated queries")
    flags: list[list[bool]] = []
    for query in queries:
        row: list[bool] = []
        for rank in range(1, k_max + 1):
            if (query, rank) not in verdicts:
                raise IncompleteAnnotationError(f"query {query!r} missing rank {rank}")
            row.append(_unanimous(verdicts[(query, rank)]))
        flags.append(row)
    return flags


def metric_approvals_from_annotations(records) -> dict[str, dict[str, bool]]:
    """Per-metric approval map {metric: {query: approved}} from annotations."""
    verdicts: dict[tuple[str, str], list[str]] = {}
    for record in records:
        query, metric = _split_sample_id(record.sample_id)
        verdicts.setdefault((metric, query), []).append(record.verdict)
    approvals: dict[str, dict[str, bool]] = {}
    for (metric, query), filed in verdicts.items():
        approvals.setdefault(metric, {})[query] = _unanimous(filed)
    return approvals


# ---------------------------------------------------------------------------
# Convergence under noisy pseudo-labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergencePoint:
    n: int
    mean_error: float
    stderr: float


def _erm_threshold(x: np.ndarray, noisy_y: np.ndarray) -> float:
    """Exact empirical risk minimizer over the class {x > t} on [0, 1].

    Candidate cuts are the midpoints between consecutive sorted samples plus
    the unit-interval edges; ties resolve to the smallest cut.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = noisy_y[order].astype(np.int64)
    n = xs.size
    # predicted 0 for the first j sorted points: errors = ones among the
    # first j plus zeros among the rest
    ones_prefix = np.concatenate([[0], np.cumsum(ys)])
    total_zeros = n - ones_prefix[-1]
    zeros_prefix = np.arange(n + 1) - ones_prefix
    errors = ones_prefix + (total_zeros - zeros_prefix)
    cuts = np.empty(n + 1, dtype=np.float64)
    cuts[0] = xs[0] / 2.0
    cuts[1:n] = (xs[:-1] + xs[1:]) / 2.0
    cuts[n] = (xs[-1] + 1.0) / 2.0
    best = int(np.lexsort((cuts, errors))[0])
    return float(cuts[best])


def simulate_convergence(
    epsilon: float,
    n_values: Sequence[int],
    trials: int,
    seed: int = 0,
) -> list[ConvergencePoint]:
    """Test error of ERM threshold classifiers trained on flipped labels.

    Synthetic task: X ~ U(0,1), Y = 1[X > 0.5], pseudo-labels flipped i.i.d.
    with probability epsilon < 0.5. Within a trial the same sample stream is
    prefix-subsampled for every n (paired comparisons across n). The reported
    error is the exact population error |t - 0.5| of the learned cut, i.e.
    the excess over the known zero Bayes error.
    """
    if not 0.0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    n_values = list(n_values)
    if not n_values or any(n < 1 for n in n_values):
        raise ValueError("n_values must be nonempty positive sizes")
    if n_values != sorted(n_values):
        raise ValueError("n_values must be ascending")
    n_max = n_values[-1]
    errors = np.empty((trials, len(n_values)), dtype=np.float64)
    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)  # per-trial derived seed
        x = rng.random(n_max)
        y = x > 0.5
        flips = rng.random(n_max) < epsilon
        noisy = y ^ flips
        for j, n in enumerate(n_values):
            cut = _erm_threshold(x[:n], noisy[:n])
            errors[trial, j] = abs(cut - 0.5)
    points = []
    for j, n in enumerate(n_values):
        column = errors[:, j]
        stderr = float(column.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
        points.append(ConvergencePoint(n=n, mean_error=float(column.mean()), stderr=stderr))
    return points
