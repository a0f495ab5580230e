"""Majority-vote classification over rankings and the retrieval metric suite.

A search is scored as classification: the query's predicted label is the
majority label among its top-n hits (n odd). Reported metrics are
accuracy, per-class precision/recall/F1, macro and support-weighted
averages, and the confusion matrix, plus missed-WSI counts and
patch-count statistics for method comparisons.
"""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .atlas import Atlas, Ranking, leave_one_out

COMPARED_METRICS = ("accuracy", "macro_f1", "weighted_f1")


@dataclass(frozen=True)
class VoteResult:
    """Outcome of one majority vote."""

    query_id: str
    true_label: str
    predicted_label: str
    n: int  # votes actually considered (may be capped below the request)
    tie_broken: bool = False
    capped: bool = False


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    """Aggregate scores for one method at one vote size."""

    accuracy: float
    per_class: dict[str, ClassMetrics]
    macro_f1: float
    weighted_f1: float
    macro_precision: float
    macro_recall: float
    confusion: np.ndarray  # rows true, cols predicted, label order = labels
    labels: list[str]
    missed_wsis: int = 0
    patch_stats: tuple[float, float] | None = None  # (median, std) of montage sizes
    tie_broken_count: int = 0
    capped_count: int = 0

    def to_dict(self) -> dict:
        payload = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "labels": self.labels,
            "confusion": self.confusion.tolist(),
            "per_class": {
                label: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for label, m in self.per_class.items()
            },
            "missed_wsis": self.missed_wsis,
            "tie_broken_count": self.tie_broken_count,
            "capped_count": self.capped_count,
        }
        if self.patch_stats is not None:
            payload["patch_stats"] = {
                "median": self.patch_stats[0],
                "std": self.patch_stats[1],
            }
        return payload


def majority_vote(ranking: Ranking, n: int, labels: dict[str, str]) -> VoteResult:
    """Most frequent label among the top-n hits.

    Label ties go to the nearest (smallest-distance) hit among the tied
    labels, with ``tie_broken`` set. When fewer than n hits are
    available, the vote runs at the largest odd count that is, with
    ``capped`` set.
    """
    if n < 1 or n % 2 == 0:
        raise ValueError(f"vote size must be odd and >= 1, got {n}")
    if not ranking.hits:
        raise ValueError(f"query {ranking.query_id!r} has no hits to vote over")
    capped = False
    if len(ranking.hits) < n:
        n = len(ranking.hits) if len(ranking.hits) % 2 == 1 else len(ranking.hits) - 1
        capped = True
    top = ranking.top(n)
    hit_labels = [labels[wsi_id] for wsi_id, _ in top]
    counts = Counter(hit_labels)
    best = max(counts.values())
    tied = [label for label, c in counts.items() if c == best]
    tie_broken = len(tied) > 1
    if tie_broken:
        predicted = next(label for label in hit_labels if label in tied)
    else:
        predicted = tied[0]
    return VoteResult(
        query_id=ranking.query_id,
        true_label=labels[ranking.query_id],
        predicted_label=predicted,
        n=n,
        tie_broken=tie_broken,
        capped=capped,
    )


def compute_metrics(
    votes: list[VoteResult],
    missed_wsis: int = 0,
    patch_stats: tuple[float, float] | None = None,
) -> MetricsReport:
    """Confusion matrix, accuracy, and per-class/macro/weighted F1 scores.

    Zero-denominator precision and recall are defined as 0 so the macro
    average stays total.
    """
    if not votes:
        raise ValueError("cannot compute metrics over zero votes")
    labels = sorted({v.true_label for v in votes} | {v.predicted_label for v in votes})
    index = {label: i for i, label in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for v in votes:
        confusion[index[v.true_label], index[v.predicted_label]] += 1
    support = confusion.sum(axis=1)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = support - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    per_class = {
        label: ClassMetrics(
            precision=float(precision[i]),
            recall=float(recall[i]),
            f1=float(f1[i]),
            support=int(support[i]),
        )
        for label, i in index.items()
    }
    total = int(confusion.sum())
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        per_class=per_class,
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / support.sum()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        confusion=confusion,
        labels=labels,
        missed_wsis=missed_wsis,
        patch_stats=patch_stats,
        tie_broken_count=sum(v.tie_broken for v in votes),
        capped_count=sum(v.capped for v in votes),
    )


def evaluate_atlas(
    atlas: Atlas,
    n_list: tuple[int, ...] = (1, 3, 5),
    missed_wsis: int = 0,
    exclude_same_patient: bool = True,
) -> dict[int, MetricsReport]:
    """Leave-one-patient-out over every record, scored at each vote size."""
    if len(atlas) < 2:
        raise ValueError("evaluation needs at least 2 atlas records")
    labels = atlas.labels()
    patch_counts = [len(r.barcodes) for r in atlas.records]
    patch_stats = (float(np.median(patch_counts)), float(np.std(patch_counts)))
    rankings = [
        leave_one_out(atlas, r.wsi_id, exclude_same_patient=exclude_same_patient)
        for r in atlas.records
    ]
    reports = {}
    for n in n_list:
        votes = [majority_vote(rk, n, labels) for rk in rankings if rk.hits]
        reports[n] = compute_metrics(votes, missed_wsis=missed_wsis, patch_stats=patch_stats)
    return reports


@dataclass(frozen=True)
class ComparisonRow:
    """One comparison cell: a metric value per method plus its ranks."""

    metric: str
    n: int | None  # vote size, None for per-method scalars
    sdm: float
    mosaic: float
    higher_is_better: bool

    @property
    def ranks(self) -> tuple[int, int]:
        # Rank 1 = better; equal values rank 1 for both.
        if self.sdm == self.mosaic:
            return (1, 1)
        sdm_wins = self.sdm > self.mosaic if self.higher_is_better else self.sdm < self.mosaic
        return (1, 2) if sdm_wins else (2, 1)


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow] = field(default_factory=list)

    def average_ranks(self) -> tuple[float, float]:
        """Mean rank per method over all compared cells (1 = better)."""
        sdm = float(np.mean([r.ranks[0] for r in self.rows]))
        mosaic = float(np.mean([r.ranks[1] for r in self.rows]))
        return sdm, mosaic

    def to_csv(self, path: str | os.PathLike) -> None:
        """Plot-ready long form: one row per (metric, method, n) cell."""
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "method", "n", "value", "rank"])
            for row in self.rows:
                n = "" if row.n is None else row.n
                writer.writerow([row.metric, "sdm", n, repr(row.sdm), row.ranks[0]])
                writer.writerow([row.metric, "mosaic", n, repr(row.mosaic), row.ranks[1]])
            avg_sdm, avg_mosaic = self.average_ranks()
            writer.writerow(["average_rank", "sdm", "", repr(avg_sdm), ""])
            writer.writerow(["average_rank", "mosaic", "", repr(avg_mosaic), ""])
        os.replace(tmp, path)


def compare_methods(
    atlas_sdm: Atlas,
    atlas_mosaic: Atlas,
    n_list: tuple[int, ...] = (1, 3, 5),
    missed: tuple[int, int] = (0, 0),
    exclude_same_patient: bool = True,
) -> ComparisonTable:
    """Score both methods on their own atlases and rank them per metric.

    Both atlases must index the same underlying slides (ids may differ
    where one method missed a WSI, but the shared ids must agree on
    labels and the id sets must overlap).
    """
    ids_sdm = {r.wsi_id for r in atlas_sdm.records}
    ids_mosaic = {r.wsi_id for r in atlas_mosaic.records}
    shared = ids_sdm & ids_mosaic
    if not shared:
        raise ValueError("atlases share no wsi_ids; they index different datasets")
    labels_sdm, labels_mosaic = atlas_sdm.labels(), atlas_mosaic.labels()
    for wsi_id in shared:
        if labels_sdm[wsi_id] != labels_mosaic[wsi_id]:
            raise ValueError(
                f"label mismatch for {wsi_id!r}: "
                f"{labels_sdm[wsi_id]!r} vs {labels_mosaic[wsi_id]!r}"
            )
    reports_sdm = evaluate_atlas(
        atlas_sdm, n_list, missed_wsis=missed[0], exclude_same_patient=exclude_same_patient
    )
    reports_mosaic = evaluate_atlas(
        atlas_mosaic, n_list, missed_wsis=missed[1], exclude_same_patient=exclude_same_patient
    )
    table = ComparisonTable()
    for n in n_list:
        for metric in COMPARED_METRICS:
            table.rows.append(
                ComparisonRow(
                    metric=metric,
                    n=n,
                    sdm=getattr(reports_sdm[n], metric),
                    mosaic=getattr(reports_mosaic[n], metric),
                    higher_is_better=True,
                )
            )
    first_n = n_list[0]
    table.rows.append(
        ComparisonRow(
            metric="patches_median",
            n=None,
            sdm=reports_sdm[first_n].patch_stats[0],
            mosaic=reports_mosaic[first_n].patch_stats[0],
            higher_is_better=False,
        )
    )
    table.rows.append(
        ComparisonRow(
            metric="missed_wsis",
            n=None,
            sdm=float(missed[0]),
            mosaic=float(missed[1]),
            higher_is_better=False,
        )
    )
    return table


def write_confusion_csv(report: MetricsReport, path: str | os.PathLike) -> None:
    """Confusion matrix as CSV: header row of predicted labels, one row per true label."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted"] + report.labels)
        for i, label in enumerate(report.labels):
            writer.writerow([label] + report.confusion[i].tolist())
    os.replace(tmp, path)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out
