"""Ranking and group-fairness metrics.

AUROC is the Mann-Whitney rank statistic with average ranks for ties,
which equals the O(n^2) pairwise count (wins + half-ties) exactly: average
ranks are half-integers, exactly representable in float64, so no tolerance
is needed against a brute-force reference.

Disparity is the spread of AUROC across the categories of one sensitive
attribute; equalized-odds gaps are the spreads of TPR and FPR at a fixed
decision threshold. Groups where a metric is undefined (fewer than two
distinct labels, or no positives/negatives for a rate) are reported as
None and excluded from gaps.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from primed.data import SensitiveSchema


class UndefinedMetricError(ValueError):
    """Metric has no value on the given inputs (e.g. one-class labels)."""


def _validate_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise ValueError(
            f"scores and labels must be matching vectors, got shapes "
            f"{scores.shape} and {labels.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank span."""
    n = scores.size
    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(s_sorted)) + 1))
    ends = np.concatenate((starts[1:], [n]))
    avg = (starts + ends + 1) / 2.0  # mean of 1-based ranks start+1 .. end
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties half."""
    scores, labels = _validate_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined: {n_pos} positives and {n_neg} negatives")
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def subgroup_auroc(scores, labels, groups) -> dict[int, float | None]:
    """AUROC restricted to each group's records; None where undefined."""
    scores, labels = _validate_scores_labels(scores, labels)
    groups = np.asarray(groups)
    if groups.shape != scores.shape:
        raise ValueError(f"group vector shape {groups.shape} does not match "
                         f"{scores.shape} scores")
    out: dict[int, float | None] = {}
    for gval in np.unique(groups):
        mask = groups == gval
        sub_labels = labels[mask]
        if sub_labels.min() == sub_labels.max():
            out[int(gval)] = None
        else:
            out[int(gval)] = auroc(scores[mask], sub_labels)
    return out


def disparity(per_group: dict) -> float:
    """Max minus min of the defined per-group values."""
    defined = [v for v in per_group.values() if v is not None]
    if len(defined) < 2:
        raise UndefinedMetricError(
            f"disparity needs >= 2 groups with a defined value, got {len(defined)}")
    return float(max(defined) - min(defined))


def _rates(scores, labels, threshold):
    """(TPR, FPR) at the threshold; None where the denominator is empty."""
    pred = scores >= threshold
    pos = labels == 1
    neg = ~pos
    tpr = float(pred[pos].mean()) if pos.any() else None
    fpr = float(pred[neg].mean()) if neg.any() else None
    return tpr, fpr


def equalized_odds_gap(scores, labels, groups,
                       threshold: float = 0.5) -> tuple[float, float]:
    """(TPR spread, FPR spread) across groups at one decision threshold."""
    scores, labels = _validate_scores_labels(scores, labels)
    groups = np.asarray(groups)
    tprs, fprs = [], []
    for gval in np.unique(groups):
        mask = groups == gval
        tpr, fpr = _rates(scores[mask], labels[mask], threshold)
        if tpr is not None:
            tprs.append(tpr)
        if fpr is not None:
            fprs.append(fpr)
    if len(tprs) < 2 or len(fprs) < 2:
        raise UndefinedMetricError(
            "equalized odds gaps need >= 2 groups with defined rates")
    return float(max(tprs) - min(tprs)), float(max(fprs) - min(fprs))


# ------------------------------------------------------------------ reports

@dataclass(frozen=True)
class GroupMetrics:
    count: int
    auroc: float | None
    tpr: float | None
    fpr: float | None


@dataclass(frozen=True)
class AttributeMetrics:
    name: str
    categories: tuple[str, ...]
    groups: tuple[GroupMetrics, ...]        # aligned with categories
    disparity: float | None
    tpr_gap: float | None
    fpr_gap: float | None


@dataclass(frozen=True)
class MetricsReport:
    n: int
    overall_auroc: float
    threshold: float
    attributes: tuple[AttributeMetrics, ...]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "overall_auroc": self.overall_auroc,
            "threshold": self.threshold,
            "attributes": [
                {
                    "name": a.name,
                    "disparity": a.disparity,
                    "tpr_gap": a.tpr_gap,
                    "fpr_gap": a.fpr_gap,
                    "groups": {
                        cat: {"count": gm.count, "auroc": gm.auroc,
                              "tpr": gm.tpr, "fpr": gm.fpr}
                        for cat, gm in zip(a.categories, a.groups)
                    },
                }
                for a in self.attributes
            ],
        }

    def to_kv_rows(self) -> list[tuple[str, object]]:
        """Flat (key, value) rows carrying the same content as to_dict()."""
        rows: list[tuple[str, object]] = [
            ("n", self.n),
            ("overall_auroc", self.overall_auroc),
            ("threshold", self.threshold),
        ]
        for a in self.attributes:
            rows.append((f"{a.name}.disparity", a.disparity))
            rows.append((f"{a.name}.tpr_gap", a.tpr_gap))
            rows.append((f"{a.name}.fpr_gap", a.fpr_gap))
            for cat, gm in zip(a.categories, a.groups):
                rows.append((f"{a.name}.count[{cat}]", gm.count))
                rows.append((f"{a.name}.auroc[{cat}]", gm.auroc))
                rows.append((f"{a.name}.tpr[{cat}]", gm.tpr))
                rows.append((f"{a.name}.fpr[{cat}]", gm.fpr))
        return rows


def report(scores, labels, sensitive: np.ndarray,
           schema: SensitiveSchema, threshold: float = 0.5) -> MetricsReport:
    """Full per-attribute fairness report for one score vector.

    Undefined entries become None rather than numbers; an attribute-level
    gap is None when fewer than two of its groups have the underlying value.
    """
    scores, labels = _validate_scores_labels(scores, labels)
    sensitive = np.asarray(sensitive)
    if sensitive.shape != (scores.size, schema.num_attributes):
        raise ValueError(
            f"sensitive index shape {sensitive.shape} does not match "
            f"{scores.size} records x {schema.num_attributes} attributes")
    attributes = []
    for j, (name, cats) in enumerate(schema.attributes):
        col = sensitive[:, j]
        groups = []
        for idx in range(len(cats)):
            mask = col == idx
            if not mask.any():
                groups.append(GroupMetrics(0, None, None, None))
                continue
            sub_labels = labels[mask]
            g_auroc = (None if sub_labels.min() == sub_labels.max()
                       else auroc(scores[mask], sub_labels))
            tpr, fpr = _rates(scores[mask], sub_labels, threshold)
            groups.append(GroupMetrics(int(mask.sum()), g_auroc, tpr, fpr))

        def spread(values):
            defined = [v for v in values if v is not None]
            return float(max(defined) - min(defined)) if len(defined) >= 2 else None

        attributes.append(AttributeMetrics(
            name, tuple(cats), tuple(groups),
            disparity=spread([g.auroc for g in groups]),
            tpr_gap=spread([g.tpr for g in groups]),
            fpr_gap=spread([g.fpr for g in groups]),
        ))
    return MetricsReport(scores.size, auroc(scores, labels), float(threshold),
                         tuple(attributes))


def write_report_csv(rep: MetricsReport, path) -> None:
    """Flat key,value CSV; undefined values serialize as NA."""
    with open(path, "w", newline="") as fh:
        fh.write("key,value\n")
        for key, value in rep.to_kv_rows():
            if value is None:
                fh.write(f"{key},NA\n")
            elif isinstance(value, float):
                fh.write(f"{key},{value!r}\n")
            else:
                fh.write(f"{key},{value}\n")


def write_report_json(rep: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
