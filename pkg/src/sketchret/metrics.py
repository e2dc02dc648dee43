"""Precision@K and mean average precision@K over ranked retrievals.

AP@K here divides the precision sum by the number of relevant items
actually retrieved within the top K; this matches the dominant convention
in retrieval papers. Because conventions differ, a variant that divides by
min(total relevant in the gallery, K) is available behind `ap_variant`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ValidationError
from .retrieval import RankedList

AP_VARIANTS = ("retrieved", "total")


def _check_relevance(relevance, k: int) -> list[int]:
    rel = [int(bool(r)) for r in relevance]
    if not rel:
        raise ValidationError("relevance list is empty")
    if k < 1:
        raise ValidationError("K must be at least 1")
    return rel


def precision_at_k(relevance, k: int) -> float:
    """Fraction of relevant items among the first min(K, len) results."""
    rel = _check_relevance(relevance, k)
    kk = min(k, len(rel))
    return sum(rel[:kk]) / kk


def average_precision_at_k(relevance, k: int, ap_variant: str = "retrieved",
                           total_relevant: int | None = None) -> float:
    """Precision averaged over the relevant ranks within the top K.

    Returns 0 when no relevant item is retrieved. With ap_variant="total"
    the divisor becomes min(total_relevant, K), which requires the caller
    to supply the gallery-wide relevant count.
    """
    rel = _check_relevance(relevance, k)
    if ap_variant not in AP_VARIANTS:
        raise ValidationError(f"unknown AP variant {ap_variant!r}")
    kk = min(k, len(rel))
    hits = 0
    acc = 0.0
    for rank in range(1, kk + 1):
        if rel[rank - 1]:
            hits += 1
            acc += hits / rank
    if ap_variant == "total":
        if total_relevant is None:
            raise ContractError("ap_variant='total' needs total_relevant")
        denom = min(total_relevant, k)
    else:
        denom = hits
    return acc / denom if denom else 0.0


@dataclass
class EvalReport:
    """Per-query AP@K and P@K plus their means."""

    k: int
    query_indices: np.ndarray
    ap: np.ndarray
    p: np.ndarray
    n_queries: int
    gallery_size: int

    @property
    def mean_ap(self) -> float:
        return float(self.ap.mean())

    @property
    def mean_p(self) -> float:
        return float(self.p.mean())


def evaluate(rankings, query_labels, gallery_labels, k: int = 200,
             ap_variant: str = "retrieved") -> EvalReport:
    """Score ranked lists against category labels.

    `rankings` holds RankedList objects or (query_index, gallery_indices)
    pairs; a retrieved item is relevant iff its gallery label equals the
    query's label. K is clamped to the gallery size.
    """
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if len(rankings) == 0:
        raise ValidationError("no rankings to evaluate")
    k = min(k, len(gallery_labels))
    if k < 1:
        raise ValidationError("K must be at least 1")

    indices, aps, ps = [], [], []
    for entry in rankings:
        if isinstance(entry, RankedList):
            qi, order = entry.query_index, entry.order
        else:
            qi, order = entry[0], entry[1]
        order = np.asarray(order)
        if qi < 0 or qi >= len(query_labels):
            raise IndexError(f"query index {qi} out of range for {len(query_labels)} queries")
        if order.size and (order.min() < 0 or order.max() >= len(gallery_labels)):
            raise IndexError(
                f"gallery index out of range for {len(gallery_labels)} items in query {qi}")
        rel = (gallery_labels[order] == query_labels[qi]).astype(int)
        total = int((gallery_labels == query_labels[qi]).sum())
        indices.append(qi)
        aps.append(average_precision_at_k(rel, k, ap_variant, total_relevant=total))
        ps.append(precision_at_k(rel, k))
    return EvalReport(k=k, query_indices=np.array(indices, dtype=np.int64),
                      ap=np.array(aps), p=np.array(ps),
                      n_queries=len(indices), gallery_size=len(gallery_labels))


def format_report(report: EvalReport) -> str:
    """Aligned text table, one row per query, means at the bottom."""
    lines = [f"{'query':>8}  {'AP@' + str(report.k):>12}  {'P@' + str(report.k):>12}"]
    for qi, ap, p in zip(report.query_indices, report.ap, report.p):
        lines.append(f"{qi:>8}  {ap:>12.6f}  {p:>12.6f}")
    lines.append(f"{'mean':>8}  {report.mean_ap:>12.6f}  {report.mean_p:>12.6f}")
    lines.append(f"queries: {report.n_queries}   gallery: {report.gallery_size}   K: {report.k}")
    return "\n".join(lines)


def write_report_csv(report: EvalReport, path) -> None:
    """Machine-readable per-query metrics: query_index, ap, p_at_k."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_index,ap,p_at_k\n")
        for qi, ap, p in zip(report.query_indices, report.ap, report.p):
            fh.write(f"{qi},{float(ap)!r},{float(p)!r}\n")
