"""Post-hoc analysis of training traces.

Pure functions over immutable traces: the soft selection ratio (mean of
final per-document weights), per-epoch score histograms (how the weighting
distribution drifts as representations evolve), the effective per-domain
mass actually applied during training, and cost/quality frontier tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from curator.gating import WeightVector
from curator.scoring import COSINE_KINDS
from curator.trainer import Trace


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    epoch: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def variance(self) -> float:
        """Variance of the underlying scores approximated at bin centers."""
        centers = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        if self.total == 0:
            return 0.0
        mean = float((centers * self.counts).sum() / self.total)
        return float((self.counts * (centers - mean) ** 2).sum() / self.total)


@dataclass
class RunSummary:
    policy: str
    total_flops: int
    val_loss: float
    val_ppl: float
    effective_proportion: float | None = None
    domain_mixture: dict[str, float] | None = None
    ledger: dict = field(default_factory=dict)


def effective_proportion(weights) -> float:
    """Mean weight: sum of the per-document weights over the corpus size.

    With weights in [0, 1] this is the soft analog of a selection ratio
    (1.0 means the full corpus participates at full strength).
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty weight vector")
    return float(w.sum() / w.size)


def final_weights(trace: Trace, doc_ids) -> tuple[WeightVector, float]:
    """Last-assigned weight per document, in `doc_ids` order.

    For documents visited during the final epoch this is the final-epoch
    assignment (the converged curriculum); earlier assignments are used for
    documents the truncated last epoch never reached. Returns the weight
    vector and the fraction of documents that were assigned at all
    (unvisited documents get weight 0).
    """
    last: dict[str, float] = {}
    for rec in trace.records:
        for doc_id, w in zip(rec.doc_ids, rec.weights):
            last[doc_id] = w
    doc_ids = list(doc_ids)
    w = np.array([last.get(d, 0.0) for d in doc_ids], dtype=np.float64)
    coverage = sum(1 for d in doc_ids if d in last) / max(len(doc_ids), 1)
    return WeightVector(weights=w), coverage


def similarity_histogram(scores, epoch: int, bins: int = 50,
                         kind: str | None = None) -> Histogram:
    """Equal-width histogram of one epoch's scores.

    Cosine-kind scores always span [-1, 1]; other kinds span their observed
    min/max (widened by 0.5 on each side when degenerate). Counts sum to the
    number of scores.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    kind = kind or getattr(scores, "kind", None)
    if s.size == 0:
        raise ValueError("empty score set")
    if kind in COSINE_KINDS:
        lo, hi = -1.0, 1.0
    else:
        lo, hi = float(s.min()), float(s.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(s, bins=bins, range=(lo, hi))
    return Histogram(bin_edges=edges, counts=counts, epoch=epoch)


def histograms_by_epoch(trace: Trace, bins: int = 50,
                        kind: str | None = None) -> list[Histogram]:
    """One histogram per epoch over all scores recorded in that epoch."""
    by_epoch: dict[int, list[float]] = {}
    for rec in trace.records:
        if rec.scores is None:
            continue
        by_epoch.setdefault(rec.epoch, []).extend(rec.scores)
    return [
        similarity_histogram(np.array(by_epoch[e]), epoch=e, bins=bins, kind=kind)
        for e in sorted(by_epoch)
    ]


def domain_mixture(trace: Trace, corpus) -> dict[str, float]:
    """Per-domain share of the total weight mass applied during training."""
    domain_of = {d.id: d.domain for d in corpus}
    mass: dict[str, float] = {}
    for rec in trace.records:
        for doc_id, w in zip(rec.doc_ids, rec.weights):
            dom = domain_of[doc_id]
            mass[dom] = mass.get(dom, 0.0) + w
    total = sum(mass.values())
    if total == 0:
        return {k: 0.0 for k in sorted(mass)}
    return {k: mass[k] / total for k in sorted(mass)}


def frontier_table(runs: list[RunSummary]) -> list[dict]:
    """Rows (policy, flops, loss, ppl) sorted by FLOPs with Pareto marks.

    A row is Pareto-dominant unless some other row is <= in both FLOPs and
    validation loss and strictly better in at least one.
    """
    if not runs:
        raise ValueError("need at least one run")
    rows = []
    for r in runs:
        dominated = any(
            q.total_flops <= r.total_flops and q.val_loss <= r.val_loss
            and (q.total_flops < r.total_flops or q.val_loss < r.val_loss)
            for q in runs if q is not r
        )
        rows.append({
            "policy": r.policy,
            "total_flops": r.total_flops,
            "val_loss": r.val_loss,
            "val_ppl": r.val_ppl,
            "pareto": not dominated,
        })
    rows.sort(key=lambda row: (row["total_flops"], row["val_loss"], row["policy"]))
    return rows
