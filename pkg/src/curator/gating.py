"""Transforms from quality scores to per-sample or per-domain weights.

The canonical gate is a global temperature sigmoid: each sample's weight
depends only on its own (optionally standardized) score, never on the rest
of the batch, so a sample receives the same weight in any batch composition.
A batch-softmax gate is provided as the explicitly batch-relative
alternative, plus binary threshold selection and domain-level mixing with
exact integer quota allocation.

All functions are pure; nothing here touches model state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

STANDARDIZE_MODES = ("none", "minmax", "zscore")
GATE_MODES = ("global_sigmoid", "batch_softmax")
MIX_TRANSFORMS = ("exp", "identity")


def _raw_scores(scores) -> np.ndarray:
    """Accept a ScoreVector-like object or a plain array."""
    return np.asarray(getattr(scores, "scores", scores), dtype=np.float64)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class GateConfig:
    temperature: float = 1.0
    eps: float = 1e-8
    clip: tuple[float, float] | None = None
    standardize: str = "none"
    mode: str = "global_sigmoid"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.standardize not in STANDARDIZE_MODES:
            raise ValueError(f"standardize must be one of {STANDARDIZE_MODES}")
        if self.mode not in GATE_MODES:
            raise ValueError(f"mode must be one of {GATE_MODES}")
        if self.clip is not None:
            lo, hi = self.clip
            if not (0 <= lo <= hi):
                raise ValueError("clip bounds need 0 <= lo <= hi")
            object.__setattr__(self, "clip", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "eps": self.eps,
            "clip": list(self.clip) if self.clip is not None else None,
            "standardize": self.standardize,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GateConfig":
        clip = d.get("clip")
        return cls(
            temperature=d.get("temperature", 1.0),
            eps=d.get("eps", 1e-8),
            clip=tuple(clip) if clip is not None else None,
            standardize=d.get("standardize", "none"),
            mode=d.get("mode", "global_sigmoid"),
        )


@dataclass(frozen=True)
class WeightVector:
    """Per-sample weights aligned to a batch or corpus."""

    weights: np.ndarray
    gate: GateConfig | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.size and not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        if w.size and w.min() < 0:
            raise ValueError("weights must be >= 0")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class DomainWeights:
    """Per-domain probabilities summing to 1."""

    weights: dict[str, float]
    transform: str = "identity"

    def __post_init__(self):
        vals = np.array(list(self.weights.values()), dtype=np.float64)
        if vals.size == 0:
            raise ValueError("at least one domain required")
        if vals.min() < 0:
            raise ValueError("domain weights must be >= 0")
        if abs(vals.sum() - 1.0) > 1e-12:
            raise ValueError(f"domain weights sum to {vals.sum()!r}, not 1")

    def as_items(self) -> list[tuple[str, float]]:
        return sorted(self.weights.items())


def standardize_scores(scores, method: str, stats: dict | None = None):
    """Map scores per `method`; returns (standardized, stats used).

    Passing `stats` pins the pool statistics (e.g. corpus-wide min/max) so
    per-batch calls stay batch-independent. Degenerate pools (max == min or
    zero std) map every score to the midpoint 0.5 (minmax) or 0 (zscore).
    """
    s = _raw_scores(scores)
    if method == "none":
        return s, {}
    if method == "minmax":
        if stats is None:
            stats = {"min": float(s.min()), "max": float(s.max())}
        span = stats["max"] - stats["min"]
        if span <= 0:
            return np.full_like(s, 0.5), stats
        return np.clip((s - stats["min"]) / span, 0.0, 1.0), stats
    if method == "zscore":
        if stats is None:
            stats = {"mean": float(s.mean()), "std": float(s.std())}
        if stats["std"] <= 0:
            return np.zeros_like(s), stats
        return (s - stats["mean"]) / stats["std"], stats
    raise ValueError(f"unknown standardize method {method!r}")


def gate_sigmoid(scores, cfg: GateConfig, pool_stats: dict | None = None) -> WeightVector:
    """w_i = sigmoid(s_i' / max(temperature, eps)) with s' the standardized
    score; each weight depends only on its own score (and frozen pool stats),
    making the gate robust to batch composition. Applies cfg.clip if set.
    """
    if cfg.mode != "global_sigmoid":
        raise ValueError("gate_sigmoid requires mode='global_sigmoid'")
    s, _ = standardize_scores(scores, cfg.standardize, pool_stats)
    w = _sigmoid(s / max(cfg.temperature, cfg.eps))
    if cfg.clip is not None:
        w = np.clip(w, cfg.clip[0], cfg.clip[1])
    return WeightVector(weights=w, gate=cfg)


def gate_batch_softmax(scores) -> WeightVector:
    """Batch-relative weights exp(s_i) / sum_j exp(s_j) (max-subtracted)."""
    s = _raw_scores(scores)
    if s.size == 0:
        raise ValueError("batch softmax needs a nonempty batch")
    e = np.exp(s - s.max())
    return WeightVector(weights=e / e.sum())


def clip_weights(w, lo: float, hi: float) -> WeightVector:
    """Entrywise min(hi, max(lo, w))."""
    if not (0 <= lo <= hi):
        raise ValueError("need 0 <= lo <= hi")
    arr = np.asarray(getattr(w, "weights", w), dtype=np.float64)
    gate = getattr(w, "gate", None)
    return WeightVector(weights=np.clip(arr, lo, hi), gate=gate)


def select_binary(scores, threshold: float) -> WeightVector:
    """1 where score >= threshold (ties kept), else 0."""
    s = _raw_scores(scores)
    return WeightVector(weights=(s >= threshold).astype(np.float64))


def mix_domain_weights(domain_scores: Mapping[str, float], g: str = "exp") -> DomainWeights:
    """Normalize transformed domain scores: w_d = g(s_d) / sum g(s_d')."""
    if g not in MIX_TRANSFORMS:
        raise ValueError(f"transform must be one of {MIX_TRANSFORMS}")
    if not domain_scores:
        raise ValueError("at least one domain required")
    names = sorted(domain_scores)
    vals = np.array([float(domain_scores[n]) for n in names], dtype=np.float64)
    if g == "exp":
        vals = np.exp(vals - vals.max())  # shift-invariant, overflow-safe
    elif vals.min() < 0:
        raise ValueError("identity transform requires nonnegative scores")
    total = vals.sum()
    if total <= 0:
        raise ValueError("transformed scores sum to zero")
    return DomainWeights(weights={n: float(v / total) for n, v in zip(names, vals)},
                         transform=g)


def quota_allocate(weights: DomainWeights | Mapping[str, float], budget: int) -> dict[str, int]:
    """Largest-remainder rounding of w_d * budget; conserves the budget
    exactly. Equal remainders break toward the lexicographically smaller
    domain name.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if isinstance(weights, DomainWeights):
        items = weights.as_items()
    else:
        items = sorted(weights.items())
        if abs(sum(w for _, w in items) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
    shares = [(name, w * budget) for name, w in items]
    base = {name: int(np.floor(share)) for name, share in shares}
    remaining = budget - sum(base.values())
    if remaining < 0:
        raise ValueError("weights sum above 1; cannot allocate")
    order = sorted(shares, key=lambda kv: (-(kv[1] - np.floor(kv[1])), kv[0]))
    for name, _ in order[:remaining]:
        base[name] += 1
    return base
