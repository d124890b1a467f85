"""Training loop: online reweighting plus offline selection/mixing baselines.

Every mode funnels through the same weighted SGD update
    theta <- theta - lr * sum_i w_i * grad(mean-CE of sample i),
so a policy is nothing but a rule for producing the per-sample weights
(and, for mixing, for drawing the batch). One step records telemetry into a
StepRecord; the FLOPs ledger is advanced by exactly the tokens the run
forwards (6N per trained token, 2N per metric-only forward token). Anchor
construction performed before the run is setup cost and is not charged here;
every forward pass the run itself performs is.

Batch scheduling: the online, selection, linupper and uniform modes draw
epoch-shuffled batches without replacement (a fresh seeded permutation per
epoch, partial final batch allowed). Selection follows the *full-corpus*
schedule and drops non-retained members from each batch, which is what makes
filtered-subset training equal binary-weight full-corpus training step for
step. Mixing modes use their own draw semantics (probability or exact
integer quotas).

Validation evaluation is telemetry and is never charged to the ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from curator.corpus import AnchorSet, Corpus, Document
from curator.flops import FlopsLedger
from curator.gating import (
    DomainWeights,
    GateConfig,
    WeightVector,
    clip_weights,
    gate_batch_softmax,
    gate_sigmoid,
    standardize_scores,
)
from curator.scoring import (
    ScoreVector,
    adapt_scores_from_hidden,
    build_bm25_index,
    refresh_anchors,
    score_bm25,
    score_corpus,
    weights_linupper,
)
from curator.tinymodel import (
    ModelState,
    NonfiniteError,
    backward_batch,
    batch_losses,
    forward_batch,
    weighted_grad,
)

ONLINE_SCORERS = ("adapt_embed", "bm25", "frozen_embed")
MIXING_MODES = ("probability", "quota")


class TrainingError(RuntimeError):
    """Component failure annotated with the training step."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    total_steps: int
    seed: int
    eval_interval: int = 0  # 0: evaluate only after the final step
    normalize_weights: bool = False  # divide the batch gradient by Z = sum w

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.eval_interval < 0:
            raise ValueError("eval_interval must be >= 0")


@dataclass(frozen=True)
class OnlinePolicy:
    scorer: str
    gate: GateConfig = field(default_factory=GateConfig)
    refresh_every: int = 100
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self):
        if self.scorer not in ONLINE_SCORERS:
            raise ValueError(f"scorer must be one of {ONLINE_SCORERS}")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")


@dataclass(frozen=True)
class SelectionPolicy:
    scorer: str
    threshold: float


@dataclass(frozen=True)
class MixingPolicy:
    weights: DomainWeights
    mode: str

    def __post_init__(self):
        if self.mode not in MIXING_MODES:
            raise ValueError(f"mode must be one of {MIXING_MODES}")


@dataclass(frozen=True)
class LinUpperPolicy:
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class UniformPolicy:
    pass


@dataclass
class StepRecord:
    step: int
    epoch: int
    doc_ids: tuple[str, ...]
    weights: tuple[float, ...]
    weighted_loss: float
    batch_tokens: int
    cum_flops: int
    scores: tuple[float, ...] | None = None
    val_loss: float | None = None
    val_ppl: float | None = None
    refreshed: bool = False
    quota_resampled: bool = False
    cap_hits: int | None = None


@dataclass
class Trace:
    records: list[StepRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def refresh_steps(self) -> list[int]:
        return [r.step for r in self.records if r.refreshed]


class EpochSampler:
    """Without-replacement batches: a fresh seeded shuffle every epoch."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise ValueError("cannot sample from an empty corpus")
        self.n = n
        self.batch_size = batch_size
        self.rng = np.random.default_rng([seed, 0xBA7C4])
        self.epoch = 0
        self._perm = self.rng.permutation(n)
        self._pos = 0

    def next_batch(self) -> tuple[np.ndarray, int]:
        if self._pos >= self.n:
            self.epoch += 1
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._perm[self._pos : self._pos + self.batch_size]
        epoch = self.epoch
        self._pos += len(batch)
        return batch, epoch


def _train_docs(corpus: Corpus) -> list[Document]:
    docs = [d for d in corpus if d.split == "train"]
    if not docs:
        raise ValueError("corpus contains no train-split documents")
    for d in docs:
        if len(d.model_tokens) < 2:
            raise ValueError(f"document {d.id!r} too short to train on (<2 tokens)")
    return docs


def _forward_groups(model: ModelState, docs: list[Document], idxs: np.ndarray):
    """Forward passes grouped by equal token length; yields (positions, cache).

    `positions` index into `idxs` order so per-sample outputs can be
    reassembled in batch order.
    """
    by_len: dict[int, list[int]] = {}
    for pos, i in enumerate(idxs):
        by_len.setdefault(len(docs[i].model_tokens), []).append(pos)
    out = []
    for length in sorted(by_len):
        positions = by_len[length]
        toks = np.stack([docs[idxs[p]].model_tokens for p in positions])
        out.append((positions, forward_batch(model, toks)))
    return out


def _apply_grad(model: ModelState, grad: np.ndarray, lr: float) -> None:
    if not np.isfinite(grad).all():
        raise NonfiniteError("nonfinite gradient in update")
    model.flat -= (lr * grad).astype(model.flat.dtype)
    model.step += 1


def apply_step(model: ModelState, batch, weights, lr: float) -> ModelState:
    """One weighted SGD step in place: theta -= lr * sum_i w_i grad_i.

    `batch` is a list of (tokens, targets) pairs; the step counter always
    increments, so an all-zero weight vector advances the step with theta
    unchanged.
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    grad = weighted_grad(model, batch, w)
    _apply_grad(model, grad, lr)
    return model


def evaluate(model: ModelState, val_corpus) -> dict:
    """Token-weighted mean next-token NLL and perplexity over val documents.

    Documents shorter than 2 tokens contribute no next-token positions and
    are skipped.
    """
    docs = [d for d in val_corpus if d.split == "val"] or list(val_corpus)
    docs = [d for d in docs if len(d.model_tokens) >= 2]
    if not docs:
        raise ValueError("validation corpus has no scoreable documents")
    total_nll = 0.0
    total_pos = 0
    by_len: dict[int, list[Document]] = {}
    for d in docs:
        by_len.setdefault(len(d.model_tokens), []).append(d)
    for length in sorted(by_len):
        group = by_len[length]
        for start in range(0, len(group), 64):
            chunk = group[start : start + 64]
            toks = np.stack([d.model_tokens for d in chunk])
            cache = forward_batch(model, toks)
            losses = batch_losses(cache)
            total_nll += float(losses.sum()) * (length - 1)
            total_pos += len(chunk) * (length - 1)
    mean_nll = total_nll / total_pos
    return {"mean_nll": mean_nll, "ppl": float(np.exp(mean_nll))}


def _maybe_eval(step, total_steps, cfg, model, val_corpus):
    if val_corpus is None:
        return None
    due = step == total_steps or (cfg.eval_interval > 0 and step % cfg.eval_interval == 0)
    return evaluate(model, val_corpus) if due else None


def _check_losses(losses: np.ndarray, idxs, docs, step: int) -> None:
    # a nonfinite loss aborts the run rather than being skipped; silent
    # skipping would corrupt the FLOPs ledger
    if np.isfinite(losses).all():
        return
    bad = int(np.argmax(~np.isfinite(losses)))
    raise TrainingError(
        f"step {step}: nonfinite loss for document {docs[idxs[bad]].id!r}")


def _weighted_update(model, caches, weights, losses, cfg):
    """Accumulate the weighted gradient over length groups and apply it."""
    w = np.asarray(weights, dtype=np.float64)
    eff = w
    if cfg.normalize_weights:
        z = w.sum()
        eff = w / z if z > 0 else w
    grad = np.zeros(model.config.param_count, dtype=np.float64)
    for positions, cache in caches:
        backward_batch(model, cache, eff[positions], grad_out=grad)
    _apply_grad(model, grad, cfg.learning_rate)
    return float(np.dot(w, losses))


def _new_ledger(model, n_docs, cfg, extra=None):
    constants = {
        "N": model.param_count,
        "P": n_docs,
        "batch_size": cfg.batch_size,
        "total_steps": cfg.total_steps,
    }
    if extra:
        constants.update(extra)
    return FlopsLedger(n_params=model.param_count, constants=constants)


def train_online(
    corpus: Corpus,
    anchors: AnchorSet,
    model: ModelState,
    policy: OnlinePolicy,
    cfg: TrainConfig,
    val_corpus: Corpus | None = None,
) -> tuple[ModelState, Trace]:
    """Online reweighting: score, gate, weighted update, repeat.

    adapt_embed scores come from the training forward pass itself and the
    anchor matrix, which is re-embedded at step 1 and whenever
    t mod refresh_every == 1. bm25 scores are model-independent and cached
    corpus-wide at step 1 (no model FLOPs). frozen_embed snapshots the
    initial parameters at step 1, embeds anchors and corpus under that frozen
    encoder (charged as metric forwards), and never rescores.
    """
    if len(anchors) == 0:
        raise ValueError("anchor set must be nonempty")
    docs = _train_docs(corpus)
    sampler = EpochSampler(len(docs), cfg.batch_size, cfg.seed)
    ledger = _new_ledger(model, len(docs), cfg, {"scorer": policy.scorer})
    trace = Trace(meta={
        "policy": f"online[{policy.scorer}]",
        "n_train_docs": len(docs),
        "metric_events": [],
        "gate": policy.gate.to_dict(),
    })

    cached_scores: np.ndarray | None = None  # per-doc, bm25/frozen only
    pool_stats: dict | None = None

    try:
        for t in range(1, cfg.total_steps + 1):
            refreshed = False
            if policy.scorer == "adapt_embed" and (t == 1 or t % policy.refresh_every == 1):
                anchors = refresh_anchors(model, anchors, step=t)
                tokens = sum(len(a.model_tokens) for a in anchors.anchors)
                ledger.add_metric_forward_tokens(tokens)
                trace.meta["metric_events"].append(
                    {"step": t, "kind": "anchor_refresh", "tokens": tokens})
                refreshed = True
            if t == 1 and policy.scorer == "bm25":
                index = build_bm25_index(anchors, policy.bm25_k1, policy.bm25_b)
                cached_scores = np.array([score_bm25(index, d) for d in docs])
                if policy.gate.standardize != "none":
                    _, pool_stats = standardize_scores(
                        cached_scores, policy.gate.standardize)
            if t == 1 and policy.scorer == "frozen_embed":
                encoder = model.copy()
                frozen_anchors = refresh_anchors(encoder, anchors, step=0)
                a_tokens = sum(len(a.model_tokens) for a in anchors.anchors)
                sv = score_corpus("frozen_embed", docs, model=encoder,
                                  anchors=frozen_anchors)
                cached_scores = sv.scores
                c_tokens = sum(len(d.model_tokens) for d in docs)
                ledger.add_metric_forward_tokens(a_tokens + c_tokens)
                trace.meta["metric_events"].append(
                    {"step": t, "kind": "frozen_precompute",
                     "tokens": a_tokens + c_tokens})
                if policy.gate.standardize != "none":
                    _, pool_stats = standardize_scores(
                        cached_scores, policy.gate.standardize)

            idxs, epoch = sampler.next_batch()
            caches = _forward_groups(model, docs, idxs)
            losses = np.zeros(len(idxs))
            for positions, cache in caches:
                losses[positions] = batch_losses(cache)
            _check_losses(losses, idxs, docs, t)

            if policy.scorer == "adapt_embed":
                scores = np.zeros(len(idxs))
                for positions, cache in caches:
                    scores[positions] = adapt_scores_from_hidden(
                        cache.hidden, anchors.embeddings, policy.gate.eps)
            else:
                scores = cached_scores[idxs]

            if policy.gate.mode == "global_sigmoid":
                wv = gate_sigmoid(scores, policy.gate, pool_stats)
            else:
                wv = gate_batch_softmax(scores)
                if policy.gate.clip is not None:
                    wv = clip_weights(wv, *policy.gate.clip)

            batch_tokens = sum(len(docs[i].model_tokens) for i in idxs)
            ledger.add_train_tokens(batch_tokens)
            wloss = _weighted_update(model, caches, wv.weights, losses, cfg)
            ev = _maybe_eval(t, cfg.total_steps, cfg, model, val_corpus)
            trace.records.append(StepRecord(
                step=t, epoch=epoch,
                doc_ids=tuple(docs[i].id for i in idxs),
                scores=tuple(float(s) for s in scores),
                weights=tuple(float(w) for w in wv.weights),
                weighted_loss=wloss, batch_tokens=batch_tokens,
                cum_flops=ledger.total, refreshed=refreshed,
                val_loss=None if ev is None else ev["mean_nll"],
                val_ppl=None if ev is None else ev["ppl"],
            ))
    except NonfiniteError as e:
        raise TrainingError(f"step {model.step + 1}: {e}") from e
    trace.meta["ledger"] = ledger.summary()
    return model, trace


def train_selection(
    corpus: Corpus,
    scores: ScoreVector,
    threshold: float,
    model: ModelState,
    cfg: TrainConfig,
    val_corpus: Corpus | None = None,
) -> tuple[ModelState, Trace]:
    """Offline selection: keep docs with score >= threshold, then train.

    Batches follow the full-corpus epoch schedule with non-retained members
    dropped, so the parameter trajectory matches full-corpus training under
    binary weights with the same seed (the filtered batch may be smaller than
    batch_size or even empty; an empty batch still advances the step).
    """
    docs = _train_docs(corpus)
    if len(scores) != len(docs):
        raise ValueError(
            f"{len(scores)} scores for {len(docs)} train documents")
    retained_mask = scores.scores >= threshold
    retained_ids = [d.id for d, keep in zip(docs, retained_mask) if keep]
    if not retained_ids:
        raise ValueError("selection retained no documents (threshold too high)")
    sampler = EpochSampler(len(docs), cfg.batch_size, cfg.seed)
    ledger = _new_ledger(model, len(docs), cfg,
                         {"D": len(retained_ids), "scorer": scores.kind})
    trace = Trace(meta={
        "policy": f"selection[{scores.kind}]",
        "n_train_docs": len(docs),
        "retained_size": len(retained_ids),
        "threshold": threshold,
        "metric_events": [],
    })
    try:
        for t in range(1, cfg.total_steps + 1):
            idxs, epoch = sampler.next_batch()
            kept = idxs[retained_mask[idxs]]
            batch_tokens = sum(len(docs[i].model_tokens) for i in kept)
            ledger.add_train_tokens(batch_tokens)
            if len(kept):
                caches = _forward_groups(model, docs, kept)
                losses = np.zeros(len(kept))
                for positions, cache in caches:
                    losses[positions] = batch_losses(cache)
                _check_losses(losses, kept, docs, t)
                wloss = _weighted_update(
                    model, caches, np.ones(len(kept)), losses, cfg)
            else:
                model.step += 1
                wloss = 0.0
            ev = _maybe_eval(t, cfg.total_steps, cfg, model, val_corpus)
            trace.records.append(StepRecord(
                step=t, epoch=epoch,
                doc_ids=tuple(docs[i].id for i in kept),
                weights=tuple(1.0 for _ in kept),
                weighted_loss=wloss, batch_tokens=batch_tokens,
                cum_flops=ledger.total,
                val_loss=None if ev is None else ev["mean_nll"],
                val_ppl=None if ev is None else ev["ppl"],
            ))
    except NonfiniteError as e:
        raise TrainingError(f"step {model.step + 1}: {e}") from e
    trace.meta["ledger"] = ledger.summary()
    return model, trace


class _QuotaStream:
    """Pre-shuffled domain stream hitting exact integer quotas."""

    def __init__(self, quotas: dict[str, int], rng: np.random.Generator):
        labels = []
        for name in sorted(quotas):
            labels.extend([name] * quotas[name])
        self.labels = [labels[i] for i in rng.permutation(len(labels))]
        self.pos = 0

    def draw(self) -> str:
        label = self.labels[self.pos]
        self.pos += 1
        return label


def train_mixing(
    corpus: Corpus,
    dw: DomainWeights,
    mode: str,
    model: ModelState,
    cfg: TrainConfig,
    val_corpus: Corpus | None = None,
) -> tuple[ModelState, Trace]:
    """Domain mixing: draw each batch slot's domain, then a document in it.

    probability mode draws the domain i.i.d. from the domain weights and the
    document uniformly with replacement. quota mode fixes integer per-domain
    budgets over the whole run (largest-remainder allocation of
    total_steps * batch_size) and consumes documents without replacement
    inside each domain, reshuffling (and flagging the step) if a domain runs
    out before its quota is met. All samples train with weight 1.
    """
    from curator.gating import quota_allocate

    if mode not in MIXING_MODES:
        raise ValueError(f"mode must be one of {MIXING_MODES}")
    docs = _train_docs(corpus)
    by_domain: dict[str, list[int]] = {}
    for i, d in enumerate(docs):
        by_domain.setdefault(d.domain, []).append(i)
    for name, w in dw.as_items():
        if w > 0 and name not in by_domain:
            raise ValueError(f"domain {name!r} has weight {w} but no documents")
    rng = np.random.default_rng([cfg.seed, 0x313C])
    names = [n for n, w in dw.as_items() if w > 0]
    probs = np.array([dict(dw.as_items())[n] for n in names])
    probs = probs / probs.sum()

    quotas = None
    stream = None
    pools: dict[str, list[int]] = {}
    pool_pos: dict[str, int] = {}
    if mode == "quota":
        quotas = quota_allocate(dw, cfg.total_steps * cfg.batch_size)
        stream = _QuotaStream(quotas, rng)
        for name in names:
            idx = by_domain[name]
            pools[name] = [idx[i] for i in rng.permutation(len(idx))]
            pool_pos[name] = 0

    ledger = _new_ledger(model, len(docs), cfg, {"mode": mode})
    trace = Trace(meta={
        "policy": f"mixing[{mode}]",
        "n_train_docs": len(docs),
        "domain_weights": dict(dw.as_items()),
        "quotas": quotas,
        "metric_events": [],
    })
    samples_drawn = 0
    try:
        for t in range(1, cfg.total_steps + 1):
            resampled = False
            idx_list = []
            if mode == "probability":
                d_idx = rng.choice(len(names), size=cfg.batch_size, p=probs)
                for di in d_idx:
                    pool = by_domain[names[di]]
                    idx_list.append(pool[int(rng.integers(0, len(pool)))])
            else:
                for _ in range(cfg.batch_size):
                    name = stream.draw()
                    if pool_pos[name] >= len(pools[name]):
                        idx = by_domain[name]
                        pools[name] = [idx[i] for i in rng.permutation(len(idx))]
                        pool_pos[name] = 0
                        resampled = True
                    idx_list.append(pools[name][pool_pos[name]])
                    pool_pos[name] += 1
            idxs = np.array(idx_list)
            epoch = samples_drawn // len(docs)
            samples_drawn += len(idxs)

            caches = _forward_groups(model, docs, idxs)
            losses = np.zeros(len(idxs))
            for positions, cache in caches:
                losses[positions] = batch_losses(cache)
            _check_losses(losses, idxs, docs, t)
            batch_tokens = sum(len(docs[i].model_tokens) for i in idxs)
            ledger.add_train_tokens(batch_tokens)
            wloss = _weighted_update(model, caches, np.ones(len(idxs)), losses, cfg)
            ev = _maybe_eval(t, cfg.total_steps, cfg, model, val_corpus)
            trace.records.append(StepRecord(
                step=t, epoch=epoch,
                doc_ids=tuple(docs[i].id for i in idxs),
                weights=tuple(1.0 for _ in idxs),
                weighted_loss=wloss, batch_tokens=batch_tokens,
                cum_flops=ledger.total, quota_resampled=resampled,
                val_loss=None if ev is None else ev["mean_nll"],
                val_ppl=None if ev is None else ev["ppl"],
            ))
    except NonfiniteError as e:
        raise TrainingError(f"step {model.step + 1}: {e}") from e
    trace.meta["ledger"] = ledger.summary()
    return model, trace


def train_linupper(
    corpus: Corpus,
    alpha: float,
    model: ModelState,
    cfg: TrainConfig,
    val_corpus: Corpus | None = None,
) -> tuple[ModelState, Trace]:
    """Batch-loss-proportional weights capped at alpha (weight = min(
    loss / batch mean loss, alpha)); records how often the cap fires."""
    docs = _train_docs(corpus)
    sampler = EpochSampler(len(docs), cfg.batch_size, cfg.seed)
    ledger = _new_ledger(model, len(docs), cfg, {"alpha": alpha})
    trace = Trace(meta={
        "policy": "linupper", "n_train_docs": len(docs), "alpha": alpha,
        "metric_events": [],
    })
    try:
        for t in range(1, cfg.total_steps + 1):
            idxs, epoch = sampler.next_batch()
            caches = _forward_groups(model, docs, idxs)
            losses = np.zeros(len(idxs))
            for positions, cache in caches:
                losses[positions] = batch_losses(cache)
            _check_losses(losses, idxs, docs, t)
            wv = weights_linupper(losses, alpha)
            cap_hits = int((wv.weights == alpha).sum())
            batch_tokens = sum(len(docs[i].model_tokens) for i in idxs)
            ledger.add_train_tokens(batch_tokens)
            wloss = _weighted_update(model, caches, wv.weights, losses, cfg)
            ev = _maybe_eval(t, cfg.total_steps, cfg, model, val_corpus)
            trace.records.append(StepRecord(
                step=t, epoch=epoch,
                doc_ids=tuple(docs[i].id for i in idxs),
                scores=tuple(float(x) for x in losses),
                weights=tuple(float(w) for w in wv.weights),
                weighted_loss=wloss, batch_tokens=batch_tokens,
                cum_flops=ledger.total, cap_hits=cap_hits,
                val_loss=None if ev is None else ev["mean_nll"],
                val_ppl=None if ev is None else ev["ppl"],
            ))
    except NonfiniteError as e:
        raise TrainingError(f"step {model.step + 1}: {e}") from e
    trace.meta["ledger"] = ledger.summary()
    return model, trace


def train_uniform(
    corpus: Corpus,
    model: ModelState,
    cfg: TrainConfig,
    val_corpus: Corpus | None = None,
) -> tuple[ModelState, Trace]:
    """Plain SGD baseline: every sample weighs 1."""
    docs = _train_docs(corpus)
    sampler = EpochSampler(len(docs), cfg.batch_size, cfg.seed)
    ledger = _new_ledger(model, len(docs), cfg)
    trace = Trace(meta={
        "policy": "uniform", "n_train_docs": len(docs), "metric_events": [],
    })
    try:
        for t in range(1, cfg.total_steps + 1):
            idxs, epoch = sampler.next_batch()
            caches = _forward_groups(model, docs, idxs)
            losses = np.zeros(len(idxs))
            for positions, cache in caches:
                losses[positions] = batch_losses(cache)
            _check_losses(losses, idxs, docs, t)
            batch_tokens = sum(len(docs[i].model_tokens) for i in idxs)
            ledger.add_train_tokens(batch_tokens)
            wloss = _weighted_update(model, caches, np.ones(len(idxs)), losses, cfg)
            ev = _maybe_eval(t, cfg.total_steps, cfg, model, val_corpus)
            trace.records.append(StepRecord(
                step=t, epoch=epoch,
                doc_ids=tuple(docs[i].id for i in idxs),
                weights=tuple(1.0 for _ in idxs),
                weighted_loss=wloss, batch_tokens=batch_tokens,
                cum_flops=ledger.total,
                val_loss=None if ev is None else ev["mean_nll"],
                val_ppl=None if ev is None else ev["ppl"],
            ))
    except NonfiniteError as e:
        raise TrainingError(f"step {model.step + 1}: {e}") from e
    trace.meta["ledger"] = ledger.summary()
    return model, trace
