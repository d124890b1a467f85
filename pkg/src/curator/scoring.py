"""Quality-signal scorers and the online anchor-refresh procedure.

Every scorer maps one training document to a scalar given some frozen or
evolving model context:

* `score_bm25` - Okapi lexical overlap against the anchor pool, averaged
  over anchors. The anchors are the indexed side; the training document
  plays the query. Model-independent.
* `score_adapt_embed` - cosine between the document's pooled last-layer
  embedding under the *current* model and the anchor embedding matrix.
* `score_frozen_embed` - the same computation under a model snapshot that
  is never updated (and whose anchor matrix is never refreshed).
* `score_ppl` - total next-token NLL under a reference snapshot.
* `score_grad_influence` - inner product of the document's loss gradient
  with the mean anchor-loss gradient, both at a fixed proxy model.
* `weights_linupper` - batch-loss-proportional weights capped at alpha.

Scorers are pure given an immutable model snapshot, index and anchor matrix;
`refresh_anchors` returns a new AnchorSet rather than mutating (snapshot
swap), so concurrent readers never observe a torn matrix.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from curator.corpus import AnchorSet, Document
from curator.gating import WeightVector
from curator.tinymodel import (
    ModelState,
    batch_losses,
    forward_batch,
    l2_normalize,
    pool_positional_batch,
    weighted_grad,
)

SCORE_KINDS = ("bm25", "adapt_embed", "frozen_embed", "ppl", "grad_influence",
               "linupper")
COSINE_KINDS = ("adapt_embed", "frozen_embed")

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_EMBED_CHUNK = 64  # docs per batched forward when embedding a pool


@dataclass(frozen=True)
class ScoreVector:
    """Per-document scores aligned to a corpus (or batch)."""

    scores: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        s = np.asarray(self.scores, dtype=np.float64)
        if s.size and not np.isfinite(s).all():
            raise ValueError("scores must be finite")
        if self.kind in COSINE_KINDS and s.size and (s.min() < -1 or s.max() > 1):
            raise ValueError("cosine scores must lie in [-1, 1]")
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class Bm25Index:
    """Okapi statistics over the anchor pool's lexical terms."""

    doc_freq: dict[str, int]
    term_freqs: tuple[dict[str, int], ...]
    doc_lengths: tuple[int, ...]
    avg_len: float
    k1: float
    b: float
    anchor_count: int


def build_bm25_index(anchors: AnchorSet, k1: float = DEFAULT_K1,
                     b: float = DEFAULT_B) -> Bm25Index:
    """Precompute document frequencies, per-anchor term counts and lengths."""
    term_freqs = []
    doc_freq: dict[str, int] = {}
    lengths = []
    for doc in anchors.anchors:
        tf = dict(Counter(doc.lexical_terms))
        term_freqs.append(tf)
        lengths.append(len(doc.lexical_terms))
        for term in tf:
            doc_freq[term] = doc_freq.get(term, 0) + 1
    n = len(term_freqs)
    avg_len = (sum(lengths) / n) if n else 0.0
    return Bm25Index(
        doc_freq=doc_freq, term_freqs=tuple(term_freqs),
        doc_lengths=tuple(lengths), avg_len=avg_len, k1=k1, b=b,
        anchor_count=n,
    )


def score_bm25(index: Bm25Index, doc: Document) -> float:
    """Mean Okapi score of `doc` (as query) over the indexed anchors.

    score = (1/N) sum_v sum_{t in terms(doc)} IDF(t) * tf_v(t)(k1+1) /
            (tf_v(t) + k1(1 - b + b len_v / avg_len)),
    IDF(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5)).

    Arithmetic order is part of the contract: anchors outer, document terms
    inner (a repeated term contributes once per occurrence), float64
    accumulation, one final division by the anchor count. Terms absent from
    all anchors contribute nothing.
    """
    if index.anchor_count == 0:
        return 0.0
    n = index.anchor_count
    k1, b, avg_len = index.k1, index.b, index.avg_len
    total = 0.0
    for tf, length in zip(index.term_freqs, index.doc_lengths):
        norm = k1 * (1.0 - b + b * length / avg_len)
        for term in doc.lexical_terms:
            f = tf.get(term, 0)
            if f == 0:
                continue
            n_t = index.doc_freq[term]
            idf = math.log(1.0 + (n - n_t + 0.5) / (n_t + 0.5))
            total += idf * (f * (k1 + 1.0)) / (f + norm)
    return total / n


def embed_documents(model: ModelState, docs, eps: float = 1e-8) -> np.ndarray:
    """Unit-norm pooled last-layer embeddings for a document sequence.

    One forward pass per chunk of equal-length documents; rows follow the
    input order. Raises on documents with an empty token sequence.
    """
    docs = list(docs)
    for d in docs:
        if len(d.model_tokens) == 0:
            raise ValueError(f"document {d.id!r} has an empty token sequence")
    out = np.zeros((len(docs), model.config.d_model), dtype=np.float64)
    groups: dict[int, list[int]] = {}
    for i, d in enumerate(docs):
        groups.setdefault(len(d.model_tokens), []).append(i)
    for length in sorted(groups):
        idxs = groups[length]
        for start in range(0, len(idxs), _EMBED_CHUNK):
            chunk = idxs[start : start + _EMBED_CHUNK]
            toks = np.stack([docs[i].model_tokens for i in chunk])
            cache = forward_batch(model, toks)
            pooled = pool_positional_batch(cache.hidden)
            for row, i in enumerate(chunk):
                out[i] = l2_normalize(pooled[row], eps)
    return out


def adapt_scores_from_hidden(hidden: np.ndarray, anchor_embeddings: np.ndarray,
                             eps: float = 1e-8) -> np.ndarray:
    """Mean anchor cosine for a batch given its hidden states [B, L, d].

    Reuses the training forward pass, so scoring a batch adds no model
    forward cost.
    """
    if anchor_embeddings.shape[0] == 0:
        raise ValueError("anchor set is empty")
    pooled = pool_positional_batch(hidden)
    norms = np.maximum(np.linalg.norm(pooled, axis=1, keepdims=True), eps)
    phi = pooled / norms
    scores = phi @ anchor_embeddings.T
    return np.clip(scores.mean(axis=1), -1.0, 1.0)


def score_adapt_embed(model: ModelState, doc: Document, anchors: AnchorSet,
                      eps: float = 1e-8) -> float:
    """Mean cosine between the doc's pooled embedding under `model` and the
    anchor matrix. Clipped into [-1, 1] against float roundoff."""
    if len(anchors) == 0:
        raise ValueError("anchor set is empty")
    if len(doc.model_tokens) == 0:
        raise ValueError(f"document {doc.id!r} has an empty token sequence")
    cache = forward_batch(model, doc.model_tokens[None, :])
    return float(adapt_scores_from_hidden(cache.hidden, anchors.embeddings, eps)[0])


def score_frozen_embed(encoder: ModelState, doc: Document, anchors: AnchorSet,
                       eps: float = 1e-8) -> float:
    """Identical math to `score_adapt_embed`; `encoder` must be a fixed
    snapshot and `anchors` must have been embedded under that same snapshot,
    which is what keeps these scores constant across training steps."""
    return score_adapt_embed(encoder, doc, anchors, eps)


def score_ppl(model: ModelState, doc: Document) -> float:
    """Total next-token NLL of the document under a reference snapshot."""
    if len(doc.model_tokens) < 2:
        raise ValueError(f"document {doc.id!r} needs >= 2 tokens for NLL scoring")
    cache = forward_batch(model, doc.model_tokens[None, :])
    nll = batch_losses(cache)[0] * (len(doc.model_tokens) - 1)
    return float(nll)


def score_grad_influence(proxy: ModelState, doc: Document,
                         anchors: AnchorSet) -> float:
    """<grad loss(doc), grad mean anchor loss>, both at the proxy model.

    Positive scores mean an SGD step on the document reduces anchor loss to
    first order. Full flat gradients, no projection.
    """
    if len(anchors) == 0:
        raise ValueError("anchor set is empty")
    if len(doc.model_tokens) < 2:
        raise ValueError(f"document {doc.id!r} needs >= 2 tokens")
    g_doc = weighted_grad(
        proxy, [(doc.model_tokens, doc.model_tokens[1:])], np.array([1.0]))
    batch = []
    for a in anchors.anchors:
        if len(a.model_tokens) < 2:
            raise ValueError(f"anchor {a.id!r} needs >= 2 tokens")
        batch.append((a.model_tokens, a.model_tokens[1:]))
    w = np.full(len(batch), 1.0 / len(batch))
    g_val = weighted_grad(proxy, batch, w)
    return float(g_doc @ g_val)


def weights_linupper(batch_losses_in, alpha: float) -> WeightVector:
    """w_i = min(loss_i / mean(loss), alpha); all ones when the mean is 0."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    losses = np.asarray(batch_losses_in, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("batch must be nonempty")
    if losses.min() < 0:
        raise ValueError("losses must be >= 0")
    mean = losses.mean()
    if mean == 0.0:
        return WeightVector(weights=np.ones_like(losses))
    return WeightVector(weights=np.minimum(losses / mean, alpha))


def refresh_anchors(model: ModelState, anchors: AnchorSet, step: int,
                    eps: float = 1e-8) -> AnchorSet:
    """Recompute every anchor embedding under the current model parameters.

    Returns a new AnchorSet with last_refresh_step = step.
    """
    emb = embed_documents(model, anchors.anchors, eps)
    return anchors.with_embeddings(emb, step)


def score_corpus(kind: str, docs, model: ModelState | None = None,
                 anchors: AnchorSet | None = None,
                 index: Bm25Index | None = None,
                 eps: float = 1e-8) -> ScoreVector:
    """Corpus-wide ScoreVector for the model-independent / frozen scorers.

    Embedding kinds run batched; `model` is interpreted per kind (current
    model for adapt_embed, frozen snapshot for frozen_embed/ppl, proxy for
    grad_influence).
    """
    docs = list(docs)
    if kind == "bm25":
        if index is None:
            if anchors is None:
                raise ValueError("bm25 needs an index or anchors")
            index = build_bm25_index(anchors)
        vals = np.array([score_bm25(index, d) for d in docs], dtype=np.float64)
    elif kind in COSINE_KINDS:
        if model is None or anchors is None:
            raise ValueError(f"{kind} needs a model and anchors")
        if len(anchors) == 0:
            raise ValueError("anchor set is empty")
        emb = embed_documents(model, docs, eps)
        vals = np.clip((emb @ anchors.embeddings.T).mean(axis=1), -1.0, 1.0)
    elif kind == "ppl":
        if model is None:
            raise ValueError("ppl needs a reference model")
        vals = np.array([score_ppl(model, d) for d in docs], dtype=np.float64)
    elif kind == "grad_influence":
        if model is None or anchors is None:
            raise ValueError("grad_influence needs a proxy model and anchors")
        vals = np.array([score_grad_influence(model, d, anchors) for d in docs],
                        dtype=np.float64)
    else:
        raise ValueError(f"unknown score kind {kind!r}")
    return ScoreVector(scores=vals, kind=kind)
