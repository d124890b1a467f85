"""Exact integer FLOPs accounting for training and curation methods.

Conventions (all integer arithmetic, no float rounding of budgets):

* training costs 6*N FLOPs per processed token (N = trainable parameter
  count), forward-only passes cost 2*N per token;
* a "sample" is `sample_tokens` tokens long (default 2048), and the
  per-method closed forms charge `sample_tokens * 6N` per selected sample
  per epoch plus any scoring preprocessing;
* the gradient-influence method scans the pool at three checkpoints, charged
  as the literal rational 153/100 of one full training-cost pass over the
  pool (exact whenever the base product is divisible by 100, which holds for
  the reference constants; otherwise floor division applies);
* in-training gating arithmetic (sigmoid, cosines against at most a few
  hundred anchors) is O(d * anchors) per sample versus O(N) for a forward
  pass and is excluded from the metrics bucket, as are validation-loss
  evaluations (telemetry shared by every method). Both exclusions are stated
  in emitted report headers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

METHODS = ("random", "bm25", "embedding", "ppl", "grad_influence")

DEFAULT_SAMPLE_TOKENS = 2048


def flops_train_tokens(n_params: int, tokens: int) -> int:
    """6 * N * tokens."""
    if n_params < 0 or tokens < 0:
        raise ValueError("arguments must be >= 0")
    return 6 * int(n_params) * int(tokens)


def flops_forward_tokens(n_params: int, tokens: int) -> int:
    """2 * N * tokens."""
    if n_params < 0 or tokens < 0:
        raise ValueError("arguments must be >= 0")
    return 2 * int(n_params) * int(tokens)


def flops_method_total(
    method: str,
    n_params: int,
    pool_size: int,
    selected: int,
    epochs: int,
    sample_tokens: int = DEFAULT_SAMPLE_TOKENS,
    proxy_params: int | None = None,
) -> int:
    """Closed-form total cost of an offline curation method.

    random / bm25:     k6N * D * E                       (no charged prep)
    embedding:         k2N' * P + k6N * D * E
    ppl:               k2N  * P + k6N * D * E
    grad_influence:    (153/100) * k6N * P + k6N * D * E

    with k the per-sample token count, N the trained model size, N' the
    encoder size, P the pool size, D the selected count and E epochs.
    """
    n_params = int(n_params)
    pool_size = int(pool_size)
    selected = int(selected)
    epochs = int(epochs)
    sample_tokens = int(sample_tokens)
    if min(n_params, pool_size, selected, epochs, sample_tokens) < 0:
        raise ValueError("constants must be >= 0")
    n_proxy = int(proxy_params) if proxy_params is not None else n_params
    train = sample_tokens * 6 * n_params * selected * epochs
    if method in ("random", "bm25"):
        prep = 0
    elif method == "embedding":
        prep = sample_tokens * 2 * n_proxy * pool_size
    elif method == "ppl":
        prep = sample_tokens * 2 * n_params * pool_size
    elif method == "grad_influence":
        prep = (153 * sample_tokens * 6 * n_params * pool_size) // 100
    else:
        raise ValueError(f"unknown method {method!r}")
    return prep + train


def flops_online_total(train_tokens: int, n_params: int,
                       metric_events) -> int:
    """6N * train_tokens plus 2N per token of each extra forward pass.

    `metric_events` enumerates token counts of forward passes that are not
    part of training itself (anchor refreshes, frozen-encoder score
    precomputation). Scores derived from the training forward pass itself
    contribute no events.
    """
    total = flops_train_tokens(n_params, train_tokens)
    for tokens in metric_events:
        total += flops_forward_tokens(n_params, int(tokens))
    return total


@dataclass
class FlopsLedger:
    """Running prep / train / metrics tally owned by a training loop."""

    n_params: int
    constants: dict = field(default_factory=dict)
    prep: int = 0
    train: int = 0
    metrics: int = 0

    def add_prep(self, flops: int) -> None:
        self.prep += int(flops)

    def add_train_tokens(self, tokens: int) -> None:
        self.train += flops_train_tokens(self.n_params, tokens)

    def add_metric_forward_tokens(self, tokens: int) -> None:
        self.metrics += flops_forward_tokens(self.n_params, tokens)

    @property
    def total(self) -> int:
        return self.prep + self.train + self.metrics

    def summary(self) -> dict:
        return {
            "prep": self.prep,
            "train": self.train,
            "metrics": self.metrics,
            "total": self.total,
            "constants": dict(self.constants),
        }
