"""Desk-scale decoder-only transformer with exact hand-rolled gradients.

The model is intentionally small (default: 2 pre-norm blocks, d_model 64,
4 heads, byte vocabulary 256, learned positional embeddings, 4x GELU MLP)
and lives entirely in numpy. Parameters are a single flat vector partitioned
into named tensors in a documented, stable order; that order is also the
checkpoint byte layout. Forward passes expose per-position logits and the
last-layer hidden states (post final layer norm, i.e. the exact input to the
unembedding projection), which downstream scoring pools into sequence
embeddings.

Precision: parameters and GEMMs run in the configured dtype (float64 by
default, float32 for speed); losses, NLLs and all scalar accumulation are
always computed in float64. The backward pass is written out by hand so the
weighted-gradient path can be verified coordinate-by-coordinate against
central finite differences.

Checkpoint byte layout (little-endian):
    bytes 0..7   magic b"CURCKPT1"
    u32          header length in bytes
    header       UTF-8 JSON: {"config": {...}, "step": int, "seed": int,
                  "version": str, plus caller-supplied extras}
    payload      each tensor in `ModelConfig.tensor_shapes()` order,
                 C-contiguous, as little-endian float32
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CHECKPOINT_MAGIC = b"CURCKPT1"

_GELU_C = math.sqrt(2.0 / math.pi)
_LN_EPS = 1e-5


class NonfiniteError(RuntimeError):
    """A loss or gradient stopped being finite; carries the batch index."""

    def __init__(self, message: str, sample_index: int | None = None):
        super().__init__(message)
        self.sample_index = sample_index


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    vocab: int = 256
    max_seq_len: int = 64
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be >= 2")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def d_mlp(self) -> int:
        # 2x expansion keeps the desk-scale CPU step budget; capacity is ample
        return 2 * self.d_model

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def tensor_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Named tensors in flat-vector (and checkpoint) order."""
        d, v, s, m = self.d_model, self.vocab, self.max_seq_len, self.d_mlp
        shapes: list[tuple[str, tuple[int, ...]]] = [
            ("tok_emb", (v, d)),
            ("pos_emb", (s, d)),
        ]
        for i in range(self.n_layers):
            p = f"layer{i}."
            shapes += [
                (p + "ln1_g", (d,)),
                (p + "ln1_b", (d,)),
                (p + "attn_qkv_w", (d, 3 * d)),
                (p + "attn_qkv_b", (3 * d,)),
                (p + "attn_out_w", (d, d)),
                (p + "attn_out_b", (d,)),
                (p + "ln2_g", (d,)),
                (p + "ln2_b", (d,)),
                (p + "mlp_up_w", (d, m)),
                (p + "mlp_up_b", (m,)),
                (p + "mlp_down_w", (m, d)),
                (p + "mlp_down_b", (d,)),
            ]
        shapes += [
            ("ln_f_g", (d,)),
            ("ln_f_b", (d,)),
            ("unembed_w", (d, v)),
            ("unembed_b", (v,)),
        ]
        return shapes

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.tensor_shapes())

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "vocab": self.vocab,
            "max_seq_len": self.max_seq_len,
            "dtype": self.dtype,
        }


@dataclass
class ModelState:
    """Flat parameter vector plus named views, step counter and init seed."""

    config: ModelConfig
    flat: np.ndarray
    step: int = 0
    rng_seed: int = 0
    tensors: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.tensors:
            self.tensors = _partition(self.config, self.flat)

    def copy(self) -> "ModelState":
        return ModelState(
            config=self.config,
            flat=self.flat.copy(),
            step=self.step,
            rng_seed=self.rng_seed,
        )

    @property
    def param_count(self) -> int:
        return self.flat.size


@dataclass
class ForwardResult:
    """Per-position logits, last-layer hidden states and next-token NLLs.

    ``per_token_nll[p]`` is the NLL of token p+1 given positions <= p, so it
    has L-1 entries for an L-token input (empty for L=1).
    """

    logits: np.ndarray
    hidden: np.ndarray
    per_token_nll: np.ndarray


def _partition(config: ModelConfig, flat: np.ndarray) -> dict[str, np.ndarray]:
    views = {}
    offset = 0
    for name, shape in config.tensor_shapes():
        size = int(np.prod(shape))
        views[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {offset}")
    return views


def init_model(config: ModelConfig, seed: int) -> ModelState:
    """Deterministic initialization: embeddings N(0, 0.02^2), matmul weights
    N(0, 1/fan_in), biases zero, layer-norm gains one.

    Tensors are drawn in `tensor_shapes()` order from a PCG64 stream, so the
    same (config, seed) always yields a bit-identical parameter vector.
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    flat = np.zeros(config.param_count, dtype=dtype)
    state = ModelState(config=config, flat=flat, step=0, rng_seed=seed)
    for name, shape in config.tensor_shapes():
        t = state.tensors[name]
        base = name.split(".")[-1]
        if base in ("tok_emb", "pos_emb"):
            t[...] = (rng.standard_normal(shape) * 0.02).astype(dtype)
        elif base.endswith("_w"):
            fan_in = shape[0]
            t[...] = (rng.standard_normal(shape) / math.sqrt(fan_in)).astype(dtype)
        elif base.endswith("_g"):
            t[...] = 1.0
        # biases stay zero
    return state


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


class _Cache:
    """Activation cache for one batched forward pass (equal-length rows)."""

    __slots__ = (
        "tokens", "x0", "layers", "x_final", "xhat_f", "rstd_f",
        "logits", "hidden", "B", "L", "_probs", "_nll",
    )

    def __init__(self):
        self.layers = []
        self._probs = None
        self._nll = None


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, xhat, rstd


def _layernorm_bwd(dy, xhat, rstd, g):
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dg, db


def _gelu_fwd(u):
    inner = _GELU_C * (u + 0.044715 * u * u * u)
    t = np.tanh(inner)
    return 0.5 * u * (1.0 + t), t


def _gelu_bwd(du_out, u, t):
    u2 = u * u
    d = 1.0 - t * t
    d *= _GELU_C * (1.0 + 0.134145 * u2)
    d *= u
    d += 1.0 + t
    d *= 0.5
    d *= du_out
    return d


def _causal_mask(L: int, dtype) -> np.ndarray:
    # [L, L] with -inf strictly above the diagonal
    m = np.zeros((L, L), dtype=dtype)
    m[np.triu_indices(L, k=1)] = -np.inf
    return m


def forward_batch(model: ModelState, tokens: np.ndarray) -> _Cache:
    """Run the model over a [B, L] int batch, caching activations.

    All rows must share one length L with 1 <= L <= max_seq_len and token ids
    in [0, vocab). Logits at position p depend only on tokens at positions
    <= p (causal masking).
    """
    cfg = model.config
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    B, L = tokens.shape
    if L < 1 or L > cfg.max_seq_len:
        raise ValueError(f"sequence length {L} outside [1, {cfg.max_seq_len}]")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab):
        raise ValueError("token id outside vocabulary")

    t = model.tensors
    H, hd = cfg.n_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(hd)
    dtype = model.flat.dtype

    cache = _Cache()
    cache.tokens = tokens
    cache.B, cache.L = B, L

    x = t["tok_emb"][tokens] + t["pos_emb"][:L]
    cache.x0 = x
    mask = _causal_mask(L, dtype)

    for i in range(cfg.n_layers):
        p = f"layer{i}."
        lc = {}
        a, lc["xhat1"], lc["rstd1"] = _layernorm_fwd(x, t[p + "ln1_g"], t[p + "ln1_b"])
        lc["a"] = a
        qkv = a.reshape(B * L, -1) @ t[p + "attn_qkv_w"] + t[p + "attn_qkv_b"]
        qkv = qkv.reshape(B, L, 3, H, hd).transpose(2, 0, 3, 1, 4)  # [3, B, H, L, hd]
        q, k, v = qkv[0], qkv[1], qkv[2]
        lc["q"], lc["k"], lc["v"] = q, k, v
        att = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale + mask
        att -= att.max(axis=-1, keepdims=True)
        np.exp(att, out=att)
        att /= att.sum(axis=-1, keepdims=True)
        lc["p_att"] = att
        o = np.matmul(att, v)  # [B, H, L, hd]
        o = o.transpose(0, 2, 1, 3).reshape(B, L, cfg.d_model)
        lc["o"] = o
        x = x + (o.reshape(B * L, -1) @ t[p + "attn_out_w"]).reshape(B, L, -1) \
            + t[p + "attn_out_b"]
        a2, lc["xhat2"], lc["rstd2"] = _layernorm_fwd(x, t[p + "ln2_g"], t[p + "ln2_b"])
        lc["a2"] = a2
        u = a2.reshape(B * L, -1) @ t[p + "mlp_up_w"] + t[p + "mlp_up_b"]
        g, tanh_u = _gelu_fwd(u)
        lc["u"], lc["tanh_u"], lc["g"] = u, tanh_u, g
        x = x + (g @ t[p + "mlp_down_w"]).reshape(B, L, -1) + t[p + "mlp_down_b"]
        cache.layers.append(lc)

    cache.x_final = x
    h, cache.xhat_f, cache.rstd_f = _layernorm_fwd(x, t["ln_f_g"], t["ln_f_b"])
    cache.hidden = h
    cache.logits = h.reshape(B * L, -1) @ t["unembed_w"] + t["unembed_b"]
    cache.logits = cache.logits.reshape(B, L, cfg.vocab)
    return cache


def nll_next_token(logits: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Float64 NLL of token p+1 under logits at p; shape [B, L-1]."""
    lg = np.asarray(logits, dtype=np.float64)
    B, L, V = lg.shape
    if L < 2:
        return np.zeros((B, 0), dtype=np.float64)
    rows = lg[:, :-1, :]
    m = rows.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(rows - m).sum(axis=-1))
    targets = tokens[:, 1:]
    picked = np.take_along_axis(rows, targets[..., None], axis=-1)[..., 0]
    return lse - picked


def forward(model: ModelState, tokens: Sequence[int] | np.ndarray) -> ForwardResult:
    """Single-sequence forward pass; see `forward_batch` for preconditions."""
    tok = np.asarray(tokens, dtype=np.int64)
    if tok.ndim != 1:
        raise ValueError("forward expects a 1-D token sequence")
    cache = forward_batch(model, tok[None, :])
    nll = nll_next_token(cache.logits, cache.tokens)[0]
    return ForwardResult(
        logits=cache.logits[0],
        hidden=cache.hidden[0],
        per_token_nll=nll,
    )


def sample_loss(result: ForwardResult, targets: Sequence[int] | np.ndarray) -> float:
    """Mean next-token cross-entropy of `result.logits` against `targets`.

    `targets` must hold exactly L-1 labels, one per next-token position.
    """
    tg = np.asarray(targets, dtype=np.int64)
    L = result.logits.shape[0]
    if tg.shape != (L - 1,):
        raise ValueError(f"targets length {tg.shape} does not match L-1={L - 1}")
    lg = np.asarray(result.logits[:-1], dtype=np.float64)
    m = lg.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lg - m).sum(axis=-1))
    picked = lg[np.arange(L - 1), tg]
    return float((lse - picked).mean())


def _softmax_stats(cache: _Cache) -> tuple[np.ndarray, np.ndarray]:
    """Softmax probs over next-token rows plus per-position NLL, shared
    between the loss and backward paths (one exp over the logits)."""
    if cache._probs is None:
        rows = cache.logits[:, :-1, :]
        m = rows.max(axis=-1, keepdims=True)
        p = np.exp(rows - m)
        s = p.sum(axis=-1, keepdims=True)
        targets = cache.tokens[:, 1:]
        picked = np.take_along_axis(rows, targets[..., None], axis=-1)[..., 0]
        nll = (np.log(s[..., 0]) + m[..., 0] - picked).astype(np.float64)
        p /= s
        cache._probs = p
        cache._nll = nll
    return cache._probs, cache._nll


def backward_batch(
    model: ModelState,
    cache: _Cache,
    weights: np.ndarray,
    grad_out: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of sum_i weights[i] * mean-CE(sample i) as one flat vector.

    Expects the cache produced by `forward_batch` on sequences of length
    L >= 2 (the per-sample loss averages over the L-1 next-token positions).
    """
    cfg = model.config
    t = model.tensors
    tokens = cache.tokens
    B, L = cache.B, cache.L
    if L < 2:
        raise ValueError("backward requires sequences of length >= 2")
    H, hd = cfg.n_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(hd)
    dtype = model.flat.dtype

    if grad_out is None:
        grad_out = np.zeros(cfg.param_count, dtype=np.float64)
    gt = _partition(cfg, grad_out)

    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (B,):
        raise ValueError(f"weights shape {w.shape} does not match batch size {B}")

    # dL/dlogits: rows p < L-1 get w_b/(L-1) * (softmax - onehot); last row 0.
    # Consumes the cached softmax in place; run batch_losses first if needed.
    dlogits = np.zeros_like(cache.logits)
    probs, _ = _softmax_stats(cache)
    coef = (w / (L - 1)).astype(dtype)
    dl = probs
    dl *= coef[:, None, None]
    cache._probs = None
    # each (b, p, target) triple is unique, so fancy assignment is safe
    dl[np.arange(B)[:, None], np.arange(L - 1)[None, :], tokens[:, 1:]] -= coef[:, None]
    dlogits[:, :-1, :] = dl

    flat_h = cache.hidden.reshape(B * L, -1)
    flat_dlogits = dlogits.reshape(B * L, -1)
    gt["unembed_w"] += flat_h.T @ flat_dlogits
    gt["unembed_b"] += flat_dlogits.sum(axis=0)
    dh = (flat_dlogits @ t["unembed_w"].T).reshape(B, L, -1)

    dx, dgf, dbf = _layernorm_bwd(dh, cache.xhat_f, cache.rstd_f, t["ln_f_g"])
    gt["ln_f_g"] += dgf
    gt["ln_f_b"] += dbf

    for i in reversed(range(cfg.n_layers)):
        p = f"layer{i}."
        lc = cache.layers[i]
        # MLP branch
        dg = (dx.reshape(B * L, -1)) @ t[p + "mlp_down_w"].T
        gt[p + "mlp_down_w"] += lc["g"].T @ dx.reshape(B * L, -1)
        gt[p + "mlp_down_b"] += dx.reshape(B * L, -1).sum(axis=0)
        du = _gelu_bwd(dg, lc["u"], lc["tanh_u"])
        gt[p + "mlp_up_w"] += lc["a2"].reshape(B * L, -1).T @ du
        gt[p + "mlp_up_b"] += du.sum(axis=0)
        da2 = (du @ t[p + "mlp_up_w"].T).reshape(B, L, -1)
        dx_mid, dg2, db2 = _layernorm_bwd(da2, lc["xhat2"], lc["rstd2"], t[p + "ln2_g"])
        gt[p + "ln2_g"] += dg2
        gt[p + "ln2_b"] += db2
        dx = dx + dx_mid
        # attention branch
        do_merged = dx.reshape(B * L, -1) @ t[p + "attn_out_w"].T
        gt[p + "attn_out_w"] += lc["o"].reshape(B * L, -1).T @ dx.reshape(B * L, -1)
        gt[p + "attn_out_b"] += dx.reshape(B * L, -1).sum(axis=0)
        do = do_merged.reshape(B, L, H, hd).transpose(0, 2, 1, 3)
        p_att, q, k, v = lc["p_att"], lc["q"], lc["k"], lc["v"]
        dv = np.matmul(p_att.transpose(0, 1, 3, 2), do)
        dp = np.matmul(do, v.transpose(0, 1, 3, 2))
        datt = p_att * (dp - (dp * p_att).sum(axis=-1, keepdims=True))
        dq = np.matmul(datt, k) * scale
        dk = np.matmul(datt.transpose(0, 1, 3, 2), q) * scale
        dqkv = np.empty((B, L, 3 * cfg.d_model), dtype=dtype)
        dqkv[:, :, : cfg.d_model] = dq.transpose(0, 2, 1, 3).reshape(B, L, -1)
        dqkv[:, :, cfg.d_model : 2 * cfg.d_model] = (
            dk.transpose(0, 2, 1, 3).reshape(B, L, -1)
        )
        dqkv[:, :, 2 * cfg.d_model :] = dv.transpose(0, 2, 1, 3).reshape(B, L, -1)
        flat_dqkv = dqkv.reshape(B * L, -1)
        gt[p + "attn_qkv_w"] += lc["a"].reshape(B * L, -1).T @ flat_dqkv
        gt[p + "attn_qkv_b"] += flat_dqkv.sum(axis=0)
        da = (flat_dqkv @ t[p + "attn_qkv_w"].T).reshape(B, L, -1)
        dx_in, dg1, db1 = _layernorm_bwd(da, lc["xhat1"], lc["rstd1"], t[p + "ln1_g"])
        gt[p + "ln1_g"] += dg1
        gt[p + "ln1_b"] += db1
        dx = dx + dx_in

    # embeddings: segment-sum token grads via a one-hot GEMM (much faster
    # than np.add.at at this batch size), sum positional grads over the batch
    flat_tok = tokens.reshape(-1)
    flat_dx = dx.reshape(B * L, -1)
    onehot = np.zeros((B * L, cfg.vocab), dtype=dtype)
    onehot[np.arange(B * L), flat_tok] = 1.0
    gt["tok_emb"] += onehot.T @ flat_dx
    gt["pos_emb"][:L] += dx.sum(axis=0)
    return grad_out


def batch_losses(cache: _Cache) -> np.ndarray:
    """Per-sample mean next-token NLL (float64) for a forward cache."""
    if cache.L < 2:
        raise ValueError("per-sample loss undefined for length-1 sequences")
    _, nll = _softmax_stats(cache)
    return nll.mean(axis=1)


def weighted_grad(
    model: ModelState,
    batch: Sequence[tuple[np.ndarray, np.ndarray]],
    weights: Sequence[float] | np.ndarray,
    normalize: bool = False,
) -> np.ndarray:
    """sum_i weights[i] * grad of sample i's mean next-token cross-entropy.

    `batch` holds (tokens, targets) pairs where targets must equal
    tokens[1:]-style next-token labels (length len(tokens) - 1). Sequences of
    different lengths are grouped and accumulated; the returned flat vector
    is always float64. With normalize=True the weights are divided by
    Z = sum(weights) first (a Z of 0 leaves the zero gradient). Raises
    NonfiniteError naming the first offending batch index if any per-sample
    loss or the gradient stops being finite.
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if len(batch) != w.size:
        raise ValueError(f"{len(batch)} samples but {w.size} weights")
    if w.size and w.min() < 0:
        raise ValueError("weights must be >= 0")
    if normalize:
        z = w.sum()
        if z > 0:
            w = w / z
    grad = np.zeros(model.config.param_count, dtype=np.float64)
    groups: dict[int, list[int]] = {}
    for idx, (tokens, targets) in enumerate(batch):
        tok = np.asarray(tokens, dtype=np.int64)
        tg = np.asarray(targets, dtype=np.int64)
        if tg.shape != (tok.size - 1,):
            raise ValueError(f"sample {idx}: targets must have length L-1")
        if not np.array_equal(tg, tok[1:]):
            raise ValueError(f"sample {idx}: targets are not the next-token labels")
        groups.setdefault(tok.size, []).append(idx)
    for length in sorted(groups):
        idxs = groups[length]
        toks = np.stack([np.asarray(batch[i][0], dtype=np.int64) for i in idxs])
        cache = forward_batch(model, toks)
        losses = batch_losses(cache)
        for j, i in enumerate(idxs):
            if not math.isfinite(losses[j]):
                raise NonfiniteError(f"nonfinite loss at batch index {i}", i)
        backward_batch(model, cache, w[idxs], grad_out=grad)
    if not np.isfinite(grad).all():
        raise NonfiniteError("nonfinite gradient", None)
    return grad


# ---------------------------------------------------------------------------
# embedding helpers
# ---------------------------------------------------------------------------


def l2_normalize(v: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """v / max(||v||_2, eps); the eps floor keeps near-zero vectors finite."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    v = np.asarray(v, dtype=np.float64)
    return v / max(float(np.linalg.norm(v)), eps)


def pool_positional(hidden: np.ndarray) -> np.ndarray:
    """Position-weighted mean over rows: weight i/sum(1..L) for row i (1-based).

    Later rows get strictly higher weight; the weights sum to 1. The result is
    not L2-normalized.
    """
    h = np.asarray(hidden, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("hidden must be a nonempty [L, d] matrix")
    L = h.shape[0]
    w = np.arange(1, L + 1, dtype=np.float64) / (L * (L + 1) // 2)
    return w @ h


def pool_positional_batch(hidden: np.ndarray) -> np.ndarray:
    """Batched `pool_positional` over [B, L, d] (shared L)."""
    h = np.asarray(hidden, dtype=np.float64)
    B, L, _ = h.shape
    w = np.arange(1, L + 1, dtype=np.float64) / (L * (L + 1) // 2)
    return np.einsum("l,bld->bd", w, h)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: ModelState, path, extra_header: dict | None = None) -> None:
    """Write the documented header + little-endian float32 payload."""
    header = {
        "config": model.config.to_dict(),
        "step": model.step,
        "seed": model.rng_seed,
    }
    if extra_header:
        header.update(extra_header)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(4, "little"))
        f.write(blob)
        for name, _ in model.config.tensor_shapes():
            f.write(np.ascontiguousarray(model.tensors[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelState, dict]:
    """Inverse of `save_checkpoint`; returns (model, header)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        hlen = int.from_bytes(f.read(4), "little")
        header = json.loads(f.read(hlen).decode("utf-8"))
        config = ModelConfig(**header["config"])
        flat = np.zeros(config.param_count, dtype=np.dtype(config.dtype))
        state = ModelState(
            config=config, flat=flat,
            step=int(header["step"]), rng_seed=int(header["seed"]),
        )
        for name, shape in config.tensor_shapes():
            size = int(np.prod(shape))
            raw = f.read(4 * size)
            if len(raw) != 4 * size:
                raise ValueError(f"truncated checkpoint payload at tensor {name}")
            state.tensors[name][...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return state, header
