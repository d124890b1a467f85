"""Experiment configuration: strict JSON schema with materialized defaults.

Configs are provenance-critical, so parsing is strict: unknown keys are
rejected (never ignored) and every error names its JSON path, e.g.
"policy.taw: unknown key". `parse_config` returns a fully resolved
ExperimentConfig whose `resolved` dict echoes every default
(temperature 1.0, eps 1e-8, refresh_every 100, k1 1.2, b 0.75, ...);
serializing and re-parsing the resolved dict is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from curator.gating import (
    GATE_MODES,
    STANDARDIZE_MODES,
    DomainWeights,
    GateConfig,
)
from curator.tinymodel import ModelConfig
from curator.trainer import (
    MIXING_MODES,
    ONLINE_SCORERS,
    LinUpperPolicy,
    MixingPolicy,
    OnlinePolicy,
    SelectionPolicy,
    TrainConfig,
    UniformPolicy,
)

POLICY_KINDS = ("online", "selection", "mixing", "linupper", "uniform")
SELECTION_SCORERS = ("bm25", "adapt_embed", "frozen_embed", "ppl",
                     "grad_influence")


class ConfigError(ValueError):
    """Configuration rejected; message starts with the JSON path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _typecheck(value, types, path):
    if types is float:
        # ints are acceptable where floats are expected, bools are not
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {type(value).__name__}")
        return float(value)
    if types is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, types):
        name = types.__name__ if isinstance(types, type) else str(types)
        raise ConfigError(path, f"expected {name}, got {type(value).__name__}")
    return value


_MISSING = object()


class _Section:
    """One config object: pop-validate every key, then reject leftovers."""

    def __init__(self, raw: dict, path: str):
        if not isinstance(raw, dict):
            raise ConfigError(path, "expected an object")
        self.raw = dict(raw)
        self.path = path

    def take(self, key, types, default=_MISSING):
        sub = f"{self.path}.{key}" if self.path else key
        if key not in self.raw:
            if default is _MISSING:
                raise ConfigError(sub, "missing required key")
            return default
        return _typecheck(self.raw.pop(key), types, sub)

    def finish(self):
        if self.raw:
            key = sorted(self.raw)[0]
            sub = f"{self.path}.{key}" if self.path else key
            raise ConfigError(sub, "unknown key")


@dataclass
class ExperimentConfig:
    corpus_path: str | None
    synth: dict | None
    anchors: dict
    model: ModelConfig
    model_seed: int
    train: TrainConfig
    policy: object
    gate: GateConfig
    output_dir: str | None
    resolved: dict = field(repr=False, default_factory=dict)


def _resolve_gate(raw: dict | None, scorer: str | None) -> tuple[GateConfig, dict]:
    sec = _Section(raw or {}, "gate")
    temperature = sec.take("temperature", float, 1.0)
    eps = sec.take("eps", float, 1e-8)
    clip = sec.take("clip", (list, type(None)), None)
    standardize = sec.take("standardize", (str, type(None)), None)
    mode = sec.take("mode", str, "global_sigmoid")
    sec.finish()
    if standardize is None:
        # bm25 scores are unbounded and nonnegative: rescale them into [0, 1]
        # before the sigmoid; cosine scorers gate raw
        standardize = "minmax" if scorer == "bm25" else "none"
    if standardize not in STANDARDIZE_MODES:
        raise ConfigError("gate.standardize",
                          f"must be one of {STANDARDIZE_MODES}")
    if mode not in GATE_MODES:
        raise ConfigError("gate.mode", f"must be one of {GATE_MODES}")
    if clip is not None:
        if len(clip) != 2:
            raise ConfigError("gate.clip", "expected [lo, hi]")
        clip = (float(clip[0]), float(clip[1]))
        if not (0 <= clip[0] <= clip[1]):
            raise ConfigError("gate.clip", "need 0 <= lo <= hi")
    if temperature <= 0:
        raise ConfigError("gate.temperature", "must be > 0")
    if eps <= 0:
        raise ConfigError("gate.eps", "must be > 0")
    gate = GateConfig(temperature=temperature, eps=eps, clip=clip,
                      standardize=standardize, mode=mode)
    return gate, gate.to_dict()


def _resolve_policy(raw: dict, gate: GateConfig, bm25: dict):
    sec = _Section(raw, "policy")
    kind = sec.take("kind", str)
    if kind not in POLICY_KINDS:
        raise ConfigError("policy.kind", f"must be one of {POLICY_KINDS}")
    resolved = {"kind": kind}
    if kind == "online":
        scorer = sec.take("scorer", str)
        if scorer not in ONLINE_SCORERS:
            raise ConfigError("policy.scorer", f"must be one of {ONLINE_SCORERS}")
        refresh = sec.take("refresh_every", int, 100)
        if refresh < 1:
            raise ConfigError("policy.refresh_every", "must be >= 1")
        policy = OnlinePolicy(scorer=scorer, gate=gate, refresh_every=refresh,
                              bm25_k1=bm25["k1"], bm25_b=bm25["b"])
        resolved.update({"scorer": scorer, "refresh_every": refresh})
    elif kind == "selection":
        scorer = sec.take("scorer", str)
        if scorer not in SELECTION_SCORERS:
            raise ConfigError("policy.scorer",
                              f"must be one of {SELECTION_SCORERS}")
        threshold = sec.take("threshold", float)
        policy = SelectionPolicy(scorer=scorer, threshold=threshold)
        resolved.update({"scorer": scorer, "threshold": threshold})
    elif kind == "mixing":
        weights = sec.take("weights", dict)
        mode = sec.take("mode", str, "probability")
        if mode not in MIXING_MODES:
            raise ConfigError("policy.mode", f"must be one of {MIXING_MODES}")
        try:
            dw = DomainWeights(weights={
                k: _typecheck(v, float, f"policy.weights.{k}")
                for k, v in weights.items()})
        except ValueError as e:
            raise ConfigError("policy.weights", str(e))
        policy = MixingPolicy(weights=dw, mode=mode)
        resolved.update({"weights": dict(sorted(weights.items())), "mode": mode})
    elif kind == "linupper":
        alpha = sec.take("alpha", float)
        if alpha <= 0:
            raise ConfigError("policy.alpha", "must be > 0")
        policy = LinUpperPolicy(alpha=alpha)
        resolved.update({"alpha": alpha})
    else:
        policy = UniformPolicy()
    sec.finish()
    return policy, resolved


def resolve_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed JSON object and materialize every default."""
    top = _Section(raw, "")
    corpus_path = top.take("corpus", (str, type(None)), None)
    synth_raw = top.take("synth", (dict, type(None)), None)
    if (corpus_path is None) == (synth_raw is None):
        raise ConfigError("", "exactly one of 'corpus' and 'synth' is required")

    synth = None
    if synth_raw is not None:
        sec = _Section(synth_raw, "synth")
        synth = {
            "n_per_domain": sec.take("n_per_domain", int),
            "seq_len": sec.take("seq_len", int),
            "seed": sec.take("seed", int),
        }
        sec.finish()
        if synth["n_per_domain"] < 1:
            raise ConfigError("synth.n_per_domain", "must be >= 1")
        if synth["seq_len"] < 2:
            raise ConfigError("synth.seq_len", "must be >= 2")
    else:
        path = Path(corpus_path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError("corpus", f"file not found: {path}")
        corpus_path = str(path)

    sec = _Section(top.take("anchors", dict, {}), "anchors")
    anchors = {
        "per_domain": sec.take("per_domain", int, 0),
        "seed": sec.take("seed", int, 0),
        "domains": sec.take("domains", (list, type(None)), None),
    }
    sec.finish()
    if anchors["per_domain"] < 0:
        raise ConfigError("anchors.per_domain", "must be >= 0")
    if anchors["domains"] is not None:
        anchors["domains"] = [
            _typecheck(d, str, f"anchors.domains[{i}]")
            for i, d in enumerate(anchors["domains"])
        ]

    sec = _Section(top.take("model", dict, {}), "model")
    model_kwargs = {
        "n_layers": sec.take("n_layers", int, 2),
        "d_model": sec.take("d_model", int, 64),
        "n_heads": sec.take("n_heads", int, 4),
        "max_seq_len": sec.take("max_seq_len", int, 64),
        "dtype": sec.take("dtype", str, "float64"),
    }
    vocab = sec.take("vocab", int, 256)
    if vocab != 256:
        raise ConfigError("model.vocab",
                          "only the byte vocabulary (256) is supported")
    model_seed = sec.take("seed", int, 0)
    sec.finish()
    try:
        model = ModelConfig(**model_kwargs)
    except ValueError as e:
        raise ConfigError("model", str(e))

    sec = _Section(top.take("train", dict), "train")
    train_kwargs = {
        "learning_rate": sec.take("learning_rate", float),
        "batch_size": sec.take("batch_size", int),
        "total_steps": sec.take("total_steps", int),
        "seed": sec.take("seed", int, 0),
        "eval_interval": sec.take("eval_interval", int, 0),
        "normalize_weights": sec.take("normalize_weights", bool, False),
    }
    sec.finish()
    try:
        train = TrainConfig(**train_kwargs)
    except ValueError as e:
        raise ConfigError("train", str(e))

    sec = _Section(top.take("bm25", dict, {}), "bm25")
    bm25 = {"k1": sec.take("k1", float, 1.2), "b": sec.take("b", float, 0.75)}
    sec.finish()
    if bm25["k1"] <= 0 or not (0 <= bm25["b"] <= 1):
        raise ConfigError("bm25", "need k1 > 0 and 0 <= b <= 1")

    policy_raw = top.take("policy", dict)
    scorer_hint = policy_raw.get("scorer") if isinstance(policy_raw, dict) else None
    gate, gate_resolved = _resolve_gate(
        top.take("gate", (dict, type(None)), None), scorer_hint)
    policy, policy_resolved = _resolve_policy(policy_raw, gate, bm25)

    output_dir = top.take("output_dir", (str, type(None)), None)
    top.finish()

    resolved = {
        "corpus": corpus_path,
        "synth": synth,
        "anchors": anchors,
        "model": {**model_kwargs, "vocab": model.vocab, "seed": model_seed},
        "train": train_kwargs,
        "bm25": bm25,
        "policy": policy_resolved,
        "gate": gate_resolved,
        "output_dir": output_dir,
    }
    return ExperimentConfig(
        corpus_path=corpus_path, synth=synth, anchors=anchors, model=model,
        model_seed=model_seed, train=train, policy=policy, gate=gate,
        output_dir=output_dir, resolved=resolved,
    )


def parse_config(path) -> ExperimentConfig:
    """Read and resolve a JSON config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON in {path}: {e.msg} (line {e.lineno})")
    if not isinstance(raw, dict):
        raise ConfigError("", "top-level value must be an object")
    return resolve_config(raw, base_dir=path.parent)
