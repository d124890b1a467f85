"""Experiment orchestration: corpus -> scores -> gate -> train -> artifacts.

One run writes five artifact kinds into its output directory, all
deterministic for a fixed resolved config (reruns are byte-identical; no
timestamps anywhere):

    config.resolved.json   fully materialized configuration echo
    trace.csv              one row per step (losses, weight stats, FLOPs)
    summary.json           resolved config, ledger, final metrics, analysis
    histograms.csv         per-epoch score histograms (bin_lo, bin_hi, count, epoch)
    checkpoint.bin         final model parameters (documented byte format)

plus timing.json, which carries wall/CPU seconds and is deliberately outside
the determinism surface. Every text artifact starts with header lines
embedding the artifact version and the resolved gate configuration. Existing
artifacts are never overwritten unless force=True; failed runs leave a
".failed" marker file next to whatever partial artifacts exist.

Suites always execute member runs in spawned worker processes pinned to one
BLAS thread, so sequential (workers=1) and parallel execution produce
identical artifacts.
"""

from __future__ import annotations

import json
import multiprocessing
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from curator import __version__
from curator.analysis import (
    RunSummary,
    domain_mixture,
    effective_proportion,
    final_weights,
    frontier_table,
    histograms_by_epoch,
)
from curator.config import ExperimentConfig, parse_config
from curator.corpus import Corpus, build_anchor_set, load_corpus, synth_corpus
from curator.flops import flops_forward_tokens, flops_train_tokens
from curator.scoring import score_corpus
from curator.tinymodel import init_model, save_checkpoint
from curator.trainer import (
    LinUpperPolicy,
    MixingPolicy,
    OnlinePolicy,
    SelectionPolicy,
    Trace,
    TrainingError,
    UniformPolicy,
    evaluate,
    train_linupper,
    train_mixing,
    train_online,
    train_selection,
    train_uniform,
)

ARTIFACTS = ("config.resolved.json", "trace.csv", "summary.json",
             "histograms.csv", "checkpoint.bin")

TRACE_COLUMNS = ("step", "train_loss_weighted", "mean_weight", "min_weight",
                 "max_weight", "val_loss", "val_ppl", "cum_flops")


class RunError(RuntimeError):
    pass


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _header_lines(gate_dict: dict) -> list[str]:
    return [
        f"# curator {__version__}",
        f"# gate: {json.dumps(gate_dict, sort_keys=True)}",
        "# flops convention: 6N per trained token, 2N per metric forward token;"
        " gating arithmetic and validation evaluations are excluded",
    ]


def _check_overwrite(out_dir: Path, force: bool) -> None:
    existing = [a for a in ARTIFACTS if (out_dir / a).exists()]
    if existing and not force:
        raise RunError(
            f"output dir {out_dir} already holds {existing[0]} "
            "(pass --force to overwrite)")


def write_trace_csv(path: Path, trace: Trace, gate_dict: dict) -> None:
    lines = _header_lines(gate_dict)
    lines.append(",".join(TRACE_COLUMNS))
    for r in trace.records:
        w = np.asarray(r.weights) if r.weights else np.array([0.0])
        lines.append(",".join([
            str(r.step), _fmt(r.weighted_loss),
            _fmt(float(w.mean())), _fmt(float(w.min())), _fmt(float(w.max())),
            _fmt(r.val_loss), _fmt(r.val_ppl), str(r.cum_flops),
        ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histograms_csv(path: Path, histograms, gate_dict: dict) -> None:
    lines = _header_lines(gate_dict)
    lines.append("bin_lo,bin_hi,count,epoch")
    for h in histograms:
        for lo, hi, c in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts):
            lines.append(f"{_fmt(float(lo))},{_fmt(float(hi))},{int(c)},{h.epoch}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _build_corpus(cfg: ExperimentConfig) -> Corpus:
    if cfg.synth is not None:
        return synth_corpus(**cfg.synth)
    return load_corpus(cfg.corpus_path)


def _val_corpus(cfg: ExperimentConfig, corpus: Corpus) -> Corpus:
    domains = set(cfg.anchors["domains"]) if cfg.anchors["domains"] else None
    return corpus.filter(split="val", domains=domains)


def _offline_prep_flops(kind: str, n_params: int, pool_tokens: int,
                        anchor_tokens: int) -> int:
    """Actual desk-scale scoring cost charged to the prep bucket."""
    if kind == "bm25":
        return 0  # lexical statistics, no model forwards
    if kind in ("adapt_embed", "frozen_embed"):
        return flops_forward_tokens(n_params, pool_tokens + anchor_tokens)
    if kind == "ppl":
        return flops_forward_tokens(n_params, pool_tokens)
    if kind == "grad_influence":
        # per-sample gradients: forward + backward over pool and anchors
        return flops_train_tokens(n_params, pool_tokens + anchor_tokens)
    raise ValueError(f"unknown scorer kind {kind!r}")


def run_experiment(cfg: ExperimentConfig, out_dir, force: bool = False) -> dict:
    """Execute one configured run and write all artifacts; returns summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_overwrite(out_dir, force)
    failed_marker = out_dir / ".failed"
    if failed_marker.exists():
        failed_marker.unlink()
    t_wall, t_cpu = time.perf_counter(), time.process_time()
    try:
        summary = _run(cfg, out_dir)
    except Exception as e:
        failed_marker.write_text(f"{type(e).__name__}: {e}\n", encoding="utf-8")
        raise
    timing = {
        "wall_seconds": time.perf_counter() - t_wall,
        "cpu_seconds": time.process_time() - t_cpu,
    }
    (out_dir / "timing.json").write_text(
        json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def _run(cfg: ExperimentConfig, out_dir: Path) -> dict:
    corpus = _build_corpus(cfg)
    train_corpus = corpus.filter(split="train")
    if len(train_corpus) == 0:
        raise RunError("corpus has no train documents")
    val_corpus = corpus.filter(split="val")
    model = init_model(cfg.model, cfg.model_seed)

    needs_anchors = isinstance(cfg.policy, OnlinePolicy) or (
        isinstance(cfg.policy, SelectionPolicy)
        and cfg.policy.scorer != "ppl")
    anchors = None
    if needs_anchors:
        anchor_pool = _val_corpus(cfg, corpus)
        if len(anchor_pool) == 0:
            raise RunError("no validation documents available for anchors")
        anchors = build_anchor_set(
            anchor_pool, cfg.anchors["per_domain"], cfg.anchors["seed"], model,
            eps=cfg.gate.eps)

    in_loop_val = val_corpus if (cfg.train.eval_interval > 0
                                 and len(val_corpus) > 0) else None

    if isinstance(cfg.policy, OnlinePolicy):
        model, trace = train_online(corpus, anchors, model, cfg.policy,
                                    cfg.train, val_corpus=in_loop_val)
    elif isinstance(cfg.policy, SelectionPolicy):
        docs = [d for d in train_corpus]
        scores = score_corpus(cfg.policy.scorer, docs, model=model,
                              anchors=anchors, eps=cfg.gate.eps)
        pool_tokens = sum(len(d.model_tokens) for d in docs)
        anchor_tokens = (sum(len(a.model_tokens) for a in anchors.anchors)
                         if anchors is not None else 0)
        prep = _offline_prep_flops(cfg.policy.scorer, model.param_count,
                                   pool_tokens, anchor_tokens)
        model, trace = train_selection(corpus, scores, cfg.policy.threshold,
                                       model, cfg.train, val_corpus=in_loop_val)
        trace.meta["ledger"]["prep"] += prep
        trace.meta["ledger"]["total"] += prep
        for r in trace.records:
            r.cum_flops += prep
    elif isinstance(cfg.policy, MixingPolicy):
        model, trace = train_mixing(corpus, cfg.policy.weights, cfg.policy.mode,
                                    model, cfg.train, val_corpus=in_loop_val)
    elif isinstance(cfg.policy, LinUpperPolicy):
        model, trace = train_linupper(corpus, cfg.policy.alpha, model,
                                      cfg.train, val_corpus=in_loop_val)
    elif isinstance(cfg.policy, UniformPolicy):
        model, trace = train_uniform(corpus, model, cfg.train,
                                     val_corpus=in_loop_val)
    else:
        raise RunError(f"unhandled policy {cfg.policy!r}")

    final_eval = None
    by_domain = {}
    if len(val_corpus):
        final_eval = evaluate(model, val_corpus)
        for dom in sorted(val_corpus.domains):
            by_domain[dom] = evaluate(model, val_corpus.filter(domains={dom}))

    doc_ids = [d.id for d in train_corpus]
    weights, coverage = final_weights(trace, doc_ids)
    histograms = histograms_by_epoch(trace)
    mixture = domain_mixture(trace, corpus) if trace.records else {}

    gate_dict = cfg.gate.to_dict()
    summary = {
        "version": __version__,
        "config": cfg.resolved,
        "policy": trace.meta.get("policy", "?"),
        "final": {
            "val_loss": None if final_eval is None else final_eval["mean_nll"],
            "val_ppl": None if final_eval is None else final_eval["ppl"],
            "by_domain": {
                k: {"val_loss": v["mean_nll"], "val_ppl": v["ppl"]}
                for k, v in sorted(by_domain.items())
            },
        },
        "ledger": trace.meta.get("ledger", {}),
        "effective_proportion": (effective_proportion(weights)
                                 if trace.records else None),
        "weight_coverage": coverage,
        "domain_mixture": mixture,
        "refresh_steps": trace.refresh_steps,
        "metric_events": trace.meta.get("metric_events", []),
        "n_steps": len(trace.records),
        "n_epochs": (trace.records[-1].epoch + 1) if trace.records else 0,
        "trace_meta": {k: v for k, v in trace.meta.items()
                       if k in ("retained_size", "threshold", "quotas", "alpha",
                                "domain_weights", "n_train_docs")},
    }

    (out_dir / "config.resolved.json").write_text(
        json.dumps(cfg.resolved, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    write_trace_csv(out_dir / "trace.csv", trace, gate_dict)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_histograms_csv(out_dir / "histograms.csv", histograms, gate_dict)
    save_checkpoint(model, out_dir / "checkpoint.bin",
                    extra_header={"version": __version__, "gate": gate_dict})
    return summary


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


@dataclass
class SuiteResult:
    run_dirs: list[str]
    summaries: list[dict]
    failures: list[tuple[str, str]]
    frontier_path: str | None


def _suite_worker(job: tuple[str, str, bool]) -> tuple[str, str | None, dict | None]:
    config_path, run_dir, force = job
    try:
        cfg = parse_config(config_path)
        summary = run_experiment(cfg, run_dir, force=force)
        return run_dir, None, summary
    except Exception as e:  # report and keep the suite going
        return run_dir, f"{type(e).__name__}: {e}", None


def suite_workers() -> int:
    env = os.environ.get("CURATOR_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def run_suite(config_paths, out_root, force: bool = False,
              workers: int | None = None) -> SuiteResult:
    """Run every config (each into out_root/<config stem>/), then emit a
    frontier.csv over the successful runs. Failures do not stop remaining
    runs but make the suite raise after completion.
    """
    paths = [Path(p) for p in config_paths]
    if not paths:
        raise RunError("suite needs at least one config")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        raise RunError("config file names must be unique within a suite")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), str(out_root / p.stem), force) for p in paths]
    n_workers = workers if workers is not None else suite_workers()
    n_workers = max(1, min(n_workers, len(jobs)))

    # worker processes are pinned to one BLAS thread so sequential and
    # parallel suites produce identical artifacts
    saved = os.environ.get("OPENBLAS_NUM_THREADS")
    os.environ["OPENBLAS_NUM_THREADS"] = "1"
    try:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(n_workers) as pool:
            results = pool.map(_suite_worker, jobs)
    finally:
        if saved is None:
            os.environ.pop("OPENBLAS_NUM_THREADS", None)
        else:
            os.environ["OPENBLAS_NUM_THREADS"] = saved

    summaries, failures, run_dirs = [], [], []
    for run_dir, err, summary in results:
        run_dirs.append(run_dir)
        if err is not None:
            failures.append((run_dir, err))
        else:
            summaries.append(summary)

    frontier_path = None
    if summaries:
        frontier_path = str(out_root / "frontier.csv")
        write_frontier_csv(frontier_path, summaries)
    result = SuiteResult(run_dirs=run_dirs, summaries=summaries,
                         failures=failures, frontier_path=frontier_path)
    if failures:
        msgs = "; ".join(f"{d}: {e}" for d, e in failures)
        raise RunError(f"{len(failures)} suite run(s) failed: {msgs}")
    return result


def summaries_to_runs(summaries) -> list[RunSummary]:
    runs = []
    for s in summaries:
        final = s.get("final", {})
        if final.get("val_loss") is None:
            continue
        runs.append(RunSummary(
            policy=s.get("policy", "?"),
            total_flops=int(s.get("ledger", {}).get("total", 0)),
            val_loss=float(final["val_loss"]),
            val_ppl=float(final["val_ppl"]),
            effective_proportion=s.get("effective_proportion"),
            domain_mixture=s.get("domain_mixture"),
            ledger=s.get("ledger", {}),
        ))
    return runs


def write_frontier_csv(path, summaries) -> None:
    runs = summaries_to_runs(summaries)
    if not runs:
        raise RunError("no successful runs with validation metrics to compare")
    rows = frontier_table(runs)
    gate = summaries[0].get("config", {}).get("gate", {})
    lines = _header_lines(gate)
    lines.append("policy,total_flops,val_loss,val_ppl,pareto")
    for r in rows:
        lines.append(",".join([
            r["policy"], str(r["total_flops"]), _fmt(r["val_loss"]),
            _fmt(r["val_ppl"]), "1" if r["pareto"] else "0",
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
