"""Command-line driver.

    curator synth  --config cfg.json --out corpus.jsonl [--force]
    curator score  --config cfg.json --out scores.csv [--kind KIND] [--force]
    curator train  --config cfg.json [--out DIR] [--seed N] [--force]
    curator suite  --out DIR [--force] CONFIG [CONFIG ...]
    curator flops  --method M --n N --pool P --selected D --epochs E
                   [--sample-tokens K] [--n-proxy N]
    curator report --out frontier.csv RUN_DIR [RUN_DIR ...]

Exit codes: 0 success, 2 configuration error, 3 runtime error.
CURATOR_THREADS caps suite worker parallelism (default 1).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from curator import __version__
from curator.config import ConfigError, parse_config
from curator.corpus import save_corpus, synth_corpus
from curator.flops import DEFAULT_SAMPLE_TOKENS, METHODS, flops_method_total
from curator.runner import (
    RunError,
    run_experiment,
    run_suite,
    write_frontier_csv,
    _header_lines,
)
from curator.scoring import score_corpus
from curator.tinymodel import init_model
from curator.trainer import OnlinePolicy, SelectionPolicy, TrainingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curator",
        description="data-curation experiments on a desk-scale transformer")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic two-domain corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("score", help="dump per-document scores to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default=None,
                   help="score kind (default: the policy's scorer)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="run one experiment end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None,
                   help="output dir (default: config output_dir)")
    p.add_argument("--seed", type=int, default=None,
                   help="override train.seed")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("suite", help="run several configs and emit a frontier")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("flops", help="evaluate the closed-form method costs")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--n", type=int, required=True, help="model parameter count")
    p.add_argument("--pool", type=int, required=True, help="pool size P")
    p.add_argument("--selected", type=int, required=True, help="selected D")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--sample-tokens", type=int, default=DEFAULT_SAMPLE_TOKENS)
    p.add_argument("--n-proxy", type=int, default=None)

    p = sub.add_parser("report", help="frontier table over finished run dirs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    return parser


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise RunError(f"{path} exists (pass --force to overwrite)")


def _cmd_synth(args) -> int:
    cfg = parse_config(args.config)
    if cfg.synth is None:
        raise ConfigError("synth", "config has no synth section")
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    corpus = synth_corpus(**cfg.synth)
    save_corpus(corpus, out)
    print(f"wrote {len(corpus)} documents to {out}")
    return EXIT_OK


def _cmd_score(args) -> int:
    from curator.corpus import build_anchor_set, load_corpus

    cfg = parse_config(args.config)
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    kind = args.kind
    if kind is None:
        if isinstance(cfg.policy, (OnlinePolicy, SelectionPolicy)):
            kind = cfg.policy.scorer
        else:
            raise ConfigError("policy",
                              "no scorer in policy; pass --kind explicitly")
    corpus = synth_corpus(**cfg.synth) if cfg.synth else load_corpus(cfg.corpus_path)
    model = init_model(cfg.model, cfg.model_seed)
    anchors = None
    if kind != "ppl":
        domains = set(cfg.anchors["domains"]) if cfg.anchors["domains"] else None
        pool = corpus.filter(split="val", domains=domains)
        anchors = build_anchor_set(pool, cfg.anchors["per_domain"],
                                   cfg.anchors["seed"], model, eps=cfg.gate.eps)
    docs = [d for d in corpus if d.split == "train"]
    sv = score_corpus(kind, docs, model=model, anchors=anchors, eps=cfg.gate.eps)
    lines = _header_lines(cfg.gate.to_dict())
    lines.append("doc_id,kind,score,model_step")
    for doc, score in zip(docs, sv.scores):
        lines.append(f"{doc.id},{kind},{score!r},{model.step}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(docs)} scores to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        raw = dict(cfg.resolved)
        raw["train"] = dict(raw["train"], seed=args.seed)
        from curator.config import resolve_config

        cfg = resolve_config(raw)
    out_dir = args.out or cfg.output_dir
    if out_dir is None:
        raise ConfigError("output_dir", "not set; pass --out")
    summary = run_experiment(cfg, out_dir, force=args.force)
    final = summary["final"]
    print(f"run complete: val_loss={final['val_loss']} val_ppl={final['val_ppl']} "
          f"total_flops={summary['ledger'].get('total')}")
    return EXIT_OK


def _cmd_suite(args) -> int:
    result = run_suite(args.configs, args.out, force=args.force)
    print(f"suite complete: {len(result.summaries)} runs, "
          f"frontier at {result.frontier_path}")
    return EXIT_OK


def _cmd_flops(args) -> int:
    total = flops_method_total(
        args.method, args.n, args.pool, args.selected, args.epochs,
        sample_tokens=args.sample_tokens, proxy_params=args.n_proxy)
    print(json.dumps({"method": args.method, "total_flops": total}))
    return EXIT_OK


def _cmd_report(args) -> int:
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    summaries = []
    for run_dir in args.run_dirs:
        path = Path(run_dir) / "summary.json"
        if not path.exists():
            raise RunError(f"{run_dir} has no summary.json")
        summaries.append(json.loads(path.read_text(encoding="utf-8")))
    write_frontier_csv(out, summaries)
    for line in out.read_text(encoding="utf-8").splitlines():
        if not line.startswith("#"):
            print(line)
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "score": _cmd_score,
    "train": _cmd_train,
    "suite": _cmd_suite,
    "flops": _cmd_flops,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, TrainingError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
