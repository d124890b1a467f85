import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from curator import cli
from curator import config as cf
from curator.runner import run_experiment, run_suite, RunError
from curator.tinymodel import load_checkpoint


def write_config(tmp_path, name="cfg.json", **overrides):
    raw = {
        "synth": {"n_per_domain": 20, "seq_len": 24, "seed": 5},
        "anchors": {"per_domain": 2, "seed": 1},
        "model": {"n_layers": 1, "d_model": 16, "n_heads": 2,
                  "max_seq_len": 24, "seed": 3},
        "train": {"learning_rate": 0.05, "batch_size": 4, "total_steps": 6,
                  "seed": 7},
        "policy": {"kind": "online", "scorer": "adapt_embed",
                   "refresh_every": 3},
    }
    raw.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


class TestParseConfig:
    def test_defaults_materialized(self, tmp_path):
        cfg = cf.parse_config(write_config(tmp_path))
        assert cfg.resolved["gate"]["temperature"] == 1.0
        assert cfg.resolved["gate"]["eps"] == 1e-8
        assert cfg.resolved["bm25"] == {"k1": 1.2, "b": 0.75}
        assert cfg.resolved["gate"]["standardize"] == "none"

    def test_bm25_scorer_defaults_minmax(self, tmp_path):
        path = write_config(tmp_path, policy={"kind": "online", "scorer": "bm25"})
        cfg = cf.parse_config(path)
        assert cfg.resolved["gate"]["standardize"] == "minmax"
        assert cfg.resolved["policy"]["refresh_every"] == 100

    def test_unknown_key_named(self, tmp_path):
        path = write_config(tmp_path, gate={"taw": 1.0})
        with pytest.raises(cf.ConfigError, match="gate.taw"):
            cf.parse_config(path)

    def test_unknown_top_level_key(self, tmp_path):
        path = write_config(tmp_path, extra_section={})
        with pytest.raises(cf.ConfigError, match="extra_section"):
            cf.parse_config(path)

    def test_refresh_zero_rejected(self, tmp_path):
        path = write_config(tmp_path, policy={
            "kind": "online", "scorer": "adapt_embed", "refresh_every": 0})
        with pytest.raises(cf.ConfigError, match="refresh_every"):
            cf.parse_config(path)

    def test_type_mismatch_has_path(self, tmp_path):
        path = write_config(tmp_path, train={
            "learning_rate": "fast", "batch_size": 4, "total_steps": 6,
            "seed": 7})
        with pytest.raises(cf.ConfigError, match="train.learning_rate"):
            cf.parse_config(path)

    def test_corpus_xor_synth(self, tmp_path):
        path = write_config(tmp_path, corpus="also.jsonl")
        with pytest.raises(cf.ConfigError, match="exactly one"):
            cf.parse_config(path)

    def test_missing_corpus_file(self, tmp_path):
        raw = json.loads(write_config(tmp_path).read_text())
        del raw["synth"]
        raw["corpus"] = "nope.jsonl"
        path = tmp_path / "c2.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(cf.ConfigError, match="not found"):
            cf.parse_config(path)

    def test_round_trip_identity(self, tmp_path):
        cfg = cf.parse_config(write_config(tmp_path))
        second = cf.resolve_config(json.loads(json.dumps(cfg.resolved)))
        assert second.resolved == cfg.resolved

    def test_policy_variants(self, tmp_path):
        for policy in (
            {"kind": "uniform"},
            {"kind": "linupper", "alpha": 1.5},
            {"kind": "mixing", "weights": {"A": 0.5, "B": 0.5},
             "mode": "quota"},
            {"kind": "selection", "scorer": "ppl", "threshold": 3.0},
        ):
            cfg = cf.parse_config(write_config(tmp_path, policy=policy))
            assert cfg.resolved["policy"]["kind"] == policy["kind"]

    def test_foreign_policy_field_rejected(self, tmp_path):
        path = write_config(tmp_path, policy={"kind": "uniform", "alpha": 1.0})
        with pytest.raises(cf.ConfigError, match="policy.alpha"):
            cf.parse_config(path)


class TestRunExperiment:
    def test_emits_all_artifact_kinds(self, tmp_path):
        cfg = cf.parse_config(write_config(tmp_path))
        out = tmp_path / "run"
        run_experiment(cfg, out)
        for name in ("config.resolved.json", "trace.csv", "summary.json",
                     "histograms.csv", "checkpoint.bin"):
            assert (out / name).exists()

    def test_deterministic_bytes(self, tmp_path):
        cfg = cf.parse_config(write_config(tmp_path))
        run_experiment(cfg, tmp_path / "r1")
        run_experiment(cfg, tmp_path / "r2")
        for name in ("summary.json", "trace.csv", "histograms.csv",
                     "checkpoint.bin", "config.resolved.json"):
            assert (tmp_path / "r1" / name).read_bytes() == \
                (tmp_path / "r2" / name).read_bytes()

    def test_t_zero_empty_trace_ok(self, tmp_path):
        path = write_config(tmp_path, train={
            "learning_rate": 0.05, "batch_size": 4, "total_steps": 0,
            "seed": 7})
        cfg = cf.parse_config(path)
        summary = run_experiment(cfg, tmp_path / "r0")
        assert summary["n_steps"] == 0
        trace = (tmp_path / "r0" / "trace.csv").read_text().splitlines()
        assert trace[-1].startswith("step,")  # header only, no data rows

    def test_no_overwrite_without_force(self, tmp_path):
        cfg = cf.parse_config(write_config(tmp_path))
        run_experiment(cfg, tmp_path / "r1")
        with pytest.raises(RunError, match="force"):
            run_experiment(cfg, tmp_path / "r1")
        run_experiment(cfg, tmp_path / "r1", force=True)

    def test_headers_embed_gate_and_version(self, tmp_path):
        cfg = cf.parse_config(write_config(tmp_path))
        run_experiment(cfg, tmp_path / "r1")
        for name in ("trace.csv", "histograms.csv"):
            text = (tmp_path / "r1" / name).read_text()
            assert text.startswith("# curator ")
            assert '"temperature": 1.0' in text.splitlines()[1]
        summary = json.loads((tmp_path / "r1" / "summary.json").read_text())
        assert summary["version"]
        assert summary["config"]["gate"]["temperature"] == 1.0
        _, header = load_checkpoint(tmp_path / "r1" / "checkpoint.bin")
        assert header["gate"]["temperature"] == 1.0

    def test_checkpoint_step_matches(self, tmp_path):
        cfg = cf.parse_config(write_config(tmp_path))
        run_experiment(cfg, tmp_path / "r1")
        model, header = load_checkpoint(tmp_path / "r1" / "checkpoint.bin")
        assert model.step == 6

    def test_failure_leaves_marker(self, tmp_path):
        # anchors need val docs; an anchors filter naming a missing domain
        # fails after the output dir exists
        path = write_config(tmp_path, anchors={
            "per_domain": 2, "seed": 1, "domains": ["Z"]})
        cfg = cf.parse_config(path)
        with pytest.raises(Exception):
            run_experiment(cfg, tmp_path / "rfail")
        assert (tmp_path / "rfail" / ".failed").exists()


class TestRunSuite:
    def test_two_run_frontier(self, tmp_path):
        c1 = write_config(tmp_path, "uniform.json", policy={"kind": "uniform"})
        c2 = write_config(tmp_path, "adapt.json")
        result = run_suite([c1, c2], tmp_path / "suite", workers=1)
        assert len(result.summaries) == 2
        frontier = Path(result.frontier_path).read_text().splitlines()
        data = [l for l in frontier if not l.startswith("#")]
        assert data[0] == "policy,total_flops,val_loss,val_ppl,pareto"
        assert len(data) == 3

    def test_empty_suite_rejected(self, tmp_path):
        with pytest.raises(RunError):
            run_suite([], tmp_path / "suite")

    def test_parallel_equals_sequential(self, tmp_path):
        c1 = write_config(tmp_path, "uniform.json", policy={"kind": "uniform"})
        c2 = write_config(tmp_path, "adapt.json")
        r1 = run_suite([c1, c2], tmp_path / "s1", workers=1)
        r2 = run_suite([c1, c2], tmp_path / "s2", workers=2)
        assert Path(r1.frontier_path).read_bytes() == \
            Path(r2.frontier_path).read_bytes()
        for stem in ("uniform", "adapt"):
            a = (tmp_path / "s1" / stem / "summary.json").read_bytes()
            b = (tmp_path / "s2" / stem / "summary.json").read_bytes()
            assert a == b

    def test_failure_completes_other_runs(self, tmp_path):
        good = write_config(tmp_path, "good.json", policy={"kind": "uniform"})
        bad = write_config(tmp_path, "bad.json", anchors={
            "per_domain": 2, "seed": 1, "domains": ["Z"]})
        with pytest.raises(RunError, match="1 suite run"):
            run_suite([good, bad], tmp_path / "suite", workers=1)
        assert (tmp_path / "suite" / "good" / "summary.json").exists()


class TestCli:
    def invoke(self, *argv):
        return cli.main(list(argv))

    def test_flops_subcommand(self, capsys):
        rc = self.invoke("flops", "--method", "random", "--n", "7000000000",
                         "--pool", "100000", "--selected", "10000",
                         "--epochs", "2")
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["total_flops"] == 1720320000000000000

    def test_train_and_report(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        rc = self.invoke("train", "--config", str(cfg_path), "--out",
                         str(tmp_path / "run"))
        assert rc == 0
        rc = self.invoke("report", "--out", str(tmp_path / "frontier.csv"),
                         str(tmp_path / "run"))
        assert rc == 0
        assert (tmp_path / "frontier.csv").exists()

    def test_synth_subcommand(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "corpus.jsonl"
        assert self.invoke("synth", "--config", str(cfg_path),
                           "--out", str(out)) == 0
        from curator.corpus import load_corpus
        assert len(load_corpus(out)) == 44  # 2*20 train + 2*2 val

    def test_score_subcommand(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "scores.csv"
        assert self.invoke("score", "--config", str(cfg_path),
                           "--out", str(out)) == 0
        lines = [l for l in out.read_text().splitlines()
                 if not l.startswith("#")]
        assert lines[0] == "doc_id,kind,score,model_step"
        assert len(lines) == 41  # header + 40 train docs

    def test_config_error_exit_code(self, tmp_path):
        path = write_config(tmp_path, gate={"taw": 1.0})
        assert self.invoke("train", "--config", str(path),
                           "--out", str(tmp_path / "x")) == 2

    def test_runtime_error_exit_code(self, tmp_path):
        path = write_config(tmp_path, anchors={
            "per_domain": 2, "seed": 1, "domains": ["Z"]})
        assert self.invoke("train", "--config", str(path),
                           "--out", str(tmp_path / "x")) == 3

    def test_seed_override_changes_resolved_config(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert self.invoke("train", "--config", str(cfg_path), "--out",
                           str(tmp_path / "run"), "--seed", "99") == 0
        resolved = json.loads(
            (tmp_path / "run" / "config.resolved.json").read_text())
        assert resolved["train"]["seed"] == 99

    def test_console_entrypoint(self):
        proc = subprocess.run([sys.executable, "-m", "curator.cli",
                               "--version"], capture_output=True, text=True)
        assert proc.returncode == 0
