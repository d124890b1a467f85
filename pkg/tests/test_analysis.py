import numpy as np
import pytest

from curator import analysis as an
from curator import corpus as cp
from curator.trainer import StepRecord, Trace

from oracles import pareto_mask_bruteforce


def record(step, ids, weights, scores=None, epoch=0):
    return StepRecord(step=step, epoch=epoch, doc_ids=tuple(ids),
                      weights=tuple(weights), weighted_loss=0.0,
                      batch_tokens=0, cum_flops=0,
                      scores=tuple(scores) if scores is not None else None)


class TestEffectiveProportion:
    def test_all_ones(self):
        assert an.effective_proportion(np.ones(10)) == 1.0

    def test_half_and_half(self):
        w = np.array([1.0] * 5 + [0.0] * 5)
        assert an.effective_proportion(w) == 0.5

    def test_linear_in_weights(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(0, 1, 50)
        for a in (0.0, 0.25, 1.0):
            assert an.effective_proportion(a * w) == pytest.approx(
                a * an.effective_proportion(w), abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            an.effective_proportion(np.array([]))


class TestFinalWeights:
    def test_last_assignment_wins(self):
        trace = Trace(records=[
            record(1, ["a", "b"], [0.2, 0.3], epoch=0),
            record(2, ["a"], [0.9], epoch=1),
        ])
        wv, coverage = an.final_weights(trace, ["a", "b", "c"])
        np.testing.assert_allclose(wv.weights, [0.9, 0.3, 0.0])
        assert coverage == pytest.approx(2 / 3)

    def test_full_coverage(self):
        trace = Trace(records=[record(1, ["a", "b"], [0.5, 0.5])])
        _, coverage = an.final_weights(trace, ["a", "b"])
        assert coverage == 1.0


class TestSimilarityHistogram:
    def test_all_mass_top_bin_for_ones(self):
        h = an.similarity_histogram(np.ones(20), epoch=0, bins=10,
                                    kind="adapt_embed")
        assert h.counts[-1] == 20
        assert h.counts[:-1].sum() == 0

    def test_counts_sum_to_sample_count(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(-1, 1, 137)
        h = an.similarity_histogram(s, epoch=0, bins=9, kind="adapt_embed")
        assert h.total == 137

    def test_cosine_kind_fixed_range(self):
        h = an.similarity_histogram(np.array([0.0]), epoch=0, bins=4,
                                    kind="frozen_embed")
        assert h.bin_edges[0] == -1.0 and h.bin_edges[-1] == 1.0

    def test_other_kind_spans_min_max(self):
        h = an.similarity_histogram(np.array([2.0, 6.0]), epoch=0, bins=4,
                                    kind="bm25")
        assert h.bin_edges[0] == 2.0 and h.bin_edges[-1] == 6.0

    def test_degenerate_span_widened(self):
        h = an.similarity_histogram(np.array([3.0, 3.0]), epoch=1, bins=4,
                                    kind="bm25")
        assert h.total == 2

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(-1, 1, 64)
        h1 = an.similarity_histogram(s, epoch=0, bins=8, kind="adapt_embed")
        h2 = an.similarity_histogram(s[rng.permutation(64)], epoch=0, bins=8,
                                     kind="adapt_embed")
        np.testing.assert_array_equal(h1.counts, h2.counts)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            an.similarity_histogram(np.array([]), epoch=0)

    def test_bad_bins(self):
        with pytest.raises(ValueError):
            an.similarity_histogram(np.ones(3), epoch=0, bins=1)

    def test_by_epoch_grouping(self):
        trace = Trace(records=[
            record(1, ["a"], [0.5], scores=[0.1], epoch=0),
            record(2, ["b"], [0.5], scores=[0.2], epoch=0),
            record(3, ["a"], [0.5], scores=[0.9], epoch=1),
        ])
        hists = an.histograms_by_epoch(trace, bins=4, kind="adapt_embed")
        assert [h.epoch for h in hists] == [0, 1]
        assert hists[0].total == 2 and hists[1].total == 1


class TestDomainMixture:
    def corpus(self):
        docs = (cp.Document.make("a1", "x", "A", "train"),
                cp.Document.make("a2", "y", "A", "train"),
                cp.Document.make("b1", "z", "B", "train"))
        return cp.Corpus(documents=docs)

    def test_masses_normalized(self):
        trace = Trace(records=[
            record(1, ["a1", "b1"], [1.0, 1.0]),
            record(2, ["a2", "a1"], [1.0, 1.0]),
        ])
        mix = an.domain_mixture(trace, self.corpus())
        assert mix == {"A": 0.75, "B": 0.25}
        assert abs(sum(mix.values()) - 1.0) < 1e-9

    def test_single_domain_mass(self):
        trace = Trace(records=[record(1, ["a1", "a2"], [1.0, 0.5])])
        mix = an.domain_mixture(trace, self.corpus())
        assert mix == {"A": 1.0}

    def test_weighted_mass(self):
        trace = Trace(records=[record(1, ["a1", "b1"], [0.2, 0.6])])
        mix = an.domain_mixture(trace, self.corpus())
        assert mix["A"] == pytest.approx(0.25)
        assert mix["B"] == pytest.approx(0.75)


class TestFrontier:
    def run(self, policy, flops, loss):
        return an.RunSummary(policy=policy, total_flops=flops, val_loss=loss,
                             val_ppl=float(np.exp(loss)))

    def test_single_run_marked(self):
        rows = an.frontier_table([self.run("uniform", 100, 1.0)])
        assert rows[0]["pareto"] is True

    def test_dominated_run_unmarked(self):
        rows = an.frontier_table([
            self.run("good", 100, 1.0),
            self.run("bad", 200, 2.0),
        ])
        marks = {r["policy"]: r["pareto"] for r in rows}
        assert marks == {"good": True, "bad": False}

    def test_sorted_by_flops(self):
        rows = an.frontier_table([
            self.run("c", 300, 0.5),
            self.run("a", 100, 1.5),
            self.run("b", 200, 1.0),
        ])
        assert [r["policy"] for r in rows] == ["a", "b", "c"]
        assert all(r["pareto"] for r in rows)  # a true frontier

    def test_order_invariance(self):
        runs = [self.run("a", 100, 1.5), self.run("b", 200, 1.0),
                self.run("c", 150, 2.0)]
        r1 = an.frontier_table(runs)
        r2 = an.frontier_table(runs[::-1])
        assert r1 == r2

    def test_matches_bruteforce_oracle_random(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            runs = [self.run(f"p{i}", int(rng.integers(0, 5) * 100),
                             float(rng.integers(0, 5)) / 2.0)
                    for i in range(n)]
            rows = an.frontier_table(runs)
            points = [(r.total_flops, r.val_loss) for r in runs]
            oracle = pareto_mask_bruteforce(points)
            by_policy = {f"p{i}": m for i, m in enumerate(oracle)}
            for row in rows:
                assert row["pareto"] == by_policy[row["policy"]]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            an.frontier_table([])
