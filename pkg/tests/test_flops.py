import numpy as np
import pytest

from curator import flops as fl

# reference-scale constants used by the golden tests
N_REF = 7_000_000_000
TOKENS_REF = 2048
EPOCHS_REF = 2


class TestTokenFormulas:
    def test_train_basic(self):
        assert fl.flops_train_tokens(1000, 1) == 6000

    def test_zero_tokens(self):
        assert fl.flops_train_tokens(1000, 0) == 0

    def test_train_reference_scale(self):
        assert fl.flops_train_tokens(N_REF, 2048) == 86_016_000_000_000
        assert fl.flops_train_tokens(N_REF, 2048) == int(8.6016e13)

    def test_forward_basic(self):
        assert fl.flops_forward_tokens(1000, 1) == 2000

    def test_forward_is_third_of_train(self):
        for n, t in ((7, 13), (1000, 999), (N_REF, 2048)):
            assert 3 * fl.flops_forward_tokens(n, t) == fl.flops_train_tokens(n, t)

    def test_forward_reference_scale(self):
        assert fl.flops_forward_tokens(N_REF, 2048 * 10**5) == int(2.8672e18)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            fl.flops_train_tokens(-1, 10)


class TestMethodTotals:
    def golden(self, method, pool, selected, **kw):
        return fl.flops_method_total(method, N_REF, pool, selected, EPOCHS_REF,
                                     sample_tokens=TOKENS_REF, **kw)

    def test_random_golden(self):
        assert self.golden("random", 10**5, 10**4) == 2048 * 6 * N_REF * 10**4 * 2
        assert self.golden("random", 10**5, 10**4) == int(1.72032e18)

    def test_bm25_equals_random(self):
        assert self.golden("bm25", 10**5, 10**4) == self.golden("random", 10**5, 10**4)

    def test_ppl_golden(self):
        total = self.golden("ppl", 10**5, 10**4)
        prep = 2048 * 2 * N_REF * 10**5
        train = 2048 * 6 * N_REF * 10**4 * 2
        assert prep == int(2.8672e18)
        assert total == prep + train == int(4.58752e18)

    def test_embedding_golden_with_proxy(self):
        n_proxy = 110_000_000
        total = self.golden("embedding", 10**5, 10**4, proxy_params=n_proxy)
        assert total == 2048 * 2 * n_proxy * 10**5 + 2048 * 6 * N_REF * 10**4 * 2

    def test_grad_influence_golden_rational(self):
        total = self.golden("grad_influence", 10**5, 10**4)
        base = 2048 * 6 * N_REF * 10**5
        assert base % 100 == 0
        assert total == (153 * base) // 100 + 2048 * 6 * N_REF * 10**4 * 2
        # the 1.53 multiplier applied exactly, no float in sight
        assert (153 * base) % 100 == 0

    def test_selected_zero_leaves_prep_only(self):
        assert self.golden("random", 10**5, 0) == 0
        assert self.golden("ppl", 10**5, 0) == 2048 * 2 * N_REF * 10**5

    def test_independent_expression_tree_randomized(self):
        # same formulas coded independently with plain integer arithmetic
        rng = np.random.default_rng(11)
        for _ in range(200):
            pool = int(rng.integers(1, 10**6))
            selected = int(rng.integers(0, pool + 1))
            k6nde = TOKENS_REF * 6 * N_REF * selected * EPOCHS_REF
            expect = {
                "random": k6nde,
                "bm25": k6nde,
                "embedding": TOKENS_REF * 2 * N_REF * pool + k6nde,
                "ppl": TOKENS_REF * 2 * N_REF * pool + k6nde,
                "grad_influence": 153 * TOKENS_REF * 6 * N_REF * pool // 100 + k6nde,
            }
            for method, val in expect.items():
                assert self.golden(method, pool, selected) == val

    def test_monotone_in_each_constant(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            n = int(rng.integers(1, 10**7))
            p = int(rng.integers(1, 10**5))
            d = int(rng.integers(0, p + 1))
            e = int(rng.integers(1, 5))
            k = int(rng.integers(1, 4096))
            for method in fl.METHODS:
                base = fl.flops_method_total(method, n, p, d, e, sample_tokens=k)
                assert fl.flops_method_total(method, n + 1, p, d, e, sample_tokens=k) >= base
                assert fl.flops_method_total(method, n, p + 1, d, e, sample_tokens=k) >= base
                assert fl.flops_method_total(method, n, p, d + 1, e, sample_tokens=k) >= base
                assert fl.flops_method_total(method, n, p, d, e + 1, sample_tokens=k) >= base

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            fl.flops_method_total("magic", 10, 10, 10, 1)

    def test_results_are_ints(self):
        for method in fl.METHODS:
            assert isinstance(self.golden(method, 123, 45), int)


class TestOnlineTotal:
    def test_no_events_equals_train(self):
        assert fl.flops_online_total(500, 1000, []) == fl.flops_train_tokens(1000, 500)

    def test_single_refresh_event(self):
        # 100 anchors x 64 tokens at N=1e6: metrics term 2 * 1e6 * 6400
        total = fl.flops_online_total(0, 10**6, [100 * 64])
        assert total == 2 * 10**6 * 6400 == 12_800_000_000

    def test_doubling_events_doubles_metric_term(self):
        one = fl.flops_online_total(1000, 10**6, [640])
        two = fl.flops_online_total(1000, 10**6, [640, 640])
        train = fl.flops_train_tokens(10**6, 1000)
        assert two - train == 2 * (one - train)

    def test_integerness(self):
        assert isinstance(fl.flops_online_total(3, 7, [11, 13]), int)


class TestLedger:
    def test_accumulation_and_total(self):
        ledger = fl.FlopsLedger(n_params=1000, constants={"N": 1000})
        ledger.add_train_tokens(10)
        ledger.add_metric_forward_tokens(5)
        ledger.add_prep(7)
        assert ledger.train == 60_000
        assert ledger.metrics == 10_000
        assert ledger.prep == 7
        assert ledger.total == 70_007

    def test_summary_block(self):
        ledger = fl.FlopsLedger(n_params=10, constants={"N": 10, "P": 3})
        ledger.add_train_tokens(1)
        s = ledger.summary()
        assert s == {"prep": 0, "train": 60, "metrics": 0, "total": 60,
                     "constants": {"N": 10, "P": 3}}

    def test_matches_online_total(self):
        ledger = fl.FlopsLedger(n_params=321)
        events = [17, 29]
        ledger.add_train_tokens(100)
        for e in events:
            ledger.add_metric_forward_tokens(e)
        assert ledger.total == fl.flops_online_total(100, 321, events)
