import math

import numpy as np
import pytest
from closed_forms import bernoulli_rate, coin_rate

from nclln.exceptions import BetaOutOfRange, SizeCapExceeded, ValidationError
from nclln.experiments import (
    ExperimentConfig,
    clopper_pearson,
    derive_seed,
    lemma31_check,
    resolve_threads,
    run_experiment,
)
from nclln.process_models import flip_chain

COIN = {"kind": "iid", "probs": [0.5, 0.5]}
PM1 = {"kind": "state_values", "values": [1, -1]}


def cfg(**kw):
    return ExperimentConfig.from_dict(kw)


class TestConfig:
    def test_defaults_filled(self):
        c = cfg(law="scalar", model=COIN, observable=PM1, beta=0.5)
        d = c.to_dict()
        assert d["n_schedule"] == [10_000, 1_000_000]
        assert d["seeds"] == [0] and d["master_seed"] == 0
        assert d["schema_version"] == 1 and d["net_M"] == 6

    def test_unknown_key(self):
        with pytest.raises(ValidationError, match="unknown config keys"):
            cfg(law="scalar", model=COIN, observable=PM1, beta=0.5, colour="red")

    def test_unknown_option(self):
        with pytest.raises(ValidationError):
            cfg(law="rate", model=COIN, observable=PM1, options={"grid": 3})

    def test_duplicate_seeds(self):
        with pytest.raises(ValidationError, match="distinct"):
            cfg(law="scalar", model=COIN, observable=PM1, beta=0.5, seeds=[1, 2, 1])

    def test_schedule_must_increase(self):
        with pytest.raises(ValidationError):
            cfg(law="scalar", model=COIN, observable=PM1, beta=0.5, n_schedule=[100, 100])

    def test_law_mismatch(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict({"law": "rate", "model": COIN, "observable": PM1}, law="scalar")

    def test_master_seed_override(self):
        c = cfg(law="rate", model=COIN, observable=PM1).with_master_seed(9)
        assert c.master_seed == 9


class TestSeeding:
    def test_distinct_streams(self):
        seeds = {derive_seed(0, s, k) for s in range(50) for k in (1, 2, 3)}
        assert len(seeds) == 150

    def test_stable(self):
        assert derive_seed(3, 1, 1) == derive_seed(3, 1, 1)

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("NCLLN_THREADS", "3")
        assert resolve_threads(None) == 3
        assert resolve_threads(2) == 2
        with pytest.raises(ValidationError):
            resolve_threads(-1)


class TestDecoupling:
    @pytest.mark.parametrize("g", [1, 2, 5, 9])
    def test_two_blocks_closed_form(self, g):
        exact, bound = lemma31_check(flip_chain(0.1), 2, [g])
        assert exact == pytest.approx(0.5 * 0.8 ** g, abs=1e-14)
        assert bound == pytest.approx(0.8 ** g, abs=1e-14)

    def test_constant_h(self):
        exact, _ = lemma31_check(flip_chain(0.3), 3, [2, 4], h=np.ones(8))
        assert exact == pytest.approx(0.0, abs=1e-15)

    def test_equal_endpoints_decay(self):
        vals = [lemma31_check(flip_chain(0.1), 2, [g], h="equal-endpoints")[0] for g in range(1, 13)]
        np.testing.assert_allclose(vals, 0.5 * 0.8 ** np.arange(1, 13), atol=1e-14)
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_blocks_of_length_two(self):
        exact, bound = lemma31_check(flip_chain(0.2), 3, [1, 3], block_length=2)
        assert exact <= bound

    def test_size_cap(self):
        with pytest.raises(SizeCapExceeded):
            lemma31_check(flip_chain(0.2), 6, [1] * 5, block_length=3)

    def test_run(self):
        rep = run_experiment(cfg(law="lemma31", model={"kind": "flip", "p": 0.3}))
        assert rep.summary["all_hold"] and len(rep.records) == 24
        assert all(rep.summary["nonincreasing_in_gap"].values())


class TestScalarLaw:
    def test_records(self):
        c = cfg(law="scalar", model=COIN, observable=PM1, beta=0.5, n_schedule=[1000, 20_000], seeds=[0, 1, 2])
        rep = run_experiment(c, threads=1)
        assert len(rep.records) == 6
        assert rep.summary["c"] == pytest.approx(1 / coin_rate(0.5), rel=1e-8)
        assert rep.summary["all_within_envelope"]
        for r in rep.records:
            assert r["b"] == math.floor(rep.summary["c"] * math.log(r["n"]) + 1e-9)
            assert -1 <= r["M_n"] <= 1

    def test_beta_at_upper_end(self):
        with pytest.raises(BetaOutOfRange):
            run_experiment(cfg(law="scalar", model=COIN, observable=PM1, beta=1.0))

    def test_beta_at_mean(self):
        with pytest.raises(BetaOutOfRange):
            run_experiment(cfg(law="scalar", model=COIN, observable=PM1, beta=0.0))

    def test_zero_observable(self):
        with pytest.raises(ValidationError):
            with pytest.warns(UserWarning):
                run_experiment(cfg(law="scalar", model=COIN, observable={"kind": "state_values", "values": [0, 0]},
                                   beta=0.5))

    def test_single_state_rejected(self):
        c = cfg(law="scalar", model={"kind": "kernel", "kernel": [[1.0]]},
                observable={"kind": "state_values", "values": [0.0]}, beta=0.5)
        with pytest.raises(ValidationError):
            with pytest.warns(UserWarning):
                run_experiment(c)

    def test_classical_bernoulli(self):
        c = cfg(law="classical", model=COIN, observable={"kind": "state_values", "values": [0, 1]},
                beta=0.75, n_schedule=[1000, 100_000], seeds=[0, 1, 2, 3, 4])
        rep = run_experiment(c, threads=1)
        assert rep.summary["rate_at_beta"] == pytest.approx(bernoulli_rate(0.75, 0.5), abs=1e-9)
        med = rep.summary["median_by_n"]
        assert abs(med["100000"] - 0.75) < 0.15

    def test_monotone_c(self):
        a = run_experiment(cfg(law="scalar", model=COIN, observable=PM1, beta=0.5, n_schedule=[1000]))
        b = run_experiment(cfg(law="scalar", model=COIN, observable=PM1, beta=0.6, n_schedule=[1000]))
        assert b.summary["rate_at_beta"] > a.summary["rate_at_beta"]


class TestLDBounds:
    def ld(self, **opts):
        base = {"gamma_slope": 0.0, "delta": 0.1, "lam": 0.05, "a": 0.2, "replicas": 2000}
        base.update(opts)
        return cfg(law="ld-bounds", model=COIN, observable=PM1, n_schedule=[40], options=base)

    def test_wide_tube(self):
        rep = run_experiment(self.ld(delta=1.0), threads=1)
        assert rep.records[0]["p_hat"] == 1.0

    def test_huge_budget(self):
        rep = run_experiment(self.ld(a=math.log(2) + 0.1), threads=1)
        assert rep.records[0]["far_hits"] == 0

    def test_thread_invariance(self):
        c = self.ld(gamma_slope=0.2, replicas=250_000)
        one = run_experiment(c, threads=1).to_dict()
        three = run_experiment(c, threads=3).to_dict()
        assert one == three

    def test_gamma_curve(self):
        rep = run_experiment(self.ld(gamma=[0.0, 0.1, 0.0]), threads=1)
        assert rep.summary["S_gamma"] == pytest.approx((coin_rate(0.2) + coin_rate(-0.2)) / 2, abs=1e-8)

    def test_clopper_pearson(self):
        lo, hi = clopper_pearson(0, 100, 0.05)
        assert lo == 0.0 and hi == pytest.approx(1 - 0.025 ** (1 / 100))
        lo, hi = clopper_pearson(100, 100, 0.05)
        assert hi == 1.0 and lo == pytest.approx(0.025 ** (1 / 100))


class TestOtherRuns:
    def test_functional_small(self):
        c = cfg(law="functional", model={"kind": "flip", "p": 0.2},
                observable={"kind": "product", "values": [1, -1], "ell": 2},
                c=20, n_schedule=[1000, 3000], seeds=[0, 1], net_eps=0.1)
        rep = run_experiment(c, threads=1)
        assert len(rep.records) == 4
        assert all(r["H"] >= r["family_to_level_set"] for r in rep.records)
        assert "net" in rep.artifacts

    def test_functional_needs_c(self):
        with pytest.raises(ValidationError):
            cfg(law="functional", model=COIN, observable=PM1)

    def test_simulate(self):
        c = cfg(law="simulate", model={"kind": "flip", "p": 0.2}, observable=PM1, c=2, n_schedule=[500, 1000],
                options={"emit_family": True})
        rep = run_experiment(c)
        assert len(rep.records) == 2 and len(rep.artifacts["families"]) == 2
        assert rep.records[1]["b"] == 13

    def test_rate(self):
        rep = run_experiment(cfg(law="rate", model={"kind": "flip", "p": 0.1}, observable=PM1,
                                 options={"grid_points": 5}))
        assert rep.summary["sigma_squared"] == pytest.approx(9.0, rel=1e-9)
        assert [r["finite"] for r in rep.records] == [False, True, True, True, False]

    @pytest.mark.parametrize("target", ["pi-growth", "cycles", "contraction"])
    def test_oracle(self, target):
        rep = run_experiment(cfg(law="oracle", model={"kind": "flip", "p": 0.1}, observable=PM1,
                                 options={"target": target}))
        assert rep.summary["all_passed"]

    def test_oracle_cycles_cap(self):
        c = cfg(law="oracle", model={"kind": "iid", "probs": [0.25] * 4},
                observable={"kind": "product", "values": [1, 0, 0, -1], "ell": 2}, options={"target": "cycles"})
        with pytest.raises(SizeCapExceeded):
            run_experiment(c)
