"""Dual coordinate steps, stochastic passes, and the alternating trainer."""

import numpy as np
import pytest

from conftest import random_comparisons
from helpers import (
    item_dual_phi,
    oracle_delta,
    single_triple_optimal_margin,
    user_dual_phi,
)

from pairrank import (
    ComparisonSet,
    FactorPair,
    L2_HINGE,
    LOGISTIC,
    margin,
    primal_objective,
)
from pairrank.altsvm import (
    AltSvmConfig,
    DualState,
    dual_objective_item,
    dual_objective_user,
    item_step_delta,
    rebuild_item_factors,
    rebuild_user_factors,
    run_item_pass,
    run_user_pass,
    train_altsvm,
    train_global_ranking,
    user_step_delta,
)
from pairrank.theory import BtlModel, random_low_rank_scores, sample_btl


class TestUserStepDelta:
    def test_zero_direction_gives_two_over_lam(self):
        for lam in (0.5, 1.0, 4.0):
            d = user_step_delta(np.zeros(3), np.zeros(3), 0.0, lam)
            np.testing.assert_allclose(d, 2.0 / lam, rtol=1e-12)

    def test_stationary_coordinate_stays_put(self):
        # numerator 1 - g.u - (lam/2)*alpha = 0 at g.u = 0.5, lam = 1, alpha = 1
        u = np.array([0.5, 0.0])
        g = np.array([1.0, 0.0])
        assert user_step_delta(u, g, 1.0, 1.0) == 0.0

    def test_matches_golden_section_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            r = 3
            u = rng.normal(size=r)
            g = rng.normal(size=r) * rng.choice([0.0, 0.5, 2.0])
            alpha = float(rng.choice([0.0, 0.7, rng.uniform(0, 3)]))
            lam = float(rng.uniform(0.1, 5.0))
            got = user_step_delta(u, g, alpha, lam)
            want = oracle_delta(user_dual_phi(u, g, alpha, lam, L2_HINGE),
                                alpha, lam, "l2hinge")
            np.testing.assert_allclose(got, want, atol=1e-8)

    def test_rejects_negative_alpha(self):
        with pytest.raises(ValueError):
            user_step_delta(np.zeros(2), np.zeros(2), -0.1, 1.0)

    def test_logistic_matches_oracle(self):
        rng = np.random.default_rng(18)
        for _ in range(300):
            u = rng.normal(size=4)
            g = rng.normal(size=4)
            lam = float(rng.uniform(0.2, 3.0))
            alpha = float(rng.uniform(0, 1.0 / lam))
            got = user_step_delta(u, g, alpha, lam, LOGISTIC)
            want = oracle_delta(user_dual_phi(u, g, alpha, lam, LOGISTIC),
                                alpha, lam, "logistic")
            np.testing.assert_allclose(got, want, atol=1e-6)


class TestItemStepDelta:
    def test_zero_user_vector_gives_two_over_lam(self):
        for lam in (0.5, 2.0):
            d = item_step_delta(np.ones(2), -np.ones(2), np.zeros(2), 1, 0.0, lam)
            np.testing.assert_allclose(d, 2.0 / lam, rtol=1e-12)

    def test_satisfied_margin_with_zero_dual_is_inactive(self):
        # margin u.(v_j - v_k) = 2 >= 1, beta = 0 -> clamped at zero
        u = np.array([1.0, 0.0])
        v_j = np.array([2.0, 0.0])
        v_k = np.array([0.0, 0.0])
        assert item_step_delta(v_j, v_k, u, 1, 0.0, 1.0) == 0.0

    def test_matches_golden_section_oracle(self):
        rng = np.random.default_rng(19)
        for _ in range(1000):
            r = 5
            u = rng.normal(size=r) * rng.choice([0.0, 1.0, 2.0])
            v_j = rng.normal(size=r)
            v_k = rng.normal(size=r)
            y = int(rng.choice([-1, 1]))
            beta = float(rng.choice([0.0, rng.uniform(0, 2)]))
            lam = float(rng.uniform(0.1, 5.0))
            got = item_step_delta(v_j, v_k, u, y, beta, lam)
            want = oracle_delta(item_dual_phi(v_j, v_k, u, y, beta, lam, L2_HINGE),
                                beta, lam, "l2hinge")
            np.testing.assert_allclose(got, want, atol=1e-8)


def small_instance(seed, d1=6, d2=8, m=60, rank=3, lam=1.0):
    rng = np.random.default_rng(seed)
    data = random_comparisons(rng, d1=d1, d2=d2, m=m)
    factors = FactorPair(
        rng.normal(scale=0.5, size=(d1, rank)),
        rng.normal(scale=0.5, size=(d2, rank)),
    )
    cfg = AltSvmConfig(rank=rank, lam=lam, seed=seed)
    return data, factors, cfg


class TestPasses:
    def test_zero_steps_is_identity(self):
        data, factors, cfg = small_instance(3)
        cfg = AltSvmConfig(rank=cfg.rank, lam=cfg.lam, inner_steps=0, seed=1)
        duals = DualState.zeros(data.m)
        before_u = factors.user_factors.copy()
        before_v = factors.item_factors.copy()
        run_user_pass(data, factors, duals, cfg)
        run_item_pass(data, factors, duals, cfg)
        np.testing.assert_array_equal(factors.user_factors, before_u)
        np.testing.assert_array_equal(factors.item_factors, before_v)
        assert not duals.alpha.any() and not duals.beta.any()

    def test_single_worker_pass_is_bitwise_deterministic(self):
        outs = []
        for _ in range(2):
            data, factors, cfg = small_instance(9)
            duals = DualState.zeros(data.m)
            rebuild_user_factors(data, duals.alpha, factors.item_factors,
                                 out=factors.user_factors)
            run_user_pass(data, factors, duals, cfg)
            outs.append((factors.user_factors.copy(), duals.alpha.copy()))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        np.testing.assert_array_equal(outs[0][1], outs[1][1])

    def test_repeated_user_steps_solve_single_constraint_problem(self):
        # one triple: the dual step lands on the exact one-constraint optimum
        data = ComparisonSet(1, 2, [0], [0], [1], [1])
        rng = np.random.default_rng(5)
        v = rng.normal(size=(2, 3))
        factors = FactorPair(np.zeros((1, 3)), v)
        duals = DualState.zeros(1)
        lam = 1.3
        cfg = AltSvmConfig(rank=3, lam=lam, inner_steps=50, seed=2)
        run_user_pass(data, factors, duals, cfg)
        q = float(np.sum((v[0] - v[1]) ** 2))
        want = single_triple_optimal_margin(q, lam)
        got = margin(factors, data.triple(0))
        np.testing.assert_allclose(got, want, rtol=1e-10)
        assert got <= 1.0 + 1e-12

    def test_repeated_item_steps_solve_single_constraint_problem(self):
        data = ComparisonSet(1, 2, [0], [0], [1], [1])
        rng = np.random.default_rng(6)
        u = rng.normal(size=(1, 3))
        factors = FactorPair(u, np.zeros((2, 3)))
        duals = DualState.zeros(1)
        lam = 0.7
        cfg = AltSvmConfig(rank=3, lam=lam, inner_steps=50, seed=2)
        run_item_pass(data, factors, duals, cfg)
        q = 2.0 * float(np.sum(u[0] ** 2))
        want = single_triple_optimal_margin(q, lam)
        np.testing.assert_allclose(margin(factors, data.triple(0)), want, rtol=1e-10)


class TestDualObjectiveMonotonicity:
    def _stepwise_user_objectives(self, data, item_factors, lam, steps, rng):
        alpha = np.zeros(data.m)
        U = rebuild_user_factors(data, alpha, item_factors)
        objs = [dual_objective_user(data, item_factors, alpha, lam)]
        V = item_factors
        for _ in range(steps):
            p = int(rng.integers(0, data.m))
            tr = data.triple(p)
            g = tr.label * (V[tr.preferred] - V[tr.other])
            d = user_step_delta(U[tr.user], g, alpha[p], lam)
            alpha[p] += d
            U[tr.user] += d * g
            objs.append(dual_objective_user(data, V, alpha, lam))
        return objs

    def test_user_dual_non_increasing_within_pass(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            data = random_comparisons(rng, d1=5, d2=6, m=40)
            V = rng.normal(size=(6, 2))
            objs = self._stepwise_user_objectives(data, V, 1.0, 80, rng)
            for a, b in zip(objs, objs[1:]):
                assert b <= a + 1e-10 * (1.0 + abs(a))

    def test_item_dual_non_increasing_within_pass(self):
        rng = np.random.default_rng(24)
        for _ in range(10):
            data = random_comparisons(rng, d1=5, d2=6, m=40)
            U = rng.normal(size=(5, 2))
            beta = np.zeros(data.m)
            V = rebuild_item_factors(data, beta, U)
            lam = 1.5
            objs = [dual_objective_item(data, U, beta, lam)]
            for _ in range(80):
                p = int(rng.integers(0, data.m))
                tr = data.triple(p)
                d = item_step_delta(V[tr.preferred], V[tr.other], U[tr.user],
                                    tr.label, beta[p], lam)
                beta[p] += d
                V[tr.preferred] += d * tr.label * U[tr.user]
                V[tr.other] -= d * tr.label * U[tr.user]
                objs.append(dual_objective_item(data, U, beta, lam))
            for a, b in zip(objs, objs[1:]):
                assert b <= a + 1e-10 * (1.0 + abs(a))


class TestLinkage:
    def test_factors_match_dual_linkage_after_passes(self):
        data, factors, cfg = small_instance(31, m=120)
        duals = DualState.zeros(data.m)
        for it in range(1, 4):
            rebuild_item_factors(data, duals.beta, factors.user_factors,
                                 out=factors.item_factors)
            run_item_pass(data, factors, duals, cfg, pass_key=[0, it, 0])
            fresh_v = rebuild_item_factors(data, duals.beta, factors.user_factors)
            err = np.linalg.norm(factors.item_factors - fresh_v, axis=1)
            bound = 1e-9 * (1.0 + np.linalg.norm(factors.item_factors, axis=1))
            assert np.all(err <= bound)

            rebuild_user_factors(data, duals.alpha, factors.item_factors,
                                 out=factors.user_factors)
            run_user_pass(data, factors, duals, cfg, pass_key=[0, it, 1])
            fresh_u = rebuild_user_factors(data, duals.alpha, factors.item_factors)
            err = np.linalg.norm(factors.user_factors - fresh_u, axis=1)
            bound = 1e-9 * (1.0 + np.linalg.norm(factors.user_factors, axis=1))
            assert np.all(err <= bound)


class TestTrainAltSvm:
    def test_single_comparison_is_separated(self):
        data = ComparisonSet(1, 2, [0], [0], [1], [1])
        factors, _ = train_altsvm(data, AltSvmConfig(rank=1, lam=1.0, seed=0))
        assert factors.score(0, 0) > factors.score(0, 1)

    def test_empty_data_rejected(self):
        with pytest.raises(ValueError):
            train_altsvm(ComparisonSet.empty(2, 2), AltSvmConfig(rank=1))

    def test_bitwise_deterministic_single_worker(self):
        rng = np.random.default_rng(55)
        data = random_comparisons(rng, d1=10, d2=12, m=200)
        cfg = AltSvmConfig(rank=4, lam=0.8, max_outer_iters=5, seed=99)
        a, ta = train_altsvm(data, cfg)
        b, tb = train_altsvm(data, cfg)
        np.testing.assert_array_equal(a.user_factors, b.user_factors)
        np.testing.assert_array_equal(a.item_factors, b.item_factors)
        assert ta.objective == tb.objective

    def test_objective_descends_across_alternations(self):
        rng = np.random.default_rng(60)
        for seed in range(5):
            data = random_comparisons(rng, d1=12, d2=15, m=300)
            cfg = AltSvmConfig(rank=3, lam=1.0, max_outer_iters=12, seed=seed)
            _, trace = train_altsvm(data, cfg)
            objs = trace.objective
            for a, b in zip(objs, objs[1:]):
                assert b <= a + 1e-6 * (1.0 + abs(a))

    def test_trace_has_time_and_stops_on_tolerance(self):
        rng = np.random.default_rng(2)
        data = random_comparisons(rng, d1=8, d2=8, m=100)
        cfg = AltSvmConfig(rank=2, lam=1.0, max_outer_iters=200, tolerance=1e-4, seed=3)
        _, trace = train_altsvm(data, cfg)
        assert len(trace) < 200
        assert all(b >= a for a, b in zip(trace.elapsed, trace.elapsed[1:]))

    def test_scaling_both_factors_preserves_rankings(self):
        rng = np.random.default_rng(8)
        data = random_comparisons(rng, d1=6, d2=20, m=150)
        factors, _ = train_altsvm(data, AltSvmConfig(rank=3, lam=1.0, seed=1,
                                                     max_outer_iters=5))
        scaled = factors.scaled(3.7)
        for i in range(data.d1):
            np.testing.assert_array_equal(
                np.argsort(factors.user_scores(i)), np.argsort(scaled.user_scores(i))
            )

    def test_recovers_synthetic_low_rank_preferences(self):
        # fit on one sample from a rank-2 truth, score on a fresh test sample;
        # the truth itself upper-bounds reachable accuracy
        rng = np.random.default_rng(77)
        truth = random_low_rank_scores(30, 30, 2, rng, magnitude=2.0)
        model = BtlModel.uniform(truth, 4000)
        train = sample_btl(model, seed=101)
        test = sample_btl(model, seed=202)
        cfg = AltSvmConfig(rank=2, lam=0.5, max_outer_iters=40, seed=5)
        factors, _ = train_altsvm(train, cfg)
        from pairrank.metrics import pairwise_accuracy

        fit_acc = pairwise_accuracy(factors, test)
        oracle_acc = pairwise_accuracy(
            FactorPair(truth, np.eye(30)), test
        )
        assert fit_acc > 0.8
        assert fit_acc >= 0.9 * oracle_acc


class TestGlobalRanking:
    def test_majority_preference_orders_items(self):
        # 3 items; two users prefer 0 over 1, one prefers 1 over 0; all prefer 1 over 2
        data = ComparisonSet(
            3, 3,
            [0, 1, 2, 0, 1, 2],
            [0, 0, 1, 1, 1, 1],
            [1, 1, 0, 2, 2, 2],
            [1] * 6,
        )
        factors, _ = train_global_ranking(data, AltSvmConfig(rank=2, lam=1.0, seed=0))
        scores = factors.user_scores(0)
        assert scores[0] > scores[1] > scores[2]
        # all user rows identical, so every user sees the same order
        np.testing.assert_array_equal(factors.user_factors[0], factors.user_factors[1])

    def test_user_factors_stay_all_ones(self):
        rng = np.random.default_rng(13)
        data = random_comparisons(rng, d1=4, d2=6, m=50)
        factors, _ = train_global_ranking(data, AltSvmConfig(rank=3, lam=1.0, seed=0))
        np.testing.assert_array_equal(factors.user_factors, np.ones((4, 3)))


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            AltSvmConfig(rank=0)
        with pytest.raises(ValueError):
            AltSvmConfig(rank=1, lam=0.0)
        with pytest.raises(ValueError):
            AltSvmConfig(rank=1, workers=0)
        with pytest.raises(ValueError):
            AltSvmConfig(rank=1, tolerance=0.0)

    def test_default_init_scale_tracks_rank(self):
        assert AltSvmConfig(rank=4).sigma0 == 0.5
