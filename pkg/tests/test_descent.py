import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rmtune.descent import (
    EPSILON,
    RHO_MAX,
    DescentState,
    NeedMoreSamples,
    Sample,
    choose_rho,
    choose_weights,
    estimate_jacobian,
    load_state,
    mgda_weights,
    minimize_noisy,
    proxy_gradient,
    proxy_objective,
    sample_ball,
    save_state,
    step_point,
    tricube,
    violated_objectives,
)


def ball_samples(func, x0, radius, count, seed):
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        d = rng.normal(size=x0.size)
        d *= rng.uniform(0.1, 1.0) * radius / np.linalg.norm(d)
        x = x0 + d
        samples.append(Sample(x, func(x)))
    return samples


def central_fd(func, x0, h=1e-6):
    m = x0.size
    k = func(x0).size
    jac = np.zeros((k, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        jac[:, j] = (func(x0 + e) - func(x0 - e)) / (2 * h)
    return jac


class TestJacobian:
    def test_linear_recovered(self):
        # Exact up to the bias of the stabilizing ridge term (~1e-3
        # at this sample spread).
        a = np.array([[2.0, -1.0, 0.5], [0.0, 3.0, 1.0]])
        b = np.array([1.0, -2.0])
        func = lambda x: a @ x + b
        x0 = np.array([0.4, 0.5, 0.6])
        jac = estimate_jacobian(ball_samples(func, x0, 0.1, 12, 0), x0)
        np.testing.assert_allclose(jac, a, atol=5e-3)

    def test_quadratic_close_to_fd(self):
        p = np.array([0.2, 0.7])
        func = lambda x: np.array([np.sum((x - p) ** 2), np.exp(x[0]) + x[1] ** 2])
        x0 = np.array([0.5, 0.4])
        jac = estimate_jacobian(ball_samples(func, x0, 0.05, 30, 1), x0)
        ref = central_fd(func, x0)
        rel = np.linalg.norm(jac - ref) / np.linalg.norm(ref)
        assert rel < 0.05

    def test_empty_history(self):
        with pytest.raises(NeedMoreSamples) as err:
            estimate_jacobian([], np.zeros(2))
        assert err.value.have == 0
        assert err.value.needed == 3

    def test_too_few_samples(self):
        x0 = np.zeros(3)
        history = ball_samples(lambda x: x[:1], x0, 0.1, 3, 0)
        with pytest.raises(NeedMoreSamples):
            estimate_jacobian(history, x0)

    def test_radius_filters_far_samples(self):
        x0 = np.zeros(2)
        far = ball_samples(lambda x: x[:1], x0 + 5.0, 0.1, 10, 0)
        with pytest.raises(NeedMoreSamples):
            estimate_jacobian(far, x0, radius=0.5)

    def test_zero_spread(self):
        x0 = np.array([0.5, 0.5])
        history = [Sample(x0.copy(), np.array([1.0])) for _ in range(5)]
        with pytest.raises(NeedMoreSamples, match="spread"):
            estimate_jacobian(history, x0)

    def test_tricube_kernel(self):
        u = np.array([0.0, 0.5, 1.0, 2.0])
        w = tricube(u)
        assert w[0] == 1.0
        assert w[1] == pytest.approx((1 - 0.125) ** 3)
        assert w[2] == 0.0
        assert w[3] == 0.0


class TestChooseWeights:
    def test_single_violated_takes_all_weight(self):
        jac = np.array([[1.0, 0.0], [0.0, 1.0]])
        choice = choose_weights(jac, [0])
        np.testing.assert_allclose(choice.weights, [1.0, 0.0], atol=1e-9)
        assert choice.level == pytest.approx(EPSILON)
        assert choice.common_descent

    def test_opposed_gradients_split_weight(self, caplog):
        jac = np.array([[1.0, 0.0], [-1.0, 0.0]])
        with caplog.at_level(logging.WARNING):
            choice = choose_weights(jac, [0, 1])
        r = math.sqrt(0.5)
        np.testing.assert_allclose(choice.weights, [r, r], atol=1e-9)
        assert choice.level == pytest.approx(0.0, abs=1e-9)
        assert not choice.common_descent
        assert any("no common descent" in rec.message for rec in caplog.records)

    def test_weights_always_unit_norm(self):
        jac = np.array([[3.0, 1.0], [0.5, -2.0], [1.0, 1.0]])
        for violated in ([0], [1, 2], [0, 1, 2], []):
            choice = choose_weights(jac, violated)
            assert np.linalg.norm(choice.weights) == pytest.approx(1.0)
            assert np.all(choice.weights >= -1e-12)

    def test_no_violation_uses_min_norm_combination(self):
        jac = np.array([[1.0, 0.0], [-1.0, 0.0]])
        choice = choose_weights(jac, [])
        r = math.sqrt(0.5)
        np.testing.assert_allclose(choice.weights, [r, r], atol=1e-6)
        assert choice.common_descent


class TestMgda:
    def test_opposed_pair_balances(self):
        c = mgda_weights(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        np.testing.assert_allclose(c, [0.5, 0.5], atol=1e-6)

    def test_orthogonal_pair(self):
        c = mgda_weights(np.eye(2))
        np.testing.assert_allclose(c, [0.5, 0.5], atol=1e-6)

    def test_single_row(self):
        np.testing.assert_allclose(mgda_weights(np.array([[2.0, 1.0]])), [1.0])

    def test_dominated_row_gets_no_weight(self):
        # Minimizing the combined norm puts everything on the shorter,
        # aligned gradient.
        c = mgda_weights(np.array([[4.0, 0.0], [1.0, 0.0]]))
        assert c[1] == pytest.approx(1.0, abs=1e-6)

    def test_combined_gradient_norm_is_minimal(self):
        rng = np.random.default_rng(3)
        jac = rng.normal(size=(4, 3))
        c = mgda_weights(jac)
        assert c.sum() == pytest.approx(1.0)
        best = np.linalg.norm(c @ jac)
        for _ in range(200):
            w = rng.dirichlet(np.ones(4))
            assert best <= np.linalg.norm(w @ jac) + 1e-6


class TestViolated:
    def test_threshold_boundary_counts(self):
        out = violated_objectives(np.array([1.0, 2.0, 3.0]), np.array([2.0, 2.0, 2.0]))
        assert out == [1, 2]

    def test_all_satisfied(self):
        assert violated_objectives(np.array([0.0]), np.array([1.0])) == []


class TestChooseRho:
    def test_mixed_products_tie_prefers_nonnegative(self):
        # Gram [[2,-1],[-1,2]]: both branch candidates attain the same
        # worst-case level, so the nonnegative one (1/2) wins.
        jac = np.array([[1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
        rho = choose_rho(jac, np.array([1.0, 1.0]), [0])
        assert rho == pytest.approx(0.5, abs=1e-12)

    def test_single_objective_hits_cap(self):
        rho = choose_rho(np.array([[3.0, 4.0]]), np.array([1.0]), [0])
        assert rho == RHO_MAX

    def test_no_violation_is_neutral(self):
        assert choose_rho(np.eye(2), np.ones(2), []) == 0.0

    def test_negative_weighted_product_falls_back(self, caplog):
        jac = np.array([[1.0, 0.0], [-3.0, 0.0]])
        with caplog.at_level(logging.WARNING):
            rho = choose_rho(jac, np.array([1.0, 1.0]), [0])
        assert rho == 0.0
        assert any("falling back" in rec.message for rec in caplog.records)

    def test_vanishing_gradient_row_ignored(self):
        jac = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert choose_rho(jac, np.ones(2), [0]) == 0.0

    def test_never_reaches_one(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            jac = rng.normal(size=(3, 4))
            weights = rng.dirichlet(np.ones(3))
            violated = sorted(rng.choice(3, size=rng.integers(1, 4), replace=False))
            rho = choose_rho(jac, weights, list(violated))
            assert rho <= RHO_MAX


class TestProxy:
    def test_value_formula(self):
        f = np.array([2.0, -1.0])
        r = np.array([1.0, 0.0])
        c = np.array([0.6, 0.8])
        rho = 0.5
        # max(f, r) = (2, 0): s = 0.6*(2 - 1) + 0.8*(-1 - 0) = -0.2
        assert proxy_objective(f, r, c, rho) == pytest.approx(-0.2)

    @given(
        f=hnp.arrays(float, 3, elements=st.floats(-5, 5)),
        bump=hnp.arrays(float, 3, elements=st.floats(0, 3)),
        rho=st.floats(-4.0, 0.999),
        idx=st.integers(0, 2),
    )
    @settings(max_examples=300)
    def test_strictly_monotone_below_one(self, f, bump, rho, idx):
        r = np.array([0.5, -0.5, 1.0])
        c = np.array([0.2, 0.5, 0.3])
        bump[idx] = max(bump[idx], 1e-3)
        lo = proxy_objective(f, r, c, rho)
        hi = proxy_objective(f + bump, r, c, rho)
        assert hi > lo

    def test_monotonicity_fails_at_one(self):
        # Above the cap the violated term cancels; the proxy goes flat.
        f = np.array([2.0])
        r = np.array([1.0])
        c = np.array([1.0])
        assert proxy_objective(f + 1.0, r, c, 1.0) == proxy_objective(f, r, c, 1.0)

    def test_gradient_weights_split_on_threshold(self):
        jac = np.array([[1.0, 0.0], [0.0, 1.0]])
        f = np.array([2.0, -1.0])
        r = np.array([1.0, 0.0])
        c = np.array([0.5, 0.5])
        g = proxy_gradient(jac, f, r, c, rho=0.6)
        # Violated row contributes c (1 - rho) = 0.2, satisfied row 0.5.
        np.testing.assert_allclose(g, [0.2, 0.5])


class TestStepPoint:
    def test_plain_step(self):
        out = step_point(np.array([0.5, 0.5]), np.array([1.0, 0.0]), 0.1, 0.5)
        np.testing.assert_allclose(out, [0.4, 0.5])

    def test_trust_region_shrinks_clipped_step(self):
        out = step_point(np.array([0.5, 0.5]), np.array([10.0, 0.0]), 1.0, 0.1)
        np.testing.assert_allclose(out, [0.4, 0.5])

    @given(
        x=hnp.arrays(float, 3, elements=st.floats(0, 1)),
        g=hnp.arrays(float, 3, elements=st.floats(-50, 50)),
        alpha=st.floats(1e-3, 2.0),
        d_max=st.floats(1e-3, 0.5),
    )
    @settings(max_examples=300)
    def test_stays_in_box_within_trust_radius(self, x, g, alpha, d_max):
        out = step_point(x, g, alpha, d_max)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        assert np.linalg.norm(out - x) <= d_max + 1e-9


class TestSampleBall:
    def test_count_and_radii(self):
        x = np.full(4, 0.5)
        rng = np.random.default_rng(0)
        pts = sample_ball(x, 0.1, 5, rng)
        assert len(pts) == 5
        for i, p in enumerate(pts):
            r = np.linalg.norm(p - x)
            assert r <= 0.1 * (i + 1) / 5 + 1e-12
            assert np.all(p >= 0.0) and np.all(p <= 1.0)

    def test_clipping_stays_in_box(self):
        x = np.array([0.01, 0.99])
        pts = sample_ball(x, 0.3, 8, np.random.default_rng(1))
        for p in pts:
            assert np.all(p >= 0.0) and np.all(p <= 1.0)

    def test_deterministic_for_seeded_rng(self):
        x = np.full(3, 0.4)
        a = sample_ball(x, 0.2, 4, np.random.default_rng(9))
        b = sample_ball(x, 0.2, 4, np.random.default_rng(9))
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p, q)


class TestMinimizeNoisy:
    def test_noiseless_single_objective_descends(self):
        target = np.array([0.3, 0.6])
        measure = lambda x, rng: np.array([np.sum((x - target) ** 2)])
        res = minimize_noisy(measure, np.array([0.9, 0.1]), np.array([np.inf]),
                             iterations=50, seed=0)
        start = np.sum((np.array([0.9, 0.1]) - target) ** 2)
        final = np.sum((res.x - target) ** 2)
        assert final < 0.05 * start
        assert len(res.path) >= 2

    def test_deterministic_per_seed(self):
        target = np.array([0.5, 0.5])
        measure = lambda x, rng: np.array([np.sum((x - target) ** 2) + 0.01 * rng.normal()])
        a = minimize_noisy(measure, np.array([0.1, 0.9]), np.array([np.inf]),
                           iterations=15, seed=3)
        b = minimize_noisy(measure, np.array([0.1, 0.9]), np.array([np.inf]),
                           iterations=15, seed=3)
        np.testing.assert_array_equal(a.x, b.x)

    def test_respects_trust_region(self):
        measure = lambda x, rng: np.array([float(x[0])])
        res = minimize_noisy(measure, np.array([0.9, 0.5]), np.array([np.inf]),
                             iterations=10, d_max=0.05, seed=1)
        for prev, nxt in zip(res.path, res.path[1:]):
            assert np.linalg.norm(nxt - prev) <= 0.05 + 1e-9


class TestStateIO:
    def test_round_trip(self, tmp_path):
        state = DescentState(
            current_x=np.array([0.25, 0.75]),
            thresholds=np.array([1.0, np.inf]),
            d_max=0.2,
            alpha=0.05,
            rho=0.5,
            weights=np.array([0.6, 0.8]),
        )
        state.remember(Sample(np.array([0.2, 0.7]), np.array([1.5, -0.5]), 2))
        state.remember(Sample(np.array([0.3, 0.8]), np.array([1.0, 0.0])))
        path = tmp_path / "state.txt"
        save_state(state, str(path))
        back = load_state(str(path))
        np.testing.assert_array_equal(back.current_x, state.current_x)
        np.testing.assert_array_equal(back.thresholds, state.thresholds)
        assert back.d_max == state.d_max
        assert back.alpha == state.alpha
        assert back.rho == state.rho
        np.testing.assert_array_equal(back.weights, state.weights)
        assert len(back.history) == 2
        for a, b in zip(back.history, state.history):
            np.testing.assert_array_equal(a.x, b.x)
            np.testing.assert_array_equal(a.values, b.values)
            assert a.n_measures == b.n_measures
