import numpy as np
import pytest

import decent_opt as do
from decent_opt import problems, rng


class TestHandQuadratic:
    def test_minimizer_and_constants(self, hand_problem):
        assert hand_problem.x_star == pytest.approx([1.0])
        consts = hand_problem.constants()
        assert consts.L == pytest.approx(1.0)
        assert consts.mu == pytest.approx(1.0)
        assert consts.zeta_sq == pytest.approx(1.0)
        # f(x*) = mean of {0.5 * (1-0)^2, 0.5 * (1-2)^2} = 0.5
        assert consts.f_star == pytest.approx(0.5)

    def test_full_gradient_hand_values(self, hand_problem):
        assert hand_problem.full_gradient(0, np.array([1.0])) == pytest.approx([1.0])
        assert hand_problem.full_gradient(1, np.array([1.0])) == pytest.approx([-1.0])

    def test_gradient_zero_at_local_star(self, hand_problem):
        g = hand_problem.full_gradient(1, np.array([2.0]))
        assert np.abs(g).max() == 0.0


class TestGenQuadratic:
    def test_stationarity_of_x_star(self, fig1_problem):
        rows = fig1_problem.gradient_matrix_at(fig1_problem.x_star)
        scale = sum(np.linalg.norm(h, 2) for h in fig1_problem.hessians)
        assert np.linalg.norm(rows.sum(axis=0)) <= 1e-9 * scale

    def test_homogeneous_limit(self):
        prob = do.gen_quadratic(4, 3, 6, c=1e18, sigma=0.0, seed=0)
        assert prob.heterogeneity() <= 1e-18
        assert np.allclose(prob.x_local_star, prob.x_star, atol=1e-15)

    def test_heterogeneity_scales_inverse_square(self):
        zetas = {c: do.gen_quadratic(6, 4, 8, c=c, sigma=0.0, seed=9).heterogeneity()
                 for c in (1.0, 2.0, 4.0, 8.0)}
        ref = zetas[1.0]
        for c, z in zetas.items():
            assert z * c * c == pytest.approx(ref, rel=1e-9)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            do.gen_quadratic(4, 5, 3, c=1.0, sigma=0.0, seed=0)  # p < d
        with pytest.raises(ValueError):
            do.gen_quadratic(4, 2, 4, c=0.0, sigma=0.0, seed=0)

    def test_regeneration_on_ill_conditioned_draw(self, monkeypatch):
        real_cond = np.linalg.cond
        calls = {"k": 0}

        def flaky_cond(mat, *args, **kwargs):
            calls["k"] += 1
            return 1e13 if calls["k"] == 1 else real_cond(mat, *args, **kwargs)

        monkeypatch.setattr(np.linalg, "cond", flaky_cond)
        prob = do.gen_quadratic(3, 2, 4, c=1.0, sigma=0.0, seed=4)
        assert prob.regenerations == 1

    def test_pl_and_smoothness_along_random_points(self, fig1_problem):
        consts = fig1_problem.constants()
        gen = np.random.default_rng(0)
        for _ in range(100):
            x = fig1_problem.x_star + gen.standard_normal(fig1_problem.d)
            gap = fig1_problem.f(x) - consts.f_star
            gsq = float(np.sum(fig1_problem.grad_f(x) ** 2))
            assert 2 * consts.mu * gap <= gsq * (1 + 1e-9)
            assert gsq <= 2 * consts.L * gap * (1 + 1e-9)


class TestStochasticGradients:
    def test_zero_noise_equals_full(self, hand_problem):
        stream = rng.substream(0, rng.GRAD_NOISE, 0)
        g = hand_problem.stochastic_gradient(0, np.array([0.3]), stream)
        assert np.array_equal(g, hand_problem.full_gradient(0, np.array([0.3])))

    def test_unbiased_and_variance_bounded(self, fig1_problem):
        k = 100_000
        x = fig1_problem.x_star + 0.5
        stream = rng.substream(123, rng.GRAD_NOISE, 0)
        exact = fig1_problem.full_gradient(0, x)
        draws = np.stack([fig1_problem.stochastic_gradient(0, x, stream)
                          for _ in range(k)])
        se = draws.std(axis=0) / np.sqrt(k)
        assert np.all(np.abs(draws.mean(axis=0) - exact) <= 4 * se)
        var = float(((draws - exact) ** 2).sum(axis=1).mean())
        assert var <= fig1_problem.constants().sigma_sq * 1.05

    def test_logistic_additive_noise_variance(self):
        prob = do.gen_logistic(2, 20, 30, sigma_h=0.1, mu_reg=0.01, sigma_s=0.1, seed=1)
        assert prob.constants().sigma_sq == pytest.approx(0.2)  # d * sigma_s^2
        x = np.zeros(20)
        stream = rng.substream(5, rng.GRAD_NOISE, 0)
        base = prob.full_gradient(0, x)
        sq = [float(np.sum((prob.stochastic_gradient(0, x, stream) - base) ** 2))
              for _ in range(20_000)]
        se = np.std(sq) / np.sqrt(len(sq))
        assert abs(np.mean(sq) - 0.2) <= 3 * se


def numerical_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestLogistic:
    def test_labels_are_plus_minus_one(self):
        prob = do.gen_logistic(3, 4, 50, sigma_h=0.5, mu_reg=0.05, sigma_s=0.0, seed=2)
        assert np.isin(prob.v, (-1.0, 1.0)).all()

    def test_gradient_matches_finite_differences(self):
        prob = do.gen_logistic(2, 5, 20, sigma_h=0.3, mu_reg=0.1, sigma_s=0.0, seed=3)
        gen = np.random.default_rng(1)
        for agent in range(2):
            x = gen.standard_normal(5)
            num = numerical_gradient(lambda v: prob.local_f(agent, v), x)
            assert np.allclose(prob.full_gradient(agent, x), num, atol=1e-6)

    def test_penalty_vanishes_at_origin(self):
        prob = do.gen_logistic(2, 4, 30, sigma_h=0.1, mu_reg=5.0, sigma_s=0.0, seed=4)
        heavy = prob.full_gradient(0, np.zeros(4))
        light = do.LogisticProblem(prob.u, prob.v, mu_reg=1e-12, sigma_s=0.0
                                   ).full_gradient(0, np.zeros(4))
        assert np.allclose(heavy, light)

    def test_reference_solve_reaches_tolerance(self):
        prob = do.gen_logistic(3, 4, 60, sigma_h=0.4, mu_reg=0.05, sigma_s=0.0, seed=5)
        assert np.linalg.norm(prob.grad_f(prob.x_star)) <= 1e-10

    def test_mu_is_the_penalty(self):
        prob = do.gen_logistic(2, 3, 10, sigma_h=0.0, mu_reg=0.01, sigma_s=0.0, seed=6)
        assert prob.constants().mu == 0.01

    def test_homogeneous_limit_small_heterogeneity(self):
        prob = do.gen_logistic(4, 3, 4000, sigma_h=0.0, mu_reg=0.05, sigma_s=0.0, seed=7)
        hetero = do.gen_logistic(4, 3, 4000, sigma_h=1.0, mu_reg=0.05, sigma_s=0.0, seed=7)
        assert prob.heterogeneity() < 0.1 * hetero.heterogeneity()

    def test_smoothness_bound_holds_empirically(self):
        prob = do.gen_logistic(2, 4, 30, sigma_h=0.2, mu_reg=0.05, sigma_s=0.0, seed=8)
        L = prob.constants().L
        gen = np.random.default_rng(2)
        for _ in range(50):
            x, y = gen.standard_normal((2, 4))
            lhs = np.linalg.norm(prob.full_gradient(0, x) - prob.full_gradient(0, y))
            assert lhs <= L * np.linalg.norm(x - y) * (1 + 1e-9)

    def test_labels_follow_generating_parameter(self):
        # Labels must correlate with the sign of the generating margin; with
        # x_i = 1 (d = 1) agreement runs near E[expit(|u|)] = 0.6748.
        prob = do.gen_logistic(1, 1, 20_000, sigma_h=0.0, mu_reg=0.01,
                               sigma_s=0.0, seed=21)
        agreement = float((prob.v[0] == np.sign(prob.u[0, :, 0])).mean())
        assert agreement == pytest.approx(0.6748, abs=0.015)


class TestWelsch:
    def test_loss_bounded(self):
        prob = do.gen_welsch(3, 4, 30, sigma_h=0.5, sigma_s=0.0, seed=9)
        gen = np.random.default_rng(4)
        for _ in range(20):
            val = prob.local_f(0, gen.standard_normal(4))
            assert 0.0 <= val < 1.0

    def test_gradient_matches_finite_differences(self):
        prob = do.gen_welsch(2, 4, 25, sigma_h=0.5, sigma_s=0.0, seed=10)
        gen = np.random.default_rng(5)
        for agent in range(2):
            x = gen.standard_normal(4) * 0.5
            num = numerical_gradient(lambda v: prob.local_f(agent, v), x)
            assert np.allclose(prob.full_gradient(agent, x), num, atol=1e-6)

    def test_constants(self):
        prob = do.gen_welsch(2, 3, 20, sigma_h=0.2, sigma_s=0.1, seed=11)
        consts = prob.constants()
        assert consts.mu == 0.0
        assert consts.f_star is None and consts.zeta_sq is None
        assert consts.sigma_sq == pytest.approx(3 * 0.01)
        assert consts.L > 0

    def test_smoothness_bound_holds_empirically(self):
        prob = do.gen_welsch(2, 4, 30, sigma_h=0.3, sigma_s=0.0, seed=12)
        L = prob.constants().L
        gen = np.random.default_rng(6)
        for _ in range(50):
            x, y = gen.standard_normal((2, 4))
            lhs = np.linalg.norm(prob.full_gradient(0, x) - prob.full_gradient(0, y))
            assert lhs <= L * np.linalg.norm(x - y) * (1 + 1e-9)

    def test_heterogeneity_unavailable(self):
        prob = do.gen_welsch(2, 3, 10, sigma_h=0.2, sigma_s=0.0, seed=13)
        with pytest.raises(RuntimeError):
            prob.heterogeneity()


class TestPortableFormat:
    @pytest.mark.parametrize("make", [
        lambda: do.gen_quadratic(3, 2, 5, c=2.0, sigma=0.1, seed=14),
        lambda: do.gen_logistic(2, 3, 12, sigma_h=0.2, mu_reg=0.05, sigma_s=0.1, seed=15),
        lambda: do.gen_welsch(2, 3, 9, sigma_h=0.4, sigma_s=0.2, seed=16),
    ])
    def test_round_trip(self, tmp_path, make):
        prob = make()
        path = tmp_path / "problem.txt"
        do.save_problem(prob, path)
        loaded = do.load_problem(path)
        assert type(loaded) is type(prob)
        x = np.linspace(-1, 1, prob.d)
        for agent in range(prob.n):
            assert np.array_equal(loaded.full_gradient(agent, x),
                                  prob.full_gradient(agent, x))
        assert loaded.f(x) == prob.f(x)

    def test_quadratic_round_trip_preserves_minimizer(self, tmp_path):
        prob = do.gen_quadratic(3, 2, 5, c=2.0, sigma=0.1, seed=17)
        do.save_problem(prob, tmp_path / "q.txt")
        loaded = do.load_problem(tmp_path / "q.txt")
        assert np.allclose(loaded.x_star, prob.x_star, atol=1e-15)
        assert loaded.sigma == prob.sigma and loaded.hetero_c == prob.hetero_c


def test_reference_minimize_raises_with_diagnostics():
    # An unreachable tolerance must surface the achieved gradient norm.
    with pytest.raises(problems.ReferenceSolveError) as info:
        problems.reference_minimize(lambda x: float(x @ x), lambda x: 2 * x,
                                    np.ones(3), lipschitz=2.0, tol=-1.0,
                                    max_iters=5)
    assert np.isfinite(info.value.achieved_grad_norm)
    assert info.value.achieved_grad_norm >= 0
