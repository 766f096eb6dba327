import numpy as np
import pytest

from truncmilstein import (NumericDomainError, SdeSystem, UsageError, builtin_model,
                           check_assumptions, check_commutativity, eval_L_operator)
from truncmilstein.sde_core import MODELS, check_derivative_consistency, gbm_exact


def _zero_system(d=2, m=2):
    return SdeSystem(
        d, m,
        drift=lambda x: np.zeros_like(x),
        diffusion=lambda x: np.zeros(x.shape + (m,)),
        diffusion_jacobian=lambda x: np.zeros(x.shape + (m, d)),
        initial_state=np.ones(d))


def _swap_system():
    # g_1 = (x^2, 0), g_2 = (0, x^1) in 1-based notation
    def diffusion(x):
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = x[..., 1]
        out[..., 1, 1] = x[..., 0]
        return out

    def jac(x):
        out = np.zeros(x.shape + (2, 2))
        out[..., 0, 0, 1] = 1.0
        out[..., 1, 1, 0] = 1.0
        return out

    return SdeSystem(2, 2, lambda x: np.zeros_like(x), diffusion, jac, [1.0, 1.0])


class TestLOperator:
    def test_paper_example_at_one(self, paper_model):
        assert eval_L_operator(paper_model, [1.0], 0, 0) == pytest.approx([2.0])

    def test_paper_example_closed_form(self, paper_model, rng):
        x = rng.uniform(-3, 3, size=(100, 1))
        got = eval_L_operator(paper_model, x, 0, 0)
        np.testing.assert_allclose(got, 2 * x**3, rtol=1e-12)

    def test_matches_finite_difference(self, paper_model):
        x, h = 0.7, 1e-6
        g = lambda v: v * v
        fd = g(x) * (g(x + h) - g(x - h)) / (2 * h)
        assert eval_L_operator(paper_model, [x], 0, 0)[0] == pytest.approx(fd, rel=1e-8)

    def test_gbm(self):
        gbm = builtin_model("gbm", sigma=0.5)
        assert eval_L_operator(gbm, [2.0], 0, 0) == pytest.approx([0.5])

    def test_zero_diffusion(self):
        sys = _zero_system()
        for j1 in range(2):
            for j2 in range(2):
                assert np.all(eval_L_operator(sys, [0.3, -1.2], j1, j2) == 0)

    def test_index_out_of_range(self, paper_model):
        with pytest.raises(UsageError):
            eval_L_operator(paper_model, [1.0], 1, 0)

    def test_non_finite(self, paper_model):
        with pytest.raises(NumericDomainError, match="coordinate 0"):
            eval_L_operator(paper_model, [np.inf], 0, 0)


class TestCommutativity:
    def test_single_noise_always_commutes(self, paper_model):
        ok, res = check_commutativity(paper_model, samples=100, seed=1)
        assert ok and res == 0.0

    def test_diagonal(self):
        ok, res = check_commutativity(builtin_model("linear-2d-diagonal"), seed=3)
        assert ok and res == 0.0

    def test_swap_does_not_commute(self):
        ok, res = check_commutativity(_swap_system(), samples=50, seed=3)
        assert not ok and res > 0

    def test_needs_samples(self, paper_model):
        with pytest.raises(UsageError):
            check_commutativity(paper_model, samples=0)


class TestAssumptions:
    def test_paper_constants_survive(self, paper_model):
        rep = check_assumptions(paper_model, {"K1": 5, "K2": 20, "r": 4}, p=1,
                                samples=10_000, seed=0)
        assert rep.checked_pairs == 10_000
        assert not rep.any_violated
        assert rep.sample_seed == 0

    def test_zero_model(self):
        rep = check_assumptions(_zero_system(), {"K1": 1, "K2": 1, "r": 1}, samples=500)
        assert not rep.any_violated
        assert all(v == 0 for v in rep.max_lhs_over_rhs.values())

    def test_tiny_lipschitz_constant_refuted(self, paper_model):
        rep = check_assumptions(paper_model, {"K1": 5, "K2": 1e-6, "r": 4}, samples=2000)
        assert rep.violated["lipschitz"]

    def test_violation_flag_matches_ratio(self, paper_model):
        rep = check_assumptions(paper_model, {"K1": 0.01, "K2": 20, "r": 4}, p=2,
                                samples=2000)
        for k, v in rep.max_lhs_over_rhs.items():
            assert rep.violated[k] == (v > 1)

    def test_rejects_bad_constants(self, paper_model):
        with pytest.raises(UsageError):
            check_assumptions(paper_model, {"K1": 0, "K2": 1, "r": 1})
        with pytest.raises(UsageError):
            check_assumptions(paper_model, {"K1": 1, "K2": 1, "r": 1}, p=0.5)


class TestBuiltinModels:
    def test_paper_example_values(self, paper_model):
        assert paper_model.state_dim == paper_model.noise_dim == 1
        assert paper_model.drift(np.array([1.0]))[0] == 0.0
        assert paper_model.diffusion_col(np.array([2.0]), 0)[0] == 4.0
        assert paper_model.diffusion_deriv(np.array([2.0]), 0, 0)[0] == 4.0
        assert paper_model.initial_state.tolist() == [1.0]

    def test_unknown_name_lists_models(self):
        with pytest.raises(UsageError, match="gbm"):
            builtin_model("nope")

    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_derivatives_match_finite_differences(self, name):
        assert check_derivative_consistency(builtin_model(name), samples=100) <= 1e-4

    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_shapes_and_finiteness(self, name, rng):
        sys = builtin_model(name)
        x = rng.uniform(-3, 3, size=(7, sys.state_dim))
        assert sys.drift(x).shape == (7, sys.state_dim)
        assert sys.diffusion(x).shape == (7, sys.state_dim, sys.noise_dim)
        assert sys.diffusion_jacobian(x).shape == (7, sys.state_dim, sys.noise_dim,
                                                    sys.state_dim)
        assert np.isfinite(sys.diffusion_jacobian(x)).all()

    def test_gbm_exact_needs_gbm(self, paper_model):
        with pytest.raises(UsageError):
            gbm_exact(paper_model, 1.0, 0.0)

    def test_gbm_exact_value(self):
        gbm = builtin_model("gbm", a=0.05, sigma=0.2, x0=2.0)
        assert gbm_exact(gbm, 1.0, 0.5) == pytest.approx(2.0 * np.exp(0.03 + 0.1))
