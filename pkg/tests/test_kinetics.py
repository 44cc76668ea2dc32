import math

import numpy as np
import pytest

from kinex import (ANGLE, PURE, SAVING, EvolutionState, GammaSpec, GridPdf,
                   ModelParams, NumericError, WealthGrid, advance,
                   default_grid, default_seed_pdf, distance, evolution_rate,
                   exponential_pdf, gain_angle, gain_pure, gain_saving,
                   gamma_pdf, normalize, perturb_equilibrium, quadrature,
                   relaxation_time, solve_steady, steady_operator)
from kinex.kinetics import _gain_pair_nodes
from kinex.montecarlo import run_replicas

from conftest import mixture_density, reference_pair_gain

PURE_P = ModelParams(PURE)
SAV05 = ModelParams(SAVING, saving_fraction=0.5)
ANG05 = ModelParams(ANGLE, exchange_fraction=0.5)
ANG10 = ModelParams(ANGLE, exchange_fraction=1.0)


def exp_pdf(grid):
    return GridPdf(grid, exponential_pdf(grid.nodes, 1.0), 1.0)


def gamma_grid_pdf(grid, n):
    return GridPdf(grid, gamma_pdf(grid.nodes, GammaSpec.from_shape(n, 1.0)), 1.0)


class TestPairGainKernel:
    @pytest.mark.parametrize("lam", [0.0, 0.35, 0.9])
    def test_matches_reference_transcription(self, lam):
        grid = WealthGrid.uniform(1.0, 301, span=20.0)
        rng = np.random.default_rng(5)
        pdf = mixture_density(grid, rng)
        fast = _gain_pair_nodes(pdf, lam)
        slow = reference_pair_gain(grid.nodes, pdf.values, lam)
        np.testing.assert_allclose(fast, slow, rtol=1e-11, atol=1e-14)

    def test_reference_on_loghead_grid(self):
        grid = WealthGrid.loghead(1.0, 301, span=20.0)
        rng = np.random.default_rng(6)
        pdf = mixture_density(grid, rng)
        fast = _gain_pair_nodes(pdf, 0.35)
        slow = reference_pair_gain(grid.nodes, pdf.values, 0.35)
        np.testing.assert_allclose(fast, slow, rtol=1e-11, atol=1e-14)


class TestGainPure:
    def test_exponential_is_fixed_point(self, unit_grid):
        pdf = exp_pdf(unit_grid)
        gains = _gain_pair_nodes(pdf, 0.0)
        assert np.max(np.abs(pdf.values - gains)) <= 5e-4

    def test_pointwise_values(self, unit_grid):
        pdf = exp_pdf(unit_grid)
        assert gain_pure(pdf, 1.0) == pytest.approx(math.exp(-1.0), abs=2e-4)
        assert gain_pure(pdf, 0.0) == pytest.approx(1.0, abs=2e-4)
        assert abs(gain_pure(pdf, unit_grid.u_max)) <= 1e-8

    def test_beyond_grid_is_zero(self, unit_grid):
        pdf = exp_pdf(unit_grid)
        assert gain_pure(pdf, unit_grid.u_max + 5.0) == 0.0


class TestGainSaving:
    def test_zero_fraction_delegates_to_pure(self, unit_grid):
        pdf = exp_pdf(unit_grid)
        p0 = ModelParams(SAVING, saving_fraction=0.0)
        u = np.array([0.0, 0.5, 1.0, 3.0])
        np.testing.assert_array_equal(gain_saving(pdf, u, p0),
                                      gain_pure(pdf, u))

    def test_against_monte_carlo_integral_oracle(self, unit_grid):
        # density estimate: E over sampled pairs of the conditional
        # post-trade density at u, which equals the gain integral
        lam, u = 0.5, 1.0
        pdf = gamma_grid_pdf(unit_grid, 4.0)
        rng = np.random.default_rng(42)
        u1 = rng.gamma(4.0, 0.25, 10**7)
        u2 = rng.gamma(4.0, 0.25, 10**7)
        total = u1 + u2
        inside = (lam * u1 <= u) & (u <= lam * u1 + (1.0 - lam) * total)
        oracle = np.mean(inside / ((1.0 - lam) * total))
        got = gain_saving(pdf, u, SAV05)
        assert got == pytest.approx(oracle, rel=0.01)

    def test_near_unity_fraction_rejected(self, unit_grid):
        pdf = exp_pdf(unit_grid)
        bad = ModelParams(SAVING, saving_fraction=0.9995)
        with pytest.raises(ValueError):
            gain_saving(pdf, 1.0, bad)

    def test_far_beyond_support_is_zero(self, unit_grid):
        pdf = exp_pdf(unit_grid)
        assert gain_saving(pdf, 2.0 * unit_grid.u_max, SAV05) == 0.0

    def test_wrong_model_kind_rejected(self, unit_grid):
        with pytest.raises(ValueError):
            gain_saving(exp_pdf(unit_grid), 1.0, PURE_P)


class TestGainAngle:
    def test_against_monte_carlo_integral_oracle(self, unit_grid):
        omega, u = 0.5, 1.0
        pdf = gamma_grid_pdf(unit_grid, 2.0)
        rng = np.random.default_rng(7)
        u1 = rng.gamma(2.0, 0.5, 10**7)
        u2 = rng.gamma(2.0, 0.5, 10**7)
        winner_oracle = np.mean(((u1 <= u) & (u <= u1 + omega * u2))
                                / (omega * u2))
        loser_oracle = np.mean(((u <= u2) & (u2 <= u / (1.0 - omega)))
                               / (omega * u2))
        W, L = gain_angle(pdf, u, ANG05)
        assert W == pytest.approx(winner_oracle, rel=0.01)
        assert L == pytest.approx(loser_oracle, rel=0.01)

    def test_zero_wealth_gains_nothing(self, unit_grid):
        pdf = gamma_grid_pdf(unit_grid, 2.0)
        assert gain_angle(pdf, 0.0, ANG05) == (0.0, 0.0)

    def test_full_transfer_gamma_is_stationary(self):
        # singular equilibrium at full transfer, on the loghead grid
        grid = WealthGrid.loghead(1.0, 4001)
        pdf = gamma_grid_pdf(grid, 0.5)
        W, L = gain_angle(pdf, grid.nodes, ANG10)
        resid = np.abs(pdf.values - 0.5 * (W + L))
        assert resid.max() <= 5e-3

    def test_wrong_model_kind_rejected(self, unit_grid):
        with pytest.raises(ValueError):
            gain_angle(exp_pdf(unit_grid), 1.0, PURE_P)


class TestOperatorScaling:
    def test_bilinear_and_linear_parts(self, unit_grid):
        rng = np.random.default_rng(11)
        pdf = mixture_density(unit_grid, rng)
        scaled = GridPdf(unit_grid, 0.5 * pdf.values, 1.0)
        u = np.array([0.5, 1.0, 2.0])
        np.testing.assert_allclose(gain_pure(scaled, u),
                                   0.25 * gain_pure(pdf, u), rtol=1e-10)
        np.testing.assert_allclose(gain_saving(scaled, u, SAV05),
                                   0.25 * gain_saving(pdf, u, SAV05),
                                   rtol=1e-10)
        W, L = gain_angle(pdf, u, ANG05)
        Ws, Ls = gain_angle(scaled, u, ANG05)
        np.testing.assert_allclose(Ws, 0.25 * W, rtol=1e-10)
        np.testing.assert_allclose(Ls, 0.5 * L, rtol=1e-10)


ALL_MODELS = [
    (PURE_P, "uniform"),
    (SAV05, "uniform"),
    (ModelParams(SAVING, saving_fraction=0.9), "uniform"),
    (ANG05, "uniform"),
    (ANG10, "loghead"),
]


class TestEvolutionRate:
    def test_exponential_stationary_under_pure(self, unit_grid):
        state = EvolutionState(exp_pdf(unit_grid), PURE_P)
        assert np.max(np.abs(evolution_rate(state))) <= 5e-4

    @pytest.mark.parametrize("params,spacing", ALL_MODELS,
                             ids=lambda v: str(getattr(v, "kind", v)))
    def test_probability_and_wealth_conservation(self, params, spacing):
        grid = WealthGrid.uniform(1.0, 4001) if spacing == "uniform" \
            else WealthGrid.loghead(1.0, 4001)
        rng = np.random.default_rng(17)
        for _ in range(3):
            pdf = mixture_density(grid, rng)
            rate = evolution_rate(EvolutionState(pdf, params))
            assert abs(quadrature(pdf, rate)) <= 1e-3
            assert abs(quadrature(pdf, grid.nodes * rate)) <= 1e-3

    def test_rate_bounded_by_fixed_point_residual(self):
        solved, report = solve_steady(SAV05)
        state = EvolutionState(solved, SAV05)
        sup_rate = np.max(np.abs(evolution_rate(state)))
        assert sup_rate <= 2.0 * report.final_sup_residual * 1.01


class TestAdvance:
    def test_zero_dt_identity(self, unit_grid):
        state = EvolutionState(exp_pdf(unit_grid), PURE_P, n_agents=1000)
        assert advance(state, 0.0) is state

    def test_stability_bound_enforced(self, unit_grid):
        state = EvolutionState(exp_pdf(unit_grid), PURE_P, n_agents=1000)
        with pytest.raises(ValueError):
            advance(state, 251.0)
        with pytest.raises(ValueError):
            advance(state, -1.0)

    def test_equilibrium_is_preserved(self, unit_grid):
        state = EvolutionState(normalize(exp_pdf(unit_grid)), PURE_P,
                               n_agents=1000)
        out = advance(state, 100.0)
        assert np.max(np.abs(out.pdf.values - state.pdf.values)) <= 5e-4
        assert out.time == 100.0

    def test_relaxation_efolds_from_perturbed_start(self):
        # ten nominal decay times should shed at least eight e-folds
        grid = WealthGrid.uniform(1.0, 2001, span=20.0)
        f_eq, _ = solve_steady(PURE_P, grid=grid, step_tol=1e-10, max_iter=200)
        f0 = perturb_equilibrium(f_eq)
        n = 1000
        state = EvolutionState(f0, PURE_P, n_agents=n)
        d0 = distance(state.pdf, f_eq).l1
        for _ in range(200):
            state = advance(state, 25.0)
        d1 = distance(state.pdf, f_eq).l1
        assert state.time == 5000.0
        assert d0 / d1 >= math.exp(8.0)


class TestSolveSteady:
    def test_pure_converges_immediately(self):
        solved, report = solve_steady(PURE_P)
        assert report.iterations == 0
        assert report.final_sup_residual <= 5e-4
        assert report.converged

    @pytest.mark.parametrize("lam", [0.5, 0.9])
    def test_saving_presets_converge(self, lam):
        params = ModelParams(SAVING, saving_fraction=lam)
        solved, report = solve_steady(params, tol=5e-3, max_iter=5)
        assert report.converged
        assert report.final_sup_residual <= 5e-3
        assert quadrature(solved) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("lam", [0.1, 0.5, 0.9])
    def test_one_iteration_improves_on_seed(self, lam):
        params = ModelParams(SAVING, saving_fraction=lam)
        _, report = solve_steady(params, tol=0.0, max_iter=1)
        assert report.residuals[1] <= report.residuals[0]

    def test_angle_half_exact_at_seed(self):
        solved, report = solve_steady(ANG05, tol=5e-3)
        assert report.iterations == 0
        assert report.final_sup_residual <= 5e-3

    def test_angle_full_exact_at_seed(self):
        solved, report = solve_steady(ANG10, tol=5e-3)
        assert report.iterations == 0
        assert report.final_sup_residual <= 5e-3

    def test_nonconvergence_flagged_not_raised(self):
        _, report = solve_steady(SAV05, tol=1e-12, max_iter=2)
        assert not report.converged
        assert report.iterations == 2

    def test_deep_iteration_reaches_attractor(self):
        # the normalized map is re-applied at the returned solution; the
        # remaining motion is the documented near-origin floor of the map
        params = ModelParams(SAVING, saving_fraction=0.1)
        solved, report = solve_steady(params, step_tol=1e-10, max_iter=150)
        assert report.converged
        assert report.iterations < 150
        again = steady_operator(solved, params)
        renorm = normalize(GridPdf(solved.grid, np.maximum(again, 0.0), 1.0))
        assert np.max(np.abs(renorm.values - solved.values)) <= 5e-5


class TestRelaxation:
    def test_perturbation_is_mass_and_mean_neutral(self):
        grid = WealthGrid.uniform(1.0, 2001, span=20.0)
        f_eq = normalize(exp_pdf(grid))
        f0 = perturb_equilibrium(f_eq)
        assert f0.values.min() >= 0.0
        assert quadrature(f0) == pytest.approx(1.0, abs=1e-12)
        mean_eq = quadrature(f_eq, grid.nodes * f_eq.values)
        mean_f0 = quadrature(f0, grid.nodes * f0.values)
        assert mean_f0 == pytest.approx(mean_eq, abs=1e-8)
        assert distance(f0, f_eq).l1 > 1e-3

    def test_pure_relaxation_time(self):
        grid = WealthGrid.uniform(1.0, 2001, span=20.0)
        fit = relaxation_time(PURE_P, n_agents=1000, grid=grid)
        assert 0.45 <= fit.tau_over_n <= 0.55
        assert fit.times.size >= 20
        assert fit.rms_residual < 0.05

    def test_identical_start_rejected(self):
        grid = WealthGrid.uniform(1.0, 1001, span=20.0)
        f_eq, _ = solve_steady(PURE_P, grid=grid, step_tol=1e-10, max_iter=200)
        with pytest.raises(NumericError):
            relaxation_time(PURE_P, f0=f_eq, f_eq=f_eq, n_agents=1000)


class TestAgainstMonteCarlo:
    def test_angle_steady_matches_simulation(self):
        # reduced-size cross-check of the deterministic fixed point
        params = ANG05
        hist, _ = run_replicas(params, 10**4, 2 * 10**6, seed=99, replicas=4)
        solved, report = solve_steady(params)
        assert report.converged
        mc = hist.to_grid_pdf(solved.grid, 1.0)
        assert distance(solved, mc).l1 <= 0.05


class TestDefaults:
    def test_default_grid_picks_loghead_for_singular_angle(self):
        assert default_grid(ANG10).spacing == "loghead"
        assert default_grid(ANG05).spacing == "uniform"
        assert default_grid(PURE_P).spacing == "uniform"

    def test_default_seed_matches_model(self, unit_grid):
        seed = default_seed_pdf(PURE_P, unit_grid)
        np.testing.assert_allclose(seed.values,
                                   exponential_pdf(unit_grid.nodes, 1.0))
        seed = default_seed_pdf(SAV05, unit_grid)
        assert seed.values[0] == 0.0
