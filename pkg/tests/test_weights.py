import math

import numpy as np
import pytest
from scipy.integrate import quad

from formbound_lab import BoxGrid, WeightParams, grad_rho_ratio_bound, rho
from formbound_lab.drift import unit_ball_volume
from formbound_lab.weights import rho_on_grid, weight_mass, weighted_inner, weighted_lp_norm


def radial_weight_mass(params, r_max):
    """1-d quadrature oracle for the integral of rho over the ball |x| < r_max."""
    area = params.d * unit_ball_volume(params.d)

    def integrand(r):
        return area * r ** (params.d - 1) * (1.0 + params.kappa * r * r) ** (-params.theta)

    val, _ = quad(integrand, 0.0, r_max, limit=200)
    return val


class TestRho:
    def test_point_values(self):
        p = WeightParams(1.0, 2.0, 3)
        assert rho(p, [[0.0, 0.0, 0.0]])[0] == 1.0
        assert rho(p, [[1.0, 0.0, 0.0]])[0] == pytest.approx(0.25)
        p2 = WeightParams(0.01, 2.0, 3)
        assert rho(p2, [[10.0, 0.0, 0.0]])[0] == pytest.approx(0.25)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            WeightParams(0.0, 2.0, 3)
        with pytest.raises(ValueError):
            WeightParams(1.0, 1.5, 3)  # theta must exceed d/2


class TestRatioBound:
    def test_examples(self):
        rep = grad_rho_ratio_bound(WeightParams(0.04, 2.0, 3), scan_points=10_000)
        assert rep.bound == pytest.approx(0.4)
        assert rep.maximizer_radius == pytest.approx(5.0)
        assert rep.holds

        rep2 = grad_rho_ratio_bound(WeightParams(1.0, 3.0, 3), scan_points=10_000)
        assert rep2.bound == pytest.approx(3.0)
        assert rep2.maximizer_radius == pytest.approx(1.0)
        assert rep2.holds

    def test_flat_weight_limit(self):
        rep = grad_rho_ratio_bound(WeightParams(1e-12, 2.0, 3), scan_points=1000)
        assert rep.bound < 1e-5

    def test_million_point_scan_equality(self):
        rep = grad_rho_ratio_bound(WeightParams(1e-4, 2.0, 3), scan_points=1_000_000)
        assert rep.holds
        assert rep.equality_gap <= 1e-10
        assert rep.scan_argmax == pytest.approx(1.0 / math.sqrt(1e-4))

    def test_pointwise_inequality_on_grid(self):
        # |grad rho| <= theta sqrt(kappa) rho at every node, several (kappa, theta)
        grid = BoxGrid(3, 3.0, 24)
        pts = grid.points()
        for kappa, theta in ((0.01, 2.0), (0.5, 1.6), (2.0, 4.0)):
            p = WeightParams(kappa, theta, 3)
            r = np.linalg.norm(pts, axis=1)
            ratio = 2 * kappa * theta * r / (1 + kappa * r * r)
            assert np.all(ratio <= theta * math.sqrt(kappa) * (1 + 1e-12))


class TestWeightedNorms:
    def test_constant_function_mass(self):
        p = WeightParams(1.0, 2.0, 3)
        grid = BoxGrid(3, 6.0, 64)
        ones = np.ones(grid.shape)
        val = weighted_lp_norm(ones, 2.0, p, grid) ** 2
        # oracle: radial integral over the inscribed ball plus corner remainder
        # bounded by the shell integral; compare against full-box quadrature
        # with the ball oracle within 1% after restricting to the ball
        mask = grid.radii() <= grid.half_width
        ball_val = float(np.sum(rho_on_grid(p, grid)[mask]) * grid.cell_volume)
        oracle = radial_weight_mass(p, grid.half_width)
        assert abs(ball_val - oracle) / oracle < 0.01
        assert val >= ball_val

    def test_zero_field(self):
        p = WeightParams(1.0, 2.0, 3)
        grid = BoxGrid(3, 1.0, 8)
        assert weighted_lp_norm(np.zeros(grid.shape), 2.0, p, grid) == 0.0

    def test_p_homogeneity_exact(self, rng):
        p = WeightParams(0.3, 2.5, 3)
        grid = BoxGrid(3, 1.0, 8)
        f = rng.normal(size=grid.shape)
        for c in (2.0, 0.5):
            for pp in (1.0, 2.0, 3.0):
                assert weighted_lp_norm(c * f, pp, p, grid) == pytest.approx(
                    abs(c) * weighted_lp_norm(f, pp, p, grid), rel=1e-12)

    def test_mass_decreasing_in_theta(self):
        grid = BoxGrid(3, 8.0, 48)
        masses = [weight_mass(WeightParams(0.5, th, 3), grid) for th in (1.6, 2.0, 3.0)]
        assert masses[0] > masses[1] > masses[2] > 0

    def test_cauchy_schwarz(self, rng):
        p = WeightParams(0.2, 2.0, 3)
        grid = BoxGrid(3, 1.0, 8)
        for _ in range(5):
            f = rng.normal(size=grid.shape)
            g = rng.normal(size=grid.shape)
            lhs = weighted_inner(f, g, p, grid) ** 2
            rhs = (weighted_lp_norm(f, 2.0, p, grid) * weighted_lp_norm(g, 2.0, p, grid)) ** 2
            assert lhs <= rhs * (1 + 1e-12)
