import math

import numpy as np
import pytest
from scipy.integrate import quad

from formbound_lab import (
    BoxGrid,
    certificate_sum,
    drift_from_config,
    estimate_form_bound_numeric,
    hardy_certificate,
    ld_split_certificate,
    load_grid_drift,
    make_annulus_log_drift,
    make_grid_sampled_drift,
    make_hardy_drift,
    make_separable_drift,
    save_grid_drift,
    strichartz_certificate,
    sum_drifts,
    unit_ball_volume,
    weak_ld_norm,
    zero_drift,
)
from formbound_lab.drift import FormBoundCertificate


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def hardy_weak_norm_exact(beta, d):
    # super-level set {beta/|x| > s} is the ball of radius beta/s, so
    # s * |ball|^(1/d) = beta * Omega_d^(1/d) for every s
    return beta * unit_ball_volume(d) ** (1.0 / d)


def annulus_log_density(r, C, alpha, beta_exp):
    t = abs(r - 1.0)
    if t >= alpha or t <= 0.0:
        return 0.0
    return C / (t * (-math.log(t)) ** beta_exp)


def annulus_lp_radial_integral(p_half, C, alpha, beta_exp, cutoff, d=3):
    """integral over the annulus of |b|^(2 p_half) with |r-1| > cutoff, radially."""
    area = d * unit_ball_volume(d)  # surface area of the unit sphere

    def one_side(sgn):
        def integrand(t):
            r = 1.0 + sgn * t
            return area * r ** (d - 1) * (C / (t * (-math.log(t)) ** beta_exp)) ** p_half

        val, _ = quad(integrand, cutoff, alpha, limit=400)
        return val

    return one_side(-1.0) + one_side(+1.0)


def annulus_lp_log_integral(p_half, C, alpha, beta_exp, u_max):
    """Same t-integral without the surface geometry, in u = ln(1/t).

    integral of C^p_half e^{(p_half-1) u} u^{-beta_exp p_half} du from
    ln(1/alpha) to u_max; u_max plays the role of -ln(cutoff), so cutoffs
    far below floating-point resolution around |x| = 1 stay computable.
    """

    def integrand(u):
        return C**p_half * math.exp((p_half - 1.0) * u) * u ** (-beta_exp * p_half)

    val, _ = quad(integrand, math.log(1.0 / alpha), u_max, limit=400)
    return val


# ---------------------------------------------------------------------------
# constructors and evaluation
# ---------------------------------------------------------------------------


class TestHardyDrift:
    def test_point_values(self):
        b = make_hardy_drift(3, 0.5, -1)
        np.testing.assert_allclose(b([[1.0, 0.0, 0.0]]), [[-0.5, 0.0, 0.0]])
        # |b| = beta/|x| exactly: at |x| = 2 the magnitude is 0.5
        b2 = make_hardy_drift(3, 1.0, +1)
        np.testing.assert_allclose(b2([[0.0, 2.0, 0.0]]), [[0.0, 0.5, 0.0]])

    def test_matches_sqrt_delta_parametrization(self):
        # beta = sqrt(delta) (d-2)/2 with sqrt(delta)=1, d=4 gives beta=1
        b = make_hardy_drift(4, 1.0, +1)
        x = np.array([[0.5, -0.25, 1.0, 2.0]])
        r2 = float(np.sum(x**2))
        np.testing.assert_allclose(b(x), x / r2)

    def test_magnitude_exact(self, rng):
        b = make_hardy_drift(3, 0.7, +1)
        x = rng.normal(size=(50, 3))
        np.testing.assert_allclose(b.magnitude(x), 0.7 / np.linalg.norm(x, axis=1))

    def test_gradient_matches_finite_differences(self, rng):
        b = make_hardy_drift(3, 0.4, -1)
        x = rng.normal(size=(10, 3)) + 2.0
        G = b.gradient(x)
        h = 1e-6
        for c in range(3):
            e = np.zeros(3)
            e[c] = h
            fd = (b(x + e) - b(x - e)) / (2 * h)  # d_c b
            np.testing.assert_allclose(G[:, c, :], fd, rtol=1e-6, atol=1e-8)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            make_hardy_drift(2, 1.0)
        with pytest.raises(ValueError):
            make_hardy_drift(3, 0.0)
        with pytest.raises(ValueError):
            make_hardy_drift(3, 1.0, sign=2)


class TestAnnulusLogDrift:
    def test_zero_outside_annulus(self):
        b = make_annulus_log_drift(1.0, 0.5, 2.0)
        x = np.array([[2.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
        np.testing.assert_array_equal(b(x), np.zeros((2, 3)))

    def test_density_value(self):
        # |b|^2 = C / (| |x|-1 | (-ln| |x|-1 |)^beta) at | |x|-1 | = 0.25
        b = make_annulus_log_drift(1.0, 0.5, 2.0)
        x = np.array([[1.25, 0.0, 0.0]])
        expected_sq = 1.0 / (0.25 * (-math.log(0.25)) ** 2)
        np.testing.assert_allclose(b.magnitude(x) ** 2, [expected_sq], rtol=1e-12)

    def test_direction_radial(self):
        b = make_annulus_log_drift(2.0, 0.4, 1.5)
        x = np.array([[0.0, 0.9, 0.0]])
        v = b(x)[0]
        assert v[1] > 0 and v[0] == 0 and v[2] == 0

    def test_l2_integrable_but_not_l2plus(self):
        # radial quadrature oracle: the squared field integrates, |b|^(2+eps)
        # grows without bound as the exclusion around |x|=1 shrinks
        C, alpha, beta_exp = 1.0, 0.5, 2.0
        l2 = [annulus_lp_log_integral(1.0, C, alpha, beta_exp, u) for u in (30.0, 300.0)]
        assert abs(l2[1] - l2[0]) / l2[0] < 0.05  # converging tail
        lp = [annulus_lp_log_integral(1.25, C, alpha, beta_exp, u)
              for u in (20.0, 40.0, 80.0, 160.0)]
        assert lp[1] > 2 * lp[0] and lp[2] > 2 * lp[1] and lp[3] > 2 * lp[2]  # diverging

    def test_grid_integral_matches_radial_oracle(self):
        # with the near-sphere shell |r-1| < h/2 excluded, the 3-d midpoint
        # sum tracks the 1-d radial oracle; the raw sum (no exclusion) is
        # orders of magnitude larger because nodes land arbitrarily close to
        # the singular sphere, which is the L^(2+eps) blow-up itself
        C, alpha, beta_exp, eps = 1.0, 0.5, 2.0, 0.5
        b = make_annulus_log_drift(C, alpha, beta_exp)
        grid = BoxGrid(3, 2.0, 96)
        mags = b.magnitude_on(grid)
        t = np.abs(grid.radii() - 1.0)
        vals = np.where(np.isfinite(mags), mags, 0.0) ** (2 + eps)
        tamed = float(np.sum(vals[t >= grid.h / 2]) * grid.cell_volume)
        raw = float(np.sum(vals) * grid.cell_volume)
        oracle = annulus_lp_radial_integral((2 + eps) / 2.0, C, alpha, beta_exp, grid.h / 2)
        assert abs(tamed - oracle) / oracle < 0.3
        assert raw > 10 * oracle

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            make_annulus_log_drift(-1.0, 0.5, 2.0)
        with pytest.raises(ValueError):
            make_annulus_log_drift(1.0, 1.5, 2.0)
        with pytest.raises(ValueError):
            make_annulus_log_drift(1.0, 0.5, 1.0)


class TestOtherKinds:
    def test_zero(self):
        b = zero_drift(3)
        assert np.all(b([[1.0, 2.0, 3.0]]) == 0)

    def test_separable(self):
        s = np.linspace(-1, 1, 201)
        h = 1.0 - np.abs(s)
        b = make_separable_drift(3, s, h, T=[1.0, 0.0, 0.0], e=[0.0, 2.0, 0.0])
        v = b([[0.5, 9.0, 9.0]])[0]
        np.testing.assert_allclose(v, [0.0, 0.5, 0.0])  # e normalized, h(0.5)=0.5
        assert np.all(b([[3.0, 0.0, 0.0]]) == 0)  # outside the sampled range

    def test_sum_pointwise(self, rng):
        b1 = make_hardy_drift(3, 0.3, +1)
        b2 = make_hardy_drift(3, 0.2, -1)
        s = sum_drifts([b1, b2])
        x = rng.normal(size=(20, 3))
        np.testing.assert_allclose(s(x), b1(x) + b2(x))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sum_drifts([zero_drift(3), zero_drift(4)])


class TestGridSampledIO:
    def _field(self):
        grid = BoxGrid(3, 1.0, 8)
        rng = np.random.default_rng(7)
        samples = rng.normal(size=grid.shape + (3,))
        return make_grid_sampled_drift(grid, samples), samples

    def test_binary_roundtrip(self, tmp_path):
        field, samples = self._field()
        path = tmp_path / "drift.fbd"
        save_grid_drift(path, field)
        back = load_grid_drift(path)
        np.testing.assert_array_equal(back.params["samples"], samples)
        assert back.params["grid"] == field.params["grid"]

    def test_csv_roundtrip(self, tmp_path):
        field, samples = self._field()
        path = tmp_path / "drift.csv"
        save_grid_drift(path, field)
        back = load_grid_drift(path)
        np.testing.assert_array_equal(back.params["samples"], samples)

    def test_interpolation_at_nodes_is_exact(self):
        field, samples = self._field()
        grid = field.params["grid"]
        pts = grid.points()[::13]
        vals = field(pts)
        np.testing.assert_allclose(vals, samples.reshape(-1, 3)[::13], atol=1e-14)

    def test_config_roundtrip(self):
        b = make_hardy_drift(3, 0.25, -1)
        b2 = drift_from_config(b.to_config())
        x = np.array([[0.3, -0.4, 1.0]])
        np.testing.assert_array_equal(b(x), b2(x))


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


class TestCertificates:
    def test_hardy_values(self):
        assert hardy_certificate(4, 1.0).delta == pytest.approx(1.0)
        assert hardy_certificate(5, 1.5).delta == pytest.approx(1.0)
        assert hardy_certificate(3, 1e-9).delta == pytest.approx(0.0, abs=1e-15)
        assert hardy_certificate(3, 1.0).c_delta == 0.0

    def test_strichartz_values(self):
        assert strichartz_certificate(3, 0.0).delta == 0.0
        w4 = unit_ball_volume(4) ** 0.25
        assert strichartz_certificate(4, w4).delta == pytest.approx(1.0)

    def test_strichartz_hardy_consistency_exact(self):
        for d, beta in ((3, 0.4), (4, 1.0), (5, 0.7)):
            w = hardy_weak_norm_exact(beta, d)
            c = strichartz_certificate(d, w)
            assert c.delta == pytest.approx(hardy_certificate(d, beta).delta, rel=1e-12)

    def test_sum_rule(self):
        c = certificate_sum(FormBoundCertificate(1.0, 0.0, 0.0, "hardy_analytic"),
                            FormBoundCertificate(1.0, 0.0, 0.0, "hardy_analytic"))
        assert c.delta == pytest.approx(4.0)
        c2 = certificate_sum(FormBoundCertificate(0.25, 0.0, 0.0, "hardy_analytic"),
                             FormBoundCertificate(0.25, 0.0, 0.0, "hardy_analytic"))
        assert c2.delta == pytest.approx(1.0)
        z = certificate_sum(FormBoundCertificate(0.0, 0.0, 0.0, "hardy_analytic"),
                            FormBoundCertificate(0.3, 0.5, 0.0, "numeric_estimate"))
        assert z.delta == pytest.approx(0.3)
        assert z.c_delta == pytest.approx(1.0)  # recorded rule: 2(c1+c2)

    def test_scaling_is_exact_quadratic(self):
        for c in (0.5, 2.0, 3.0):
            base = hardy_certificate(3, 0.3)
            scaled = hardy_certificate(3, c * 0.3)
            assert scaled.delta == pytest.approx(c**2 * base.delta, rel=1e-14)
            s_base = strichartz_certificate(3, 0.2)
            s_scaled = strichartz_certificate(3, c * 0.2)
            assert s_scaled.delta == pytest.approx(c**2 * s_base.delta, rel=1e-14)

    def test_ld_split(self):
        c = ld_split_certificate(3, 0.1, 2.0)
        assert c.delta > 0 and c.lam == pytest.approx(400.0)
        assert c.c_delta == pytest.approx(c.lam * c.delta)

    def test_hardy_rejects_additive_term(self):
        with pytest.raises(ValueError):
            FormBoundCertificate(1.0, 0.5, 0.0, "hardy_analytic")


# ---------------------------------------------------------------------------
# weak L^d norm
# ---------------------------------------------------------------------------


class TestWeakLdNorm:
    def test_zero_field(self):
        est = weak_ld_norm(zero_drift(3), BoxGrid(3, 2.0, 16))
        assert est.value == 0.0 and est.stabilized

    def test_hardy_within_five_percent_128(self):
        beta, d = 0.4, 3
        grid = BoxGrid(d, 2.0, 128)
        est = weak_ld_norm(make_hardy_drift(d, beta, +1), grid)
        exact = hardy_weak_norm_exact(beta, d)
        assert abs(est.value - exact) / exact < 0.05
        assert est.stabilized

    def test_bounded_field_histogram_consistency(self):
        # constant magnitude M on the whole box: the estimate must equal
        # max over the s-grid of s * min(V, vol)^(1/d) computed from the
        # same histogram, which is M * (box volume)^(1/d) at s -> M
        grid = BoxGrid(3, 1.0, 16)
        M = 2.0
        samples = np.zeros(grid.shape + (3,))
        samples[..., 0] = M
        field = make_grid_sampled_drift(grid, samples)
        est = weak_ld_norm(field, grid)
        box_volume = grid.size * grid.cell_volume
        # the top s level sits just below M (strict super-level sets)
        assert est.value == pytest.approx(M * box_volume ** (1 / 3), rel=0.02)

    def test_singular_node_counts_in_every_level(self):
        b = make_hardy_drift(3, 0.2, +1)
        grid = BoxGrid(3, 2.0, 16)
        mags = b.magnitude_on(grid)
        assert np.isinf(mags).sum() == 1  # the origin node


# ---------------------------------------------------------------------------
# numeric form bound
# ---------------------------------------------------------------------------


class TestFormBoundNumeric:
    def test_zero_field(self):
        est = estimate_form_bound_numeric(zero_drift(3), 1.0, BoxGrid(3, 1.0, 16))
        assert est.delta_est == 0.0 and est.converged

    def test_constant_field_spectrum_oracle(self):
        # |b| = M constant: operator is M^2 (lam - Lap)^-1 with top of the
        # spectrum M^2/lam at the zero mode
        grid = BoxGrid(3, 1.0, 16)
        M, lam = 1.5, 0.7
        samples = np.zeros(grid.shape + (3,))
        samples[..., 1] = M
        field = make_grid_sampled_drift(grid, samples)
        est = estimate_form_bound_numeric(field, lam, grid, iters=2000, tol=1e-12)
        assert est.delta_est == pytest.approx(M**2 / lam, rel=1e-3)

    def test_capped_hardy_below_analytic_and_refining(self):
        # convergence toward the sharp Hardy constant is logarithmic in the
        # resolved scale range; the contract is monotone approach from below
        beta, d = 0.5, 3
        analytic = hardy_certificate(d, beta).delta
        vals = []
        for n in (24, 32, 48):
            est = estimate_form_bound_numeric(make_hardy_drift(d, beta, +1), 1.0,
                                              BoxGrid(d, 2.0, n), iters=400, tol=1e-10)
            vals.append(est.delta_est)
        assert all(v <= analytic * 1.1 for v in vals)
        assert vals[0] < vals[1] < vals[2]
        assert vals[-1] > 0.3 * analytic

    def test_monotone_in_field_strength(self):
        grid = BoxGrid(3, 2.0, 32)
        e1 = estimate_form_bound_numeric(make_hardy_drift(3, 0.15, +1), 1.0, grid,
                                         iters=600, tol=1e-11)
        e2 = estimate_form_bound_numeric(make_hardy_drift(3, 0.30, +1), 1.0, grid,
                                         iters=600, tol=1e-11)
        assert e2.delta_est >= e1.delta_est
        assert e2.delta_est / e1.delta_est == pytest.approx(4.0, rel=0.01)

    def test_lambda_zero_rejected_on_periodic_box(self):
        with pytest.raises(ValueError):
            estimate_form_bound_numeric(zero_drift(3), 0.0, BoxGrid(3, 1.0, 8))
