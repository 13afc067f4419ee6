import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from mvcontract.distance import (GammaSpec, build_psi_eigen, build_psi_explicit,
                                 c_psi, identity_psi, rate_constants_g2)
from mvcontract.errors import IntegrabilityError
from mvcontract.jsonio import read_csv


def eigen_oracle(alpha, k_drift, l):
    """First Dirichlet-Neumann eigenvalue from the closed-form solution.

    The constant-coefficient equation 2a y'' + K y' + q y = 0 with y(0)=0
    has y'(l) expressible through the characteristic roots; the eigenvalue is
    the smallest positive root of y'(l) = 0 over the oscillatory and real
    regimes.  Independent of the shooting integrator.
    """
    def slope_at_l(q):
        disc = k_drift**2 - 8.0 * alpha * q
        if disc > 0:
            m1 = (-k_drift + math.sqrt(disc)) / (4.0 * alpha)
            m2 = (-k_drift - math.sqrt(disc)) / (4.0 * alpha)
            # y = (e^{m1 r} - e^{m2 r}) / (m1 - m2), so y'(l) ~ m1 e^{m1 l} - m2 e^{m2 l}
            return m1 * math.exp(m1 * l) - m2 * math.exp(m2 * l)
        if disc == 0:
            m = -k_drift / (4.0 * alpha)
            return math.exp(m * l) * (1.0 + m * l)
        w = math.sqrt(-disc) / (4.0 * alpha)
        m = -k_drift / (4.0 * alpha)
        return math.exp(m * l) * (w * math.cos(w * l) + m * math.sin(w * l))

    q_scale = 2.0 * alpha * (math.pi / (2 * l)) ** 2 + k_drift**2 / (8 * alpha)
    grid = np.linspace(1e-10 * q_scale, 8.0 * q_scale, 40001)
    vals = np.array([slope_at_l(q) for q in grid])
    idx = np.where(np.sign(vals[1:]) != np.sign(vals[:-1]))[0]
    assert idx.size > 0, "oracle found no sign change"
    return brentq(slope_at_l, grid[idx[0]], grid[idx[0] + 1], xtol=1e-15, rtol=1e-15)


class TestEigenPsi:
    def test_closed_form_k0(self):
        psi, q = build_psi_eigen(1.0, 0.0, 1.0)
        assert q == pytest.approx(math.pi**2 / 2.0, rel=1e-12)
        r = np.linspace(0, 1, 33)
        np.testing.assert_allclose(psi(r), (2 / math.pi) * np.sin(math.pi * r / 2),
                                   atol=2e-10)

    def test_closed_form_scaling(self):
        _, q = build_psi_eigen(2.0, 0.0, 2.0)
        assert q == pytest.approx(math.pi**2 / 4.0, rel=1e-12)

    @pytest.mark.parametrize("alpha,k,l", [
        (1.0, 1.0, 1.0),      # spec case: tan(w) = 4w, q = (16 w^2 + 1)/8
        (2.0, 0.5, 1.5),
        (0.7, 2.0, 0.8),
        (1.0, 3.0, 2.0),      # real-root regime (l > 4 alpha / K)
        (0.5, 1.5, 3.0),
    ])
    def test_transcendental_oracle(self, alpha, k, l):
        _, q = build_psi_eigen(alpha, k, l)
        assert q == pytest.approx(eigen_oracle(alpha, k, l), rel=1e-8)

    def test_spec_case_characteristic_equation(self):
        # for alpha=1, K=1, l=1 the eigenvalue satisfies tan(w) = 4w with
        # w = sqrt(8q - 1)/4
        _, q = build_psi_eigen(1.0, 1.0, 1.0)
        w = math.sqrt(8 * q - 1) / 4.0
        assert math.tan(w) == pytest.approx(4 * w, rel=1e-7)

    def test_ode_residual_at_interior_nodes(self):
        for alpha, k, l in [(1.0, 0.0, 1.0), (1.0, 2.0, 2.0), (0.5, 0.3, 5.0)]:
            psi, q = build_psi_eigen(alpha, k, l)
            res = 2 * alpha * psi.deriv2 + k * psi.deriv1 + q * psi.values
            assert np.max(np.abs(res[1:-1])) <= 1e-8 * np.max(np.abs(psi.values))

    def test_truncated_class_shape(self):
        psi, _ = build_psi_eigen(1.0, 0.5, 2.0)
        assert psi.values[0] == 0.0
        assert psi.deriv1[-1] == 0.0
        assert np.all(psi.deriv1[:-1] > 0)
        assert psi.concave
        assert psi.sup_deriv == psi.deriv1[0]
        # constant extension beyond the cutoff
        assert psi(5.0) == pytest.approx(psi.values[-1], rel=1e-12)
        assert psi.deriv(5.0) == 0.0

    def test_bracket_failure_reports(self):
        from mvcontract.errors import SolverError
        with pytest.raises((SolverError, ValueError)):
            build_psi_eigen(-1.0, 0.0, 1.0)


class TestCpsi:
    def test_identity(self):
        assert c_psi(identity_psi()) == 1.0

    def test_sine(self):
        psi, _ = build_psi_eigen(1.0, 0.0, 1.0)
        assert c_psi(psi) == pytest.approx(1.0, abs=1e-12)

    def test_explicit_concave(self):
        g = GammaSpec(theta0=0.5, theta1=1.0, theta2=2.0, kappa_puncture=1.0,
                      lambda_iso=1.0)
        psi = build_psi_explicit(g)
        assert c_psi(psi) == pytest.approx(1.0, abs=1e-6)

    def test_convex_tabulated(self):
        from mvcontract.distance import PsiFunction
        r = np.linspace(0.0, 4.0, 257)
        psi = PsiFunction(r, r + r**3, 1 + 3 * r**2, 6 * r, l=None, concave=False)
        # sup r psi'/psi = sup (1+3r^2)/(1+r^2) -> approaches 3
        assert 2.5 < psi.c_psi < 3.0


class TestExplicitPsi:
    def gamma_case(self):
        return GammaSpec(theta0=1.0, theta1=1.0, theta2=2.0, kappa_puncture=1.0,
                         lambda_iso=1.0)

    def test_r0_and_sign_pattern(self):
        g = self.gamma_case()
        assert g.r0 == pytest.approx(math.sqrt(3.0), rel=1e-14)
        assert g.gamma(g.r0) == pytest.approx(0.0, abs=1e-12)
        psi = build_psi_explicit(g)
        r = psi.grid[1:]
        gam = g.gamma(r)
        assert np.all(gam[r <= g.r0 * (1 - 1e-12)] >= 0)
        assert np.all(gam[r > g.r0 * (1 + 1e-12)] < 0)

    def test_defining_ode_identity(self):
        g = self.gamma_case()
        psi = build_psi_explicit(g)
        lam2 = 2.0 * g.lambda_iso
        res = lam2 * psi.deriv2 + g.gamma(psi.grid) * psi.deriv1 + lam2 * psi.grid
        assert np.max(np.abs(res) / (1.0 + psi.grid)) <= 1e-6

    def test_derivative_tables_fd_consistent(self):
        # independent route: finite differences of the tabulated columns
        g = self.gamma_case()
        psi = build_psi_explicit(g)
        i = slice(64, -64)
        fd1 = np.gradient(psi.values, psi.grid)
        fd2 = np.gradient(psi.deriv1, psi.grid)
        assert np.max(np.abs(fd1[i] - psi.deriv1[i]) / psi.deriv1[i]) < 1e-3
        scale = np.abs(psi.deriv2[i]) + 1.0
        assert np.max(np.abs(fd2[i] - psi.deriv2[i]) / scale) < 2e-2

    def test_shape_invariants(self):
        g = self.gamma_case()
        psi = build_psi_explicit(g)
        assert psi.values[0] == 0.0
        assert np.all(psi.deriv1 > 0)
        assert np.all(np.diff(psi.values) > 0)
        assert np.all(psi.deriv2 <= 1e-9 * (1 + psi.grid))
        assert psi.concave
        assert psi.sup_deriv == psi.deriv1[0]

    def test_dpsi_zero_is_outer_integral(self):
        g = self.gamma_case()
        psi = build_psi_explicit(g)
        consts = rate_constants_g2(g, 0.0)
        assert psi.deriv1[0] == pytest.approx(consts.integral_i, rel=1e-9)

    def test_asymptotic_slope(self):
        g = GammaSpec(theta0=0.0, theta1=0.6, theta2=1.4, kappa_puncture=1.2,
                      lambda_iso=1.5)
        psi = build_psi_explicit(g)
        slope = 2.0 * g.lambda_iso / g.contraction_gap
        assert psi.deriv(10.0 * g.r0) == pytest.approx(slope, rel=0.011)

    def test_kappa_zero_linear_closed_form(self):
        g = GammaSpec(theta0=0.0, theta1=0.0, theta2=1.5, kappa_puncture=0.0,
                      lambda_iso=1.0)
        psi = build_psi_explicit(g)
        r = np.array([0.05, 0.4, 1.7, 3.0])
        np.testing.assert_allclose(psi(r), (2.0 / 1.5) * r, rtol=1e-10)

    def test_integrability_error(self):
        g = GammaSpec(theta0=2.0, theta1=1.0, theta2=2.0, kappa_puncture=1.0,
                      lambda_iso=1.0)
        with pytest.raises(IntegrabilityError):
            build_psi_explicit(g)
        with pytest.raises(IntegrabilityError):
            rate_constants_g2(g, 0.1)


class TestG2Constants:
    def test_varphi_zero_means_k_equals_q(self):
        g = GammaSpec(theta0=0.2, theta1=0.7, theta2=1.9, kappa_puncture=0.8,
                      lambda_iso=1.2)
        consts = rate_constants_g2(g, 0.0)
        assert consts.k == consts.q
        assert consts.theta == 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_positivity_iff_smallness_condition(self, seed):
        rng = np.random.default_rng(seed)
        g = GammaSpec(theta0=float(rng.uniform(0, 0.5)),
                      theta1=float(rng.uniform(0, 1.5)),
                      theta2=float(rng.uniform(1.0, 2.5)),
                      kappa_puncture=float(rng.uniform(0, 2.0)),
                      lambda_iso=float(rng.uniform(0.5, 2.0)))
        for varphi in (0.3 * g.contraction_gap, 1e-4, 0.5):
            consts = rate_constants_g2(g, varphi)
            assert (consts.k > 0) == consts.nc_ok == (varphi < consts.nc_bound)

    def test_outer_integral_against_quad_oracle(self):
        # second, independent quadrature scheme (adaptive scipy.quad)
        g = GammaSpec(theta0=0.0, theta1=0.0, theta2=1.0, kappa_puncture=1.0,
                      lambda_iso=1.0)
        consts = rate_constants_g2(g, 0.0)

        def integrand(t):
            return t * math.exp(g.gamma_integral(t) / (2.0 * g.lambda_iso))

        oracle, err = quad(integrand, 0.0, 60.0, epsabs=1e-12, epsrel=1e-12,
                           limit=400)
        assert consts.integral_i == pytest.approx(oracle, rel=1e-6)
        assert consts.q == pytest.approx(2.0 / oracle, rel=1e-6)


def test_table_csv_round_trip(tmp_path):
    psi, _ = build_psi_eigen(1.0, 0.7, 1.5, n_nodes=64)
    path = tmp_path / "psi.csv"
    psi.to_csv(path)
    names, data = read_csv(path)
    assert names == ["r", "psi", "dpsi", "ddpsi"]
    np.testing.assert_array_equal(data[:, 0], psi.grid)
    np.testing.assert_array_equal(data[:, 1], psi.values)
