import math

import numpy as np
import pytest

from mvcontract.distance import build_psi_eigen, identity_psi
from mvcontract.model import CoefficientSet, LyapunovSpec
from mvcontract.rates import (SearchBudget, alpha_lb, fit_lyapunov_constants,
                              kappa_lb, lambda_lb, pattern_search, puncture_mass,
                              theorem22_rate)

BUDGET = SearchBudget(n_starts=24, n_iters=120)


def quad_spec(k0, k1, beta=1.0, l=4.0):
    return LyapunovSpec(
        v=lambda x: np.einsum("ni,ni->n", x, x),
        grad_v=lambda x: 2.0 * x,
        k0=k0, k1=k1, beta=beta, l=l,
        hess_v=lambda x: np.broadcast_to(2.0 * np.eye(x.shape[1]),
                                         (x.shape[0], x.shape[1], x.shape[1])).copy())


class TestPatternSearch:
    def test_finds_quadratic_max(self):
        res = pattern_search(lambda z: -(z[:, 0] - 1.3) ** 2 - (z[:, 1] + 0.7) ** 2,
                             np.zeros((4, 2)), BUDGET, maximize=True)
        assert res.value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(res.witness, [1.3, -0.7], atol=1e-6)


class TestKappa:
    def test_quadratic_weight_closed_form(self):
        # dense 2-d grid oracle: objective depends on s = V(x)+V(y), minimized
        # at x = -y = l/2, giving (l^2/2 - 2)/(1 + l^2/2) = 2/3
        res = kappa_lb(quad_spec(1.0, 1.0), l=4.0, beta=1.0, dim=1, budget=BUDGET)
        grid = np.linspace(-20, 20, 401)
        gx, gy = np.meshgrid(grid, grid)
        # infimum over the open region |x-y| > l equals the closure value
        mask = np.abs(gx - gy) >= 4.0
        obj = (gx**2 + gy**2 - 2.0) / (1.0 + gx**2 + gy**2)
        oracle = float(np.min(obj[mask]))
        assert res.value == pytest.approx(2.0 / 3.0, abs=1e-6)
        assert res.value == pytest.approx(oracle, abs=1e-4)
        x, y = res.witness[0], res.witness[1]
        assert abs(abs(x - y) - 4.0) < 1e-6
        assert x == pytest.approx(-y, abs=1e-5)

    def test_witness_reproduces_value(self):
        spec = quad_spec(1.0, 1.0)
        res = kappa_lb(spec, l=4.0, beta=1.0, dim=1, budget=BUDGET)
        x = res.witness[:1].reshape(1, 1)
        y = res.witness[1:].reshape(1, 1)
        vx, vy = spec.v(x)[0], spec.v(y)[0]
        again = (spec.k1 * (vx + vy) - 2 * spec.k0) / (1.0 + vx + vy)
        assert res.value == pytest.approx(again, rel=1e-10)

    def test_positive_for_large_cutoff(self):
        res = kappa_lb(quad_spec(1.0, 1.0), l=10.0, beta=0.5, dim=1, budget=BUDGET)
        assert res.value > 0

    def test_k1_zero_negative_but_bounded(self):
        res = kappa_lb(quad_spec(1.0, 0.0), l=4.0, beta=1.0, dim=1, budget=BUDGET)
        assert -2.0 <= res.value < 0
        # infimum -2 K0 / (1/beta + V+V) at the smallest admissible V
        assert res.value == pytest.approx(-2.0 / (1.0 + 8.0), abs=1e-6)

    def test_monotone_in_cutoff(self):
        vals = [kappa_lb(quad_spec(1.0, 1.0), l=l, beta=1.0, dim=1, budget=BUDGET).value
                for l in (3.0, 4.0, 6.0, 9.0)]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


class TestAlpha:
    def test_constant_sigma_quadratic_weight(self):
        # second term vanishes; sup 2|x-y| / (|x-y| (1/beta + V+V)) = 2 beta at 0
        c = CoefficientSet(dim=1, alpha=1.0, base_drift=lambda x: -x)
        psi, _ = build_psi_eigen(1.0, 0.0, 4.0, n_nodes=128)
        for beta in (0.5, 0.1):
            res = alpha_lb(c, quad_spec(1.0, 1.0, beta=beta), psi, l=4.0,
                           beta=beta, budget=BUDGET)
            assert res.value == pytest.approx(2.0 * beta, rel=1e-4)

    def test_vanishes_as_beta_to_zero(self):
        c = CoefficientSet(dim=1, alpha=1.0, base_drift=lambda x: -x)
        psi, _ = build_psi_eigen(1.0, 0.0, 4.0, n_nodes=128)
        vals = [alpha_lb(c, quad_spec(1.0, 1.0, beta=b), psi, l=4.0, beta=b,
                         budget=BUDGET).value for b in (0.3, 0.03, 0.003)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 0.01

    def test_monotone_in_beta(self):
        c = CoefficientSet(dim=1, alpha=1.0, base_drift=lambda x: -x)
        psi, _ = build_psi_eigen(1.0, 0.0, 4.0, n_nodes=128)
        vals = [alpha_lb(c, quad_spec(1.0, 1.0, beta=b), psi, l=4.0, beta=b,
                         budget=BUDGET).value for b in (0.01, 0.1, 0.5, 1.0)]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_linear_sigma_against_grid_oracle(self):
        def sig(x):
            return (0.1 * x).reshape(-1, 1, 1)

        c = CoefficientSet(dim=1, alpha=1.0, base_drift=lambda x: -x, sigma_hat=sig)
        spec = quad_spec(1.0, 1.0, beta=0.5)
        psi, _ = build_psi_eigen(1.0, 0.0, 4.0, n_nodes=128)
        res = alpha_lb(c, spec, psi, l=4.0, beta=0.5, budget=BUDGET)

        # dense grid oracle over pairs with delta < |x-y| < l
        grid = np.linspace(-10, 10, 1201)
        gx, gy = np.meshgrid(grid, grid)
        gap = np.abs(gx - gy)
        mask = (gap > 4e-6) & (gap < 4.0)
        num = 1.0 * np.abs(2 * gx - 2 * gy) + np.abs(
            (0.1 * gx - 0.1 * gy) * (0.1 * gx * 2 * gx + 0.1 * gy * 2 * gy))
        with np.errstate(invalid="ignore", divide="ignore"):
            obj = num / (gap * (2.0 + gx**2 + gy**2))
        oracle = float(np.max(obj[mask]))
        assert res.value == pytest.approx(oracle, rel=1e-3)

    def test_witness_reproduces_value(self):
        c = CoefficientSet(dim=1, alpha=1.0, base_drift=lambda x: -x)
        spec = quad_spec(1.0, 1.0, beta=0.25)
        psi, _ = build_psi_eigen(1.0, 0.0, 4.0, n_nodes=128)
        res = alpha_lb(c, spec, psi, l=4.0, beta=0.25, budget=BUDGET)
        x, y = res.witness[:1].reshape(1, 1), res.witness[1:].reshape(1, 1)
        gap = abs(float(x[0, 0] - y[0, 0]))
        num = np.abs(spec.grad_v(x) - spec.grad_v(y))[0, 0]
        again = psi.c_psi * num / (gap * (4.0 + spec.v(x)[0] + spec.v(y)[0]))
        assert res.value == pytest.approx(again, rel=1e-10)


class TestLambdaAssembly:
    def test_min_of_arguments(self):
        cert = lambda_lb(kappa=2.0 / 3.0, q_l=math.pi**2 / 2.0, k0=1.0,
                         beta=0.01, alpha_bound=0.02, theta=0.0)
        assert cert.lambda_lb == min(2.0 / 3.0, math.pi**2 / 2 - 0.02 - 0.02)
        assert cert.lambda_lb == 2.0 / 3.0
        assert cert.theorem_rate == cert.lambda_lb

    def test_boundary_flagged_noncontractive(self):
        cert = lambda_lb(kappa=0.5, q_l=1.0, k0=1.0, beta=0.1,
                         alpha_bound=0.1, theta=0.5)
        assert cert.theorem_rate == 0.0
        assert not cert.contractive


class TestTheorem22:
    def test_example_rate(self):
        cert = theorem22_rate(1.0, 0.2, 0.2)
        assert cert.theorem_rate == pytest.approx(0.6)
        assert cert.contractive

    def test_zero_interaction(self):
        assert theorem22_rate(1.0, 0.0, 0.0).theorem_rate == 1.0

    def test_noncontractive_flag(self):
        cert = theorem22_rate(1.0, 0.6, 0.6)
        assert cert.theorem_rate == pytest.approx(-0.2)
        assert not cert.contractive


class TestPunctureMass:
    def test_always_below_threshold(self):
        sb = lambda x: np.full(x.shape[0], -2.0)
        assert puncture_mass(sb, theta2=1.0, dim=1, n_lines=50) == 0.0

    def test_interval_length(self):
        sb = lambda x: np.where(np.abs(x[:, 0]) < 1.0, 0.0, -5.0)
        got = puncture_mass(sb, theta2=1.0, dim=1, n_lines=50)
        assert got == pytest.approx(2.0, abs=1e-9)

    def test_double_well_bound(self):
        # granular drift: S_b = -(3x^2 - 1) - eps_w, super-level set (-1, 1)
        eps_w = 0.05
        sb = lambda x: -(3.0 * np.einsum("ni,ni->n", x, x) - 1.0) - eps_w
        lambda0 = 1.0
        for dim in (1, 2):
            got = puncture_mass(sb, theta2=2.0 + eps_w, dim=dim, n_lines=200)
            assert got <= 4.0 * lambda0 + 1e-6
            assert got == pytest.approx(2.0, abs=1e-6)

    def test_translation_and_rotation_invariance(self):
        def ball(x):
            return np.where(np.linalg.norm(x, axis=1) < 1.5, 1.0, -5.0)

        def shifted(x):
            return ball(x - np.array([2.0, -1.0]))

        a = puncture_mass(ball, theta2=2.0, dim=2, n_lines=400, seed=3)
        b = puncture_mass(shifted, theta2=2.0, dim=2, n_lines=400, seed=4,
                          center_radius=6.0)
        assert a == pytest.approx(3.0, abs=1e-3)
        assert b == pytest.approx(a, abs=5e-3)

    def test_unbounded_reports_infinity(self):
        sb = lambda x: np.zeros(x.shape[0])
        assert puncture_mass(sb, theta2=1.0, dim=1, n_lines=4,
                             max_radius=64.0) == math.inf


def test_fit_lyapunov_constants_ou():
    c = CoefficientSet(dim=1, alpha=2.0, base_drift=lambda x: -x)
    spec = quad_spec(0.0, 0.0)
    probe = np.linspace(-8, 8, 201).reshape(-1, 1)
    pairs = fit_lyapunov_constants(c, spec, probe, [np.zeros((1, 1))],
                                   k1_grid=[2.0, 1.0])
    # LV = 2 - 2 x^2, so K1=2 -> K0=2 and K1=1 -> K0 = max(2 - x^2) = 2
    assert pairs[0] == (2.0, pytest.approx(2.0))
    assert pairs[1] == (1.0, pytest.approx(2.0))
