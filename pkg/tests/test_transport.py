import itertools
import math

import numpy as np
import pytest

from mvcontract.distance import PsiFunction, build_psi_eigen, identity_psi
from mvcontract.errors import DegenerateCouplingError, DomainError
from mvcontract.transport import (CostSpec, cost_matrix, d_phi_distance,
                                  empirical_distance, empirical_ratio_distance,
                                  optimal_assignment, phi_cost, plain_cost,
                                  sinkhorn_distance, weighted_cost)


def brute_force_min(cost: CostSpec, x, y):
    """Exhaustive assignment minimum; the independent oracle for small n."""
    c = cost_matrix(cost, x, y)
    n = c.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, float(np.sum(c[np.arange(n), perm])))
    return best / n


def concave_psi(r_max=20.0, n=512):
    r = np.linspace(0.0, r_max, n)
    return PsiFunction(r, np.sqrt(r), np.concatenate([[10.0], 0.5 / np.sqrt(r[1:])]),
                       np.concatenate([[0.0], -0.25 * r[1:] ** -1.5]),
                       l=None, concave=True)


def strictly_convex_psi(r_max=64.0, n=1024):
    # psi(r) = r + r^2: strictly convex, so the 1-d optimal matching is unique
    r = np.linspace(0.0, r_max, n)
    return PsiFunction(r, r + r**2, 1.0 + 2.0 * r, np.full_like(r, 2.0),
                       l=None, concave=False)


def quad_v(x):
    return np.einsum("ni,ni->n", x, x)


class TestEmpiricalDistance:
    def test_identical_clouds_zero(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 2))
        for cost in (plain_cost(), weighted_cost(identity_psi(), quad_v, 0.5)):
            assert empirical_distance(cost, x, x) == 0.0

    def test_translation_1d(self):
        x = np.array([[0.0], [2.0]])
        y = np.array([[1.0], [3.0]])
        assert empirical_distance(plain_cost(), x, y) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_weighted_2d_against_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(8, 2))
        y = rng.normal(size=(8, 2)) + 0.5
        psi, _ = build_psi_eigen(1.0, 0.0, 4.0, n_nodes=256)
        cost = weighted_cost(psi, quad_v, 0.3)
        got = empirical_distance(cost, x, y)
        assert got == pytest.approx(brute_force_min(cost, x, y), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_plain_concave_against_brute_force(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(7, 1)) * 3
        y = rng.normal(size=(7, 1)) * 3
        cost = CostSpec(psi=concave_psi())
        got = empirical_distance(cost, x, y)
        assert got == pytest.approx(brute_force_min(cost, x, y), rel=1e-12)

    def test_concave_cost_beats_sorted_matching(self):
        # sorted matching is provably optimal only for convex costs
        x = np.array([[0.0], [1.0]])
        y = np.array([[1.05], [2.0]])
        cost = CostSpec(psi=concave_psi())
        sorted_val = float(np.mean(np.sqrt(np.abs(np.sort(x[:, 0]) - np.sort(y[:, 0])))))
        opt = empirical_distance(cost, x, y)
        assert opt == pytest.approx(brute_force_min(cost, x, y), rel=1e-12)
        assert opt < sorted_val - 0.05

    @pytest.mark.parametrize("seed", range(50))
    def test_sorted_fast_path_equals_lp_exactly(self, seed):
        # strictly convex cost: the optimum is unique, so both paths agree
        # to the last bit (linear cost admits tied optima that differ by ulps)
        rng = np.random.default_rng(1000 + seed)
        x = rng.normal(size=(256, 1)) * 2.0
        y = rng.normal(size=(256, 1)) * 2.0 + rng.uniform(-1, 1)
        cost = CostSpec(psi=strictly_convex_psi())
        fast = empirical_distance(cost, x, y, method="sorted")
        lp = empirical_distance(cost, x, y, method="lap")
        assert fast == lp  # exact float equality

    @pytest.mark.parametrize("seed", range(10))
    def test_sorted_fast_path_matches_lp_linear_cost(self, seed):
        # the linear cost has tied optima; values agree to accumulated ulps
        rng = np.random.default_rng(2000 + seed)
        x = rng.normal(size=(256, 1)) * 2.0
        y = rng.normal(size=(256, 1)) * 2.0 + 0.5
        fast = empirical_distance(plain_cost(), x, y, method="sorted")
        lp = empirical_distance(plain_cost(), x, y, method="lap")
        assert fast == pytest.approx(lp, rel=1e-13)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(12, 2))
        y = rng.normal(size=(12, 2))
        cost = weighted_cost(identity_psi(), quad_v, 0.2)
        assert empirical_distance(cost, x, y) == pytest.approx(
            empirical_distance(cost, y, x), rel=1e-12)

    def test_zero_iff_equal_multisets(self):
        x = np.array([[0.0], [1.0], [2.0]])
        y = x[::-1].copy()
        assert empirical_distance(plain_cost(), x, y) == 0.0
        y2 = y.copy()
        y2[0, 0] += 1e-3
        assert empirical_distance(plain_cost(), x, y2) > 0.0

    def test_never_exceeds_identity_pairing(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(32, 3))
        y = rng.normal(size=(32, 3))
        cost = plain_cost()
        paired = float(np.mean(np.linalg.norm(x - y, axis=1)))
        assert empirical_distance(cost, x, y) <= paired + 1e-12

    def test_empty_input_rejected(self):
        with pytest.raises(DomainError):
            empirical_distance(plain_cost(), np.zeros((0, 1)), np.zeros((0, 1)))

    def test_size_cap(self, monkeypatch):
        import mvcontract.transport as tr
        monkeypatch.setattr(tr, "MAX_ASSIGNMENT_SIZE", 4)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(5, 2))
        with pytest.raises(DomainError, match="cap"):
            empirical_distance(plain_cost(), x, x + 1.0, method="lap")

    def test_sinkhorn_near_exact(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(16, 1))
        y = rng.normal(size=(16, 1)) + 0.3
        exact = empirical_distance(plain_cost(), x, y)
        approx = sinkhorn_distance(plain_cost(), x, y, reg=2e-3)
        assert approx == pytest.approx(exact, rel=0.05)


class TestRatioDistance:
    def make_cost(self, beta=0.5, l=4.0):
        psi, _ = build_psi_eigen(1.0, 0.0, l, n_nodes=256)
        return weighted_cost(psi, quad_v, beta)

    def test_equal_clouds(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(5, 1))
        assert empirical_ratio_distance(self.make_cost(), x, x) == (0.0, 0.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_bracket_contains_permutation_infimum(self, seed):
        rng = np.random.default_rng(30 + seed)
        x = rng.normal(size=(4, 1))
        y = rng.normal(size=(4, 1)) + 0.5
        cost = self.make_cost()
        lower, upper = empirical_ratio_distance(cost, x, y)
        assert lower <= upper + 1e-12
        # brute-force the ratio over all couplings of the empirical measures;
        # a linear-fractional objective attains its infimum at a permutation
        c_num = cost_matrix(cost, x, y)
        gaps = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
        wts = (1.0 + cost.beta * quad_v(x)[:, None] + cost.beta * quad_v(y)[None, :])
        c_den = np.asarray(cost.psi.deriv(gaps)) * wts
        best = math.inf
        for perm in itertools.permutations(range(4)):
            idx = (np.arange(4), perm)
            den = float(np.sum(c_den[idx]))
            if den > 0:
                best = min(best, float(np.sum(c_num[idx])) / den)
        assert lower - 1e-12 <= best <= upper + 1e-12

    def test_beta_to_zero_recovers_plain(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(16, 1))
        y = rng.normal(size=(16, 1)) + 0.4
        psi, _ = build_psi_eigen(1.0, 0.0, 6.0, n_nodes=256)
        plain = empirical_distance(CostSpec(psi=psi), x, y)
        for beta in (1e-3, 1e-5):
            lower, upper = empirical_ratio_distance(weighted_cost(psi, quad_v, beta), x, y)
            # psi' ~ 1 near zero gap; both bounds approach the plain value
            assert lower == pytest.approx(plain, rel=0.05)
        assert upper > 0

    def test_degenerate_when_all_pairs_beyond_cutoff(self):
        psi, _ = build_psi_eigen(1.0, 0.0, 0.5, n_nodes=64)
        cost = weighted_cost(psi, quad_v, 0.1)
        x = np.array([[0.0], [10.0]])
        y = np.array([[40.0], [80.0]])
        with pytest.raises(DegenerateCouplingError):
            empirical_ratio_distance(cost, x, y)


class TestPhiDistance:
    def test_identity_phi_is_sorted_w1(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(64, 1))
        y = rng.normal(size=(64, 1)) + 0.7
        got = d_phi_distance([lambda r: r], x, y)
        expect = float(np.mean(np.abs(np.sort(x[:, 0]) - np.sort(y[:, 0]))))
        assert got == pytest.approx(expect, rel=1e-12)

    def test_equal_clouds_zero(self):
        x = np.array([[0.5, -1.0], [2.0, 0.0]])
        assert d_phi_distance([np.tanh, np.arctan], x, x) == 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_2d_against_brute_force(self, seed):
        rng = np.random.default_rng(40 + seed)
        x = rng.normal(size=(6, 2))
        y = rng.normal(size=(6, 2)) + 0.3
        phis = [lambda r: r + 0.2 * r**3, np.arcsinh]
        got = d_phi_distance(phis, x, y)
        assert got == pytest.approx(brute_force_min(phi_cost(phis), x, y), rel=1e-12)

    def test_non_monotone_phi_rejected(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([[2.0], [3.0]])
        with pytest.raises(DomainError, match="increasing"):
            d_phi_distance([lambda r: -r], x, y)


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec()  # neither mode
    with pytest.raises(ValueError):
        CostSpec(psi=identity_psi(), phi=(np.tanh,))  # both modes
    with pytest.raises(ValueError):
        CostSpec(psi=identity_psi(), v=quad_v, beta=0.0)  # weight without beta
