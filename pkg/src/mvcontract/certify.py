"""Family-specific rate-certificate pipelines.

Three assembly routes, one per theorem family:

* weighted (``ou``, ``example21``): fit Lyapunov constants on probe grids,
  build the Dirichlet-Neumann eigen psi on [0, l], evaluate kappa/alpha
  bounds by pattern search, and sweep (K1, l, beta) for the best
  lambda_{l,beta} - theta.  The interaction strength theta for the moment
  kernel follows the chain |b(x,mu)-b(x,nu)| <= eps * |d Phi/ds| *
  |log mu(V) - log nu(V)| with the log-moment difference controlled through
  the c0 comparison constant and the ratio quasi-distance.
* explicit (``granular``): measure the puncture mass of the expansive
  region, form the gamma envelope, and read q, theta, k off the closed
  integral formulas; the smallness condition is reported alongside.
* order (``orderpreserving``): the componentwise rate q - theta1 - theta2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .distance import (GammaSpec, PsiFunction, build_psi_eigen, build_psi_explicit,
                       identity_psi, rate_constants_g2)
from .errors import DomainError
from .model import LyapunovSpec, check_cc1, check_decomposition, evaluate_drift_batch
from .rates import (ExtremumResult, RateCertificate, SearchBudget, alpha_lb,
                    fit_lyapunov_constants, kappa_lb, lambda_lb, pattern_search,
                    puncture_mass, theorem22_rate)
from .rng import aux_generator
from .scenarios import Scenario

Array = np.ndarray

DEFAULT_BUDGET = SearchBudget(n_starts=24, n_iters=120)


@dataclass
class CertifiedScenario:
    certificate: RateCertificate
    psi: Optional[PsiFunction]
    lyapunov: Optional[LyapunovSpec] = None


def _radial_probe(dim: int, radius: float, n: int, rng) -> Array:
    ts = np.linspace(-radius, radius, n)
    pts = [np.zeros((1, dim))]
    dirs = [np.eye(dim)[i] for i in range(dim)]
    for _ in range(max(0, 3 - dim)):
        v = rng.normal(size=dim)
        dirs.append(v / np.linalg.norm(v))
    for u in dirs:
        pts.append(ts[:, None] * u[None, :])
    return np.vstack(pts)


def _law_probes(scenario: Scenario, rng, n: int = 256) -> list[Array]:
    d = scenario.dim
    probes = [scenario.mu0.draw(n, d, rng), scenario.nu0.draw(n, d, rng),
              np.zeros((1, d))]
    far = np.zeros((1, d))
    far[0, 0] = 5.0
    probes.append(far)
    return probes


def _drift_one_sided_lipschitz(scenario: Scenario, budget: SearchBudget) -> float:
    """sup over pairs of <b(x,mu)-b(y,mu), x-y>/|x-y|^2 (+ residual-noise term)."""
    coeffs = scenario.coefficients
    dim = coeffs.dim
    rng = aux_generator(budget.seed, tag=41)
    ens = scenario.mu0.draw(128, dim, rng)

    def objective(z):
        x, y = z[:, :dim], z[:, dim:]
        gap2 = np.einsum("ni,ni->n", x - y, x - y)
        bx = evaluate_drift_batch(coeffs, x, ens)
        by = evaluate_drift_batch(coeffs, y, ens)
        val = np.einsum("ni,ni->n", bx - by, x - y)
        if coeffs.sigma_hat is not None:
            ds = coeffs.sigma_hat(x) - coeffs.sigma_hat(y)
            val = val + 0.5 * np.einsum("nij,nij->n", ds, ds)
        return val / np.maximum(gap2, 1e-24)

    def project(z):
        x, y = z[:, :dim], z[:, dim:]
        gap = np.linalg.norm(x - y, axis=1)
        bad = gap < 1e-4
        if np.any(bad):
            z = z.copy()
            z[bad, 0] += 1e-3
        return z

    starts = []
    for r in np.linspace(0.0, 8.0, 9):
        for gap in (0.01, 0.5, 2.0):
            s = np.zeros(2 * dim)
            s[0] = r + 0.5 * gap
            s[dim] = r - 0.5 * gap
            starts.append(s)
            s2 = np.zeros(2 * dim)
            s2[0] = r + 0.5 * gap
            s2[dim] = -(r + 0.5 * gap)
            starts.append(s2)
    res = pattern_search(objective, np.array(starts), budget, maximize=True,
                         project=project)
    return max(0.0, res.value)


def _comparison_constant_c0(lyap: LyapunovSpec, psi: PsiFunction, dim: int,
                            budget: SearchBudget) -> float:
    """sup |V(x)-V(y)| / (psi(|x-y|) (V(x)+V(y))) by pattern search."""

    def objective(z):
        x, y = z[:, :dim], z[:, dim:]
        gap = np.linalg.norm(x - y, axis=1)
        vx = np.asarray(lyap.v(x))
        vy = np.asarray(lyap.v(y))
        psi_val = np.asarray(psi(gap))
        return np.abs(vx - vy) / np.maximum(psi_val * (vx + vy), 1e-300)

    def project(z):
        x, y = z[:, :dim], z[:, dim:]
        gap = np.linalg.norm(x - y, axis=1)
        bad = gap < 1e-8
        if np.any(bad):
            z = z.copy()
            z[bad, 0] += 1e-6
        return z

    rng = aux_generator(budget.seed, tag=42)
    starts = []
    for r in np.linspace(0.0, 12.0, 13):
        for gap in (1e-4, 0.1, 1.0, psi.r_max):
            s = np.zeros(2 * dim)
            s[0] = r + 0.5 * gap
            s[dim] = r - 0.5 * gap
            starts.append(s)
    for _ in range(budget.n_starts):
        s = rng.normal(size=2 * dim) * 4.0
        starts.append(s)
    res = pattern_search(objective, np.array(starts), budget, maximize=True,
                         project=project)
    return res.value


def certify_weighted(scenario: Scenario, beta_grid=None, l_grid=None,
                     k1_grid=None, budget: SearchBudget = DEFAULT_BUDGET) -> CertifiedScenario:
    """Best lambda_{l,beta} - theta over the (K1, l, beta) sweep."""
    coeffs = scenario.coefficients
    lyap = coeffs.lyapunov
    if lyap is None:
        raise DomainError(f"scenario {scenario.name!r} carries no Lyapunov weight")
    dim = coeffs.dim
    rng = aux_generator(budget.seed, tag=43)
    probe = _radial_probe(dim, 50.0, 2001, rng)
    law_probe = _law_probes(scenario, rng)

    if math.isnan(lyap.k0) or math.isnan(lyap.k1):
        if k1_grid is None:
            p_like = float(scenario.params.get("p", 0.5))
            k1_grid = p_like * np.array([0.25, 0.5, 0.8, 1.0])
        pairs = fit_lyapunov_constants(coeffs, lyap, probe, law_probe, k1_grid)
    else:
        pairs = [(lyap.k1, lyap.k0)]

    k_drift = _drift_one_sided_lipschitz(scenario, budget)
    kernel = coeffs.interaction
    eps = getattr(kernel, "eps", 0.0) if kernel is not None else 0.0
    dphi_ds = getattr(kernel, "dphi_ds_bound", 0.0) if kernel is not None else 0.0
    log_v_lip = scenario.extras.get("log_v_lip", 0.0)
    v_min = scenario.extras.get("v_min", 1.0)

    best = None
    best_parts = None
    for k1, k0 in pairs:
        if k1 <= 0 or k0 <= 0:
            continue
        spec = LyapunovSpec(v=lyap.v, grad_v=lyap.grad_v, k0=k0, k1=k1,
                            beta=lyap.beta, l=lyap.l, hess_v=lyap.hess_v)
        grid_l = l_grid if l_grid is not None else _default_l_grid(spec, dim)
        for l in grid_l:
            psi, q_l = build_psi_eigen(coeffs.alpha, k_drift, float(l))
            c0 = _comparison_constant_c0(spec, psi, dim, budget) if eps > 0 else 0.0
            c_l = math.exp(min(float(l) * log_v_lip, 700.0))
            grid_b = beta_grid if beta_grid is not None else np.geomspace(1e-3, 0.3, 12)
            for beta in grid_b:
                kap = kappa_lb(spec, float(l), float(beta), dim=dim, budget=budget)
                alb = alpha_lb(coeffs, spec, psi, float(l), float(beta), budget=budget)
                theta = 0.0
                if eps > 0:
                    theta = (eps * dphi_ds * c0 * psi.sup_deriv
                             * (1.0 / v_min + (1.0 + c_l) * beta) / beta)
                cert = lambda_lb(kap.value, q_l, k0, float(beta), alb.value, theta,
                                 family=scenario.family)
                if best is None or cert.theorem_rate > best.theorem_rate:
                    best = cert
                    best_parts = (spec, psi, q_l, kap, alb, k1, k0, float(l),
                                  float(beta), c0, c_l)
    if best is None:
        raise DomainError("no valid (K1, K0) pair; Lyapunov fit failed")
    spec, psi, q_l, kap, alb, k1, k0, l, beta, c0, c_l = best_parts
    best.params.update({"l": l, "beta": beta, "k0": k0, "k1": k1,
                        "k_drift": k_drift, "alpha": coeffs.alpha, "eps": eps})
    best.constants.update({"c0_comparison": c0, "c_l_weight_ratio": c_l,
                           "dphi_ds_bound": dphi_ds, "v_min": v_min,
                           "sup_dpsi": psi.sup_deriv, "c_psi": psi.c_psi})
    best.witnesses.update({"kappa_pair": kap.witness, "alpha_pair": alb.witness})
    best.budget.update({"n_starts": budget.n_starts, "n_iters": budget.n_iters,
                        "kappa_evals": kap.n_evals, "alpha_evals": alb.n_evals})
    best.tolerances.update({"witness_check": 1e-10})
    return CertifiedScenario(certificate=best, psi=psi, lyapunov=spec)


def _default_l_grid(spec: LyapunovSpec, dim: int) -> Array:
    """Smallest l with positive kappa numerator, stretched by a few factors."""
    r = np.linspace(0.0, 100.0, 20001)
    x = np.zeros((r.size, dim))
    x[:, 0] = r
    v = np.asarray(spec.v(x))
    need = v > spec.k0 / spec.k1
    if not need.any():
        return np.array([4.0, 8.0, 16.0])
    l_min = 2.0 * r[np.argmax(need)]
    return l_min * np.array([1.05, 1.3, 1.7, 2.2])


def certify_explicit(scenario: Scenario, n_lines: int = 300,
                     budget: SearchBudget = DEFAULT_BUDGET) -> CertifiedScenario:
    """Granular-family certificate via the measured puncture mass."""
    coeffs = scenario.coefficients
    ex = scenario.extras
    for key in ("s_b", "theta1", "theta2", "varphi", "lambda0"):
        if key not in ex:
            raise DomainError(f"scenario {scenario.name!r} lacks {key} for this route")
    theta0 = float(ex.get("theta0", 0.0))
    theta1, theta2 = float(ex["theta1"]), float(ex["theta2"])
    kappa_hat = puncture_mass(ex["s_b"], theta2, coeffs.dim, n_lines=n_lines,
                              seed=budget.seed)
    if math.isinf(kappa_hat):
        raise DomainError("puncture mass is unbounded; explicit route inapplicable")
    g = GammaSpec(theta0=theta0, theta1=theta1, theta2=theta2,
                  kappa_puncture=kappa_hat, lambda_iso=coeffs.alpha)
    consts = rate_constants_g2(g, float(ex["varphi"]))
    psi = build_psi_explicit(g)
    cert = RateCertificate(
        family=scenario.family, theorem_rate=consts.k, contractive=consts.k > 0,
        q_l=consts.q, theta=consts.theta,
        params={"alpha": coeffs.alpha, "theta0": theta0, "theta1": theta1,
                "theta2": theta2, "varphi": float(ex["varphi"]),
                "lambda0": float(ex["lambda0"])},
        constants={"kappa_measured": kappa_hat,
                   "kappa_analytic_bound": 4.0 * float(ex["lambda0"]),
                   "outer_integral": consts.integral_i,
                   "nc_bound": consts.nc_bound, "nc_ok": consts.nc_ok,
                   "r0": g.r0, "terminal_slope": 2.0 * coeffs.alpha / g.contraction_gap},
        budget={"n_lines": n_lines},
        tolerances={"psi_ode_residual": 1e-6, "slope_rel": 0.01})
    return CertifiedScenario(certificate=cert, psi=psi)


def certify_order(scenario: Scenario) -> CertifiedScenario:
    ex = scenario.extras
    cert = theorem22_rate(float(ex["q"]), float(ex["theta1"]), float(ex["theta2"]))
    cert.family = scenario.family
    cert.params.update({"q": float(ex["q"]), "alpha_int": scenario.params.get("alpha_int"),
                        "eps_phi": scenario.params.get("eps_phi")})
    return CertifiedScenario(certificate=cert, psi=identity_psi())


def certify_scenario(scenario: Scenario, **kwargs) -> CertifiedScenario:
    if scenario.family in ("ou", "example21"):
        return certify_weighted(scenario, **kwargs)
    if scenario.family == "granular":
        return certify_explicit(scenario, **kwargs)
    if scenario.family == "orderpreserving":
        return certify_order(scenario)
    raise DomainError(f"no certificate route for family {scenario.family!r}")


def beta_sweep(scenario: Scenario, beta_grid, l_grid=None,
               budget: SearchBudget = DEFAULT_BUDGET) -> tuple[float, RateCertificate]:
    """Maximize the weighted-route rate over the beta grid (and optional l grid)."""
    if len(np.atleast_1d(beta_grid)) == 0:
        raise ValueError("beta grid must be nonempty")
    certified = certify_weighted(scenario, beta_grid=np.atleast_1d(beta_grid),
                                 l_grid=l_grid, budget=budget)
    return certified.certificate.params["beta"], certified.certificate
