"""Coupled decay experiments and stationary-law estimation.

A decay experiment simulates two interacting-particle ensembles coupled by
reflection or synchronously, records the empirical transport distance between
them on a time grid, and fits a log-linear rate over the trailing window.
The recorded distance is an upper bound on the distance between the true
marginal laws: the paired particles realize one admissible coupling, and the
assignment solver can only improve on it.

Initial conditions realize the optimal coupling of the two initial laws at
the chosen cost (assignment matching); order-preserving scenarios instead use
the lattice splitting X0 = xi v eta, Y0 = xi ^ eta so that X0 >= Y0 holds
componentwise from the start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .decayfit import FitResult, fit_exponential_rate
from .errors import FitError
from .rng import aux_generator
from .scenarios import Scenario
from .simulator import CoupledEnsemble, ParticleEnsemble, step_coupled, step_em, step_synchronous
from .transport import CostSpec, optimal_assignment, plain_cost

Array = np.ndarray


@dataclass
class DecayCurve:
    times: Array
    distances: Array
    ci_half: Array
    n_coupled: Array
    seed: int
    coupling: str
    cost_kind: str
    fit: Optional[FitResult] = None
    degenerate: bool = False

    def to_csv(self, path) -> None:
        from .jsonio import write_csv
        write_csv(path, "t,distance,ci_half,n_coupled",
                  np.column_stack([self.times, self.distances,
                                   self.ci_half, self.n_coupled]))

    def fit_summary(self) -> dict:
        out = {"seed": self.seed, "coupling": self.coupling,
               "cost": self.cost_kind, "degenerate": self.degenerate}
        if self.fit is not None:
            out.update(rate=self.fit.rate, intercept=self.fit.intercept,
                       ci_half=self.fit.ci_half, residual=self.fit.residual,
                       n_used=self.fit.n_used, n_zero_excluded=self.fit.n_zero_excluded,
                       window=list(self.fit.window))
        return out


def _distance_with_band(cost: CostSpec, x: Array, y: Array, n_boot: int,
                        rng: np.random.Generator) -> tuple[float, float]:
    """Transport distance and a bootstrap half-width over its pair costs."""
    _, costs = optimal_assignment(cost, x, y)
    value = float(np.mean(costs))
    if n_boot <= 0 or np.all(costs == costs[0]):
        return value, 0.0
    n = costs.shape[0]
    idx = rng.integers(0, n, size=(n_boot, n))
    means = np.mean(costs[idx], axis=1)
    q_lo, q_hi = np.quantile(means, [0.025, 0.975])
    return value, float(0.5 * (q_hi - q_lo))


def _record_distances(cost: CostSpec, snapshots: list, n_boot: int, seed: int,
                      threads: int) -> tuple[Array, Array]:
    """Distances/bands for recorded (x, y) snapshots.

    Each record owns a generator keyed by its index, so the result is
    byte-identical no matter how many worker threads evaluate them.
    """

    def one(item):
        k, (x, y) = item
        return _distance_with_band(cost, x, y, n_boot, aux_generator(seed, tag=100 + k))

    items = list(enumerate(snapshots))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    values = np.array([r[0] for r in results])
    bands = np.array([r[1] for r in results])
    return values, bands


def initial_coupling(scenario: Scenario, cost: CostSpec,
                     order_split: bool) -> tuple[Array, Array]:
    """Draw (X0, Y0) from the two initial laws, matched per the coupling rule."""
    sim = scenario.sim
    rng = aux_generator(sim.seed, tag=2)
    x0 = scenario.mu0.draw(sim.n_particles, scenario.dim, rng)
    y0 = scenario.nu0.draw(sim.n_particles, scenario.dim, rng)
    if order_split:
        return np.maximum(x0, y0), np.minimum(x0, y0)
    perm, _ = optimal_assignment(cost, x0, y0)
    return x0, y0[perm]


def run_decay_experiment(scenario: Scenario, cost: Optional[CostSpec] = None,
                         coupling: str = "reflection", n_boot: int = 200,
                         window: Optional[tuple[float, float]] = None,
                         rematch: bool = False, threads: int = 1) -> DecayCurve:
    """Simulate the coupled pair and record the empirical distance decay.

    The fit window defaults to [T/4, T], skipping the matching transient.
    ``rematch`` re-runs the assignment at every record time instead of only
    at t=0 (the recorded value is the assignment optimum either way; the
    flag only affects which pairs share noise going forward).  ``threads``
    parallelizes the per-record distance evaluations; results are identical
    for any thread count.
    """
    if coupling not in ("reflection", "synchronous"):
        raise ValueError(f"unknown coupling {coupling!r}")
    if cost is None:
        cost = scenario_cost(scenario)
    sim = scenario.sim
    coeffs = scenario.coefficients
    order_split = bool(scenario.extras.get("order_preserving")) and coupling == "synchronous"
    x0, y0 = initial_coupling(scenario, cost, order_split)
    ce = CoupledEnsemble.create(x0, y0, sim.seed)
    eps = sim.resolved_eps(coeffs.alpha)

    times = [0.0]
    snapshots = [(ce.x.states.copy(), ce.y.states.copy())]
    coupled_counts = [ce.n_coupled]
    n_steps = sim.n_steps
    for k in range(n_steps):
        if coupling == "reflection":
            step_coupled(ce, coeffs, coeffs, sim.h, eps)
        else:
            step_synchronous(ce, coeffs, coeffs, sim.h)
        if (k + 1) % sim.record_every == 0 or k + 1 == n_steps:
            if rematch:
                perm, _ = optimal_assignment(cost, ce.x.states, ce.y.states)
                ce.y.states = ce.y.states[perm]
                ce.coupled = ce.coupled[perm]
                ce.tau = ce.tau[perm]
            times.append(ce.x.time)
            snapshots.append((ce.x.states.copy(), ce.y.states.copy()))
            coupled_counts.append(ce.n_coupled)

    dists, bands = _record_distances(cost, snapshots, n_boot, sim.seed, threads)
    curve = DecayCurve(times=np.array(times), distances=dists,
                       ci_half=bands, n_coupled=np.array(coupled_counts),
                       seed=sim.seed, coupling=coupling, cost_kind=cost.kind)
    if np.all(curve.distances == 0.0):
        curve.degenerate = True
        return curve
    if window is None:
        window = (sim.t_final / 4.0, sim.t_final)
    in_win = (curve.times >= window[0] - 1e-12) & (curve.times <= window[1] + 1e-12)
    if np.all(curve.distances[in_win] == 0.0):
        curve.degenerate = True
        return curve
    if np.count_nonzero(in_win) < 4:
        raise FitError("fewer than 4 recorded points in the fit window")
    curve.fit = fit_exponential_rate(curve.times, curve.distances, window=window,
                                     seed=sim.seed)
    return curve


def scenario_cost(scenario: Scenario, psi=None, beta: Optional[float] = None) -> CostSpec:
    """Default cost for a scenario family; psi/beta override for certificates."""
    from .transport import phi_cost, weighted_cost

    if scenario.psi_kind == "phi":
        return phi_cost(scenario.extras["phi_components"])
    if scenario.psi_kind == "eigen" and psi is not None:
        lyap = scenario.coefficients.lyapunov
        return weighted_cost(psi, lyap.v, beta if beta is not None else lyap.beta)
    return plain_cost()


def estimate_stationary(scenario: Scenario, burn_in: float, n_samples: int,
                        thin_steps: int = 100, warn_rate: Optional[float] = None) -> Array:
    """Long-run single-ensemble simulation; thinned snapshots approximate
    the invariant law.  Contraction is assumed, not checked here; pass the
    certificate rate as ``warn_rate`` to be warned when it is nonpositive.
    """
    import warnings

    if warn_rate is not None and warn_rate <= 0:
        warnings.warn("stationary estimate requested for a non-contractive certificate",
                      stacklevel=2)
    sim = scenario.sim
    rng = aux_generator(sim.seed, tag=2)
    x0 = scenario.mu0.draw(sim.n_particles, scenario.dim, rng)
    ens = ParticleEnsemble.create(x0, sim.seed)
    coeffs = scenario.coefficients
    burn_steps = int(round(burn_in / sim.h))
    for _ in range(burn_steps):
        step_em(ens, coeffs, sim.h)
    chunks = [ens.states.copy()]
    collected = ens.n
    while collected < n_samples:
        for _ in range(thin_steps):
            step_em(ens, coeffs, sim.h)
        chunks.append(ens.states.copy())
        collected += ens.n
    return np.vstack(chunks)[:n_samples]
