"""Empirical (weighted) Wasserstein quasi-distances on equal-weight samples.

The estimator is the exact optimal-assignment cost between two n-point clouds
divided by n.  The solver is the O(n^3) shortest-augmenting-path method from
scipy; n is capped at MAX_ASSIGNMENT_SIZE (about 2 s at the cap).  For plain
costs psi(|x-y|) in one dimension with convex psi, the comonotone (sorted)
matching is optimal and used as a fast path; concave costs always go through
the solver.  An entropic estimator is available behind ``method="sinkhorn"``
for exploratory use only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .distance import PsiFunction, identity_psi
from .errors import DegenerateCouplingError, DomainError, NumericsError
from .model import as_batch

Array = np.ndarray

MAX_ASSIGNMENT_SIZE = 4096


@dataclass(frozen=True)
class CostSpec:
    """One of three transport costs.

    plain:     psi(|x - y|)
    weighted:  psi(|x - y|) * (1 + beta V(x) + beta V(y))
    phi:       sum_i |phi_i(x_i) - phi_i(y_i)|   (strictly increasing phi_i)
    """

    psi: Optional[PsiFunction] = None
    v: Optional[Callable[[Array], Array]] = None
    beta: float = 0.0
    phi: Optional[Sequence[Callable[[Array], Array]]] = None

    def __post_init__(self):
        modes = sum([self.phi is not None, self.psi is not None])
        if modes != 1:
            raise ValueError("exactly one of psi-based or phi-based cost must be set")
        if self.v is not None and self.beta <= 0:
            raise ValueError("weighted cost requires beta > 0")

    @property
    def kind(self) -> str:
        if self.phi is not None:
            return "phi"
        return "weighted" if self.v is not None else "plain"


def plain_cost(psi: Optional[PsiFunction] = None) -> CostSpec:
    return CostSpec(psi=psi if psi is not None else identity_psi())


def weighted_cost(psi: PsiFunction, v, beta: float) -> CostSpec:
    return CostSpec(psi=psi, v=v, beta=float(beta))


def phi_cost(phi_components) -> CostSpec:
    return CostSpec(phi=tuple(phi_components))


def _psi_is_convex(psi: PsiFunction) -> bool:
    return bool(np.all(psi.deriv2 >= -1e-12))


def _check_sizes(x: Array, y: Array) -> tuple[Array, Array]:
    x, y = as_batch(x), as_batch(y)
    if x.shape[0] == 0:
        raise DomainError("empty sample set")
    if x.shape != y.shape:
        raise ValueError(f"sample shapes differ: {x.shape} vs {y.shape}")
    return x, y


def cost_matrix(cost: CostSpec, x, y) -> Array:
    """Dense n x n cost matrix C[i, j] = c(x_i, y_j)."""
    x, y = _check_sizes(x, y)
    if cost.kind == "phi":
        n, d = x.shape
        c = np.zeros((n, n))
        for i, phi_i in enumerate(cost.phi):
            fx = np.asarray(phi_i(x[:, i]))
            fy = np.asarray(phi_i(y[:, i]))
            c += np.abs(fx[:, None] - fy[None, :])
        return c
    gaps = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
    c = np.asarray(cost.psi(gaps))
    if cost.v is not None:
        wx = 1.0 + cost.beta * np.asarray(cost.v(x))
        c = c * (wx[:, None] + cost.beta * np.asarray(cost.v(y))[None, :])
    if not np.all(np.isfinite(c)):
        raise NumericsError("cost matrix contains non-finite entries")
    return c


def _pair_costs(cost: CostSpec, x: Array, y: Array) -> Array:
    """Costs of the identity pairing (x_i, y_i)."""
    if cost.kind == "phi":
        acc = np.zeros(x.shape[0])
        for i, phi_i in enumerate(cost.phi):
            acc += np.abs(np.asarray(phi_i(x[:, i])) - np.asarray(phi_i(y[:, i])))
        return acc
    gaps = np.linalg.norm(x - y, axis=1)
    c = np.asarray(cost.psi(gaps))
    if cost.v is not None:
        c = c * (1.0 + cost.beta * np.asarray(cost.v(x)) + cost.beta * np.asarray(cost.v(y)))
    return c


def _sorted_permutation(cost: CostSpec, x: Array, y: Array) -> Optional[Array]:
    """Monotone matching permutation when provably optimal, else None.

    Valid for 1-d plain costs with convex psi, and for phi costs in 1-d
    (after the increasing map the cost is |u - v|, which is convex).
    """
    if x.shape[1] != 1:
        return None
    if cost.kind == "plain" and _psi_is_convex(cost.psi):
        pass
    elif cost.kind == "phi":
        pass
    else:
        return None
    order_x = np.argsort(x[:, 0], kind="stable")
    order_y = np.argsort(y[:, 0], kind="stable")
    perm = np.empty_like(order_x)
    perm[order_x] = order_y
    return perm


def optimal_assignment(cost: CostSpec, x, y, method: str = "auto") -> tuple[Array, Array]:
    """Optimal permutation and its per-pair costs (summed in row order).

    ``method``: "auto" picks the sorted fast path when provably optimal;
    "lap" forces the exact solver; "sorted" forces the monotone matching
    (caller asserts validity).
    """
    x, y = _check_sizes(x, y)
    n = x.shape[0]
    if method == "auto":
        perm = _sorted_permutation(cost, x, y)
        if perm is not None:
            return perm, _pair_costs(cost, x, y[perm])
        method = "lap"
    if method == "sorted":
        perm = _sorted_permutation(cost, x, y)
        if perm is None:
            raise DomainError("sorted fast path not valid for this cost/dimension")
        return perm, _pair_costs(cost, x, y[perm])
    if method != "lap":
        raise ValueError(f"unknown method {method!r}")
    if n > MAX_ASSIGNMENT_SIZE:
        raise DomainError(
            f"n={n} exceeds the exact-solver cap {MAX_ASSIGNMENT_SIZE}; "
            "use method='sinkhorn' for an approximate value")
    c = cost_matrix(cost, x, y)
    rows, cols = linear_sum_assignment(c)
    perm = np.empty(n, dtype=int)
    perm[rows] = cols
    return perm, c[np.arange(n), perm]


def empirical_distance(cost: CostSpec, x, y, method: str = "auto") -> float:
    """Exact transport cost between equal-weight empirical measures."""
    if method == "sinkhorn":
        return sinkhorn_distance(cost, x, y)
    _, costs = optimal_assignment(cost, x, y, method=method)
    return float(np.sum(costs) / costs.shape[0])


def d_phi_distance(phi_components, x, y) -> float:
    """W_phi between empirical measures for coordinatewise increasing maps.

    Each phi_i must be strictly increasing; probed on the data before use.
    """
    x, y = _check_sizes(x, y)
    for i, phi_i in enumerate(phi_components):
        probe = np.unique(np.concatenate([x[:, i], y[:, i]]))
        if probe.shape[0] >= 2 and np.any(np.diff(np.asarray(phi_i(probe))) <= 0):
            raise DomainError(f"phi component {i} is not increasing on the data")
    return empirical_distance(phi_cost(phi_components), x, y)


def empirical_ratio_distance(cost: CostSpec, x, y) -> tuple[float, float]:
    """Bracket for the ratio quasi-distance used by the monotone condition.

    Returns (lower, upper): the proven lower bound
    W_{psi,beta V} / (1 + beta mean V(X) + beta mean V(Y)) and the upper
    estimate given by evaluating the ratio at the numerator-optimal coupling.
    The exact infimum of the ratio over couplings lies in between.
    """
    if cost.kind != "weighted":
        raise DomainError("ratio distance requires the weighted cost")
    x, y = _check_sizes(x, y)
    perm, costs = optimal_assignment(cost, x, y)
    num = float(np.sum(costs) / costs.shape[0])
    gaps = np.linalg.norm(x - y[perm], axis=1)
    weights = (1.0 + cost.beta * np.asarray(cost.v(x))
               + cost.beta * np.asarray(cost.v(y[perm])))
    den = float(np.mean(np.asarray(cost.psi.deriv(gaps)) * weights))
    if num == 0.0:
        return 0.0, 0.0
    if den <= 0.0:
        raise DegenerateCouplingError(
            "psi' vanishes at every matched pair; ratio undefined")
    upper = num / den
    mean_weight = 1.0 + cost.beta * float(np.mean(np.asarray(cost.v(x)))) \
        + cost.beta * float(np.mean(np.asarray(cost.v(y))))
    lower = num / mean_weight
    return lower, upper


def sinkhorn_distance(cost: CostSpec, x, y, reg: float = 1e-2,
                      n_iter: int = 2000, tol: float = 1e-9) -> float:
    """Entropic OT estimate (log-domain Sinkhorn). Not used by any certificate."""
    x, y = _check_sizes(x, y)
    c = cost_matrix(cost, x, y)
    scale = max(float(np.max(c)), 1e-300)
    k = -c / (reg * scale)
    n = c.shape[0]
    log_mu = -np.log(n) * np.ones(n)
    f = np.zeros(n)
    g = np.zeros(n)
    for _ in range(n_iter):
        f_new = -_logsumexp(k + g[None, :], axis=1) + log_mu
        g_new = -_logsumexp(k + f_new[:, None], axis=0) + log_mu
        delta = np.max(np.abs(f_new - f)) if f.size else 0.0
        f, g = f_new, g_new
        if delta < tol:
            break
    plan = np.exp(f[:, None] + k + g[None, :])
    return float(np.sum(plan * c))


def _logsumexp(a: Array, axis: int) -> Array:
    m = np.max(a, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.sum(np.exp(a - m), axis=axis))
    return out
