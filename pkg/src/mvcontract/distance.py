"""Distance-shaping functions: eigenfunction and explicit-integral construction.

Two routes produce the function psi that reshapes Euclidean distance into a
contracting semimetric:

* ``build_psi_eigen``: first eigenfunction of 2*alpha*psi'' + K*psi' = -q*psi
  on [0, l] with Dirichlet boundary at 0 and Neumann boundary at l, found by
  shooting.  Used with the Lyapunov-weighted cost.
* ``build_psi_explicit``: the integral formula driven by
  gamma(r) = (theta1+theta2) * min(kappa/r, r) - (theta2-theta0) * r,
  which solves 2*lambda*psi'' + gamma*psi' = -2*lambda*r on [0, inf).
  Used for the long-distance dissipative regime; also yields the contraction
  constants q = 2*lambda/I, theta = varphi*(theta2-theta0)*I/(2*lambda) and
  k = q - theta, where I = int_0^inf t * exp(Gamma(t)/(2*lambda)) dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import IntegrabilityError, SolverError

Array = np.ndarray

# 3-point Gauss-Legendre rule on [-1, 1]
_GL_NODES = np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
_GL_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])

DEFAULT_NODES = 2048


class PsiFunction:
    """Tabulated distance-shaping function with monotone cubic evaluation.

    ``l`` marks a truncated function (constant beyond ``l`` with psi'(l) = 0);
    ``l=None`` means the function lives on [0, inf) and is extended linearly
    beyond the last node with its terminal slope.
    """

    def __init__(self, grid: Array, values: Array, deriv1: Array, deriv2: Array,
                 l: Optional[float], concave: bool):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0) or grid[0] != 0.0:
            raise ValueError("grid must be strictly increasing and start at 0")
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self.deriv1 = np.asarray(deriv1, dtype=float)
        self.deriv2 = np.asarray(deriv2, dtype=float)
        self.l = None if l is None else float(l)
        self.concave = bool(concave)
        self.c_psi = c_psi_tabulated(grid, self.deriv1, self.values)
        self.sup_deriv = float(np.max(self.deriv1))
        self._ip = PchipInterpolator(grid, self.values, extrapolate=False)
        self._ip1 = PchipInterpolator(grid, self.deriv1, extrapolate=False)
        self._ip2 = PchipInterpolator(grid, self.deriv2, extrapolate=False)

    @property
    def r_max(self) -> float:
        return float(self.grid[-1])

    def _split(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.r_max
        return r, inside

    def __call__(self, r):
        r, inside = self._split(r)
        out = np.where(inside, self._ip(np.minimum(r, self.r_max)), 0.0)
        if self.l is not None:
            tail = self.values[-1]
        else:
            tail = self.values[-1] + self.deriv1[-1] * (r - self.r_max)
        out = np.where(inside, out, tail)
        return out if out.ndim else float(out)

    def deriv(self, r):
        r, inside = self._split(r)
        tail = 0.0 if self.l is not None else self.deriv1[-1]
        out = np.where(inside, self._ip1(np.minimum(r, self.r_max)), tail)
        return out if out.ndim else float(out)

    def second_deriv(self, r):
        r, inside = self._split(r)
        out = np.where(inside, self._ip2(np.minimum(r, self.r_max)), 0.0)
        return out if out.ndim else float(out)

    def table(self) -> Array:
        """Columns r, psi, dpsi, ddpsi as a (n, 4) array."""
        return np.column_stack([self.grid, self.values, self.deriv1, self.deriv2])

    def to_csv(self, path) -> None:
        from .jsonio import write_csv
        write_csv(path, "r,psi,dpsi,ddpsi", self.table())


def c_psi_tabulated(grid: Array, deriv1: Array, values: Array) -> float:
    """sup_r r*psi'(r)/psi(r) over the nodes, with the r->0 limit handled.

    At r = 0 the ratio is 0/0; when psi(0) = 0 and psi'(0) > 0, l'Hopital
    gives the limit 1, which is the supremum for every concave psi.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = grid * deriv1 / values
    interior = np.nanmax(np.where(values > 0, ratio, -np.inf))
    limit = 1.0 if (values[0] == 0.0 and deriv1[0] > 0.0) else -np.inf
    out = max(float(interior), limit)
    if not np.isfinite(out):
        raise ValueError("c_psi is not finite on the given table")
    return out


def c_psi(psi: PsiFunction) -> float:
    return psi.c_psi


# ---------------------------------------------------------------------------
# eigenfunction route

def _shoot(alpha: float, k_drift: float, q: float, l: float, n_steps: int):
    """Integrate 2*alpha*y'' + K*y' + q*y = 0 from (0, 1) by fixed-step RK4.

    Returns (psi, dpsi) arrays on the uniform grid with n_steps+1 points.
    """
    h = l / n_steps
    psi = np.empty(n_steps + 1)
    dpsi = np.empty(n_steps + 1)
    psi[0], dpsi[0] = 0.0, 1.0
    c1 = -k_drift / (2.0 * alpha)
    c0 = -q / (2.0 * alpha)

    def rhs(y, yp):
        return yp, c1 * yp + c0 * y

    y, yp = 0.0, 1.0
    for i in range(n_steps):
        k1, l1 = rhs(y, yp)
        k2, l2 = rhs(y + 0.5 * h * k1, yp + 0.5 * h * l1)
        k3, l3 = rhs(y + 0.5 * h * k2, yp + 0.5 * h * l2)
        k4, l4 = rhs(y + h * k3, yp + h * l3)
        y += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        yp += (h / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
        psi[i + 1] = y
        dpsi[i + 1] = yp
    return psi, dpsi


def build_psi_eigen(alpha: float, k_drift: float, l: float,
                    n_nodes: int = DEFAULT_NODES) -> tuple[PsiFunction, float]:
    """First mixed Dirichlet-Neumann eigenpair of 2*alpha*d^2/dr^2 + K*d/dr on [0, l].

    Shooting: for a trial q integrate from psi(0)=0, psi'(0)=1 and bisect on
    the sign of psi'(l).  The first eigenvalue is the smallest q > 0 at which
    psi'(l) crosses zero; for K = 0 it equals alpha*pi^2/(2*l^2).
    """
    if alpha <= 0 or l <= 0:
        raise ValueError("alpha and l must be positive")
    if k_drift < 0:
        raise ValueError("drift constant K must be nonnegative")
    n_sub = max(2048, n_nodes)

    def endpoint_slope(q):
        return _shoot(alpha, k_drift, q, l, n_sub)[1][-1]

    # scan upward from ~0 for the first sign change of psi'(l)
    q_guess = 2.0 * alpha * (math.pi / (2.0 * l)) ** 2 + k_drift**2 / (8.0 * alpha)
    q_lo, g_lo = 1e-12 * q_guess, None
    g_lo = endpoint_slope(q_lo)
    if g_lo <= 0:
        raise SolverError(f"psi'(l) nonpositive at q={q_lo}; no Dirichlet-Neumann bracket")
    q_hi = None
    for q_trial in np.linspace(q_guess / 8.0, 8.0 * q_guess, 64):
        if endpoint_slope(q_trial) < 0:
            q_hi = q_trial
            break
        q_lo = q_trial
    if q_hi is None:
        raise SolverError(
            f"no sign change of psi'(l) for q in ({q_lo:.3g}, {8 * q_guess:.3g}); "
            f"alpha={alpha}, K={k_drift}, l={l}")
    for _ in range(200):
        q_mid = 0.5 * (q_lo + q_hi)
        if endpoint_slope(q_mid) > 0:
            q_lo = q_mid
        else:
            q_hi = q_mid
        if q_hi - q_lo <= 1e-14 * q_hi:
            break
    q = 0.5 * (q_lo + q_hi)

    # tabulate at the converged eigenvalue; substeps refine between nodes
    per = max(1, n_sub // n_nodes)
    psi_fine, dpsi_fine = _shoot(alpha, k_drift, q, l, n_nodes * per)
    idx = np.arange(0, n_nodes * per + 1, per)
    grid = np.linspace(0.0, l, n_nodes + 1)
    values = psi_fine[idx]
    deriv1 = dpsi_fine[idx].copy()
    deriv1[-1] = 0.0  # Neumann boundary enforced exactly on the table
    deriv2 = -(k_drift * deriv1 + q * values) / (2.0 * alpha)
    concave = bool(np.all(deriv2 <= 1e-12))
    return PsiFunction(grid, values, deriv1, deriv2, l=l, concave=concave), float(q)


def identity_psi(r_max: float = 1.0, n_nodes: int = 64) -> PsiFunction:
    """psi(r) = r on [0, inf); the plain W_1 cost shape."""
    grid = np.linspace(0.0, r_max, n_nodes + 1)
    return PsiFunction(grid, grid.copy(), np.ones_like(grid), np.zeros_like(grid),
                       l=None, concave=True)


# ---------------------------------------------------------------------------
# explicit-integral route

@dataclass(frozen=True)
class GammaSpec:
    """Parameters of gamma(r) = (theta1+theta2)*min(kappa/r, r) - (theta2-theta0)*r.

    ``kappa_puncture`` is the one-dimensional puncture mass of the drift's
    expansive region; ``lambda_iso`` the isotropic diffusion intensity.
    """

    theta0: float
    theta1: float
    theta2: float
    kappa_puncture: float
    lambda_iso: float

    def __post_init__(self):
        if min(self.theta0, self.theta1, self.theta2, self.kappa_puncture) < 0:
            raise ValueError("theta constants and kappa must be nonnegative")
        if self.lambda_iso <= 0:
            raise ValueError("lambda_iso must be positive")

    @property
    def contraction_gap(self) -> float:
        return self.theta2 - self.theta0

    @property
    def r0(self) -> float:
        """Radius where gamma changes sign: sqrt(kappa*(theta1+theta2)/(theta2-theta0))."""
        if self.contraction_gap <= 0:
            raise IntegrabilityError("theta2 must exceed theta0")
        return math.sqrt(self.kappa_puncture * (self.theta1 + self.theta2)
                         / self.contraction_gap)

    def gamma(self, r):
        r = np.asarray(r, dtype=float)
        s = self.theta1 + self.theta2
        with np.errstate(divide="ignore"):
            bump = np.where(r > 0, np.minimum(self.kappa_puncture / np.where(r > 0, r, 1.0), r), 0.0)
        out = s * bump - self.contraction_gap * r
        return out if out.ndim else float(out)

    def gamma_integral(self, t):
        """Closed-form Gamma(t) = int_0^t gamma(u) du."""
        t = np.asarray(t, dtype=float)
        s = self.theta1 + self.theta2
        m = self.contraction_gap
        kap = self.kappa_puncture
        if kap == 0.0:
            out = -0.5 * m * t**2
            return out if out.ndim else float(out)
        rk = math.sqrt(kap)
        below = 0.5 * (s - m) * np.minimum(t, rk) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            above = np.where(
                t > rk,
                s * kap * np.log(np.maximum(t, rk) / rk) - 0.5 * m * (np.maximum(t, rk) ** 2 - kap),
                0.0)
        out = below + above
        return out if out.ndim else float(out)


def _log_gl_integrals(log_f, a: Array, b: Array) -> Array:
    """log of the 3-point Gauss-Legendre integral of exp(log_f) per interval.

    Works entirely in log space so Gaussian-tail weights spanning hundreds of
    e-folds neither overflow nor underflow.
    """
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    terms = np.stack([np.log(w) + log_f(mid + x * half)
                      for x, w in zip(_GL_NODES, _GL_WEIGHTS)])
    m = np.max(terms, axis=0)
    out = m + np.log(np.sum(np.exp(terms - m), axis=0))
    with np.errstate(divide="ignore"):
        return out + np.log(half)


def _log_accumulate_right(log_terms: Array, log_tail: float) -> Array:
    """log of the right-to-left running sums: out[i] = log(sum_{j>=i} e^{t_j} + e^{tail})."""
    rev = np.concatenate([[log_tail], log_terms[::-1]])
    return np.logaddexp.accumulate(rev)[1:][::-1]


def _psi_quadrature(g: GammaSpec, n_nodes: int, r_max: Optional[float]):
    """Shared log-space quadrature behind the explicit psi and its constants.

    Returns (grid, psi, log_dpsi, log_outer_integral) where log_outer_integral
    is log of I = int_0^{T*} t exp(Gamma(t)/(2 lambda)) dt.  The integrand is
    truncated at the first T* past max(10*r0, r_max) where it falls below
    1e-12 of both its global peak and its value at r_max, so psi'(r) keeps
    full relative accuracy out to the last node.
    """
    if g.contraction_gap <= 0:
        raise IntegrabilityError(
            f"theta2={g.theta2} <= theta0={g.theta0}: outer integral diverges")
    lam2 = 2.0 * g.lambda_iso
    r0 = g.r0
    gauss_scale = math.sqrt(4.0 * g.lambda_iso / g.contraction_gap)
    if r_max is None:
        r_max = max(10.0 * r0, 8.0 * gauss_scale)

    def log_f(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t > 0, np.log(np.maximum(t, 1e-300)), -np.inf) \
                + g.gamma_integral(t) / lam2

    probe = np.linspace(1e-6 * max(r0, r_max), max(r0 * 1.5, r_max), 1024)
    log_peak = float(np.max(log_f(probe)))
    log_thr = math.log(1e-12) + min(log_peak, float(log_f(r_max)))
    t_star = max(10.0 * r0, r_max) * 1.0001
    for _ in range(400):
        if float(log_f(t_star)) < log_thr:
            break
        t_star *= 1.25
    else:
        raise IntegrabilityError(
            "integrand t*exp(Gamma(t)/(2 lambda)) does not decay; need theta2 > theta0")

    # output nodes: geometric refinement toward 0 where curvature concentrates
    grid = np.concatenate([[0.0], np.geomspace(1e-6 * r_max, r_max, n_nodes)])
    sub = 16
    ss = np.concatenate(
        [np.linspace(grid[i], grid[i + 1], sub, endpoint=False) for i in range(n_nodes)]
        + [[r_max]])
    node_idx = np.arange(0, n_nodes * sub + 1, sub)

    # J(s) = int_s^{T*} f in log space, right-to-left
    log_dj = _log_gl_integrals(log_f, ss[:-1], ss[1:])
    tail_edges = np.linspace(r_max, t_star, 4097)
    log_dj_tail = _log_gl_integrals(log_f, tail_edges[:-1], tail_edges[1:])
    m = np.max(log_dj_tail)
    log_j_tail = float(m + np.log(np.sum(np.exp(log_dj_tail - m))))
    log_j_ss = _log_accumulate_right(log_dj, log_j_tail)
    log_j_full = np.concatenate([log_j_ss, [log_j_tail]])

    log_env = -g.gamma_integral(ss) / lam2
    log_dpsi_ss = log_env + log_j_full
    # J at substep midpoints feeds the Simpson rule for psi itself
    mids = 0.5 * (ss[:-1] + ss[1:])
    log_j_mid = np.logaddexp(log_j_full[1:], _log_gl_integrals(log_f, mids, ss[1:]))
    log_dpsi_mid = -g.gamma_integral(mids) / lam2 + log_j_mid

    dpsi_ss = np.exp(log_dpsi_ss)
    dpsi_mid = np.exp(log_dpsi_mid)
    h = np.diff(ss)
    dpsi_inc = (h / 6.0) * (dpsi_ss[:-1] + 4.0 * dpsi_mid + dpsi_ss[1:])
    psi_ss = np.concatenate([[0.0], np.cumsum(dpsi_inc)])

    log_outer = float(np.logaddexp(
        _reduce_logsum(log_dj), log_j_tail))
    return grid, psi_ss[node_idx], log_dpsi_ss[node_idx], log_outer


def _reduce_logsum(log_terms: Array) -> float:
    m = float(np.max(log_terms))
    if not np.isfinite(m):
        return -math.inf
    return m + float(np.log(np.sum(np.exp(log_terms - m))))


def build_psi_explicit(g: GammaSpec, n_nodes: int = DEFAULT_NODES,
                       r_max: Optional[float] = None) -> PsiFunction:
    """Tabulate psi(r) = int_0^r exp(-Gamma(s)/2L) int_s^inf t exp(Gamma(t)/2L) dt ds.

    The resulting table solves 2*lambda*psi'' + gamma*psi' = -2*lambda*r; the
    second derivative is stored through that identity, and unit tests verify
    it against finite differences of the tabulated psi'.  The function is
    concave with terminal slope 2*lambda/(theta2-theta0); concavity is
    verified on the table before the flag is set.
    """
    grid, values, log_dpsi, _ = _psi_quadrature(g, n_nodes, r_max)
    deriv1 = np.exp(log_dpsi)
    deriv2 = -g.gamma(grid) * deriv1 / (2.0 * g.lambda_iso) - grid
    concave = bool(np.all(deriv2 <= 1e-9 * (1.0 + grid)))
    if not concave:
        raise SolverError("explicit psi failed the concavity verification")
    return PsiFunction(grid, values, deriv1, deriv2, l=None, concave=True)


@dataclass(frozen=True)
class G2Constants:
    """Contraction constants of the explicit-psi route.

    q = 2*lambda/I, theta = varphi*(theta2-theta0)*I/(2*lambda), k = q - theta
    with I the truncated outer integral; ``nc_bound`` is the interaction
    smallness threshold 4*lambda^2 / ((theta2-theta0) * I^2) and ``nc_ok``
    states varphi < nc_bound, which is equivalent to k > 0.
    """

    q: float
    theta: float
    k: float
    integral_i: float
    nc_bound: float
    nc_ok: bool


def rate_constants_g2(g: GammaSpec, varphi: float,
                      n_nodes: int = DEFAULT_NODES) -> G2Constants:
    """Rate constants from the gamma envelope and measure-Lipschitz strength varphi."""
    if varphi < 0:
        raise ValueError("varphi must be nonnegative")
    lam2 = 2.0 * g.lambda_iso
    _, _, _, log_outer = _psi_quadrature(g, n_nodes, None)
    integral = math.exp(log_outer)
    q = lam2 / integral
    theta = varphi * g.contraction_gap * integral / lam2
    nc_bound = lam2**2 / (g.contraction_gap * integral**2)
    return G2Constants(q=q, theta=theta, k=q - theta, integral_i=integral,
                       nc_bound=nc_bound, nc_ok=varphi < nc_bound)
