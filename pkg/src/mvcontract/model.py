"""Coefficient sets, interaction kernels and structural hypothesis checks.

Conventions used throughout the package: a batch of points is an ``(n, d)``
array; coefficient callables are vectorized over the batch axis.

    base_drift(X)  -> (n, d)        distribution-free drift part
    sigma_hat(X)   -> (n, d, d)     residual diffusion factor (None means 0)
    V(X)           -> (n,)          Lyapunov weight
    grad_V(X)      -> (n, d)
    hess_V(X)      -> (n, d, d)

Diffusion matrices follow the decomposition a(x) = alpha * I + sigma_hat(x)
sigma_hat(x)^T, so the isotropic intensity is always available in closed form
for the reflection coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericsError

Array = np.ndarray

# Pairwise interaction tensors are evaluated in row blocks capped at this many
# scalar entries to bound peak memory on large ensembles.
_PAIR_BLOCK = 4_000_000


def as_batch(x) -> Array:
    """Coerce a point or batch of points to an (n, d) float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x.reshape(1, -1)
    if x.ndim != 2:
        raise ValueError(f"expected point batch, got shape {x.shape}")
    return x


class PairwiseKernel:
    """Interaction b_i(x, mu) = mean_y Z(x, y) against the empirical measure.

    ``z(X, Y)`` must return the (n, m, d) tensor of kernel values.  An exact
    ``mean`` override can be supplied when the empirical average has a closed
    form (separable or affine kernels); it must agree with the direct mean.
    """

    tag = "pairwise_z"

    def __init__(self, z: Callable[[Array, Array], Array],
                 mean: Optional[Callable[[Array, Array], Array]] = None):
        self.z = z
        self.mean = mean

    def mean_drift(self, x: Array, ensemble: Array) -> Array:
        if self.mean is not None:
            return self.mean(x, ensemble)
        n, d = x.shape
        m = ensemble.shape[0]
        out = np.empty((n, d))
        rows = max(1, _PAIR_BLOCK // max(1, m * d))
        for i0 in range(0, n, rows):
            i1 = min(n, i0 + rows)
            out[i0:i1] = np.mean(self.z(x[i0:i1], ensemble), axis=1)
        return out


class GradientKernel:
    """Interaction -mean_z grad_x W(x, z): the granular-media drift term."""

    tag = "gradient_w"

    def __init__(self, grad_w: Callable[[Array, Array], Array],
                 mean_grad: Optional[Callable[[Array, Array], Array]] = None):
        self.grad_w = grad_w
        self.mean_grad = mean_grad

    def mean_drift(self, x: Array, ensemble: Array) -> Array:
        if self.mean_grad is not None:
            return -self.mean_grad(x, ensemble)
        n, d = x.shape
        m = ensemble.shape[0]
        out = np.empty((n, d))
        rows = max(1, _PAIR_BLOCK // max(1, m * d))
        for i0 in range(0, n, rows):
            i1 = min(n, i0 + rows)
            out[i0:i1] = -np.mean(self.grad_w(x[i0:i1], ensemble), axis=1)
        return out


class MomentKernel:
    """Interaction eps * Phi(x, log mu(V)) through a scalar moment of the law.

    Phi must be C^1 and bounded together with its first derivatives; the
    declared bounds feed the rate certificates.
    """

    tag = "moment_phi"

    def __init__(self, phi: Callable[[Array, float], Array], eps: float,
                 v: Callable[[Array], Array],
                 phi_bound: float = 1.0, dphi_ds_bound: float = 1.0,
                 dphi_dx_bound: float = 1.0):
        self.phi = phi
        self.eps = float(eps)
        self.v = v
        self.phi_bound = float(phi_bound)
        self.dphi_ds_bound = float(dphi_ds_bound)
        self.dphi_dx_bound = float(dphi_dx_bound)

    def log_moment(self, ensemble: Array) -> float:
        mean_v = float(np.mean(self.v(ensemble)))
        if mean_v <= 0.0:
            raise DomainError(f"mean of V over ensemble is {mean_v}; log undefined")
        return float(np.log(mean_v))

    def mean_drift(self, x: Array, ensemble: Array) -> Array:
        return self.eps * self.phi(x, self.log_moment(ensemble))


InteractionKernel = Optional[PairwiseKernel | GradientKernel | MomentKernel]


@dataclass(frozen=True)
class LyapunovSpec:
    """Weight function V with its derivatives and fitted drift-domination constants.

    K0, K1 are the constants of the linear Lyapunov bound L V <= K0 - K1 V;
    beta is the weight in the cost 1 + beta V(x) + beta V(y) and l the
    distance cutoff of the truncated distance-shaping function.
    """

    v: Callable[[Array], Array]
    grad_v: Callable[[Array], Array]
    k0: float
    k1: float
    beta: float
    l: float
    hess_v: Optional[Callable[[Array], Array]] = None


@dataclass(frozen=True)
class CoefficientSet:
    """Drift/diffusion data of one McKean-Vlasov equation.

    The diffusion matrix is a(x) = alpha * I_d + sigma_hat(x) sigma_hat(x)^T;
    ``sigma_hat=None`` encodes sigma_hat == 0.
    """

    dim: int
    alpha: float
    base_drift: Callable[[Array], Array]
    sigma_hat: Optional[Callable[[Array], Array]] = None
    interaction: InteractionKernel = None
    lyapunov: Optional[LyapunovSpec] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def evaluate_drift_batch(coeffs: CoefficientSet, x: Array, ensemble: Array) -> Array:
    """Full drift b(x, mu_hat) for a batch of points against one ensemble."""
    x = as_batch(x)
    ensemble = as_batch(ensemble)
    if ensemble.shape[0] == 0:
        raise ValueError("ensemble must be nonempty")
    out = np.array(coeffs.base_drift(x), dtype=float, copy=True)
    if out.shape != x.shape:
        raise NumericsError(f"base_drift returned shape {out.shape}, expected {x.shape}")
    if coeffs.interaction is not None:
        out += coeffs.interaction.mean_drift(x, ensemble)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NumericsError(f"non-finite drift at batch row {bad[0]}")
    return out


def evaluate_drift(coeffs: CoefficientSet, x, ensemble) -> Array:
    """Drift at a single point; the law is the empirical measure of ``ensemble``."""
    if not np.all(np.isfinite(np.asarray(x, dtype=float))):
        raise DomainError("query point is not finite")
    return evaluate_drift_batch(coeffs, x, ensemble)[0]


def diffusion_matrix(coeffs: CoefficientSet, x) -> Array:
    """a(x) = alpha I + sigma_hat sigma_hat^T, batched to (n, d, d)."""
    x = as_batch(x)
    n, d = x.shape
    a = np.zeros((n, d, d))
    a[:, np.arange(d), np.arange(d)] = coeffs.alpha
    if coeffs.sigma_hat is not None:
        s = coeffs.sigma_hat(x)
        a += np.einsum("nij,nkj->nik", s, s)
    return a


# ---------------------------------------------------------------------------
# finite differences (fallbacks when analytic derivatives are not supplied)

def fd_gradient(f: Callable[[Array], Array], x: Array, h: float = 1e-5) -> Array:
    x = as_batch(x)
    n, d = x.shape
    g = np.empty((n, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        g[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_hessian(f: Callable[[Array], Array], x: Array, h: float = 1e-4) -> Array:
    """Central second differences of a scalar field, batched to (n, d, d)."""
    x = as_batch(x)
    n, d = x.shape
    out = np.empty((n, d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        out[:, i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            mixed = (f(x + ei + ej) - f(x + ei - ej)
                     - f(x - ei + ej) + f(x - ei - ej)) / (4 * h**2)
            out[:, i, j] = mixed
            out[:, j, i] = mixed
    return out


# ---------------------------------------------------------------------------
# hypothesis checks (probe-based; they report the worst probe, not a proof)

def generator_values(coeffs: CoefficientSet, spec: "LyapunovSpec", x: Array,
                     ensemble: Array) -> tuple[Array, Array]:
    """(L_mu V(x), V(x)) on a probe batch, with mu the ensemble's empirical law."""
    x = as_batch(x)
    v = np.asarray(spec.v(x), dtype=float)
    g = np.asarray(spec.grad_v(x), dtype=float)
    hess = spec.hess_v(x) if spec.hess_v is not None else fd_hessian(spec.v, x)
    diff_term = 0.5 * coeffs.alpha * np.einsum("nii->n", hess)
    if coeffs.sigma_hat is not None:
        s = coeffs.sigma_hat(x)
        diff_term = diff_term + 0.5 * np.einsum("nij,nkj,nik->n", s, s, hess)
    b = evaluate_drift_batch(coeffs, x, as_batch(ensemble))
    return diff_term + np.einsum("ni,ni->n", b, g), v


@dataclass
class LyapunovReport:
    """Outcome of probing L_mu V <= K0 - K1 V over points x and laws mu."""

    h12_max: float
    worst_point: Array
    worst_law: int
    h11_max: float
    ok: bool


def check_lyapunov(coeffs: CoefficientSet, spec: LyapunovSpec, probe,
                   law_probe: Sequence[Array], tol: float = 1e-9) -> LyapunovReport:
    """Probe the drift-domination bound L_mu V - (K0 - K1 V) <= 0.

    Returns the maximum residual over the probe set together with the (H11)
    ratio max |sigma^T grad V| / (1 + V).  Nonpositive ``h12_max`` certifies
    the bound on the probes only.
    """
    x = as_batch(probe)
    v = np.asarray(spec.v(x), dtype=float)
    g = np.asarray(spec.grad_v(x), dtype=float)
    hess = spec.hess_v(x) if spec.hess_v is not None else fd_hessian(spec.v, x)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g)) and np.all(np.isfinite(hess))):
        bad = int(np.argmax(~np.isfinite(v)))
        raise NumericsError(f"non-finite V data at probe {x[bad]}")

    # (1/2) tr(a hess V): isotropic part exactly, residual part via sigma_hat
    diff_term = 0.5 * coeffs.alpha * np.einsum("nii->n", hess)
    grad_sq = np.einsum("ni,ni->n", g, g)
    sig_grad_sq = coeffs.alpha * grad_sq
    if coeffs.sigma_hat is not None:
        s = coeffs.sigma_hat(x)
        diff_term = diff_term + 0.5 * np.einsum("nij,nkj,nik->n", s, s, hess)
        stg = np.einsum("nji,nj->ni", s, g)
        sig_grad_sq = sig_grad_sq + np.einsum("ni,ni->n", stg, stg)

    bound = spec.k0 - spec.k1 * v
    worst = -np.inf
    worst_point = x[0]
    worst_law = 0
    for k, ens in enumerate(law_probe):
        b = evaluate_drift_batch(coeffs, x, as_batch(ens))
        lv = diff_term + np.einsum("ni,ni->n", b, g)
        res = lv - bound
        i = int(np.argmax(res))
        if res[i] > worst:
            worst = float(res[i])
            worst_point = x[i].copy()
            worst_law = k
    h11 = float(np.max(np.sqrt(sig_grad_sq) / (1.0 + v)))
    return LyapunovReport(h12_max=worst, worst_point=worst_point,
                          worst_law=worst_law, h11_max=h11, ok=worst <= tol)


@dataclass
class Cc1Report:
    ok: bool
    min_margin: float
    worst_x: Array
    worst_z: Array


def check_cc1(hess_g: Callable[[Array], Array],
              hess_w_x: Optional[Callable[[Array, Array], Array]],
              lambda0: float, theta1: float, theta2: float,
              x_probe, z_probe=None, tol: float = 1e-9) -> Cc1Report:
    """Probe the split convexity bound on the Hessian of G + W(., z).

    The minimum eigenvalue of hess_x(G + W(., z)) must be >= theta2 outside
    the ball of radius lambda0 and >= -theta1 inside it, for every probed z.
    """
    x = as_batch(x_probe)
    zs = as_batch(z_probe) if z_probe is not None else np.zeros((1, x.shape[1]))
    radius = np.linalg.norm(x, axis=1)
    required = np.where(radius >= lambda0, theta2, -theta1)
    min_margin = np.inf
    worst_x = x[0]
    worst_z = zs[0]
    for z in zs:
        h = np.asarray(hess_g(x), dtype=float)
        if hess_w_x is not None:
            h = h + hess_w_x(x, z.reshape(1, -1))
        if not np.all(np.isfinite(h)):
            raise NumericsError("non-finite Hessian during (CC1) probe")
        lam_min = np.linalg.eigvalsh(h)[:, 0]
        margin = lam_min - required
        i = int(np.argmin(margin))
        if margin[i] < min_margin:
            min_margin = float(margin[i])
            worst_x = x[i].copy()
            worst_z = z.copy()
    return Cc1Report(ok=min_margin >= -tol, min_margin=min_margin,
                     worst_x=worst_x, worst_z=worst_z)


@dataclass
class DecompositionReport:
    max_psd_violation: float
    max_asymmetry: float
    sigma_lipschitz: float
    ok: bool


def check_decomposition(coeffs: CoefficientSet, probe, tol: float = 1e-12) -> DecompositionReport:
    """Verify a(x) - alpha I is symmetric PSD and sigma_hat looks locally Lipschitz."""
    x = as_batch(probe)
    a = diffusion_matrix(coeffs, x)
    d = coeffs.dim
    resid = a - coeffs.alpha * np.eye(d)
    asym = float(np.max(np.abs(resid - np.swapaxes(resid, 1, 2))))
    eigs = np.linalg.eigvalsh(0.5 * (resid + np.swapaxes(resid, 1, 2)))
    psd_violation = float(max(0.0, -np.min(eigs)))
    lip = 0.0
    if coeffs.sigma_hat is not None and x.shape[0] >= 2:
        s = coeffs.sigma_hat(x)
        # max finite-difference ratio over consecutive probe pairs
        dx = np.linalg.norm(x[1:] - x[:-1], axis=1)
        ds = np.linalg.norm((s[1:] - s[:-1]).reshape(len(dx), -1), axis=1)
        mask = dx > 1e-12
        if np.any(mask):
            lip = float(np.max(ds[mask] / dx[mask]))
        if not np.isfinite(lip):
            raise NumericsError("sigma_hat finite-difference Lipschitz estimate diverged")
    ok = psd_violation <= tol and asym <= tol and np.isfinite(lip)
    return DecompositionReport(max_psd_violation=psd_violation,
                               max_asymmetry=asym, sigma_lipschitz=lip, ok=ok)
