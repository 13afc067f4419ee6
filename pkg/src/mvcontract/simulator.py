"""Euler-Maruyama interacting-particle simulation with reflection and
synchronous couplings.

Two N-particle ensembles approximate the two marginal laws; each side's drift
uses its own empirical measure.  A coupled pair (X_i, Y_i) shares the Brownian
increment streams B1 (isotropic channel) and B2 (residual channel).  Before
the pair's coupling time, the Y side sees the B1 increment reflected across
the unit separation vector u = (X_i - Y_i)/|X_i - Y_i| (multiplication by
I - 2 u u^T); the B2 increment passes through sigma_hat(Y_i) unreflected
(parallel displacement).  Once |X_i - Y_i| falls below the coupling threshold
the pair switches to the synchronous regime permanently: the processes are
not forced together, because differing marginal laws may re-separate them.

The noise is a pure function of (seed, step, channel, particle), so the X
ensemble of a coupled run is bit-identical to a stand-alone run of the same
seed: the Y side never perturbs X's stream consumption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BlowUpError, FitError, StructureError
from .model import CoefficientSet, evaluate_drift_batch
from .rng import CHANNEL_ISO, CHANNEL_RESID, NoiseField, aux_generator

Array = np.ndarray

BLOWUP_LIMIT = 1e12


@dataclass
class SimConfig:
    """Particle-run parameters; eps_couple=None defaults to sqrt(alpha*h)."""

    n_particles: int
    h: float
    t_final: float
    seed: int = 0
    eps_couple: Optional[float] = None
    record_every: int = 50
    subsample: Optional[int] = None

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least 2 particles")
        if self.h <= 0 or self.t_final < self.h:
            raise ValueError("need h > 0 and t_final >= h")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.h))

    def resolved_eps(self, alpha: float) -> float:
        if self.eps_couple is not None:
            return self.eps_couple
        return math.sqrt(max(alpha, 0.0) * self.h)


@dataclass
class ParticleEnsemble:
    states: Array
    time: float = 0.0
    step_index: int = 0
    noise: Optional[NoiseField] = None

    @classmethod
    def create(cls, states: Array, seed: int) -> "ParticleEnsemble":
        states = np.array(states, dtype=float)
        n, d = states.shape
        return cls(states=states, noise=NoiseField(seed, n, d))

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def _check_finite(states: Array, step: int) -> None:
    bad = np.abs(states) > BLOWUP_LIMIT
    if bad.any() or not np.all(np.isfinite(states)):
        finite = np.isfinite(states)
        rows = np.where(bad.any(axis=1) | ~finite.all(axis=1))[0]
        raise BlowUpError(
            f"particle {rows[0]} left the admissible region at step {step}",
            particle=int(rows[0]), step=step)


def _apply_noise(states: Array, coeffs: CoefficientSet, xi1: Optional[Array],
                 xi2: Optional[Array], h: float) -> Array:
    out = states
    if xi1 is not None and coeffs.alpha > 0.0:
        out = out + math.sqrt(coeffs.alpha * h) * xi1
    if xi2 is not None and coeffs.sigma_hat is not None:
        s = coeffs.sigma_hat(states)
        out = out + math.sqrt(h) * np.einsum("nij,nj->ni", s, xi2)
    return out


def step_em(ens: ParticleEnsemble, coeffs: CoefficientSet, h: float) -> ParticleEnsemble:
    """One Euler-Maruyama step of the interacting-particle system."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = ens.states
    drift = evaluate_drift_batch(coeffs, x, x)
    xi1 = ens.noise.normals(ens.step_index, CHANNEL_ISO) if coeffs.alpha > 0 else None
    xi2 = ens.noise.normals(ens.step_index, CHANNEL_RESID) if coeffs.sigma_hat is not None else None
    new = _apply_noise(x + h * drift, coeffs, xi1, xi2, h)
    _check_finite(new, ens.step_index)
    ens.states = new
    ens.time += h
    ens.step_index += 1
    return ens


@dataclass
class CoupledEnsemble:
    x: ParticleEnsemble
    y: ParticleEnsemble
    coupled: Array = field(default=None)
    tau: Array = field(default=None)

    def __post_init__(self):
        if self.x.states.shape != self.y.states.shape:
            raise ValueError("coupled ensembles must have equal shape")
        if self.x.noise is not self.y.noise:
            raise ValueError("coupled ensembles must share one noise field")
        n = self.x.n
        if self.coupled is None:
            self.coupled = np.zeros(n, dtype=bool)
        if self.tau is None:
            self.tau = np.full(n, np.inf)

    @classmethod
    def create(cls, x0: Array, y0: Array, seed: int) -> "CoupledEnsemble":
        x = ParticleEnsemble.create(x0, seed)
        y = ParticleEnsemble(states=np.array(y0, dtype=float), noise=x.noise)
        return cls(x=x, y=y)

    @property
    def n_coupled(self) -> int:
        return int(np.sum(self.coupled))

    def gaps(self) -> Array:
        return np.linalg.norm(self.x.states - self.y.states, axis=1)


def _advance_pair(ce: CoupledEnsemble, h: float) -> None:
    for ens in (ce.x, ce.y):
        ens.time += h
        ens.step_index += 1


def step_coupled(ce: CoupledEnsemble, coeffs_x: CoefficientSet,
                 coeffs_y: CoefficientSet, h: float, eps_couple: float) -> CoupledEnsemble:
    """Reflection coupling step; pairs turn synchronous at their coupling time.

    The reflection acts only on the isotropic channel and only while the pair
    is uncoupled; coupling status is monotone (the indicator 1_{t < tau}).
    """
    if coeffs_x.alpha <= 0.0:
        raise StructureError("reflection coupling requires alpha > 0")
    x, y = ce.x.states, ce.y.states
    step = ce.x.step_index
    t_now = ce.x.time

    gap_pre = np.linalg.norm(x - y, axis=1)
    hit_zero = (~ce.coupled) & (gap_pre == 0.0)
    if hit_zero.any():
        ce.coupled |= hit_zero
        ce.tau[hit_zero] = t_now

    bx = evaluate_drift_batch(coeffs_x, x, x)
    by = evaluate_drift_batch(coeffs_y, y, y)
    xi1 = ce.x.noise.normals(step, CHANNEL_ISO)
    need_resid = coeffs_x.sigma_hat is not None or coeffs_y.sigma_hat is not None
    xi2 = ce.x.noise.normals(step, CHANNEL_RESID) if need_resid else None

    # Y-side isotropic increment: reflected across u for uncoupled pairs
    xi1_y = xi1.copy()
    free = ~ce.coupled
    if free.any():
        u = (x[free] - y[free]) / gap_pre[free, None]
        proj = np.einsum("ni,ni->n", u, xi1[free])
        xi1_y[free] = xi1[free] - 2.0 * proj[:, None] * u

    new_x = _apply_noise(x + h * bx, coeffs_x, xi1, xi2, h)
    new_y = _apply_noise(y + h * by, coeffs_y, xi1_y, xi2, h)
    _check_finite(new_x, step)
    _check_finite(new_y, step)
    ce.x.states, ce.y.states = new_x, new_y
    _advance_pair(ce, h)

    gap_post = ce.gaps()
    newly = (~ce.coupled) & (gap_post <= eps_couple)
    if newly.any():
        ce.coupled |= newly
        ce.tau[newly] = ce.x.time
    return ce


def _require_diagonal(coeffs: CoefficientSet, probe: Array) -> None:
    if coeffs.sigma_hat is None:
        return
    s = coeffs.sigma_hat(probe)
    off = s - s * np.eye(probe.shape[1])[None, :, :]
    if np.max(np.abs(off)) > 1e-12:
        raise StructureError("synchronous coupling requires diagonal diffusion")


def step_synchronous(ce: CoupledEnsemble, coeffs_x: CoefficientSet,
                     coeffs_y: CoefficientSet, h: float) -> CoupledEnsemble:
    """Both sides driven by identical noise increments, componentwise."""
    x, y = ce.x.states, ce.y.states
    step = ce.x.step_index
    _require_diagonal(coeffs_x, x[:1])
    _require_diagonal(coeffs_y, y[:1])
    bx = evaluate_drift_batch(coeffs_x, x, x)
    by = evaluate_drift_batch(coeffs_y, y, y)
    xi1 = ce.x.noise.normals(step, CHANNEL_ISO) if (coeffs_x.alpha > 0 or coeffs_y.alpha > 0) else None
    need_resid = coeffs_x.sigma_hat is not None or coeffs_y.sigma_hat is not None
    xi2 = ce.x.noise.normals(step, CHANNEL_RESID) if need_resid else None
    new_x = _apply_noise(x + h * bx, coeffs_x, xi1, xi2, h)
    new_y = _apply_noise(y + h * by, coeffs_y, xi1, xi2, h)
    _check_finite(new_x, step)
    _check_finite(new_y, step)
    ce.x.states, ce.y.states = new_x, new_y
    _advance_pair(ce, h)
    return ce


def order_violation_count(ce: CoupledEnsemble) -> int:
    """Number of (pair, component) entries with X < Y at the current state."""
    return int(np.sum(ce.x.states < ce.y.states))
