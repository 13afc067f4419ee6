"""Built-in scenario families and scenario-file ingestion.

Four families are registered:

``ou``               linear drift -rate*x, isotropic noise; the analytic
                     sanity case (stationary variance alpha/(2*rate)).
``example21``        fully non-dissipative base drift -|x|^{-p} x glued to an
                     odd C^1 cubic inside the unit ball, with the bounded
                     moment interaction eps * Phi(x, log mu(V)) and weight
                     V(x) = exp((1+|x|^2)^{p/2}).
``granular``         granular-media drift -grad G - grad W * mu with a
                     quartic double well (or harmonic well) and quadratic
                     interaction; the long-distance dissipative regime.
``orderpreserving``  diagonal-noise componentwise system whose drift is built
                     from an increasing phi with phi(r) = sgn(r) e^{eps|r|}
                     outside [-1, 1]; interaction pulls toward the mean of
                     phi, giving theta1 = theta2 = alpha_int.

Scenario files are a flat TOML-style text format with named presets only;
custom coefficient sets are constructed programmatically via CoefficientSet.
Built-in names are resolved before any filesystem lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tomlmini
from .errors import ScenarioFormatError
from .model import (CoefficientSet, GradientKernel, LyapunovSpec, MomentKernel,
                    PairwiseKernel, as_batch)
from .simulator import SimConfig

Array = np.ndarray

BUILTIN_NAMES = ("ou", "example21", "granular", "orderpreserving")


@dataclass(frozen=True)
class SamplerSpec:
    """Named initial-law preset: normal(mean, sd), uniform(lo, hi) or point(at)."""

    kind: str
    mean: tuple = (0.0,)
    sd: float = 1.0
    lo: float = -1.0
    hi: float = 1.0

    def draw(self, n: int, dim: int, rng: np.random.Generator) -> Array:
        if self.kind == "normal":
            mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (dim,))
            return rng.normal(0.0, 1.0, (n, dim)) * self.sd + mean
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, (n, dim))
        if self.kind == "point":
            mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (dim,))
            return np.tile(mean, (n, 1))
        raise ScenarioFormatError(f"unknown sampler kind {self.kind!r}")


@dataclass(frozen=True)
class FpeConfig:
    """1-d Fokker-Planck cross-validation solve parameters."""

    x_lo: float
    x_hi: float
    n_cells: int = 512
    t_final: float = 2.0
    dt: Optional[float] = None
    scheme: str = "explicit"


@dataclass
class Scenario:
    name: str
    family: str
    dim: int
    params: dict
    sim: SimConfig
    mu0: SamplerSpec
    nu0: SamplerSpec
    psi_kind: str = "identity"
    fpe: Optional[FpeConfig] = None
    out_dir: str = "out"
    coefficients: CoefficientSet = field(default=None, repr=False, compare=False)
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    def rebuild(self) -> "Scenario":
        """Reconstruct coefficient callables from (family, dim, params)."""
        builder = _FAMILY_BUILDERS.get(self.family)
        if builder is None:
            raise ScenarioFormatError(f"unknown scenario family {self.family!r}")
        coeffs, extras = builder(self.dim, self.params)
        self.coefficients = coeffs
        self.extras = extras
        return self

    # -- serialization ------------------------------------------------------

    def to_sections(self) -> dict:
        sections = {
            ("scenario",): {
                "name": self.name,
                "family": self.family,
                "dim": int(self.dim),
                "psi": self.psi_kind,
                "out_dir": self.out_dir,
            },
            ("params",): {k: self.params[k] for k in sorted(self.params)},
            ("sim",): _sim_to_kv(self.sim),
            ("init", "mu0"): _sampler_to_kv(self.mu0),
            ("init", "nu0"): _sampler_to_kv(self.nu0),
        }
        if self.fpe is not None:
            kv = {"x_lo": self.fpe.x_lo, "x_hi": self.fpe.x_hi,
                  "n_cells": int(self.fpe.n_cells), "t_final": self.fpe.t_final,
                  "scheme": self.fpe.scheme}
            if self.fpe.dt is not None:
                kv["dt"] = self.fpe.dt
            sections[("fpe",)] = kv
        return sections

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.to_sections() == other.to_sections()


def _sim_to_kv(sim: SimConfig) -> dict:
    kv = {"n_particles": int(sim.n_particles), "h": sim.h, "t_final": sim.t_final,
          "seed": int(sim.seed), "record_every": int(sim.record_every)}
    if sim.eps_couple is not None:
        kv["eps_couple"] = sim.eps_couple
    if sim.subsample is not None:
        kv["subsample"] = int(sim.subsample)
    return kv


def _sampler_to_kv(s: SamplerSpec) -> dict:
    if s.kind == "normal":
        return {"kind": "normal", "mean": list(s.mean), "sd": s.sd}
    if s.kind == "uniform":
        return {"kind": "uniform", "lo": s.lo, "hi": s.hi}
    return {"kind": "point", "mean": list(s.mean)}


def _need(kv: dict, key: str, where: str):
    if key not in kv:
        raise ScenarioFormatError(f"missing required field {key!r} in [{where}]")
    return kv[key]


def _sampler_from_kv(kv: dict, where: str) -> SamplerSpec:
    kind = _need(kv, "kind", where)
    if kind == "normal":
        mean = kv.get("mean", [0.0])
        return SamplerSpec(kind="normal", mean=tuple(float(m) for m in mean),
                           sd=float(kv.get("sd", 1.0)))
    if kind == "uniform":
        return SamplerSpec(kind="uniform", lo=float(_need(kv, "lo", where)),
                           hi=float(_need(kv, "hi", where)))
    if kind == "point":
        return SamplerSpec(kind="point", mean=tuple(float(m) for m in _need(kv, "mean", where)))
    raise ScenarioFormatError(f"unknown sampler kind {kind!r} in [{where}]")


def scenario_from_sections(sections: dict) -> Scenario:
    sc = sections.get(("scenario",))
    if sc is None:
        raise ScenarioFormatError("missing [scenario] section")
    family = _need(sc, "family", "scenario")
    if family not in _FAMILY_BUILDERS:
        raise ScenarioFormatError(f"unknown scenario family {family!r}")
    dim = _need(sc, "dim", "scenario")
    if not isinstance(dim, int) or dim < 1:
        raise ScenarioFormatError(f"field 'dim' must be a positive integer, got {dim!r}")
    sim_kv = sections.get(("sim",))
    if sim_kv is None:
        raise ScenarioFormatError("missing [sim] section")
    sim = SimConfig(
        n_particles=int(_need(sim_kv, "n_particles", "sim")),
        h=float(_need(sim_kv, "h", "sim")),
        t_final=float(_need(sim_kv, "t_final", "sim")),
        seed=int(sim_kv.get("seed", 0)),
        eps_couple=(float(sim_kv["eps_couple"]) if "eps_couple" in sim_kv else None),
        record_every=int(sim_kv.get("record_every", 50)),
        subsample=(int(sim_kv["subsample"]) if "subsample" in sim_kv else None),
    )
    fpe = None
    if ("fpe",) in sections:
        fk = sections[("fpe",)]
        fpe = FpeConfig(x_lo=float(_need(fk, "x_lo", "fpe")),
                        x_hi=float(_need(fk, "x_hi", "fpe")),
                        n_cells=int(fk.get("n_cells", 512)),
                        t_final=float(fk.get("t_final", 2.0)),
                        dt=(float(fk["dt"]) if "dt" in fk else None),
                        scheme=str(fk.get("scheme", "explicit")))
    mu0 = _sampler_from_kv(sections.get(("init", "mu0"), {}), "init.mu0")
    nu0 = _sampler_from_kv(sections.get(("init", "nu0"), {}), "init.nu0")
    scen = Scenario(name=str(sc.get("name", family)), family=family, dim=dim,
                    params=dict(sections.get(("params",), {})), sim=sim,
                    mu0=mu0, nu0=nu0, psi_kind=str(sc.get("psi", "identity")),
                    fpe=fpe, out_dir=str(sc.get("out_dir", "out")))
    return scen.rebuild()


def emit_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(tomlmini.emit(scenario.to_sections()), encoding="utf-8")


def load_scenario(name_or_path, **overrides) -> Scenario:
    """Resolve a built-in scenario name, else parse a scenario file."""
    key = str(name_or_path)
    if key in BUILTIN_NAMES:
        return builtin_scenario(key, **overrides)
    text = Path(name_or_path).read_text(encoding="utf-8")
    scen = scenario_from_sections(tomlmini.parse(text))
    if overrides:
        scen = _apply_overrides(scen, overrides)
    return scen


def _apply_overrides(scen: Scenario, overrides: dict) -> Scenario:
    sim_fields = {"n_particles", "h", "t_final", "seed", "eps_couple",
                  "record_every", "subsample"}
    sim_kv = {k: v for k, v in overrides.items() if k in sim_fields}
    if sim_kv:
        scen.sim = replace(scen.sim, **sim_kv)
    for k, v in overrides.items():
        if k in sim_fields:
            continue
        if k in ("dim", "psi_kind", "mu0", "nu0", "fpe", "out_dir", "name"):
            setattr(scen, k, v)
        else:
            scen.params[k] = v
    return scen.rebuild()


# ---------------------------------------------------------------------------
# family builders

def _build_ou(dim: int, params: dict):
    alpha = float(params.setdefault("alpha", 1.0))
    rate = float(params.setdefault("rate", 1.0))

    def base_drift(x):
        return -rate * x

    def v(x):
        return np.einsum("ni,ni->n", x, x)

    def grad_v(x):
        return 2.0 * x

    def hess_v(x):
        n, d = x.shape
        return np.broadcast_to(2.0 * np.eye(d), (n, d, d)).copy()

    lyap = LyapunovSpec(v=v, grad_v=grad_v, k0=alpha * dim, k1=2.0 * rate,
                        beta=0.05, l=4.0, hess_v=hess_v)
    coeffs = CoefficientSet(dim=dim, alpha=alpha, base_drift=base_drift,
                            sigma_hat=None, interaction=None, lyapunov=lyap)
    extras = {
        "stationary_var": alpha / (2.0 * rate),
        "fpe_a": (lambda x: np.full_like(np.asarray(x, dtype=float), alpha)),
        "fpe_dG": (lambda x: rate * np.asarray(x, dtype=float)),
        "fpe_W": None,
        "fpe_dW": None,
    }
    return coeffs, extras


def _example21_weight(p: float):
    """V(x) = exp((1+|x|^2)^{p/2}) with analytic first/second derivatives."""

    def parts(x):
        s = np.einsum("ni,ni->n", x, x)
        base = 1.0 + s
        g = base ** (p / 2.0)
        return s, base, g

    def v(x):
        return np.exp(parts(x)[2])

    def grad_v(x):
        _, base, g = parts(x)
        gg = p * base ** (p / 2.0 - 1.0)
        return np.exp(g)[:, None] * gg[:, None] * x

    def hess_v(x):
        n, d = x.shape
        _, base, g = parts(x)
        c1 = p * base ** (p / 2.0 - 1.0)              # grad g = c1 * x
        c2 = p * (p - 2.0) * base ** (p / 2.0 - 2.0)  # x x^T part of hess g
        eye = np.eye(d)
        xxt = np.einsum("ni,nj->nij", x, x)
        hess_g = c1[:, None, None] * eye[None, :, :] + c2[:, None, None] * xxt
        grad_g = c1[:, None] * x
        outer = np.einsum("ni,nj->nij", grad_g, grad_g)
        return np.exp(g)[:, None, None] * (outer + hess_g)

    return v, grad_v, hess_v


def _build_example21(dim: int, params: dict):
    p = float(params.setdefault("p", 0.5))
    eps = float(params.setdefault("eps", 0.01))
    alpha = float(params.setdefault("alpha", 1.0))
    if not (0.0 < p <= 1.0):
        raise ScenarioFormatError("example21 requires p in (0, 1]")

    def base_drift(x):
        r = np.sqrt(np.einsum("ni,ni->n", x, x))
        inner = (1.0 + p / 2.0) - (p / 2.0) * r**2
        outer = np.maximum(r, 1.0) ** (-p)
        m = np.where(r < 1.0, inner, outer)
        return -m[:, None] * x

    v, grad_v, hess_v = _example21_weight(p)

    def u_dir(x):
        r2 = np.einsum("ni,ni->n", x, x)
        return x / np.sqrt(1.0 + r2)[:, None]

    def phi(x, s):
        return u_dir(x) * (s / (1.0 + s * s))

    kernel = MomentKernel(phi=phi, eps=eps, v=v, phi_bound=0.5,
                          dphi_ds_bound=0.125, dphi_dx_bound=0.5)
    lyap = LyapunovSpec(v=v, grad_v=grad_v, k0=math.nan, k1=math.nan,
                        beta=0.01, l=8.0, hess_v=hess_v)
    coeffs = CoefficientSet(dim=dim, alpha=alpha, base_drift=base_drift,
                            sigma_hat=None, interaction=kernel, lyapunov=lyap)
    extras = {
        "p": p,
        "eps": eps,
        # Lipschitz constant of log V: sup_r (p/2) * r * (1+r^2)^{p/2-1}
        "log_v_lip": _logv_lipschitz(p),
        "v_min": math.e,
        "s_min": 1.0,
        "fpe_a": (lambda x: np.full_like(np.asarray(x, dtype=float), alpha)),
        "fpe_W": None,
        "fpe_dW": None,
    }
    return coeffs, extras


def _logv_lipschitz(p: float) -> float:
    r = np.linspace(0.0, 50.0, 200001)
    vals = p * r * (1.0 + r * r) ** (p / 2.0 - 1.0)
    return float(np.max(vals))


def _build_granular(dim: int, params: dict):
    alpha = float(params.setdefault("alpha", 2.0))
    eps_w = float(params.setdefault("eps_w", 0.05))
    lambda0 = float(params.setdefault("lambda0", 1.0))
    well = str(params.setdefault("well", "double"))
    if well not in ("double", "harmonic"):
        raise ScenarioFormatError(f"unknown granular well preset {well!r}")

    if well == "double":
        def dG(x):
            r2 = np.einsum("ni,ni->n", x, x)
            return (r2 - 1.0)[:, None] * x

        def hess_g(x):
            n, d = x.shape
            r2 = np.einsum("ni,ni->n", x, x)
            eye = np.eye(d)
            return ((r2 - 1.0)[:, None, None] * eye[None] +
                    2.0 * np.einsum("ni,nj->nij", x, x))

        def g_pot(x):
            r2 = np.einsum("ni,ni->n", x, x)
            return 0.25 * r2**2 - 0.5 * r2

        theta1 = max(0.0, 1.0 - eps_w)
        theta2 = (3.0 * lambda0**2 - 1.0) + eps_w

        def s_b(x):
            # largest directional expansion of the drift: -lambda_min(hess(G+W))
            r2 = np.einsum("ni,ni->n", x, x)
            return -(r2 - 1.0) - eps_w
    else:
        def dG(x):
            return np.array(x, dtype=float, copy=True)

        def hess_g(x):
            n, d = x.shape
            return np.broadcast_to(np.eye(d), (n, d, d)).copy()

        def g_pot(x):
            return 0.5 * np.einsum("ni,ni->n", x, x)

        theta1 = 0.0
        theta2 = 1.0 + eps_w

        def s_b(x):
            return np.full(x.shape[0], -1.0 - eps_w)

    def base_drift(x):
        return -dG(x)

    def grad_w(x, y):
        return eps_w * (x[:, None, :] - y[None, :, :])

    def mean_grad_w(x, ens):
        return eps_w * (x - np.mean(ens, axis=0)[None, :])

    kernel = GradientKernel(grad_w=grad_w, mean_grad=mean_grad_w)
    coeffs = CoefficientSet(dim=dim, alpha=alpha, base_drift=base_drift,
                            sigma_hat=None, interaction=kernel, lyapunov=None)

    def hess_w_x(x, z):
        n, d = x.shape
        return np.broadcast_to(eps_w * np.eye(d), (n, d, d)).copy()

    extras = {
        "lambda0": lambda0,
        "theta0": 0.0,
        "theta1": theta1,
        "theta2": theta2,
        "varphi": eps_w,
        "s_b": s_b,
        "hess_G": hess_g,
        "hess_W_x": hess_w_x,
        "fpe_a": (lambda x: np.full_like(np.asarray(x, dtype=float), alpha)),
        "fpe_dG": (lambda x: dG(np.asarray(x, dtype=float).reshape(-1, 1))[:, 0]),
        "fpe_G": (lambda x: g_pot(np.asarray(x, dtype=float).reshape(-1, 1))),
        "fpe_W": (lambda x, y: 0.5 * eps_w * (x[:, None] - y[None, :]) ** 2),
        "fpe_dW": (lambda x, y: eps_w * (x[:, None] - y[None, :])),
    }
    return coeffs, extras


def _phi_interior_coeffs(eps_phi: float) -> Array:
    """Odd degree-7 polynomial matching sgn(r) e^{eps|r|} to third order at r=1."""
    e = math.exp(eps_phi)
    a = np.array([
        [1.0, 1.0, 1.0, 1.0],
        [1.0, 3.0, 5.0, 7.0],
        [0.0, 6.0, 20.0, 42.0],
        [0.0, 6.0, 60.0, 210.0],
    ])
    rhs = np.array([e, eps_phi * e, eps_phi**2 * e, eps_phi**3 * e])
    return np.linalg.solve(a, rhs)


def _build_orderpreserving(dim: int, params: dict):
    q = float(params.setdefault("q", 1.0))
    alpha_int = float(params.setdefault("alpha_int", 0.2))
    eps_phi = float(params.setdefault("eps_phi", 1.0))
    sigma = float(params.setdefault("sigma", math.sqrt(2.0)))
    c = _phi_interior_coeffs(eps_phi)

    def phi(r):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        inner = r * (c[0] + c[1] * r**2 + c[2] * r**4 + c[3] * r**6)
        outer = np.sign(r) * np.exp(eps_phi * np.minimum(a, 700.0 / eps_phi))
        return np.where(a < 1.0, inner, outer)

    def dphi(r):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        inner = c[0] + 3 * c[1] * r**2 + 5 * c[2] * r**4 + 7 * c[3] * r**6
        outer = eps_phi * np.exp(eps_phi * np.minimum(a, 700.0 / eps_phi))
        return np.where(a < 1.0, inner, outer)

    def d2phi(r):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        inner = 6 * c[1] * r + 20 * c[2] * r**3 + 42 * c[3] * r**5
        outer = np.sign(r) * eps_phi**2 * np.exp(eps_phi * np.minimum(a, 700.0 / eps_phi))
        return np.where(a < 1.0, inner, outer)

    probe = np.linspace(-1.0, 1.0, 4001)
    if np.any(dphi(probe) <= 0.0):
        raise ScenarioFormatError(
            f"interior phi' not positive for eps_phi={eps_phi}; pick eps_phi in (0, 2]")

    half_sig2 = 0.5 * sigma**2

    def bar_b(r):
        return -(q * phi(r) + half_sig2 * d2phi(r)) / dphi(r)

    def base_drift(x):
        return bar_b(x)

    def z_kernel(x, y):
        # Z_i(x, y) = alpha_int * phi(y_i) / phi'(x_i)
        return alpha_int * phi(y)[None, :, :] / dphi(x)[:, None, :]

    def mean_z(x, ens):
        return alpha_int * np.mean(phi(ens), axis=0)[None, :] / dphi(x)

    kernel = PairwiseKernel(z=z_kernel, mean=mean_z)
    coeffs = CoefficientSet(dim=dim, alpha=sigma**2, base_drift=base_drift,
                            sigma_hat=None, interaction=kernel, lyapunov=None)
    extras = {
        "phi": phi,
        "dphi": dphi,
        "d2phi": d2phi,
        "phi_components": tuple(phi for _ in range(dim)),
        "q": q,
        "theta1": alpha_int,
        "theta2": alpha_int,
        "order_preserving": True,
    }
    return coeffs, extras


_FAMILY_BUILDERS = {
    "ou": _build_ou,
    "example21": _build_example21,
    "granular": _build_granular,
    "orderpreserving": _build_orderpreserving,
}


_BUILTIN_DEFAULTS = {
    "ou": dict(
        dim=1, psi_kind="identity",
        params={},
        sim=SimConfig(n_particles=4096, h=1e-3, t_final=6.0, seed=42, record_every=50),
        mu0=SamplerSpec(kind="normal", mean=(1.0,), sd=0.5),
        nu0=SamplerSpec(kind="normal", mean=(-1.0,), sd=0.5),
        fpe=FpeConfig(x_lo=-6.0, x_hi=6.0, n_cells=512, t_final=2.0),
    ),
    "example21": dict(
        dim=1, psi_kind="eigen",
        params={},
        sim=SimConfig(n_particles=512, h=1e-3, t_final=4.0, seed=42, record_every=50),
        mu0=SamplerSpec(kind="normal", mean=(2.0,), sd=1.0),
        nu0=SamplerSpec(kind="normal", mean=(-2.0,), sd=1.0),
        fpe=None,
    ),
    "granular": dict(
        dim=1, psi_kind="explicit",
        params={},
        sim=SimConfig(n_particles=4096, h=1e-3, t_final=3.5, seed=42, record_every=25),
        mu0=SamplerSpec(kind="normal", mean=(-1.5,), sd=0.4),
        nu0=SamplerSpec(kind="normal", mean=(1.5,), sd=0.4),
        fpe=FpeConfig(x_lo=-6.0, x_hi=6.0, n_cells=512, t_final=2.0),
    ),
    "orderpreserving": dict(
        dim=1, psi_kind="phi",
        params={},
        sim=SimConfig(n_particles=4096, h=1e-3, t_final=8.0, seed=42, record_every=100),
        mu0=SamplerSpec(kind="normal", mean=(1.0,), sd=0.5),
        nu0=SamplerSpec(kind="normal", mean=(-1.0,), sd=0.5),
        fpe=None,
    ),
}


def builtin_scenario(name: str, **overrides) -> Scenario:
    if name not in _BUILTIN_DEFAULTS:
        raise ScenarioFormatError(f"unknown built-in scenario {name!r}")
    d = _BUILTIN_DEFAULTS[name]
    scen = Scenario(name=name, family=name, dim=d["dim"], params=dict(d["params"]),
                    sim=replace(d["sim"]), mu0=d["mu0"], nu0=d["nu0"],
                    psi_kind=d["psi_kind"], fpe=d["fpe"])
    scen.rebuild()
    if overrides:
        scen = _apply_overrides(scen, overrides)
    return scen
