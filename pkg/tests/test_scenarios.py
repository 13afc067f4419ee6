import numpy as np
import pytest

from mvcontract.errors import ScenarioFormatError
from mvcontract.jsonio import format_float
from mvcontract.model import MomentKernel
from mvcontract.scenarios import (BUILTIN_NAMES, SamplerSpec, builtin_scenario,
                                  emit_scenario, load_scenario)
from mvcontract import tomlmini


def test_builtin_example21_defaults():
    scen = load_scenario("example21")
    assert isinstance(scen.coefficients.interaction, MomentKernel)
    assert scen.params["p"] == 0.5
    assert scen.params["eps"] == 0.01


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_round_trip_bit_exact(name, tmp_path):
    rng = np.random.default_rng(hash(name) % 2**32)
    scen = builtin_scenario(name, seed=int(rng.integers(1, 2**31)),
                            h=float(rng.uniform(1e-4, 1e-2)),
                            t_final=float(rng.uniform(1.0, 9.0)))
    path = tmp_path / f"{name}.toml"
    emit_scenario(scen, path)
    loaded = load_scenario(path)
    assert loaded == scen
    # a second round trip is byte-identical
    path2 = tmp_path / f"{name}2.toml"
    emit_scenario(loaded, path2)
    assert path.read_text() == path2.read_text()


def test_missing_dim_names_field(tmp_path):
    scen = builtin_scenario("ou")
    path = tmp_path / "bad.toml"
    emit_scenario(scen, path)
    text = "\n".join(line for line in path.read_text().splitlines()
                     if not line.startswith("dim"))
    path.write_text(text)
    with pytest.raises(ScenarioFormatError, match="dim"):
        load_scenario(path)


def test_unknown_family_rejected(tmp_path):
    path = tmp_path / "weird.toml"
    path.write_text("[scenario]\nname = \"x\"\nfamily = \"mystery\"\ndim = 1\n")
    with pytest.raises(ScenarioFormatError, match="mystery"):
        load_scenario(path)


def test_parse_error_reports_line():
    with pytest.raises(ScenarioFormatError, match="line 2"):
        tomlmini.parse("[scenario]\nwhat even is this\n")


def test_builtin_resolved_before_filesystem(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "granular").write_text("not a scenario file")
    scen = load_scenario("granular")
    assert scen.family == "granular"


def test_overrides_apply():
    scen = load_scenario("granular", n_particles=128, eps_w=0.02, seed=7)
    assert scen.sim.n_particles == 128
    assert scen.sim.seed == 7
    assert scen.params["eps_w"] == 0.02
    assert scen.extras["varphi"] == 0.02


def test_sampler_kinds():
    rng = np.random.default_rng(0)
    n = SamplerSpec(kind="normal", mean=(1.0, -1.0), sd=0.1).draw(500, 2, rng)
    assert abs(n[:, 0].mean() - 1.0) < 0.05 and abs(n[:, 1].mean() + 1.0) < 0.05
    u = SamplerSpec(kind="uniform", lo=2.0, hi=3.0).draw(100, 1, rng)
    assert u.min() >= 2.0 and u.max() <= 3.0
    p = SamplerSpec(kind="point", mean=(0.5,)).draw(4, 1, rng)
    assert np.all(p == 0.5)


def test_float_format_round_trips():
    vals = [1 / 3, 1e-300, 2.0 ** 52 + 0.5, np.pi * 1e17]
    for v in vals:
        assert float(format_float(v)) == v


def test_orderpreserving_phi_structure():
    scen = builtin_scenario("orderpreserving")
    phi = scen.extras["phi"]
    dphi = scen.extras["dphi"]
    r = np.linspace(-3, 3, 1001)
    assert np.all(np.diff(phi(r)) > 0)
    assert np.all(dphi(r) > 0)
    # matches sgn(r) e^{|r|} outside the unit interval
    outside = np.abs(r) >= 1.0
    np.testing.assert_allclose(phi(r)[outside],
                               np.sign(r[outside]) * np.exp(np.abs(r[outside])),
                               rtol=1e-12)
    # C^2 continuity across the glue point
    for f in (phi, dphi, scen.extras["d2phi"]):
        left = f(np.array([1.0 - 1e-9]))[0]
        right = f(np.array([1.0 + 1e-9]))[0]
        assert abs(left - right) < 1e-6


def test_orderpreserving_generator_identity():
    # construction forces (sigma^2/2) phi'' + bar_b phi' = -q phi everywhere
    scen = builtin_scenario("orderpreserving", q=1.3, sigma=1.1)
    phi, dphi, d2phi = (scen.extras[k] for k in ("phi", "dphi", "d2phi"))
    r = np.linspace(-4, 4, 801).reshape(-1, 1)
    bar_b = scen.coefficients.base_drift(r)
    lhs = 0.5 * 1.1**2 * d2phi(r) + bar_b * dphi(r)
    np.testing.assert_allclose(lhs, -1.3 * phi(r), rtol=1e-10, atol=1e-12)
