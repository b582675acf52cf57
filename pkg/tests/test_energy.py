import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import tiny_config
from ndfsim import diffmath as dm
from ndfsim.diffmath import Jet
from ndfsim.energy import (EnergyTerms, LoadSpec, MaterialParams, MaterialRange, assemble_loss, elasticity_matrix,
                           energy_density, energy_terms, external_energy_density, material_conditioned_loss,
                           monte_carlo, stiffness, total_loss)
from ndfsim.errors import ConfigurationError, DomainError
from ndfsim.geometry import SurfaceSpec, frame
from ndfsim.kinematics import StrainState
from ndfsim.ndf import coordinate_jets, init_siren
from ndfsim.trainer import stratified_samples

PLANE = SurfaceSpec("plane", {"L": 1.0})


def test_stiffness_examples():
    D, B = stiffness(MaterialParams(1.0, 1.0, 1e7, 0.0))
    assert D == 1e7 and B == pytest.approx(833333.33, abs=0.01)
    D, B = stiffness(MaterialParams(0.144, 0.0012, 5000.0, 0.25))
    assert D == pytest.approx(6.4) and B == pytest.approx(7.68e-7)
    m = MaterialParams(1.0, 0.002, 10.0, 0.3)
    m2 = replace(m, h=0.004)
    assert stiffness(m2)[1] / stiffness(m)[1] == pytest.approx(8)
    assert stiffness(m2)[0] / stiffness(m)[0] == pytest.approx(2)


@pytest.mark.parametrize("kw", [dict(nu=0.5), dict(h=0.0), dict(E=-1.0), dict(rho=-1.0)])
def test_material_validation(kw):
    base = dict(rho=1.0, h=0.1, E=1.0, nu=0.2)
    base.update(kw)
    with pytest.raises(ConfigurationError):
        MaterialParams(**base)


def test_energy_density_examples():
    fr = frame(PLANE, [[0.5, 0.5]])
    H = elasticity_matrix(fr, 0.0)
    zero = torch.zeros(1, 2, 2, dtype=torch.float64)
    assert float(energy_density(StrainState(zero, zero), H, 1.0, 1.0)) == 0.0
    eps = torch.tensor([[[0.105, 0.0], [0.0, 0.0]]], dtype=torch.float64)
    assert float(energy_density(StrainState(eps, zero), H, 1.0, 0.0)) == pytest.approx(0.0055125, abs=1e-15)
    a = torch.tensor([[[0.1, 0.03], [-0.02, 0.2]]], dtype=torch.float64)
    H = elasticity_matrix(fr, 0.3)
    assert float(energy_density(StrainState(a, zero), H, 1, 0)) == pytest.approx(
        float(energy_density(StrainState(a.transpose(1, 2), zero), H, 1, 0)), abs=1e-16)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0, 0.499), st.floats(0.05, 0.95),
       st.floats(0.05, 0.95), st.sampled_from(["plane", "cylinder", "cone"]))
def test_energy_nonnegative(e, nu, s1, s2, kind):
    spec = {"plane": PLANE, "cylinder": SurfaceSpec("cylinder", {"R": 0.3, "L": 1.0}),
            "cone": SurfaceSpec("cone", {"R_top": 0.2, "R_bottom": 0.5, "L": 1.0})}[kind]
    (l1, h1), (l2, h2) = spec.domain
    fr = frame(spec, [[l1 + s1 * (h1 - l1), l2 + s2 * (h2 - l2)]])
    eps = torch.tensor([[[e[0], e[1]], [e[1], e[2]]]], dtype=torch.float64)
    assert float(energy_density(StrainState(eps, eps), elasticity_matrix(fr, nu), 1.0, 1.0)) >= -1e-15


def test_external_density_examples():
    fr = frame(PLANE, [[0.5, 0.5]])
    load = LoadSpec("constant", (0.0, 0.0, -1.0))
    u = Jet(torch.tensor([[0.0, 0.0, 2.0]], dtype=torch.float64))
    assert float(external_energy_density(load, fr, u)) == -2.0
    assert float(external_energy_density(load, fr, Jet(torch.zeros(1, 3, dtype=torch.float64)))) == 0.0
    g = LoadSpec("gravity").density(1, None, MaterialParams(0.144, 0.0012, 5000, 0.25))
    np.testing.assert_allclose(g.numpy(), [[0.0, -1.4112, 0.0]])
    with pytest.raises(ConfigurationError):
        external_energy_density(LoadSpec("points", points=((0.5, 0.5),), vectors=((0, 0, 1),)), fr, u)


def test_external_density_is_cartesian_dot_on_curved():
    spec = SurfaceSpec("cone", {"R_top": 0.25, "R_bottom": 0.5, "L": 1.0})
    rng = np.random.default_rng(0)
    xi = np.stack([rng.uniform(0, 6, 5), rng.uniform(0, 1, 5)], -1)
    fr = frame(spec, xi)
    f = rng.normal(size=3)
    u = torch.as_tensor(rng.normal(size=(5, 3)))
    got = external_energy_density(LoadSpec("constant", tuple(f)), fr, Jet(u))
    np.testing.assert_allclose(got.numpy(), u.numpy() @ f, atol=1e-13)


def test_sinusoidal_load():
    load = LoadSpec("sinusoidal", (0.0, 0.0, 1.0), amplitude=0.5, omega=2.0, phase=1.0)
    d = load.density(2, np.array([0.0, 0.5]), None)
    np.testing.assert_allclose(d[:, 2].numpy(), 0.5 * np.sin(2 * np.array([0.0, 0.5]) + 1.0))
    with pytest.raises(ConfigurationError):
        load.density(2, None, None)


def test_sign_bookkeeping_single_sample():
    fr = frame(PLANE, [[0.5, 0.5]])
    load = LoadSpec("constant", (0.0, 0.0, -1.0))
    u = Jet(torch.tensor([[0.0, 0.0, 2.0]], dtype=torch.float64))
    z = torch.zeros(1, dtype=torch.float64)
    terms = EnergyTerms(z, z, external_energy_density(load, fr, u), z, fr.tensor("sqrt_a"))
    assert float(assemble_loss(terms, 1.0, load)) == 2.0
    with pytest.raises(DomainError):
        monte_carlo(EnergyTerms(*(torch.zeros(0),) * 5), 1.0)


def _zero_output(weights):
    with torch.no_grad():
        weights.weights[-1].zero_()
        weights.biases[-1].zero_()
    return weights


@pytest.mark.parametrize("name", ["square-plate", "napkin-corner", "pinched-cylinder-free"])
def test_zero_field_zero_loss(name):
    problem = tiny_config(name).compile()
    w = _zero_output(init_siren(problem.model.config))
    samples = stratified_samples(problem.config.sampling, problem.surface.domain, problem.horizon, 0)
    if not problem.model.constraints.spec.branches:
        assert float(total_loss(w, problem, samples)) == 0.0


def test_point_load_variant_uses_exact_points():
    problem = tiny_config("pinched-cylinder-rigid").compile()
    w = init_siren(problem.model.config)
    samples = stratified_samples(problem.config.sampling, problem.surface.domain, None, 0)
    from ndfsim.energy import loss_and_field
    from ndfsim.ndf import eval_ndf
    loss, u = loss_and_field(w, problem, samples)
    fr = frame(problem.surface, samples[0])
    terms = energy_terms(fr, u, problem.material, problem.load, None, problem.nonlinear, False)
    up = eval_ndf(np.asarray(problem.load.points), None, None, w, problem.model).value
    expected = problem.surface.area * terms.integrand().mean() - (torch.tensor(problem.load.vectors) * up).sum()
    assert float(loss) == pytest.approx(float(expected), rel=1e-14)


def test_monte_carlo_convergence():
    """Stratified estimate of the strain energy of a prescribed field vs Gauss-Legendre quadrature."""
    m = MaterialParams(1.0, 0.01, 100.0, 0.3)
    load = LoadSpec("constant", (0.0, 0.0, 0.0))

    def field(xi):
        x1, x2, _ = coordinate_jets(xi)
        w = dm.sin(x1 * math.pi) * dm.sin(x2 * math.pi) * 0.05
        s = dm.sin(x1 * 2.0 + x2) * 0.01
        return dm.stack([s, s * 0.5, w], -1)

    def integrand(xi):
        fr = frame(PLANE, xi)
        return energy_terms(fr, field(xi), m, load, dynamic=False).integrand().detach().numpy()

    g, wg = np.polynomial.legendre.leggauss(60)
    g, wg = 0.5 * (g + 1), 0.5 * wg
    G1, G2 = np.meshgrid(g, g, indexing="ij")
    exact = float(np.sum(np.outer(wg, wg).ravel() * integrand(np.stack([G1.ravel(), G2.ravel()], -1))))
    from ndfsim.config import SamplingPlan
    xi, _ = stratified_samples(SamplingPlan(64, 64, 1, 0), PLANE.domain, None, 0)
    est = float(np.mean(integrand(xi)))
    assert abs(est - exact) / exact < 0.01


def _dyn_terms(rho, velocity):
    spec = SurfaceSpec("cylinder", {"R": 0.25, "L": 1.0})
    rng = np.random.default_rng(5)
    xi = np.stack([rng.uniform(0, 6, 6), rng.uniform(0, 1, 6)], -1)
    x1, x2, t = coordinate_jets(xi, np.full(6, 0.3))
    u = dm.stack([dm.sin(x1) * 0.01, x2 * 0.02, dm.cos(x1 + x2) * 0.01], -1)
    if velocity:
        u = u + dm.stack([t * 0.1, t * 0.0, t * 0.0], -1)
    m = MaterialParams(rho, 0.001, 10.0, 0.2)
    load = LoadSpec("gravity")
    return frame(spec, xi), u, m, load


def test_quasi_static_dynamic_consistency():
    fr, u, m, load = _dyn_terms(0.0, velocity=True)
    dyn = energy_terms(fr, u, m, load, np.full(6, 0.3), dynamic=True).integrand()
    qs = energy_terms(fr, u, m, load, None, dynamic=False).integrand()
    torch.testing.assert_close(dyn, qs, rtol=0, atol=0)


def test_kinetic_only_rho_dependence_at_zero_velocity():
    fr, u, m, _ = _dyn_terms(0.1, velocity=False)
    load = LoadSpec("constant", (0.0, 0.0, -1.0))
    a = energy_terms(fr, u, m, load, np.full(6, 0.3)).integrand()
    b = energy_terms(fr, u, replace(m, rho=0.7), load, np.full(6, 0.3)).integrand()
    torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_bending_term_scales_with_h_cubed():
    fr, u, m, load = _dyn_terms(0.1, velocity=False)
    a = energy_terms(fr, u, m, load, None, dynamic=False).bending
    b = energy_terms(fr, u, replace(m, h=2 * m.h), load, None, dynamic=False).bending
    torch.testing.assert_close(b, 8 * a, rtol=1e-13, atol=0)


def test_material_conditioned_loss():
    cfg = tiny_config("napkin-material")
    problem = cfg.compile()
    w = init_siren(problem.model.config)
    samples = stratified_samples(cfg.sampling, problem.surface.domain, problem.horizon, 0)
    draw = replace(problem.material, h=0.001)
    assert float(material_conditioned_loss(w, problem, samples, draw)) == float(total_loss(w, problem, samples, draw))
    with pytest.raises(DomainError):
        material_conditioned_loss(w, problem, samples, replace(problem.material, h=0.01))
    # degenerate range collapses to the fixed-material loss
    flat = replace(cfg, material_range={"h": (cfg.material.h, cfg.material.h)}).compile()
    assert float(material_conditioned_loss(w, flat, samples, flat.material)) == pytest.approx(
        float(total_loss(w, flat, samples)), rel=0)


def test_material_range_sampling():
    r = MaterialRange(MaterialParams(1.0, 0.001, 10.0, 0.2), {"h": (0.0005, 0.0025), "nu": (0.1, 0.3)})
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = r.sample(rng)
        assert r.contains(m)
        assert 0.0005 <= m.h <= 0.0025 and m.E == 10.0


def test_loss_parameter_gradient_fd():
    from ndfsim.checks import check_loss_gradient

    for seed in (0, 1):
        r = check_loss_gradient(seed)
        assert r.passed, r.line()


def test_free_cylinder_ovalization_ritz():
    """One-mode Ritz solution of the free pinched cylinder.

    The inextensional mode u_r = a cos 2t, u_t = -a/2 sin 2t (t measured
    from a load point) stores pure bending energy; ring theory gives
    9 pi L EI a^2 / (2 R^3). The loads do work 2a, so the Ritz compliance
    a* = 2 / k sits slightly below the full-field reference 4.52e-4
    (after undoing the 1e-5 modulus scaling).
    """
    R, L = 300.0, 600.0
    spec = SurfaceSpec("cylinder", {"R": R, "L": L})
    m = MaterialParams(0.0, 3.0, 30.0, 0.3)
    from ndfsim.config import SamplingPlan
    xi, _ = stratified_samples(SamplingPlan(200, 50, 1, 0), spec.domain, None, 0)
    x1, x2, _ = coordinate_jets(xi)
    th = x1 - math.pi / 2
    ur, ut = dm.cos(th * 2.0), dm.sin(th * 2.0) * -0.5
    c, s = dm.cos(x1), dm.sin(x1)
    u = dm.stack([ur * c - ut * s, x2 * 0.0, ur * s + ut * c], -1)
    t = energy_terms(frame(spec, xi), u, m, LoadSpec("constant", (0.0, 0.0, 0.0)), None, False, False)
    membrane = float(spec.area * (t.membrane * t.sqrt_a).mean())
    bending = float(spec.area * (t.bending * t.sqrt_a).mean())
    EI = m.E * m.h ** 3 / (12 * (1 - m.nu ** 2))
    assert membrane < 1e-20
    assert bending == pytest.approx(9 * math.pi * L * EI / (2 * R ** 3), rel=1e-2)
    a_star = 2.0 / (2 * bending) * 1e-5
    assert 0.9 * 4.52e-4 < a_star < 4.52e-4
