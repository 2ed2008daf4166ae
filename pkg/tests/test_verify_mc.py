import math

import numpy as np
import pytest
import sympy as sp

from granular_fourier.charfun import Gaussian
from granular_fourier.errors import DomainError, PreconditionError
from granular_fourier.kernels import KernelModel, RestitutionParams, gamma2
from granular_fourier.verify_mc import (VelocityLaw, bobylev_check, elastic_split,
                                        energy_increment_stats, energy_production_exact,
                                        mc_gain_transform, mc_loss_transform, moment_production,
                                        sample_s, sphere_gain_transform)

C4 = 1.0 / (4.0 * math.pi)
CONST = KernelModel.constant(C4)
XI_DIR = np.array([0.36, 0.48, 0.8])
N01 = VelocityLaw()


def _energy_constant_symbolic(e_val, kernel_c):
    """Energy production for N(0, 1) and a constant kernel, derived from the collision law."""
    ap, th, ph, r = sp.symbols("a_p theta phi r", positive=True)
    am = 1 - ap
    u = sp.Matrix([0, 0, r])
    sigma = sp.Matrix([sp.sin(th) * sp.cos(ph), sp.sin(th) * sp.sin(ph), sp.cos(th)])
    # centre-of-mass cross terms vanish in expectation (U independent of u, mean 0)
    dv = (am / 2) * u + (ap / 2) * r * sigma
    delta = sp.simplify(dv.dot(dv) - (u / 2).dot(u / 2))
    delta = sp.integrate(delta, (ph, 0, 2 * sp.pi)) / (2 * sp.pi)
    # b dsigma with b constant, E|u|^2 = 6 for two independent N(0, I)
    per_r2 = sp.integrate(kernel_c * delta / r ** 2 * sp.sin(th), (th, 0, sp.pi / 2), (ph, 0, 2 * sp.pi))
    expr = 6 * per_r2
    return float(expr.subs(ap, sp.Rational(1, 2) * (1 + sp.nsimplify(e_val))))


def test_energy_closed_form_matches_symbolic_derivation():
    for e in (0.25, 0.5, 1.0):
        sym = _energy_constant_symbolic(e, sp.Rational(1, 4) / sp.pi)
        assert energy_production_exact(N01, RestitutionParams(e), CONST) == pytest.approx(sym, rel=1e-13, abs=1e-15)
    assert energy_production_exact(N01, RestitutionParams(0.5), CONST) == pytest.approx(-0.140625, rel=1e-13)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_gain_matches_sphere_quadrature(r):
    params = RestitutionParams(0.75)
    xi = r * XI_DIR / np.linalg.norm(XI_DIR)
    est = mc_gain_transform(N01, N01, params, CONST, xi, 1_000_000, 11)
    ref = sphere_gain_transform(N01.charfn(), N01.charfn(), params, CONST, xi)
    assert est.brackets(ref)
    # |exp(-i v.xi)| = 1 bounds the spread
    assert est.stderr <= gamma2(CONST) / math.sqrt(1_000_000)


def test_gain_noncentred_and_tabulated_kernel():
    k = KernelModel.tabulated([0.0, 0.5, 1.0], [0.02, 0.1, 0.05])
    f = VelocityLaw((0.3, -0.2, 0.1), 0.8)
    g = VelocityLaw((-0.1, 0.4, 0.0), 1.2)
    params = RestitutionParams(0.6)
    xi = np.array([0.7, -0.4, 0.9])
    est = mc_gain_transform(f, g, params, k, xi, 400_000, 5)
    ref = sphere_gain_transform(f.charfn(), g.charfn(), params, k, xi)
    assert abs(ref.imag) > 1e-3
    assert est.brackets(ref)


def test_gain_at_zero_is_gamma2():
    est = mc_gain_transform(N01, N01, RestitutionParams(0.75), CONST, np.zeros(3), 10_000, 3)
    assert est.value == pytest.approx(0.5, abs=1e-14)
    assert est.brackets(gamma2(CONST))


def test_elastic_gain_equals_loss():
    params = RestitutionParams(1.0)
    for r in (0.5, 1.5):
        xi = r * XI_DIR / np.linalg.norm(XI_DIR)
        est = mc_gain_transform(N01, N01, params, CONST, xi, 300_000, 2)
        assert est.brackets(mc_loss_transform(N01, N01, CONST, xi))


def test_sphere_point_masses_give_gamma2():
    one = lambda z: np.ones(np.shape(z)[:-1])
    for kernel in (CONST, KernelModel.tabulated([0.0, 1.0], [0.1, 0.3])):
        val = sphere_gain_transform(one, one, RestitutionParams(0.5), kernel, np.array([0.3, 0.1, 1.0]))
        assert val == pytest.approx(gamma2(kernel), rel=1e-10)


def test_sphere_radial_is_real():
    k = KernelModel.tabulated([0.0, 0.5, 1.0], [0.02, 0.1, 0.05])
    rng = np.random.default_rng(4)
    for _ in range(5):
        xi = rng.normal(size=3) * 1.5
        val = sphere_gain_transform(Gaussian(0.7), Gaussian(1.3), RestitutionParams(rng.uniform(0, 1)), k, xi)
        assert abs(val.imag) <= 1e-12


def test_sphere_elastic_split_agrees():
    f = Gaussian(1.0, (0.2, 0.0, -0.3))
    g = Gaussian(0.6)
    xi = np.array([0.5, 1.0, -0.7])
    a = sphere_gain_transform(f, g, RestitutionParams(1.0), CONST, xi)
    b = sphere_gain_transform(f, g, RestitutionParams(1.0), CONST, xi, split=elastic_split)
    assert abs(a - b) <= 1e-12


def test_elastic_maxwellian_sphere_gain_equals_loss():
    f = Gaussian(1.0)
    for r in (0.3, 1.0, 2.5):
        xi = r * XI_DIR / np.linalg.norm(XI_DIR)
        val = sphere_gain_transform(f, f, RestitutionParams(1.0), CONST, xi)
        assert val == pytest.approx(gamma2(CONST) * f(xi), rel=1e-10)


@pytest.mark.invariant
def test_determinism():
    xi = np.array([0.2, 0.4, 0.1])
    a = mc_gain_transform(N01, N01, RestitutionParams(0.5), CONST, xi, 100_000, 9)
    b = mc_gain_transform(N01, N01, RestitutionParams(0.5), CONST, xi, 100_000, 9)
    c = mc_gain_transform(N01, N01, RestitutionParams(0.5), CONST, xi, 100_000, 10)
    assert a.value == b.value and a.stderr == b.stderr
    assert a.value != c.value


def test_sample_s_distribution():
    k = KernelModel.tabulated([0.0, 1.0], [0.0, 0.2])
    s = sample_s(k, np.random.default_rng(0), 200_000)
    assert s.min() > 0.0 and s.max() <= 0.5
    # G(s) = 4 pi 0.2 (1 - 2 s) on (0, 1/2]: density 4(1 - 2s), mean 1/6
    assert s.mean() == pytest.approx(1.0 / 6.0, abs=4 * s.std() / math.sqrt(s.size))


@pytest.mark.invariant
def test_production_brackets():
    rep = moment_production(N01, RestitutionParams(0.5), CONST, 400_000, 1)
    assert rep.mass.value == 0.0 and rep.mass.stderr == 0.0
    for m in rep.momentum:
        assert m.brackets(0.0)
    assert rep.energy.value < 0.0
    assert rep.energy.brackets(-0.140625)
    d = rep.as_dict()
    assert set(d) >= {"mass", "momentum", "energy", "energy_exact"}


def test_production_noncentred_law():
    f = VelocityLaw((0.5, -1.0, 0.3), 0.7)
    rep = moment_production(f, RestitutionParams(0.3), CONST, 400_000, 8)
    for m in rep.momentum:
        assert m.brackets(0.0)
    assert rep.energy.brackets(energy_production_exact(f, RestitutionParams(0.3), CONST))


@pytest.mark.invariant
def test_elastic_energy_brackets_zero():
    rep = moment_production(N01, RestitutionParams(1.0), CONST, 200_000, 4)
    assert rep.energy.brackets(0.0)


@pytest.mark.invariant
def test_omega_and_sigma_forms_agree_in_distribution():
    params = RestitutionParams(0.5)
    m1, v1, se1 = energy_increment_stats(N01, params, CONST, 400_000, 21, False)
    m2, v2, se2 = energy_increment_stats(N01, params, CONST, 400_000, 22, True)
    assert abs(m1 - m2) <= 3.0 * math.hypot(se1, se2)
    # variance of a sample variance: crude 4th-moment bound from the two samples
    assert abs(v1 - v2) <= 0.05 * max(v1, v2)


def test_preconditions():
    ps = KernelModel.power_singular(C4, 0.5)
    xi = np.ones(3)
    with pytest.raises(PreconditionError):
        mc_gain_transform(N01, N01, RestitutionParams(0.5), ps, xi, 10_000)
    with pytest.raises(PreconditionError):
        sphere_gain_transform(Gaussian(1.0), Gaussian(1.0), RestitutionParams(0.5), ps, xi)
    with pytest.raises(PreconditionError):
        mc_gain_transform(N01, N01, RestitutionParams(0.5), CONST, xi, 9_999)
    with pytest.raises(PreconditionError):
        moment_production(N01, RestitutionParams(0.5), CONST, 99_999)
    with pytest.raises(PreconditionError):
        moment_production(N01, RestitutionParams(0.5), ps, 100_000)
    with pytest.raises(DomainError):
        VelocityLaw(variance=0.0)
    with pytest.raises(DomainError):
        VelocityLaw(mean=(1.0, 2.0))


def test_bobylev_records():
    recs = bobylev_check(100_000, 7, magnitudes=(1.0,), es=(0.75,))
    assert len(recs) == 1
    r = recs[0]
    assert set(r) == {"check", "params", "estimate", "stderr", "reference", "pass"}
    assert r["pass"] is True or r["pass"] is np.True_
