import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from granular_fourier.errors import DomainError, PreconditionError, StabilityRegimeError
from granular_fourier.kernels import (KernelModel, RestitutionParams, b_e_constant, coeff_B,
                                      gamma_e_n, lambda_e)
from granular_fourier.selfsim import (SeriesProfile, coeff_evolve, eval_series,
                                      exp_series_coeffs, profile_residual, recurrence_residual,
                                      series_from_data, series_tail, steady_coeffs,
                                      write_profile_values)

C4 = 1.0 / (4.0 * math.pi)
SP = KernelModel.scaled_power(1.0, 0.25)
P075 = RestitutionParams(0.75)


@pytest.fixture(scope="module")
def sp_profile():
    return steady_coeffs(SP, P075, 0.5, -1.0, 60)


def test_first_coefficients(sp_profile):
    c = sp_profile.coeffs
    assert c[0] == 1.0 and c[1] == -1.0
    g2 = gamma_e_n(SP, P075, 0.5, 2)
    # scalar and vectorized quadratures each meet 1e-10 absolute
    assert c[2] == pytest.approx(coeff_B(SP, P075, 0.5, 1, 1) / g2, rel=1e-9)
    # mpmath (30 digits, s = t^4): B(1,1) = 3.5474118071019589, gamma_2 = 5.2296522537759423
    assert c[2] == pytest.approx(3.5474118071019589 / 5.2296522537759423, rel=1e-9)


def test_sign_alternation(sp_profile):
    c = sp_profile.coeffs[:41]
    assert np.all(np.sign(c[1:]) == (-1.0) ** np.arange(1, 41))


@pytest.mark.invariant
def test_recurrence_residual(sp_profile):
    from granular_fourier.kernels import gamma_e_n_all
    r = recurrence_residual(sp_profile)
    g = gamma_e_n_all(SP, P075, 0.5, 60)[2:]
    assert np.all(r <= 1e-9 * np.abs(sp_profile.coeffs[2:]) * g)


@pytest.mark.invariant
def test_remark_bound(sp_profile):
    be = sp_profile.bound_consts["b_e"]
    n = np.arange(1, 41)
    c = np.abs(sp_profile.coeffs[1:41])
    assert np.all(c <= 1.0 ** n * (be - 1) ** (n - 1) * (1 + 1e-12))


@pytest.mark.invariant
def test_lower_triangular_bit_identical():
    a = steady_coeffs(SP, P075, 0.5, -0.7, 20).coeffs
    b = steady_coeffs(SP, P075, 0.5, -0.7, 40).coeffs
    assert np.array_equal(a, b[:21])


@pytest.mark.invariant
@given(st.floats(0.05, 4.0))
@settings(max_examples=25, deadline=None)
def test_scaling_law(s):
    k = KernelModel.constant(C4)
    p = RestitutionParams(1.0)
    a = steady_coeffs(k, p, 0.5, -1.0, 25).coeffs
    b = steady_coeffs(k, p, 0.5, -s, 25).coeffs
    n = np.arange(26)
    assert np.allclose(b, s ** n * a, rtol=1e-13, atol=0)


def test_steady_errors():
    k = KernelModel.constant(C4)
    with pytest.raises(PreconditionError):
        steady_coeffs(k, P075, 0.5, 1.0)
    steady_coeffs(k, P075, 0.5, 1.0, 5, permissive=True)
    with pytest.raises(DomainError):
        steady_coeffs(k, P075, 1.2, -1.0)
    with pytest.raises(DomainError):
        steady_coeffs(KernelModel.scaled_power(1.0, 0.6), P075, 0.5, -1.0)
    # zero kernel: lambda = 0 is outside the stable regime
    z = KernelModel.tabulated([0.0, 1.0], [0.0, 0.0])
    with pytest.raises(StabilityRegimeError) as ei:
        steady_coeffs(z, P075, 0.5, -1.0)
    assert ei.value.lam == 0.0


def test_elastic_constant_profile():
    # e = 1, constant G = 1: Psi = 1, -1, 3/4, -1/2, 5/16, -3/16 (exact rational recurrence)
    prof = steady_coeffs(KernelModel.constant(C4), RestitutionParams(1.0), 0.5, -1.0, 60)
    assert np.allclose(prof.coeffs[:6], [1, -1, 0.75, -0.5, 0.3125, -0.1875], rtol=1e-12)
    assert profile_residual(prof, [0.1, 1.0, 5.0]) <= 1e-6
    assert profile_residual(prof, [0.0]) == 0.0


def test_residual_refinement():
    k = KernelModel.constant(C4)
    p = RestitutionParams(1.0)
    r20 = profile_residual(steady_coeffs(k, p, 0.5, -1.0, 20), [1.0])
    r40 = profile_residual(steady_coeffs(k, p, 0.5, -1.0, 40), [1.0])
    assert r40 <= r20


def test_sp_residual(sp_profile):
    assert profile_residual(sp_profile, [0.1, 1.0, 5.0]) <= 1e-6


def test_exp_series_resummation():
    x = np.concatenate([np.linspace(0, 10, 201), [1e-8, 1e-10]])
    for c, p in ((1.0, 0.5), (0.3, 0.7)):
        prof = series_from_data(exp_series_coeffs(c, p, 120), p, P075)
        v = eval_series(prof, x)
        assert np.max(np.abs(v.value - np.exp(-c * x ** p))) <= 1e-10
    assert eval_series(prof, 0.0).value == 1.0
    with pytest.raises(DomainError):
        eval_series(prof, -1.0)


def test_small_x_limit(sp_profile):
    # (Psi(x) - 1) / x^p -> Psi_1 / Gamma(p + 1) as x -> 0
    lim = sp_profile.coeffs[1] / math.gamma(1.5)
    vals = [(eval_series(sp_profile, x).value - 1) / x ** 0.5 for x in (1e-8, 1e-10)]
    extrap = vals[1] + (vals[1] - vals[0]) * (1e-5 / (1e-4 - 1e-5))
    assert extrap == pytest.approx(lim, abs=1e-6)


def test_tail_bound_finite_and_flags():
    prof = steady_coeffs(SP, P075, 0.5, -1.0, 40)
    v = eval_series(prof, np.array([0.01, 1.0, 100.0]))
    assert np.all(np.isfinite(v.tail_bound[:2]))
    assert v.tail_bound[0] < 1e-10
    big = eval_series(prof, 1e6)
    assert big.unreliable
    assert series_tail(1.0, 5.0, 0.5, 40, 0.0)[0] == 0.0


@pytest.mark.invariant
def test_series_values_within_unit_interval():
    k = KernelModel.constant(C4)
    prof = steady_coeffs(k, RestitutionParams(0.75), 0.5, -0.2, 60)
    x = np.linspace(0, 50, 400)
    v = eval_series(prof, x)
    assert not v.unreliable.any()
    assert np.all(np.abs(v.value) <= 1.0 + 1e-12)


def test_coeff_evolve_fixed_point(sp_profile):
    psi0 = sp_profile.coeffs[:21]
    tr = coeff_evolve(SP, P075, 0.5, psi0, 2.0, tol=1e-12, t_eval=[0, 1, 2])
    assert np.allclose(tr.states, psi0[None, :], rtol=1e-9, atol=1e-12)
    assert np.all(tr.states[:, 0] == 1.0) and np.all(tr.states[:, 1] == psi0[1])


def test_coeff_evolve_n2_closed_form():
    K = -0.8
    psi0 = np.zeros(11)
    psi0[0], psi0[1] = 1.0, K
    ts = np.linspace(0, 2, 9)
    tr = coeff_evolve(SP, P075, 0.5, psi0, 2.0, tol=1e-12, t_eval=ts)
    g2 = gamma_e_n(SP, P075, 0.5, 2)
    B11 = coeff_B(SP, P075, 0.5, 1, 1)
    ref = B11 * K * K * (1 - np.exp(-g2 * ts)) / g2
    assert np.max(np.abs(tr.states[:, 2] - ref)) <= 1e-9


@pytest.mark.invariant
def test_coeff_evolve_bound_and_errors():
    psi0 = exp_series_coeffs(1.0, 0.5, 20)
    tr = coeff_evolve(SP, P075, 0.5, psi0, 1.0, t_eval=np.linspace(0, 1, 11))
    assert np.all(np.abs(tr.states) <= tr.bound * (1 + 1e-8))
    bad = psi0.copy()
    bad[0] = 0.5
    with pytest.raises(DomainError):
        coeff_evolve(SP, P075, 0.5, bad, 1.0)
    with pytest.raises(PreconditionError):
        coeff_evolve(SP, P075, 0.5, psi0, 1.0, A0=0.1)


def test_b_e_from_majorant():
    be = b_e_constant(SP, P075, 0.5)
    assert be == pytest.approx(6.631, rel=1e-3)


def test_profile_csv(tmp_path, sp_profile):
    sp_profile.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].startswith("# p = 0.5")
    assert "n,coeff" in lines
    write_profile_values(sp_profile, [0.0, 0.5], tmp_path / "v.csv")
    v = (tmp_path / "v.csv").read_text().splitlines()
    assert v[0] == "x,value,tail_bound" and v[1].startswith("0,1,")


@pytest.mark.invariant
def test_exp_series_coefficients_batch():
    rng = np.random.default_rng(5)
    cs = rng.uniform(0.01, 3.0, 10_000)
    ps = rng.uniform(0.05, 0.95, 10_000)
    n = 7
    for c, p in zip(cs[:200], ps[:200]):
        co = exp_series_coeffs(c, p, n)
        ref = (-c) ** np.arange(n + 1) * np.exp(gammaln(np.arange(n + 1) * p + 1)
                                                 - gammaln(np.arange(n + 1) + 1))
        assert np.allclose(co, ref, rtol=1e-12)
    # K = -c Gamma(p+1) is the first coefficient
    assert np.allclose(-cs * np.exp(gammaln(ps + 1)),
                       [exp_series_coeffs(c, p, 1)[1] for c, p in zip(cs, ps)], rtol=1e-13)
