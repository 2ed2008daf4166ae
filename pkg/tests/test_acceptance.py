"""Acceptance criteria 1-10.

Each test prints one ``criterion N ... PASS/FAIL`` line (also collected in
the terminal summary) and enforces its runtime budget.
"""

import math
import os
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from conftest import ACCEPTANCE_LINES
from granular_fourier.charfun import Stable, collision_rhs, kalpha_norm
from granular_fourier.evolve import (EvolveConfig, advance, contraction_check,
                                     converge_to_profile, cutoff_convergence)
from granular_fourier.grid import RadialGridState
from granular_fourier.kernels import (KernelModel, RestitutionParams, beta_bound, c_constant,
                                      coeff_B, coeff_B_matrix, gamma_e_n, lambda_e,
                                      lambda_sphere)
from granular_fourier.selfsim import (coeff_evolve, exp_series_coeffs, profile_residual,
                                      steady_coeffs)
from granular_fourier.verify_mc import (VelocityLaw, bobylev_check, energy_production_exact,
                                        moment_production)

C4 = 1.0 / (4.0 * math.pi)
CONST = KernelModel.constant(C4)
PS = KernelModel.power_singular(C4, 0.5)
SP = KernelModel.scaled_power(1.0, 0.25)
ROOT = Path(__file__).resolve().parent.parent


@contextmanager
def criterion(num, name, budget):
    """Record the outcome line of one criterion and enforce its runtime budget."""
    info = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        el = time.perf_counter() - t0
        within = el <= budget
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        status = "PASS" if ok and within else "FAIL"
        line = f"criterion {num:>2} {name}: {status} ({detail}; {el:.1f} s of {budget:.0f} s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
    assert within, f"runtime {el:.1f} s exceeds {budget} s"


def _g(v):
    return f"{v:.3g}"


def test_criterion_01_parameter_identities():
    with criterion(1, "parameter identities", 5) as info:
        worst_sphere, worst_energy = 0.0, 0.0
        for e in (0.25, 0.5, 0.75, 1.0):
            p = RestitutionParams(e)
            for alpha in (0.5, 1.0, 1.5, 2.0):
                d = abs(lambda_e(CONST, p, alpha / 2) - lambda_sphere(CONST, p, alpha))
                worst_sphere = max(worst_sphere, d)
            # G = 1 on (0, 1/2]: s-moment int_0^1/2 s ds = 1/8
            exact = -2.0 * p.a_plus * p.a_minus * 0.125
            worst_energy = max(worst_energy, abs(lambda_e(CONST, p, 1.0) - exact))
        at_one = lambda_e(CONST, RestitutionParams(1.0), 1.0)
        info.update(sphere_dev=_g(worst_sphere), energy_dev=_g(worst_energy), lam2_e1=_g(at_one))
        assert worst_sphere <= 1e-8
        assert worst_energy <= 1e-10
        assert abs(at_one) <= 1e-10


def test_criterion_02_noncutoff_scaling():
    with criterion(2, "non-cutoff |xi|^alpha scaling", 30) as info:
        phi = Stable(0.8, 1.0)
        params = RestitutionParams(0.75)
        norm = kalpha_norm(phi, 0.8)
        decades = range(-3, 3)
        per_decade, cumulative = [], []
        running = 0.0
        for d in decades:
            rs = 10.0 ** np.linspace(d, d + 1, 5)
            vals = [abs(collision_rhs(PS, params, phi, np.array([0.0, 0.0, r]))) / (norm * r ** 0.8)
                    for r in rs]
            per_decade.append(max(vals))
            running = max(running, max(vals))
            cumulative.append(running)
        spread = max(cumulative) / min(cumulative)
        info.update(sup=_g(max(cumulative)), cumulative_spread=_g(spread),
                    per_decade="/".join(_g(v) for v in per_decade))
        assert all(math.isfinite(v) for v in cumulative)
        assert spread < 10.0


def _contraction(kernel):
    params = RestitutionParams(0.8)
    cfg = EvolveConfig(kernel, params)
    x = cfg.grid()
    u = RadialGridState(x, np.expm1(-x ** 0.5))
    v = RadialGridState(x, np.expm1(-1.1 * x ** 0.5))
    return contraction_check(u, v, cfg, 1.0, [0.5, 1.0, 2.0], slack=5e-3)


def test_criterion_03_contraction():
    with criterion(3, "contraction", 120) as info:
        rc = _contraction(CONST)
        rs = _contraction(PS)
        info.update(r_constant="/".join(f"{r:.6f}" for r in rc.ratios),
                    r_singular="/".join(f"{r:.6f}" for r in rs.ratios))
        assert max(rc.ratios) <= 1.005 and max(rs.ratios) <= 1.005


def test_criterion_04_series_engine():
    with criterion(4, "series engine", 60) as info:
        params = RestitutionParams(0.75)
        prof = steady_coeffs(SP, params, 0.5, -1.0, 60)
        res = profile_residual(prof, [0.1, 1.0, 5.0], return_all=True)
        B = coeff_B_matrix(SP, params, 0.5, 40)
        C = c_constant(0.5, 0.25)
        worst_sum = max(sum(B[i, n - i] for i in range(1, n)) / (n - 1) for n in range(2, 41))
        # individual Beta-integral majorant of each coefficient
        beta_ok = all(B[i, n - i] <= beta_bound(1.0, 0.25, 0.5, i, n - i) * (1 + 1e-9)
                      for n in range(2, 41) for i in range(1, n))
        be = prof.bound_consts["b_e"]
        n = np.arange(1, 41)
        remark = np.abs(prof.coeffs[1:41]) / ((be - 1.0) ** (n - 1))
        tr = coeff_evolve(SP, params, 0.5, exp_series_coeffs(1.0, 0.5, 40), 4.0, tol=1e-10,
                          t_eval=np.linspace(0.0, 4.0, 41))
        uniform = np.max(np.abs(tr.states[:, 2:]) / tr.bound[2:])
        info.update(residual=_g(res.max()), sum_bound=f"{_g(worst_sum)}<={_g(C)}",
                    remark_ratio=_g(remark[1:].max()), uniform_ratio=_g(uniform))
        assert res.max() <= 1e-6
        assert worst_sum <= C and beta_ok
        assert remark.max() <= 1.0 + 1e-12
        assert uniform <= 1.0 + 1e-9


def test_criterion_05_transient_to_steady():
    with criterion(5, "transient to steady", 30) as info:
        params = RestitutionParams(0.75)
        p = 0.5
        lam = lambda_e(SP, params, p)
        t_end = 20.0 / lam
        psi0 = exp_series_coeffs(1.0, p, 20)
        steady = steady_coeffs(SP, params, p, psi0[1], 20).coeffs
        ts = np.linspace(0.0, t_end, 11)
        tr = coeff_evolve(SP, params, p, psi0, t_end, tol=1e-12, t_eval=ts)
        err = np.max(np.abs(tr.states[-1] - steady) / np.maximum(1.0, np.abs(steady)))
        g2 = gamma_e_n(SP, params, p, 2)
        st2 = coeff_B(SP, params, p, 1, 1) * psi0[1] ** 2 / g2
        oracle = st2 + (psi0[2] - st2) * np.exp(-g2 * ts)
        err2 = np.max(np.abs(tr.states[:, 2] - oracle))
        info.update(t=_g(t_end), steady_err=_g(err), n2_err=_g(err2))
        assert err <= 1e-6
        assert err2 <= 1e-9


def _series_vs_grid(kernel):
    from scipy.special import gammaln
    params = RestitutionParams(0.75)
    p, N = 0.5, 80
    lam = lambda_e(kernel, params, p, 1e-12)
    times = [0.25, 0.5, 1.0]
    tr = coeff_evolve(kernel, params, p, exp_series_coeffs(1.0, p, N), 1.0, tol=1e-12,
                      t_eval=[0.0] + times)
    cfg = EvolveConfig(kernel, params)
    x = cfg.grid()
    st = RadialGridState(x, np.expm1(-x ** p))
    sel = (x > 0) & (x <= 1.0)
    n = np.arange(N + 1)
    worst = 0.0
    for t, row in zip(times, tr.states[1:]):
        st = advance(st, cfg, t)
        # coefficients live in the rescaled variable x e^{mu t}, mu p = lambda
        u = row * np.exp(n * lam * t)
        lt = np.log(np.abs(u[1:]))[None, :] + (n[1:] * p)[None, :] * np.log(x[sel])[:, None] \
            - gammaln(n[1:] * p + 1)[None, :]
        terms = np.sign(u[1:]) * np.exp(lt)
        ser = np.array([math.fsum(r) for r in terms])
        worst = max(worst, float(np.max(np.abs(ser - st.w[sel]))))
    return worst


def test_criterion_06_series_pde_cross_validation():
    with criterion(6, "series/PDE cross-validation", 120) as info:
        ec = _series_vs_grid(CONST)
        es = _series_vs_grid(PS)
        info.update(err_constant=_g(ec), err_singular=_g(es))
        assert ec <= 1e-5 and es <= 1e-5


def test_criterion_07_convergence_to_profile():
    with criterion(7, "convergence to profile", 300) as info:
        params = RestitutionParams(0.75)
        p = 0.5
        k = KernelModel.constant(1.0 / (2.0 * math.pi))
        cfg = EvolveConfig(k, params, closure_p=p)
        x = cfg.grid()
        rep = converge_to_profile(RadialGridState(x, np.expm1(-x ** p)), cfg, p, [1, 2, 4, 8])
        D = [r["D"] for r in rep.records]
        cfg0 = EvolveConfig(k, params)
        rep0 = converge_to_profile(RadialGridState(x, np.expm1(-x)), cfg0, p, [1, 2, 4, 8], K=0.0)
        D0 = [r["D"] for r in rep0.records]
        info.update(K=_g(rep.K), D="/".join(_g(d) for d in D), D_K0="/".join(_g(d) for d in D0),
                    rates_K0="/".join(_g(r) for r in rep0.rates))
        assert rep.decreasing and D[-1] <= 0.1 * D[0]
        # K = 0: sustained exponential decay towards the constant profile
        assert rep0.decreasing and all(r > 0.1 for r in rep0.rates)


def test_criterion_08_cutoff_sequence():
    with criterion(8, "cutoff-sequence convergence", 300) as info:
        params = RestitutionParams(0.75)
        cfg = EvolveConfig(PS, params)
        x = cfg.grid()
        rep = cutoff_convergence(PS, [10, 100, 1000, 10000], RadialGridState(x, np.expm1(-x)),
                                 1.0, cfg)
        info.update(deviations="/".join(_g(d) for d in rep.deviations))
        assert rep.monotone
        assert rep.deviations[-1] <= 1e-4


def _energy_symbolic(e):
    """Energy production for N(0, I), constant kernel 1/(4 pi), from the collision law."""
    ap, th, ph, r = sp.symbols("a_p theta phi r", positive=True)
    u = sp.Matrix([0, 0, r])
    sigma = sp.Matrix([sp.sin(th) * sp.cos(ph), sp.sin(th) * sp.sin(ph), sp.cos(th)])
    dv = ((1 - ap) / 2) * u + (ap / 2) * r * sigma
    delta = sp.expand(dv.dot(dv) - (u / 2).dot(u / 2)) / r ** 2
    per = sp.integrate(delta * sp.sin(th) / (4 * sp.pi), (th, 0, sp.pi / 2), (ph, 0, 2 * sp.pi))
    return float(6 * per.subs(ap, sp.Rational(1, 2) * (1 + sp.nsimplify(e))))


def test_criterion_09_bobylev_identity():
    with criterion(9, "Bobylev identity and moments", 180) as info:
        recs = bobylev_check(1_000_000, 7)
        f = VelocityLaw()
        rep = moment_production(f, RestitutionParams(0.5), CONST, 1_000_000, 3)
        exact = _energy_symbolic(0.5)
        rep1 = moment_production(f, RestitutionParams(1.0), CONST, 1_000_000, 4)
        info.update(gain_pass=f"{sum(bool(r['pass']) for r in recs)}/{len(recs)}",
                    energy=f"{rep.energy.value:.5f}+-{rep.energy.stderr:.5f}",
                    exact=_g(exact), energy_e1=f"{rep1.energy.value:.2e}")
        assert all(r["pass"] for r in recs) and len(recs) == 6
        assert exact == pytest.approx(energy_production_exact(f, RestitutionParams(0.5), CONST),
                                      rel=1e-13)
        assert rep.mass.brackets(0.0) and all(m.brackets(0.0) for m in rep.momentum)
        assert rep.energy.value < 0.0 and rep.energy.brackets(exact)
        assert rep1.energy.brackets(0.0)


def test_criterion_10_invariant_suites():
    with criterion(10, "invariant suites", 300) as info:
        env = dict(os.environ, PYTHONHASHSEED="0")
        res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-m", "invariant",
                              "-p", "no:cacheprovider", str(ROOT / "tests")],
                             capture_output=True, text=True, cwd=ROOT, env=env)
        tail = [ln for ln in res.stdout.splitlines() if ln.strip()][-1]
        info.update(summary=tail.strip("= "))
        assert res.returncode == 0, res.stdout[-3000:]
