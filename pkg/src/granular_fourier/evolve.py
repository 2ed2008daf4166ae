"""Time integration of the isotropic equation for radial characteristic functions.

For ``u(t, x)``, ``x = |xi|^2 / 2``, the equation reads

    du/dt (x) = int_0^1 G(s) [u(a(s) x) u(b(s) x) - u(x)] ds.

The grid stores ``w = u - 1``.  Non-cutoff kernels use the split integrand
``[u(ax) - 1] u(bx) + [u(bx) - u(x)]``, which vanishes like a power of
``s`` at the singular endpoint.  Cutoff kernels are stepped in
integrating-factor (Lawson) form ``dw/dt = -gamma2 w + N(w)`` with
``N(w) = int G [u(ax) u(bx) - 1] ds``, which keeps ``u = 1`` exactly
stationary.  Since ``a(s), b(s) <= 1`` the right-hand side at ``x_k`` only
reads values at ``x <= x_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EvolveError, StabilityRegimeError
from .grid import (RadialGridState, RadialInterpolant, closure_fit, hermite_weights,
                   make_grid, pchip_slopes)
from .kernels import (KernelModel, RestitutionParams, cutoff_truncate, lambda_e)
from .quadrature import GradedRule, QuadratureConfig

BOUND_SLACK = 1e-9


@dataclass
class EvolveConfig:
    """Kernel, restitution, grid, stepper and quadrature settings.

    ``mode`` is ``"auto"`` (integrating factor for cutoff kernels, split
    form otherwise), ``"split"`` or ``"if"``.  ``closure_p`` fixes the
    exponent of the small-x closure; by default it is fitted.
    """

    kernel: KernelModel
    params: RestitutionParams
    x_min: float = 1e-8
    x_max: float = 1e3
    n_nodes: int = 512
    tol: float = 1e-9
    atol: float = 1e-13
    quad_order: int = 8
    s_min: float = 1e-14
    mode: str = "auto"
    closure_p: float | None = None
    rescale_mu: float | None = None
    max_steps: int = 100_000
    _op: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.x_min > 0.0:
            raise DomainError("x_min must be positive")
        if self.n_nodes < 64:
            raise DomainError("n_nodes must be at least 64")
        if self.mode not in ("auto", "split", "if"):
            raise DomainError("mode must be auto, split or if")
        if self.mode == "if" and not self.kernel.bounded:
            raise DomainError("integrating-factor mode needs a cutoff kernel")

    @property
    def use_if(self) -> bool:
        return self.mode == "if" or (self.mode == "auto" and self.kernel.bounded)

    def grid(self) -> np.ndarray:
        return make_grid(self.x_min, self.x_max, self.n_nodes)

    def operator(self) -> "IsotropicOperator":
        if self._op is None:
            self._op = IsotropicOperator(self)
        return self._op

    def with_kernel(self, kernel: KernelModel) -> "EvolveConfig":
        return EvolveConfig(kernel, self.params, self.x_min, self.x_max, self.n_nodes,
                            self.tol, self.atol, self.quad_order, self.s_min, self.mode
                            if self.mode != "if" or kernel.bounded else "auto",
                            self.closure_p, self.rescale_mu, self.max_steps)

    def describe(self) -> dict:
        return {"kernel": self.kernel.kernel_id, "e": self.params.e,
                "grid": f"{self.x_min:.17g}:{self.x_max:.17g}:{self.n_nodes}",
                "tol": self.tol, "mode": "if" if self.use_if else "split"}


class _Stencil:
    """Fixed Hermite lookups ``w(f(s) x_k)`` for all grid nodes and ``s`` nodes."""

    def __init__(self, z, zq, offset):
        # zq: log of query points; offset: z_k - zq computed without cancellation
        n = len(z)
        self.low = zq < z[0]
        j = np.clip(np.searchsorted(z, zq, side="right") - 1, 0, n - 2)
        k = np.broadcast_to(np.arange(n)[:, None], zq.shape)
        self.j = j
        self.k = k
        dz = z[j + 1] - z[j]
        tau = ((z[j + 1] - z[k]) + offset) / dz
        tau = np.clip(tau, 0.0, 1.0)
        self.h00, h10, h11 = hermite_weights(tau)
        self.h10 = dz * h10
        self.h11 = dz * h11
        self.zq = zq
        self.same = (j + 1) == k

    def delta(self, W, m, C, q):
        """``w(query) - w(x_k)``."""
        j = self.j
        wl, wr = W[j], W[j + 1]
        d = self.h00 * (wl - wr) + self.h10 * m[j] + self.h11 * m[j + 1]
        d = d + np.where(self.same, 0.0, wr - W[self.k])
        if self.low.any():
            d = np.where(self.low, C * np.exp(q * self.zq) - W[self.k], d)
        return d


class IsotropicOperator:
    """Right-hand side of the isotropic equation on a fixed grid."""

    def __init__(self, config: EvolveConfig):
        self.config = config
        k = config.kernel
        p = config.params
        self.x = config.grid()
        self.z = np.log(self.x[1:])
        qc = QuadratureConfig(order=config.quad_order, s_min=config.s_min)
        self.rule = GradedRule(0.5, qc, k.breakpoints_s)
        s = self.rule.nodes
        self.G = k.G_support(s)
        self.gamma2 = float(self.rule.integrate(self.G[None, :])[0][0]) if k.bounded else math.inf
        z = self.z[:, None]
        za = math.log(p.c_a) + np.log(s)[None, :] + z
        self.sa = _Stencil(self.z, za, -(math.log(p.c_a) + np.log(s))[None, :] + 0.0 * z)
        lb = np.log1p(-p.c_b * s)[None, :]
        self.sb = _Stencil(self.z, z + lb, -lb + 0.0 * z)

    def closure(self, w):
        if self.config.closure_p is not None:
            q = self.config.closure_p
            return float(w[1] / self.x[1] ** q), q
        return closure_fit(self.x, w)

    def _parts(self, w):
        W = w[1:]
        m = pchip_slopes(self.z, W)
        C, q = self.closure(w)
        wa = self.sa.delta(W, m, C, q) + W[:, None]
        db = self.sb.delta(W, m, C, q)
        return W, wa, db

    def _integrate(self, F):
        total, _, _ = self.rule.integrate(self.G[None, :] * F)
        out = np.zeros(len(self.x))
        out[1:] = total
        return out

    def rhs(self, w) -> np.ndarray:
        """``dw/dt`` from the split integrand."""
        W, wa, db = self._parts(w)
        return self._integrate(wa * (1.0 + W[:, None] + db) + db)

    def gain_if(self, w) -> np.ndarray:
        """``N(w) = int G [u(ax) u(bx) - 1] ds`` for integrating-factor stepping."""
        W, wa, db = self._parts(w)
        wb = W[:, None] + db
        return self._integrate(wa + wb + wa * wb)

    def rhs_unsplit(self, w) -> np.ndarray:
        """``int G [u(ax) u(bx) - u(x)] ds`` assembled without the split."""
        W, wa, db = self._parts(w)
        wb = W[:, None] + db
        return self._integrate((1.0 + wa) * (1.0 + wb) - (1.0 + W[:, None]))


def isotropic_rhs(state: RadialGridState, config: EvolveConfig) -> np.ndarray:
    """``du/dt`` at the grid nodes (split assembly)."""
    op = config.operator()
    _check_grid(state, op)
    return op.rhs(state.w)


def _check_grid(state, op):
    if state.x_nodes.shape != op.x.shape or not np.array_equal(state.x_nodes, op.x):
        raise DomainError("state grid differs from the configured grid")


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_BHAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                  187 / 2100, 1 / 40])
_E = _B - _BHAT


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    invariant_rejections: int = 0
    h_last: float = 0.0


def advance(state: RadialGridState, config: EvolveConfig, t_target: float,
            stats: StepStats | None = None, h0: float | None = None) -> RadialGridState:
    """Advance ``state`` to ``t_target`` with an embedded 5(4) pair.

    Steps are accepted when the local error is below ``tol`` relative
    (``atol`` absolute) in the sup norm and ``|u| <= 1 + 1e-9`` holds at
    every node; values are never clipped.  Cutoff kernels use the Lawson
    integrating-factor variant of the same tableau.
    """
    if t_target < state.t:
        raise DomainError("t_target must not precede the state time")
    op = config.operator()
    _check_grid(state, op)
    stats = stats if stats is not None else StepStats()
    w = state.w.copy()
    t = state.t
    if t_target == t:
        return state.copy()
    if config.use_if:
        gam, f = op.gamma2, op.gain_if
    else:
        gam, f = 0.0, op.rhs
    rtol, atol = config.tol, config.atol
    k1 = f(w)
    if h0 is None:
        lin = gam * np.abs(w) if gam else 0.0
        scale = atol + rtol * np.abs(w)
        d1 = np.max(np.abs(k1 - lin) / scale)
        h0 = 0.01 / d1 if d1 > 0 else 0.1
        h0 = min(h0, 0.1 * (t_target - t), 1.0 / max(gam, 1e-300)) if gam else min(h0, 0.1 * (t_target - t))
        h0 = max(h0, 1e-12)
    h = h0
    err_prev = 1.0
    consecutive = 0
    steps = 0
    while t < t_target:
        steps += 1
        if steps > config.max_steps:
            raise EvolveError(f"step budget exhausted at t = {t:.6g}")
        last = t + h >= t_target * (1 - 1e-15) or t_target - (t + h) < 1e-12 * max(1.0, t_target)
        if last:
            h = t_target - t
        ks = [k1]
        for i in range(1, 7):
            acc = np.zeros_like(w)
            for jj, a in enumerate(_A[i]):
                if a:
                    acc += a * _phi(gam, (_C[i] - _C[jj]) * h) * ks[jj]
            wi = _phi(gam, _C[i] * h) * w + h * acc
            wi[0] = 0.0
            ks.append(f(wi))
        w_new = wi  # stage 7 sits at c = 1 with weights b (FSAL)
        errv = h * sum(_E[jj] * _phi(gam, (1.0 - _C[jj]) * h) * ks[jj] for jj in range(7))
        sc = atol + rtol * np.maximum(np.abs(w), np.abs(w_new))
        err = float(np.max(np.abs(errv) / sc))
        bad = not np.all(np.isfinite(w_new)) or not np.isfinite(err)
        breach = (not bad) and float(np.max(np.abs(1.0 + w_new))) > 1.0 + BOUND_SLACK
        if bad or breach:
            stats.rejected += 1
            stats.invariant_rejections += breach
            consecutive += 1
            if consecutive > 40:
                raise EvolveError(f"persistent rejection at t = {t:.6g}: "
                                  f"max |u| = {np.max(np.abs(1.0 + w_new)):.12g}")
            h *= 0.3
            continue
        if err <= 1.0:
            t = t_target if last else t + h
            w = w_new
            k1 = ks[6]
            stats.accepted += 1
            stats.h_last = h
            consecutive = 0
            fac = 0.9 * max(err, 1e-10) ** -0.17 * err_prev ** 0.04
            h *= min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
        else:
            stats.rejected += 1
            consecutive += 1
            if consecutive > 40:
                raise EvolveError(f"step size collapsed at t = {t:.6g}")
            h *= max(0.2, 0.9 * err ** -0.2)
    return RadialGridState(state.x_nodes, w, t_target)


def _phi(gam, dt):
    return math.exp(-gam * dt) if gam else 1.0


def evolve_to_times(state: RadialGridState, config: EvolveConfig, times) -> list[RadialGridState]:
    out = []
    cur = state
    for t in times:
        cur = advance(cur, config, float(t))
        out.append(cur)
    return out


def rescale_state(state: RadialGridState, mu: float, closure_p: float | None = None) -> RadialGridState:
    """Sample ``y -> u(t, y exp(-mu t))`` back on the grid.

    Arguments below the first positive node use the closure
    ``u = 1 + C x^q``; ``closure_p`` fixes ``q``.
    """
    if mu == 0.0 or state.t == 0.0:
        return state.copy()
    x = state.x_nodes
    interp = RadialInterpolant(x, state.w, closure_p)
    y = x * math.exp(-mu * state.t)
    w = interp.w_at(np.minimum(y, x[-1]))
    w[0] = 0.0
    return RadialGridState(x, w, state.t)


def alpha_grid_norm(x, dw, alpha: float) -> float:
    """``sup_k |dw_k| / (2 x_k)^(alpha/2)`` over the positive nodes."""
    return float(np.max(np.abs(dw[1:]) / (2.0 * x[1:]) ** (0.5 * alpha)))


@dataclass
class ContractionReport:
    alpha: float
    lam: float
    d0: float
    times: list
    distances: list
    ratios: list
    slack: float
    passed: bool
    flagged: str = ""

    def as_dict(self):
        return dict(self.__dict__)


def contraction_check(u: RadialGridState, v: RadialGridState, config: EvolveConfig,
                      alpha: float, times, slack: float = 5e-3) -> ContractionReport:
    """Ratio ``||u(t) - v(t)|| / (exp(lambda_{e,alpha} t) ||u0 - v0||)`` at ``times``.

    The norm is ``sup_k |.| / (2 x_k)^(alpha/2)``; the check passes when
    every ratio is at most ``1 + slack``.
    """
    if not np.array_equal(u.x_nodes, v.x_nodes):
        raise DomainError("states must share a grid")
    lam = lambda_e(config.kernel, config.params, 0.5 * alpha, 1e-10)
    x = u.x_nodes
    d0 = alpha_grid_norm(x, u.w - v.w, alpha)
    times = [float(t) for t in times]
    us = evolve_to_times(u, config, times)
    vs = evolve_to_times(v, config, times)
    dist = [alpha_grid_norm(x, a.w - b.w, alpha) for a, b in zip(us, vs)]
    if d0 == 0.0:
        floor = 10.0 * config.tol
        return ContractionReport(alpha, lam, d0, times, dist, [math.nan] * len(times), slack,
                                 all(d <= floor for d in dist), "identical initial data")
    ratios = [d / (math.exp(lam * t) * d0) for d, t in zip(dist, times)]
    return ContractionReport(alpha, lam, d0, times, dist, ratios, slack,
                             all(r <= 1.0 + slack for r in ratios))


@dataclass
class CutoffReport:
    n_list: list
    deviations: list
    monotone: bool
    t: float

    def as_dict(self):
        return dict(self.__dict__)


def cutoff_convergence(kernel: KernelModel, n_list, u0: RadialGridState, t: float,
                       config: EvolveConfig) -> CutoffReport:
    """Sup-grid deviation between solutions under ``min(b, n)`` and under ``b``."""
    ref_cfg = config.with_kernel(kernel)
    ref = advance(u0, ref_cfg, t)
    devs = []
    for n in n_list:
        cfg = config.with_kernel(cutoff_truncate(kernel, n))
        sol = advance(u0, cfg, t)
        devs.append(float(np.max(np.abs(sol.w - ref.w))))
    mono = all(b < a for a, b in zip(devs, devs[1:]))
    return CutoffReport([float(n) for n in n_list], devs, mono, float(t))


def small_x_coefficient(state: RadialGridState, p: float, n_fit: int = 6) -> float:
    """Coefficient ``u_1`` of ``x^p / Gamma(p+1)`` fitted on the smallest nodes."""
    x = state.x_nodes[1:1 + n_fit]
    r = state.w[1:1 + n_fit] / x ** p
    A = np.stack([np.ones_like(x), x ** p], axis=1)
    c0 = np.linalg.lstsq(A, r, rcond=None)[0][0]
    return float(c0 * math.gamma(p + 1.0))


@dataclass
class ProfileConvergence:
    p: float
    K: float
    mu: float
    records: list
    decreasing: bool
    rates: list

    def as_dict(self):
        return dict(self.__dict__)


def trusted_series_range(profile, x_nodes, term_tol: float = 1e-13,
                         term_max: float = 1e3) -> float:
    """Largest grid ``x`` where the last retained term is below ``term_tol``
    and no term exceeds ``term_max`` (cancellation control)."""
    from .selfsim import _log_terms
    c = profile.coeffs
    xs = x_nodes[1:]
    lt, _ = _log_terms(c, profile.p, xs)
    last_ok = np.exp(lt[:, -1]) <= term_tol
    big_ok = np.max(lt, axis=1) <= math.log(term_max)
    ok = last_ok & big_ok
    if not ok[0]:
        return float(xs[0])
    bad = np.nonzero(~ok)[0]
    return float(xs[bad[0] - 1]) if bad.size else float(xs[-1])


def _series_minus_one(profile, x):
    from .selfsim import _log_terms
    lt, sg = _log_terms(profile.coeffs, profile.p, x)
    terms = (sg * np.exp(lt))[:, 1:]
    return np.array([math.fsum(row) for row in terms])


def converge_to_profile(u0: RadialGridState, config: EvolveConfig, p: float, t_list,
                        N: int = 40, K: float | None = None,
                        term_tol: float = 1e-13) -> ProfileConvergence:
    """Distance of the rescaled solution from the self-similar profile.

    ``D(t) = sup_{x <= X_eff} |u(t, x e^{-mu t}) - Psi(x)| / x^p`` with
    ``mu = lambda_e(p) / p`` and ``Psi`` from the steady recurrence with
    ``Psi_1 = K``.  ``X_eff`` is the range where the truncated series is
    trusted; beyond it ``|.| / x^p <= 2 / X_eff^p`` (reported as ``I2``).
    ``K = 0`` compares with the constant profile 1.
    """
    from .selfsim import steady_coeffs
    kernel, params = config.kernel, config.params
    lam = lambda_e(kernel, params, p, 1e-12)
    if not lam > 0.0:
        raise StabilityRegimeError(lam)
    mu = lam / p
    if K is None:
        K = small_x_coefficient(u0, p)
    x = u0.x_nodes
    if K == 0.0:
        psi = np.zeros_like(x)
        X_eff = float(x[-1])
    else:
        prof = steady_coeffs(kernel, params, p, K, N, permissive=True)
        X_eff = trusted_series_range(prof, x, term_tol)
        psi = np.zeros_like(x)
        psi[1:] = _series_minus_one(prof, x[1:])
    sel = (x > 0) & (x <= X_eff)
    records = []
    cur = u0
    for t in t_list:
        cur = advance(cur, config, float(t))
        r = rescale_state(cur, mu, config.closure_p)
        D = float(np.max(np.abs(r.w[sel] - psi[sel]) / x[sel] ** p))
        records.append({"t": float(t), "D": D, "I1": D, "I2": 2.0 / X_eff ** p, "X_eff": X_eff})
    Ds = [r["D"] for r in records]
    ts = [r["t"] for r in records]
    # empirical exponential rates between consecutive times; reported, not asserted
    rates = [math.log(a / b) / (t2 - t1) if a > 0 and b > 0 else math.nan
             for a, b, t1, t2 in zip(Ds, Ds[1:], ts, ts[1:])]
    return ProfileConvergence(p, float(K), mu, records,
                              all(b < a for a, b in zip(Ds, Ds[1:])), rates)
