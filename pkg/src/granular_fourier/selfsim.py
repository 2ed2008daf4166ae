"""Self-similar series profiles and their coefficient dynamics.

Radial solutions are expanded as ``sum_n c_n x^{np} / Gamma(np + 1)``
with ``c_0 = 1``.  In self-similar variables the coefficients obey

    d psi_n / dt = -gamma_{e,n}(p) psi_n + sum_{i+j=n} B_{e,p}(i, j) psi_i psi_j,

with ``psi_1`` constant; the steady coefficients ``Psi_n`` solve the same
relation with the time derivative set to zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gammaln

from .errors import (DomainError, IntegrationFailure, PreconditionError,
                     StabilityRegimeError)
from .kernels import (DEFAULT_TOL, KernelModel, RestitutionParams, b_e_constant,
                      coeff_B_matrix, gamma_e_n_all, integrate_G, lambda_e)

UNRELIABLE_TERM = 1e15


@dataclass
class SeriesProfile:
    """Coefficients ``c_0..c_N`` of a series in ``x^p`` with bound constants.

    ``bound_consts`` holds ``A0``, ``b_e``, ``K`` and ``b_e_source``
    (``"majorant"`` when ``b_e`` comes from ``G <= k_e s^(-1-beta)``,
    ``"empirical"`` when fitted to the coefficients).
    """

    p: float
    restitution: RestitutionParams
    kernel: KernelModel | None
    coeffs: np.ndarray
    kind: str = "steady"
    t: float = 0.0
    bound_consts: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.coeffs) - 1

    def to_csv(self, path):
        bc = self.bound_consts
        with open(path, "w", newline="") as fh:
            fh.write(f"# p = {self.p:.17g}\n")
            fh.write(f"# e = {self.restitution.e:.17g}\n")
            fh.write(f"# kernel = {self.kernel.kernel_id if self.kernel else 'none'}\n")
            fh.write(f"# b_e = {bc.get('b_e', float('nan')):.17g}\n")
            fh.write(f"# A0 = {bc.get('A0', float('nan')):.17g}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "coeff"])
            for n, c in enumerate(self.coeffs):
                w.writerow([n, f"{c:.17g}"])


@dataclass
class CoeffTrajectory:
    times: np.ndarray
    states: np.ndarray
    integ_tol: float
    bound: np.ndarray | None = None


def _check_p(kernel: KernelModel, p: float):
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    if kernel.singular and not p > kernel.beta:
        raise DomainError(f"p must exceed beta = {kernel.beta}")


def _positive_lambda(kernel, params, p, tol):
    lam = lambda_e(kernel, params, p, tol)
    if not lam > 0.0:
        raise StabilityRegimeError(lam)
    return lam


class _Chain:
    """Interaction coefficients ``gamma_n`` and ``B(i, j)`` up to order ``N``."""

    def __init__(self, kernel, params, p, N, tol):
        self.N = N
        self.gamma = gamma_e_n_all(kernel, params, p, N, tol)
        B = coeff_B_matrix(kernel, params, p, N, tol)
        ii, jj = np.nonzero(B)
        self.i, self.j, self.n = ii, jj, ii + jj
        self.Bv = B[ii, jj]
        self.B = B

    def quadratic(self, psi: np.ndarray) -> np.ndarray:
        return np.bincount(self.n, weights=self.Bv * psi[self.i] * psi[self.j],
                           minlength=self.N + 1)


def steady_coeffs(kernel: KernelModel, params: RestitutionParams, p: float, Psi1: float,
                  N: int = 40, tol: float = DEFAULT_TOL,
                  permissive: bool = False) -> SeriesProfile:
    """Steady coefficients ``Psi_n`` by the lower-triangular recurrence.

    ``Psi_n = (1 / gamma_{e,n}(p)) sum_{i=1}^{n-1} B(i, n-i) Psi_i Psi_{n-i}``.
    Only ``Psi1 < 0`` yields a characteristic function; ``permissive``
    allows any nonzero value.
    """
    _check_p(kernel, p)
    if N < 2:
        raise DomainError("N must be at least 2")
    if Psi1 == 0.0 or (Psi1 > 0.0 and not permissive):
        raise PreconditionError("Psi1 must be negative (use permissive=True otherwise)")
    _positive_lambda(kernel, params, p, tol)
    ch = _Chain(kernel, params, p, N, tol)
    c = np.zeros(N + 1)
    c[0], c[1] = 1.0, Psi1
    for n in range(2, N + 1):
        i = np.arange(1, n)
        c[n] = math.fsum(ch.B[i, n - i] * c[i] * c[n - i]) / ch.gamma[n]
    b_e = b_e_constant(kernel, params, p, tol)
    return SeriesProfile(p, params, kernel, c, "steady", 0.0,
                         {"A0": abs(Psi1), "b_e": b_e, "K": Psi1, "b_e_source": "majorant"})


def recurrence_residual(profile: SeriesProfile, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``|gamma_n c_n - sum B c_i c_j|`` for ``n = 2..N``."""
    ch = _Chain(profile.kernel, profile.restitution, profile.p, profile.N, tol)
    r = ch.gamma * profile.coeffs - ch.quadratic(profile.coeffs)
    return np.abs(r[2:])


def empirical_geometric_bound(coeffs) -> float:
    """Smallest ``b`` with ``|c_n| <= |c_1|^n (b - 1)^(n - 1)`` on the given data."""
    c = np.asarray(coeffs, dtype=float)
    if c[1] == 0.0:
        raise DomainError("c_1 must be nonzero")
    n = np.arange(2, len(c))
    with np.errstate(divide="ignore"):
        g = np.exp((np.log(np.abs(c[2:])) - n * np.log(abs(c[1]))) / (n - 1))
    return 1.0 + float(np.max(g, initial=0.0))


def series_from_data(coeffs, p: float, params: RestitutionParams,
                     kernel: KernelModel | None = None) -> SeriesProfile:
    """Wrap external coefficients; ``b_e`` is fitted empirically."""
    c = np.asarray(coeffs, dtype=float)
    if c[0] != 1.0:
        raise DomainError("c_0 must equal 1")
    b = empirical_geometric_bound(c)
    return SeriesProfile(p, params, kernel, c, "steady", 0.0,
                         {"A0": abs(c[1]), "b_e": b, "K": c[1], "b_e_source": "empirical"})


def exp_series_coeffs(c: float, p: float, N: int) -> np.ndarray:
    """Coefficients of ``exp(-c x^p)``: ``c_n = (-c)^n Gamma(np + 1) / n!``."""
    n = np.arange(N + 1)
    mag = np.exp(n * math.log(abs(c)) + gammaln(n * p + 1.0) - gammaln(n + 1.0)) if c else (n == 0) * 1.0
    return mag * np.where(c < 0, 1.0, (-1.0) ** n)


def coeff_evolve(kernel: KernelModel, params: RestitutionParams, p: float, psi0,
                 t_end: float, tol: float = DEFAULT_TOL, t_eval=None,
                 A0: float | None = None, method: str = "DOP853") -> CoeffTrajectory:
    """Integrate the coefficient chain for ``n = 2..N`` with ``psi_0, psi_1`` fixed.

    The a-priori bound ``|psi_n(t)| <= A0^n b_e^(n-1)`` is checked at every
    output time; a breach beyond ``10 tol`` raises
    :class:`IntegrationFailure`.
    """
    _check_p(kernel, p)
    psi0 = np.asarray(psi0, dtype=float)
    if psi0[0] != 1.0:
        raise DomainError("psi0[0] must equal 1")
    N = len(psi0) - 1
    if N < 2:
        raise DomainError("need at least psi_0..psi_2")
    _positive_lambda(kernel, params, p, tol)
    n = np.arange(N + 1)
    if A0 is None:
        with np.errstate(divide="ignore"):
            A0 = float(np.max(np.abs(psi0[1:]) ** (1.0 / n[1:])))
    if np.any(np.abs(psi0[1:]) > A0 ** n[1:] * (1 + 1e-12)):
        raise PreconditionError("psi0 violates |psi_n(0)| <= A0^n")
    b_e = b_e_constant(kernel, params, p, tol)
    bound = A0 ** n * b_e ** np.maximum(n - 1, 0)
    ch = _Chain(kernel, params, p, N, tol)
    g = ch.gamma[2:]

    def rhs(_t, y):
        psi = np.concatenate([psi0[:2], y])
        return -g * y + ch.quadratic(psi)[2:]

    times = np.asarray([0.0, t_end] if t_eval is None else t_eval, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise DomainError("output times must be nonnegative and increasing")
    sol = solve_ivp(rhs, (0.0, float(times[-1])), psi0[2:], method=method, t_eval=times,
                    rtol=tol, atol=tol * np.maximum(np.abs(psi0[2:]), 1e-300) + tol * 1e-3)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    states = np.empty((len(times), N + 1))
    states[:, 0], states[:, 1] = 1.0, psi0[1]
    states[:, 2:] = sol.y.T
    excess = np.abs(states) - bound * (1.0 + 10.0 * tol)
    if np.any(excess > 10.0 * tol):
        raise IntegrationFailure("coefficient trajectory left the uniform bound")
    return CoeffTrajectory(times, states, tol, bound)


@dataclass
class SeriesValue:
    value: np.ndarray
    tail_bound: np.ndarray
    unreliable: np.ndarray


def _log_terms(coeffs, p, x):
    """``log |c_n x^{np} / Gamma(np+1)|`` and signs, shape ``(len(x), N+1)``."""
    n = np.arange(len(coeffs))
    with np.errstate(divide="ignore"):
        lc = np.log(np.abs(coeffs))
        lx = np.log(x)[:, None]
    lt = lc[None, :] + n[None, :] * p * lx - gammaln(n * p + 1.0)[None, :]
    lt[:, 0] = lc[0]
    return lt, np.sign(coeffs)[None, :]


def series_tail(A: float, g: float, p: float, N: int, x) -> np.ndarray:
    """Bound on ``sum_{n > N} A^n g^(n-1) x^{np} / Gamma(np + 1)``.

    Term ratios ``z Gamma(np+1)/Gamma(np+p+1)`` with ``z = A g x^p``
    decrease in ``n``, so once a ratio drops below 1 the rest is majorized
    by a geometric series.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    if A == 0.0:
        return out
    for k, xv in enumerate(x):
        if xv == 0.0:
            continue
        lz = math.log(A) + (math.log(g) if g > 0 else -math.inf) + p * math.log(xv)
        if g == 0.0:
            continue
        n = N + 1
        lacc = -math.inf
        lt = n * lz - math.lgamma(n * p + 1.0)
        while True:
            lr = lz + math.lgamma(n * p + 1.0) - math.lgamma(n * p + p + 1.0)
            if lr < 0.0:
                lacc = np.logaddexp(lacc, lt - math.log1p(-math.exp(lr)))
                break
            lacc = np.logaddexp(lacc, lt)
            lt += lr
            n += 1
            if n > N + 1_000_000:
                lacc = math.inf
                break
        acc = math.exp(min(lacc - math.log(g), 709.0)) if lacc < 709.0 + math.log(g) else math.inf
        out[k] = acc
    return out


def eval_series(profile: SeriesProfile, x) -> SeriesValue:
    """Sum the series at ``x >= 0`` with a certified truncation bound.

    Terms are formed in log space and added with ``math.fsum``.  The tail
    bound uses ``|c_n| <= |c_1|^n (b_e - 1)^(n-1)`` for steady profiles and
    ``|c_n| <= A0^n b_e^(n-1)`` for transient ones.  A point is flagged
    unreliable when a single term exceeds ``1e15`` in magnitude.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(~np.isfinite(x)):
        raise DomainError("x must be finite and nonnegative")
    c = np.asarray(profile.coeffs, dtype=float)
    val = np.ones_like(x)
    unrel = np.zeros(x.shape, dtype=bool)
    pos = x > 0.0
    if pos.any():
        lt, sg = _log_terms(c, profile.p, x[pos])
        terms = sg * np.exp(lt)
        val[pos] = [math.fsum(row) for row in terms]
        unrel[pos] = np.max(np.abs(terms), axis=1) > UNRELIABLE_TERM
    bc = profile.bound_consts
    if profile.kind == "steady":
        A, g = abs(c[1]), bc.get("b_e", math.inf) - 1.0
    else:
        A, g = bc.get("A0", math.inf), bc.get("b_e", math.inf)
    tail = series_tail(A, g, profile.p, profile.N, x)
    if scalar:
        return SeriesValue(float(val[0]), float(tail[0]), bool(unrel[0]))
    return SeriesValue(val, tail, unrel)


def write_profile_values(profile: SeriesProfile, x, path):
    """Export ``x,value,tail_bound`` rows of the evaluated series."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sv = eval_series(profile, x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "value", "tail_bound"])
        for row in zip(x, np.atleast_1d(sv.value), np.atleast_1d(sv.tail_bound)):
            w.writerow([f"{v:.17g}" for v in row])


def _series_parts(c, p, y):
    """``Psi(y) - 1`` for an array ``y >= 0`` (any shape)."""
    shape = np.shape(y)
    y = np.ravel(y)
    out = np.zeros_like(y)
    pos = y > 0
    if pos.any():
        lt, sg = _log_terms(c, p, y[pos])
        out[pos] = np.sum((sg * np.exp(lt))[:, 1:], axis=1)
    return out.reshape(shape)


def profile_residual(profile: SeriesProfile, x_samples, tol: float = 1e-12,
                     return_all: bool = False):
    """Residual of the steady equation at the sample points.

    ``R(x) = mu x Psi'(x) - int G {[Psi(a x) - 1] Psi(b x) + [Psi(b x) - Psi(x)]} ds``
    with ``mu = lambda_e(p) / p`` and ``Psi'`` differentiated term by term.
    Returns ``max |R|`` (or all residuals with ``return_all``).
    """
    if profile.kind != "steady":
        raise PreconditionError("residual needs a steady profile")
    c = np.asarray(profile.coeffs, dtype=float)
    p = profile.p
    params, kernel = profile.restitution, profile.kernel
    mu = lambda_e(kernel, params, p, tol) / p
    n = np.arange(len(c))
    ca, cb = params.c_a, params.c_b
    res = []
    for x in np.atleast_1d(np.asarray(x_samples, dtype=float)):
        if x == 0.0:
            res.append(0.0)
            continue
        lt, sg = _log_terms(c, p, np.array([x]))
        terms = (sg * np.exp(lt))[0]
        drift = mu * math.fsum(n * p * terms)

        def factor(s):
            wa = _series_parts(c, p, ca * s * x)
            wb = _series_parts(c, p, (1.0 - cb * s) * x)
            # Psi(bx) - Psi(x) termwise with b^{np} - 1 in cancelled form
            db = np.expm1(np.outer(np.log1p(-cb * s), n[1:] * p)) @ terms[1:]
            return wa * (1.0 + wb) + db

        gain = integrate_G(kernel, factor, tol).value
        res.append(drift - gain)
    res = np.abs(np.asarray(res))
    return res if return_all else float(np.max(res))
