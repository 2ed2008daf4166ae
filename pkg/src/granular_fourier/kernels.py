"""Angular collision kernels and the scalar moments built from them.

A kernel is stored through its symmetrized angular part ``b(cos theta)``
on ``theta in [0, pi/2]``.  All moments are integrals in the variable
``s = sin^2(theta/2) in (0, 1/2]`` against the scaled kernel

    G(s) = 4 pi b(1 - 2 s),

so that ``dsigma = 4 pi ds`` on the sphere.  With ``x = |xi|^2 / 2`` the
collision geometry reduces to ``|xi_e^-|^2/2 = a(s) x`` and
``|xi_e^+|^2/2 = b(s) x`` where ``a(s) = a_+^2 s`` and
``b(s) = 1 - a_+(1 + a_-) s``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from .errors import (DomainError, NonIntegrableError, PreconditionError,
                     QuadratureError, StabilityRegimeWarning)
from .quadrature import (DEFAULT_TOL, GradedRule, QuadratureConfig,
                         integrate_singular)

FOUR_PI = 4.0 * math.pi
S_TOP = 0.5
FAMILIES = ("constant", "powerSingular", "scaledPower", "tabulated")

# successively finer rules tried until the error estimate meets tol
REFINEMENTS = (
    QuadratureConfig(order=16, check_order=24),
    QuadratureConfig(order=24, check_order=32, s_min=1e-24),
    QuadratureConfig(order=32, check_order=48, s_min=1e-40),
)


@dataclass(frozen=True)
class RestitutionParams:
    """Restitution coefficient and the derived collision constants."""

    e: float
    a_plus: float = field(init=False)
    a_minus: float = field(init=False)

    def __post_init__(self):
        e = float(self.e)
        if not (0.0 < e <= 1.0):
            raise DomainError(f"restitution coefficient must lie in (0, 1], got {e}")
        a_plus = 0.5 * (1.0 + e)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "a_plus", a_plus)
        # complement keeps a_plus + a_minus == 1 exact
        object.__setattr__(self, "a_minus", 1.0 - a_plus)

    @property
    def c_b(self) -> float:
        """Slope of ``b(s) = 1 - c_b s``."""
        return self.a_plus * (1.0 + self.a_minus)

    @property
    def c_a(self) -> float:
        """Slope of ``a(s) = c_a s``."""
        return self.a_plus * self.a_plus

    def a_of_s(self, s):
        return self.c_a * np.asarray(s, dtype=float)

    def b_of_s(self, s):
        return 1.0 - self.c_b * np.asarray(s, dtype=float)


@dataclass(frozen=True)
class KernelModel:
    """Angular kernel ``b(cos theta)`` with singularity metadata.

    Parameters
    ----------
    family : str
        One of ``constant``, ``powerSingular``, ``scaledPower``,
        ``tabulated``.
    strength : float
        ``c`` for constant, ``kappa`` for powerSingular, ``k_e`` for
        scaledPower.  Ignored for tabulated kernels.
    nu : float
        Angular singularity exponent, ``b ~ kappa theta^(-2-nu)``.  For
        scaledPower the exponent in ``s`` is ``beta = nu / 2``.
    table : tuple, optional
        ``(cos_nodes, values)`` of a piecewise-linear tabulated kernel.
    support_symmetrized : bool
        If False the kernel is given on the full range ``[0, pi]`` and is
        symmetrized as ``b(t) + b(-t)``.
    cap : float, optional
        Truncation level, ``b_n = min(b, cap)``.
    """

    family: str
    strength: float = 1.0
    nu: float = 0.0
    table: tuple | None = None
    support_symmetrized: bool = True
    cap: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if self.family != "tabulated" and not self.strength > 0.0:
            raise DomainError("kernel strength must be positive")
        if self.family in ("powerSingular", "scaledPower") and not 0.0 <= self.nu < 2.0:
            raise DomainError("singularity exponent nu must lie in [0, 2)")
        if self.family == "tabulated":
            if self.table is None:
                raise DomainError("tabulated kernel needs a table")
            t, v = (tuple(float(a) for a in arr) for arr in self.table)
            lo = 0.0 if self.support_symmetrized else -1.0
            if len(t) != len(v) or len(t) < 2 or t[0] != lo or t[-1] != 1.0:
                raise DomainError(f"table must cover [{lo}, 1] with matching values")
            if any(np.diff(t) <= 0) or min(v) < 0.0:
                raise DomainError("table nodes must increase and values be nonnegative")
            object.__setattr__(self, "table", (t, v))
        if self.cap is not None and not self.cap > 0.0:
            raise DomainError("cap must be positive")

    # constructors
    @classmethod
    def constant(cls, c: float, support_symmetrized: bool = True) -> "KernelModel":
        return cls("constant", strength=c, support_symmetrized=support_symmetrized)

    @classmethod
    def power_singular(cls, kappa: float, nu: float,
                       support_symmetrized: bool = True) -> "KernelModel":
        return cls("powerSingular", strength=kappa, nu=nu,
                   support_symmetrized=support_symmetrized)

    @classmethod
    def scaled_power(cls, k_e: float, beta: float) -> "KernelModel":
        return cls("scaledPower", strength=k_e, nu=2.0 * beta)

    @classmethod
    def tabulated(cls, cos_nodes, values, support_symmetrized: bool = True) -> "KernelModel":
        return cls("tabulated", table=(tuple(cos_nodes), tuple(values)),
                   support_symmetrized=support_symmetrized)

    # metadata
    @property
    def beta(self) -> float:
        """Exponent in ``G(s) ~ s^(-1-beta)``; 0 for bounded kernels."""
        return 0.5 * self.nu if self.family in ("powerSingular", "scaledPower") else 0.0

    @property
    def bounded(self) -> bool:
        return self.cap is not None or self.family in ("constant", "tabulated")

    @property
    def singular(self) -> bool:
        return not self.bounded

    @property
    def kernel_id(self) -> str:
        if self.family == "constant":
            s = f"constant:c={self.strength:.17g}"
        elif self.family == "powerSingular":
            s = f"powerSingular:kappa={self.strength:.17g},nu={self.nu:.17g}"
        elif self.family == "scaledPower":
            s = f"scaledPower:k_e={self.strength:.17g},beta={self.beta:.17g}"
        else:
            s = f"tabulated:n={len(self.table[0])}"
        if not self.support_symmetrized:
            s += ",symmetrized=false"
        if self.cap is not None:
            s += f",cap={self.cap:.17g}"
        return s

    # evaluation
    def _raw(self, s: np.ndarray) -> np.ndarray:
        """Unsymmetrized ``b`` at ``cos theta = 1 - 2 s``, ``s`` in ``[0, 1]``."""
        if self.family == "constant":
            return np.full_like(s, self.strength)
        if self.family == "powerSingular":
            with np.errstate(divide="ignore"):
                return self.strength * (4.0 * s) ** (-1.0 - self.beta)
        if self.family == "scaledPower":
            with np.errstate(divide="ignore"):
                return self.strength * s ** (-1.0 - self.beta) / FOUR_PI
        t, v = self.table
        return np.interp(1.0 - 2.0 * s, t, v)

    def b_of_s(self, s) -> np.ndarray:
        """Symmetrized, possibly capped ``b`` as a function of ``s <= 1/2``."""
        s = np.asarray(s, dtype=float)
        out = self._raw(s)
        if not self.support_symmetrized:
            out = out + self._raw(1.0 - s)
        if self.cap is not None:
            out = np.minimum(out, self.cap)
        return out

    def G_support(self, s) -> np.ndarray:
        """``G`` at nodes already known to lie in ``(0, 1/2]``."""
        return FOUR_PI * self.b_of_s(s)

    @cached_property
    def sup_G(self) -> float:
        """Supremum of ``G`` on ``(0, 1/2]`` (bounded kernels only)."""
        if self.singular:
            return math.inf
        if self.family == "constant":
            val = self.b_of_s(np.array([0.25]))[0]
        else:
            s = np.concatenate([np.linspace(0.0, 0.5, 4097), self.breakpoints_s])
            val = self.b_of_s(s).max()
        return FOUR_PI * float(val)

    @cached_property
    def breakpoints_s(self) -> np.ndarray:
        """Kinks of ``G`` inside ``(0, 1/2)``: table nodes and cap crossings."""
        pts = []
        if self.family == "tabulated":
            t = np.asarray(self.table[0])
            pts.extend((1.0 - t) / 2.0)
            if not self.support_symmetrized:
                pts.extend((1.0 + t) / 2.0)
        if self.cap is not None:
            parent = self.uncapped()
            f = lambda s: float(parent.b_of_s(np.array([s]))[0]) - self.cap  # noqa: E731
            grid = np.unique(np.concatenate([np.geomspace(1e-15, 0.5, 600), pts]))
            grid = grid[(grid > 0) & (grid <= 0.5)]
            vals = parent.b_of_s(grid) - self.cap
            for k in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
                pts.append(brentq(f, grid[k], grid[k + 1], xtol=1e-300, rtol=1e-15))
        pts = np.array(sorted(p for p in pts if 0.0 < p < 0.5))
        return pts

    def uncapped(self) -> "KernelModel":
        return KernelModel(self.family, self.strength, self.nu, self.table,
                           self.support_symmetrized, None)

    def majorant(self, beta: float | None = None) -> tuple[float, float]:
        """Constants ``(k_e, beta)`` with ``G(s) <= k_e s^(-1-beta)`` on ``(0, 1/2]``.

        Power families use their exact constant; a capped singular kernel
        inherits the bound of its parent.  A bounded kernel needs a
        positive ``beta``; the bound is then ``sup G 2^(-1-beta)``.
        """
        if self.family in ("powerSingular", "scaledPower") and (beta is None or beta == self.beta):
            if self.family == "powerSingular":
                k = FOUR_PI * self.strength * 4.0 ** (-1.0 - self.beta)
            else:
                k = self.strength
            if not self.support_symmetrized:
                k *= 2.0
            return k, self.beta
        if beta is None or beta <= 0.0:
            raise PreconditionError("bounded kernels need an explicit beta > 0 for the majorant")
        return self.uncapped_sup(beta) * 2.0 ** (-1.0 - beta), beta

    def uncapped_sup(self, beta: float) -> float:
        if self.singular:
            raise PreconditionError("majorant exponent differs from the kernel exponent")
        return self.sup_G


def _as_kernel_cos(cos_theta):
    t = np.asarray(cos_theta, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("cos_theta must lie in [0, 1] (symmetrized support)")
    return t


def angular_eval(kernel: KernelModel, cos_theta):
    """Return ``b(cos theta)`` on the symmetrized support ``[0, 1]``."""
    t = _as_kernel_cos(cos_theta)
    out = kernel.b_of_s((1.0 - t) / 2.0)
    return float(out) if out.ndim == 0 else out


def scaled_kernel_eval(kernel: KernelModel, s):
    """Return ``G(s) = 4 pi b(1 - 2 s)``, zero for ``s > 1/2``."""
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s <= 0.0) or np.any(s >= 1.0):
        raise DomainError("s must lie in (0, 1)")
    inside = s <= S_TOP
    out = np.where(inside, FOUR_PI * kernel.b_of_s(np.where(inside, s, S_TOP)), 0.0)
    return float(out) if out.ndim == 0 else out


def cutoff_truncate(kernel: KernelModel, n: float) -> KernelModel:
    """Return the bounded kernel ``min(b, n)``."""
    if not n > 0:
        raise DomainError("truncation level must be positive")
    cap = float(n) if kernel.cap is None else min(kernel.cap, float(n))
    return KernelModel(kernel.family, kernel.strength, kernel.nu, kernel.table,
                       kernel.support_symmetrized, cap)


# quadrature against G

@dataclass
class Moment:
    value: float
    est_error: float
    config: dict


def integrate_G(kernel: KernelModel, factor, tol: float = DEFAULT_TOL,
                raise_on_divergence: bool = True) -> Moment:
    """Integrate ``G(s) factor(s)`` over ``(0, 1/2]``.

    Rules from :data:`REFINEMENTS` are tried in turn until the error
    estimate drops below ``tol``.
    """
    def f(s):
        return kernel.G_support(s) * factor(s)

    res = None
    for cfg in REFINEMENTS:
        res = integrate_singular(f, S_TOP, tol, cfg, kernel.breakpoints_s,
                                 raise_on_divergence=raise_on_divergence)
        if res.diverged or res.est_error <= tol:
            break
    else:
        raise QuadratureError(
            f"quadrature error {res.est_error:.3g} exceeds tol {tol:.3g}")
    return Moment(res.value, res.est_error, res.config)


def _check_tol(tol):
    if not tol > 0:
        raise DomainError("tol must be positive")


def _aq_bq_minus_one(params: RestitutionParams, q: float):
    ca, cb = params.c_a, params.c_b
    if q == 1.0:
        # a + b - 1 = -2 a_+ a_- s, exactly 0 at e = 1
        k = -2.0 * params.a_plus * params.a_minus
        return lambda s: k * s

    def factor(s):
        # b^q - 1 in cancelled form keeps accuracy as s -> 0
        return (ca * s) ** q + np.expm1(q * np.log1p(-cb * s))
    return factor


def lambda_e_moment(kernel: KernelModel, params: RestitutionParams, q: float,
                    tol: float = DEFAULT_TOL, extended: bool = False) -> Moment:
    if not q > 0 or (not extended and q > 2.0):
        raise DomainError("q must lie in (0, 2]")
    _check_tol(tol)
    if kernel.singular and q <= kernel.beta:
        raise NonIntegrableError(f"lambda_e({q}) diverges for beta = {kernel.beta}")
    return integrate_G(kernel, _aq_bq_minus_one(params, q), tol)


def lambda_e(kernel: KernelModel, params: RestitutionParams, q: float,
             tol: float = DEFAULT_TOL, extended: bool = False) -> float:
    """``lambda_e(q) = int G(s) [a(s)^q + b(s)^q - 1] ds``.

    ``lambda_{e,alpha}`` is ``lambda_e(alpha / 2)``.  With
    ``extended=True`` any ``q > 0`` is accepted; the integrand stays
    bounded by the singular factor for every ``q``.
    """
    return lambda_e_moment(kernel, params, q, tol, extended).value


def lambda_sphere(kernel: KernelModel, params: RestitutionParams, alpha: float,
                  tol: float = DEFAULT_TOL) -> float:
    """``lambda_{e,alpha}`` from the three-dimensional collision vectors.

    Uses the spherical definition directly: the ratio
    ``(|xi_e^+|^alpha + |xi_e^-|^alpha - |xi|^alpha) / |xi|^alpha`` is
    computed from ``xi_e^+-`` built for ``xi = e_z`` and ``sigma`` at polar
    angle ``theta``, integrated with ``dsigma = 2 pi sin(theta) dtheta``.
    """
    ap, am = params.a_plus, params.a_minus

    def f(s):
        theta = 2.0 * np.arcsin(np.sqrt(s))
        sig = np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)])
        xi = np.array([0.0, 0.0, 1.0])[:, None]
        plus = 0.5 * (1.0 + am) * xi + 0.5 * ap * sig
        minus = 0.5 * (1.0 - am) * xi - 0.5 * ap * sig
        np_ = np.sqrt((plus ** 2).sum(axis=0))
        nm = np.sqrt((minus ** 2).sum(axis=0))
        b = kernel.b_of_s(s)
        # dsigma = 2 pi sin(theta) dtheta and dtheta/ds = 1 / (sin(theta/2) cos(theta/2))
        jac = 2.0 * math.pi * np.sin(theta) / (np.sqrt(s) * np.sqrt(1.0 - s))
        return b * jac * (np_ ** alpha + nm ** alpha - 1.0)

    res = None
    for cfg in REFINEMENTS:
        res = integrate_singular(f, S_TOP, tol, cfg, kernel.breakpoints_s)
        if res.est_error <= tol:
            break
    return res.value


def gamma2_moment(kernel: KernelModel, tol: float = DEFAULT_TOL) -> Moment:
    _check_tol(tol)
    return integrate_G(kernel, np.ones_like, tol)


def gamma2(kernel: KernelModel, tol: float = DEFAULT_TOL) -> float:
    """Total kernel mass ``int b dsigma``; raises for non-cutoff kernels."""
    return gamma2_moment(kernel, tol).value


def gamma_e_alpha_moment(kernel: KernelModel, params: RestitutionParams, alpha: float,
                         tol: float = DEFAULT_TOL) -> Moment:
    _check_tol(tol)
    if not kernel.bounded:
        raise PreconditionError("gamma_e_alpha needs a cutoff kernel")
    if not 0.0 < alpha <= 2.0:
        raise DomainError("alpha must lie in (0, 2]")
    q = 0.5 * alpha
    ca, cb = params.c_a, params.c_b
    return integrate_G(kernel, lambda s: (ca * s) ** q + (1.0 - cb * s) ** q, tol)


def gamma_e_alpha(kernel: KernelModel, params: RestitutionParams, alpha: float,
                  tol: float = DEFAULT_TOL) -> float:
    """``gamma_{e,alpha} = int b (|xi_e^+|^alpha + |xi_e^-|^alpha) / |xi|^alpha dsigma``."""
    return gamma_e_alpha_moment(kernel, params, alpha, tol).value


def gamma_alpha_elastic(kernel: KernelModel, alpha: float, tol: float = DEFAULT_TOL) -> float:
    """Elastic counterpart ``int G (s^(alpha/2) + (1-s)^(alpha/2)) ds``."""
    if not kernel.bounded:
        raise PreconditionError("gamma_alpha needs a cutoff kernel")
    q = 0.5 * alpha
    return integrate_G(kernel, lambda s: s ** q + (1.0 - s) ** q, tol).value


def sandwich_factors(params: RestitutionParams, alpha: float) -> tuple[float, float]:
    """Lower and upper factors multiplying ``gamma_alpha`` in the stated sandwich."""
    q = 0.5 * alpha
    ap, am = params.a_plus, params.a_minus
    lower = (ap * ap) ** q * (ap * (1.0 + am)) ** q
    upper = (ap * ap) ** q * (((1.0 + am) ** 2 + ap * ap) / 2.0) ** q
    return lower, upper


def mu_e_p(kernel: KernelModel, params: RestitutionParams, p: float,
           tol: float = DEFAULT_TOL) -> float:
    """Self-similar drift ``mu_{e,p} = lambda_e(p) / p`` for ``0 < p < 1``."""
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    return lambda_e(kernel, params, p, tol) / p


def gamma_e_n(kernel: KernelModel, params: RestitutionParams, p: float, n: int,
              tol: float = DEFAULT_TOL, warn: bool = True) -> float:
    """``gamma_{e,n}(p) = n lambda_e(p) - lambda_e(n p)``.

    A :class:`StabilityRegimeWarning` is issued when ``lambda_e(p) <= 0``.
    """
    if int(n) != n or n < 2:
        raise DomainError("n must be an integer >= 2")
    lam = lambda_e(kernel, params, p, tol, extended=True)
    if warn and lam <= 0.0:
        import warnings
        warnings.warn(StabilityRegimeWarning(f"lambda_e({p}) = {lam:.6g} <= 0"), stacklevel=2)
    return n * lam - lambda_e(kernel, params, n * p, tol, extended=True)


def gamma_e_n_all(kernel: KernelModel, params: RestitutionParams, p: float, N: int,
                  tol: float = DEFAULT_TOL) -> np.ndarray:
    """``gamma_{e,n}(p)`` for ``n = 0..N`` in one vectorized quadrature.

    Entries 0 and 1 are set to 0; the recurrences only use ``n >= 2``.
    """
    lam = lambda_e_series(kernel, params, p * np.arange(1, N + 1), tol)
    n = np.arange(1, N + 1)
    out = np.zeros(N + 1)
    out[1:] = n * lam[0] - lam
    out[1] = 0.0
    return out


def lambda_e_series(kernel: KernelModel, params: RestitutionParams, qs,
                    tol: float = DEFAULT_TOL) -> np.ndarray:
    """``lambda_e(q)`` for a vector of exponents, sharing quadrature nodes."""
    qs = np.asarray(qs, dtype=float)[:, None]
    if kernel.singular and np.any(qs <= kernel.beta):
        raise NonIntegrableError("lambda_e diverges for q <= beta")
    ca, cb = params.c_a, params.c_b
    return _vector_moment(
        kernel, lambda s: (ca * s) ** qs + np.expm1(qs * np.log1p(-cb * s)), tol)


def _vector_moment(kernel: KernelModel, factor, tol: float) -> np.ndarray:
    """Vectorized ``int G factor ds`` where ``factor`` returns shape ``(m, n_s)``.

    Each row settles on the first rule of :data:`REFINEMENTS` that meets
    ``tol`` on its own, so a row's value never depends on the other rows.
    """
    out = None
    todo = None
    for cfg in REFINEMENTS:
        lo = GradedRule(S_TOP, cfg, kernel.breakpoints_s)
        hi = GradedRule(S_TOP, cfg, kernel.breakpoints_s, order=cfg.check_order)
        flo, fhi = factor(lo.nodes), factor(hi.nodes)
        if out is None:
            out = np.full(flo.shape[:-1], np.nan)
            todo = np.ones(out.shape, dtype=bool)
        vals, _, r = lo.integrate(kernel.G_support(lo.nodes) * flo)
        chk, _, _ = hi.integrate(kernel.G_support(hi.nodes) * fhi)
        if np.any((r >= 1.0 - 1e-12) & todo):
            raise NonIntegrableError("moment diverges near s = 0")
        done = todo & (np.abs(vals - chk) <= tol)
        out[done] = vals[done]
        todo &= ~done
        if not todo.any():
            return out
    raise QuadratureError("vector moment did not meet tol")


def _log_binom(p: float, i, j):
    n = np.asarray(i) + np.asarray(j)
    return gammaln(n * p + 1.0) - gammaln(np.asarray(i) * p + 1.0) - gammaln(np.asarray(j) * p + 1.0)


def coeff_B_moment(kernel: KernelModel, params: RestitutionParams, p: float, i: int, j: int,
                   tol: float = DEFAULT_TOL) -> Moment:
    if i < 1 or j < 1:
        raise DomainError("i and j must be >= 1")
    if kernel.singular and i * p <= kernel.beta:
        raise NonIntegrableError(f"B({i},{j}) diverges: i p <= beta = {kernel.beta}")
    ca, cb = params.c_a, params.c_b
    qa, qb = i * p, j * p
    m = integrate_G(kernel, lambda s: (ca * s) ** qa * (1.0 - cb * s) ** qb, tol)
    scale = math.exp(float(_log_binom(p, i, j)))
    return Moment(scale * m.value, scale * m.est_error, m.config)


def coeff_B(kernel: KernelModel, params: RestitutionParams, p: float, i: int, j: int,
            tol: float = DEFAULT_TOL) -> float:
    """``B_{e,p}(i, j) = Gamma(np+1)/(Gamma(ip+1)Gamma(jp+1)) int G a^{ip} b^{jp} ds``."""
    return coeff_B_moment(kernel, params, p, i, j, tol).value


def coeff_B_matrix(kernel: KernelModel, params: RestitutionParams, p: float, N: int,
                   tol: float = DEFAULT_TOL) -> np.ndarray:
    """All ``B(i, j)`` with ``i, j >= 1`` and ``i + j <= N`` as an array.

    Entry ``[i, j]`` holds ``B(i, j)``; unused entries are 0.  The
    integrals ``int G a^{ip} b^{jp}`` are evaluated on shared nodes.
    """
    if kernel.singular and p <= kernel.beta:
        raise NonIntegrableError("B(1, j) diverges: p <= beta")
    ii, jj = np.meshgrid(np.arange(1, N), np.arange(1, N), indexing="ij")
    mask = ii + jj <= N
    ia, ja = ii[mask].astype(float), jj[mask].astype(float)
    ca, cb = params.c_a, params.c_b

    def factor(s):
        la = np.log(ca * s)
        lb = np.log1p(-cb * s)
        return np.exp(ia[:, None] * p * la + ja[:, None] * p * lb)

    ints = _vector_moment(kernel, factor, tol)
    out = np.zeros((N + 1, N + 1))
    out[ii[mask], jj[mask]] = np.exp(_log_binom(p, ia, ja)) * ints
    return out


def beta_bound(k_e: float, beta: float, p: float, i: int, j: int) -> float:
    """Beta-function majorant of ``B(i, j)`` for ``G <= k_e s^(-1-beta)``."""
    n = i + j
    return k_e * math.exp(gammaln(i * p - beta) + gammaln(n * p + 1.0)
                          - gammaln(i * p + 1.0) - gammaln(n * p + 1.0 - beta))


def c_constant(p: float, beta: float, n_terms: int = 100_000) -> float:
    """``C(p, beta) = r(p, beta) S(p, beta)``.

    ``S = sum_{i>=1} Gamma(ip - beta) / Gamma(ip + 1)`` is summed to
    ``n_terms`` and completed with the integral of its asymptotic form
    ``(ip)^(-1-beta)``.  ``r = sup_{n>=2} Gamma(np+1) / ((n-1) Gamma(np+1-beta))``
    decays like ``n^(beta-1)``, so the sup is attained at small ``n``.
    """
    if not 0.0 < beta < p:
        raise DomainError("need 0 < beta < p")
    i = np.arange(1, n_terms + 1, dtype=float)
    terms = np.exp(gammaln(i * p - beta) - gammaln(i * p + 1.0))
    tail = p ** (-1.0 - beta) * (n_terms + 0.5) ** (-beta) / beta
    S = math.fsum(terms[::-1]) + tail
    n = np.arange(2, 10_001, dtype=float)
    r = np.max(np.exp(gammaln(n * p + 1.0) - gammaln(n * p + 1.0 - beta)) / (n - 1.0))
    return float(r * S)


def b_e_constant(kernel: KernelModel, params: RestitutionParams, p: float,
                 tol: float = DEFAULT_TOL, beta: float | None = None) -> float:
    """``b_e = 1 + k_e C(p, beta) / lambda_e(p)`` from the kernel majorant.

    Bounded kernels use ``beta = p / 2`` unless one is supplied.
    """
    if kernel.bounded and beta is None and kernel.cap is None:
        beta = 0.5 * p
    if kernel.cap is not None and beta is None:
        parent = kernel.uncapped()
        if parent.singular and parent.beta < p and parent.beta > 0:
            k_e, beta = parent.majorant()
        else:
            beta = 0.5 * p
            k_e, beta = kernel.majorant(beta)
    else:
        k_e, beta = kernel.majorant(beta)
    lam = lambda_e(kernel, params, p, tol)
    if lam <= 0:
        from .errors import StabilityRegimeError
        raise StabilityRegimeError(lam)
    return 1.0 + k_e * c_constant(p, beta) / lam


@dataclass
class Classification:
    cutoff: bool
    mild_ok: bool
    full_ok: bool
    cutoff_value: float
    mild_value: float
    full_value: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def classify_kernel(kernel: KernelModel, alpha0: float) -> Classification:
    """Test finiteness of the three kernel integrability conditions.

    cutoff: ``int b dsigma``; mild: ``int (1-t^2)^(alpha0/4) b(t) dt`` over
    ``(-1, 1)``; full: ``int_0^{pi/2} sin^alpha0(theta/2) b sin(theta) dtheta``.
    Divergence is read off the panel ratio near ``s = 0``.
    """
    if not 0.0 < alpha0 <= 2.0:
        raise DomainError("alpha0 must lie in (0, 2]")
    a0 = float(alpha0)
    res = []
    # with t = 1 - 2s: dt = 2 ds, 1 - t^2 = 4 s (1 - s), sin^2(theta/2) = s
    for factor in (lambda s: np.ones_like(s),
                   lambda s: (4.0 * s * (1.0 - s)) ** (0.25 * a0) / (2.0 * math.pi),
                   lambda s: s ** (0.5 * a0) / (2.0 * math.pi)):
        m = integrate_G(kernel, factor, tol=1.0, raise_on_divergence=False)
        res.append(m.value)
    fin = [bool(np.isfinite(v)) for v in res]
    return Classification(fin[0], fin[1], fin[2], *res)


def full_moment_exact(kappa: float, nu: float, alpha0: float) -> float:
    """Closed form of ``int_0^{pi/2} sin^alpha0(theta/2) b sin(theta) dtheta``
    for ``b = kappa (2(1 - cos theta))^(-1-nu/2)``; infinite when ``alpha0 <= nu``."""
    d = 0.5 * (alpha0 - nu)
    if d <= 0:
        return math.inf
    return 2.0 * kappa * 4.0 ** (-1.0 - 0.5 * nu) * 0.5 ** d / d


# moment table

QUANTITIES = ("gamma2", "gamma_e_alpha", "lambda_e_q", "mu_e_p", "gamma_e_n", "B_ij")


@dataclass
class MomentEntry:
    value: float
    est_error: float
    quadrature_config: dict


class MomentTable:
    """Computed moments keyed by ``(quantity, e, alpha_or_p, i, j)``.

    Every stored entry must satisfy ``est_error <= tol``.
    """

    def __init__(self, tol: float = DEFAULT_TOL):
        self.tol = tol
        self.entries: dict[tuple, MomentEntry] = {}

    def add(self, quantity: str, e, alpha_or_p, i, j, moment: Moment):
        if quantity not in QUANTITIES:
            raise DomainError(f"unknown quantity {quantity!r}")
        if not moment.est_error <= self.tol:
            raise QuadratureError(f"{quantity}: est_error {moment.est_error:.3g} > tol")
        key = (quantity, e, alpha_or_p, i, j)
        self.entries[key] = MomentEntry(moment.value, moment.est_error, moment.config)
        return self.entries[key]

    def fill(self, kernel: KernelModel, params: RestitutionParams, alpha=None, p=None,
             n_max: int = 4):
        """Populate the standard quantities for one configuration."""
        e = params.e
        if kernel.bounded:
            self.add("gamma2", e, "", "", "", gamma2_moment(kernel, self.tol))
            if alpha is not None:
                self.add("gamma_e_alpha", e, alpha, "", "",
                         gamma_e_alpha_moment(kernel, params, alpha, self.tol))
        if alpha is not None:
            self.add("lambda_e_q", e, alpha, "", "",
                     lambda_e_moment(kernel, params, 0.5 * alpha, self.tol))
        if p is not None:
            m = lambda_e_moment(kernel, params, p, self.tol)
            self.add("mu_e_p", e, p, "", "", Moment(m.value / p, m.est_error / p, m.config))
            for n in range(2, n_max + 1):
                mn = lambda_e_moment(kernel, params, n * p, self.tol, extended=True)
                self.add("gamma_e_n", e, p, n, "",
                         Moment(n * m.value - mn.value, n * m.est_error + mn.est_error,
                                m.config))
                for i in range(1, n):
                    self.add("B_ij", e, p, i, n - i,
                             coeff_B_moment(kernel, params, p, i, n - i, self.tol))
        return self

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "e", "alpha_or_p", "i", "j", "value", "est_error"])
            for (q, e, ap, i, j), ent in self.entries.items():
                w.writerow([q, _fmt(e), _fmt(ap), i, j, _fmt(ent.value), _fmt(ent.est_error)])


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)


# kernel specification strings and config files

_ALIASES = {"c": "strength", "kappa": "strength", "k_e": "strength", "k": "strength",
            "strength": "strength", "nu": "nu", "beta": "beta",
            "symmetrized": "support_symmetrized",
            "support_symmetrized": "support_symmetrized", "cap": "cap"}


def _parse_bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise DomainError(f"not a boolean: {v!r}")


def kernel_from_mapping(cfg: dict) -> KernelModel:
    """Build a kernel from ``family``, ``strength``, ``nu``/``beta``, ``support_symmetrized``."""
    fam = cfg.get("family")
    if fam not in FAMILIES or fam == "tabulated":
        raise DomainError(f"unsupported kernel family {fam!r}")
    kw = {}
    for k, v in cfg.items():
        if k == "family":
            continue
        if k not in _ALIASES:
            raise DomainError(f"unknown kernel key {k!r}")
        kw[_ALIASES[k]] = v
    sym = _parse_bool(str(kw.pop("support_symmetrized", "true")))
    strength = float(kw.pop("strength", 1.0))
    nu = float(kw.pop("nu", 0.0))
    if "beta" in kw:
        nu = 2.0 * float(kw.pop("beta"))
    cap = kw.pop("cap", None)
    k = KernelModel(fam, strength, nu, None, sym, None if cap is None else float(cap))
    return k


def parse_kernel_spec(spec: str) -> KernelModel:
    """Parse ``family:key=value,...``, e.g. ``powerSingular:kappa=0.08,nu=0.5``."""
    fam, _, rest = spec.partition(":")
    cfg = {"family": fam.strip()}
    for item in filter(None, (x.strip() for x in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise DomainError(f"malformed kernel parameter {item!r}")
        cfg[key.strip()] = val.strip()
    return kernel_from_mapping(cfg)


def load_kernel_config(path) -> KernelModel:
    """Read a ``key = value`` kernel file (``#`` starts a comment)."""
    cfg = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, val = line.partition("=")
            if not eq:
                raise DomainError(f"malformed line {line!r}")
            cfg[key.strip()] = val.strip()
    return kernel_from_mapping(cfg)
