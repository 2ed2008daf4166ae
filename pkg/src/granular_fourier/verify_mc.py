"""Velocity-space Monte Carlo checks of the Fourier gain identity and of the
collisional moment production, for Gaussian velocity laws and cutoff kernels.

Post-collisional velocity (sigma form), with ``U = (v + v*)/2`` and
``u = v - v*``::

    v' = U + (a_-/2) u + (a_+/2) |u| sigma.

The kernel is sampled through ``s = sin^2(theta/2)`` with density
``G(s) / gamma2`` on ``(0, 1/2]`` and a uniform azimuth, so every sample
carries the weight ``gamma2 = int b dsigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .charfun import CharFn, Gaussian, xi_split
from .errors import DomainError, PreconditionError
from .kernels import S_TOP, KernelModel, RestitutionParams, gamma2, lambda_e
from .quadrature import GradedRule, QuadratureConfig

BLOCK = 1 << 16


@dataclass(frozen=True)
class VelocityLaw:
    """Gaussian velocity law with mean ``mean`` and per-component variance."""

    mean: tuple = (0.0, 0.0, 0.0)
    variance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.variance > 0.0:
            raise DomainError("variance must be positive")
        m = tuple(float(v) for v in self.mean)
        if len(m) != 3:
            raise DomainError("mean must be a 3-vector")
        object.__setattr__(self, "mean", m)

    def charfn(self) -> Gaussian:
        return Gaussian(self.variance, self.mean)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.mean) + math.sqrt(self.variance) * rng.standard_normal((n, 3))

    @property
    def second_moment(self) -> float:
        """``E |v|^2``."""
        return 3.0 * self.variance + float(np.dot(self.mean, self.mean))


@dataclass
class McEstimate:
    value: complex | float
    stderr: float
    n_samples: int
    seed: int

    def brackets(self, ref, k: float = 3.0) -> bool:
        return abs(self.value - ref) <= k * self.stderr

    def as_dict(self):
        v = self.value
        val = [v.real, v.imag] if isinstance(v, complex) else v
        return {"value": val, "stderr": self.stderr, "n_samples": self.n_samples, "seed": self.seed}


def _require_cutoff(kernel: KernelModel):
    if not kernel.bounded:
        raise PreconditionError("Monte Carlo checks need a cutoff (bounded) kernel")


def _blocks(n: int, seed: int):
    """Per-block generators from a spawned seed sequence, in fixed order."""
    nb = -(-n // BLOCK)
    children = np.random.SeedSequence(seed).spawn(nb)
    for k, ss in enumerate(children):
        yield np.random.default_rng(ss), min(BLOCK, n - k * BLOCK)


def sample_s(kernel: KernelModel, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``s`` from the density proportional to ``G`` on ``(0, 1/2]`` (rejection)."""
    top = kernel.sup_G
    out = np.empty(0)
    while out.size < n:
        m = max(2 * (n - out.size), 1024)
        s = S_TOP * (1.0 - rng.random(m))
        keep = rng.random(m) * top <= kernel.G_support(s)
        out = np.concatenate([out, s[keep]])
    return out[:n]


def _frame(axis):
    """Orthonormal vectors perpendicular to the unit rows of ``axis``."""
    a = np.where(np.abs(axis[:, :1]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    e1 = np.cross(axis, a)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(axis, e1)
    return e1, e2


def _directions(axis, cos_t, phi):
    e1, e2 = _frame(axis)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    return (cos_t[:, None] * axis + sin_t[:, None] * (np.cos(phi)[:, None] * e1
                                                      + np.sin(phi)[:, None] * e2))


def _unit(u):
    r = np.linalg.norm(u, axis=1, keepdims=True)
    r = np.where(r == 0.0, 1.0, r)
    return u / r


def _collide(v, vs, s, phi, params: RestitutionParams):
    u = v - vs
    ru = np.linalg.norm(u, axis=1)
    sigma = _directions(_unit(u), 1.0 - 2.0 * s, phi)
    U = 0.5 * (v + vs)
    return U + 0.5 * params.a_minus * u + 0.5 * params.a_plus * ru[:, None] * sigma


def _mean_se(chunks_sum, chunks_sq, n):
    mean = chunks_sum / n
    var = max(chunks_sq / n - abs(mean) ** 2, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n)


def mc_gain_transform(f: VelocityLaw, g: VelocityLaw, params: RestitutionParams,
                      kernel: KernelModel, xi, n: int = 1_000_000, seed: int = 0) -> McEstimate:
    """Estimate the Fourier transform of the gain term ``Q^+(g, f)`` at ``xi``.

    ``v ~ f``, ``v* ~ g`` and the estimate is ``gamma2 * mean(exp(-i v' . xi))``.
    The standard error of the complex mean is ``sqrt(var Re + var Im) / sqrt(n)``.
    """
    _require_cutoff(kernel)
    if n < 10_000:
        raise PreconditionError("need at least 1e4 samples")
    xi = np.asarray(xi, dtype=float)
    g2 = gamma2(kernel)
    tot, sq = 0.0 + 0.0j, 0.0
    for rng, m in _blocks(n, seed):
        v = f.sample(rng, m)
        vs = g.sample(rng, m)
        s = sample_s(kernel, rng, m)
        phi = 2.0 * math.pi * rng.random(m)
        vp = _collide(v, vs, s, phi, params)
        z = np.exp(-1j * (vp @ xi))
        tot += complex(np.sum(z))
        sq += float(np.sum(z.real ** 2 + z.imag ** 2))
    mean, se = _mean_se(tot, sq, n)
    return McEstimate(g2 * mean, g2 * se, n, seed)


def mc_loss_transform(f: VelocityLaw, g: VelocityLaw, kernel: KernelModel, xi) -> complex:
    """Closed-form Fourier transform of the loss term, ``gamma2 f^(xi) g^(0)``."""
    return complex(gamma2(kernel) * f.charfn()(np.asarray(xi, dtype=float)))


def sphere_gain_transform(fhat: CharFn, ghat: CharFn, params: RestitutionParams,
                          kernel: KernelModel, xi, tol: float = 1e-10,
                          split=None) -> complex:
    """Deterministic ``int b(xi^ . sigma) f^(xi_e^+) g^(xi_e^-) dsigma``.

    Gauss panels in ``s`` (graded towards ``s = 0``) times a trapezoid rule
    in the azimuth, doubled until two successive values agree to ``tol``.
    ``split(xi, sigma)`` may replace the inelastic ``(xi^+, xi^-)`` map.
    """
    _require_cutoff(kernel)
    xi = np.asarray(xi, dtype=float)
    r = float(np.linalg.norm(xi))
    if r == 0.0:
        return complex(gamma2(kernel, tol) * fhat(xi) * ghat(xi))
    rule = GradedRule(S_TOP, QuadratureConfig(order=24, s_min=1e-16), kernel.breakpoints_s)
    s = rule.nodes
    G = kernel.G_support(s)
    axis = (xi / r)[None, :]
    prev = None
    n_az = 8
    while True:
        phi = 2.0 * math.pi * np.arange(n_az) / n_az
        S, P = np.meshgrid(s, phi, indexing="ij")
        sig = _directions(np.repeat(axis, S.size, axis=0), 1.0 - 2.0 * S.ravel(), P.ravel())
        xis = np.broadcast_to(xi, sig.shape)
        if split is None:
            geo = xi_split(xis, sig, params)
            plus, minus = geo.xi_plus, geo.xi_minus
        else:
            plus, minus = split(xis, sig)
        vals = (fhat(plus) * ghat(minus)).reshape(S.shape).mean(axis=1)
        re, _, _ = rule.integrate(G * vals.real, extrapolate=False)
        im, _, _ = rule.integrate(G * vals.imag, extrapolate=False)
        cur = complex(re, im)
        if prev is not None and abs(cur - prev) <= tol:
            return cur
        if n_az > 4096:
            return cur
        prev = cur
        n_az *= 2


def elastic_split(xi, sigma):
    """Elastic ``xi^+ = (xi + |xi| sigma)/2``, ``xi^- = (xi - |xi| sigma)/2``."""
    r = np.linalg.norm(xi, axis=-1, keepdims=True)
    return 0.5 * (xi + r * sigma), 0.5 * (xi - r * sigma)


def energy_production_exact(f: VelocityLaw, params: RestitutionParams,
                            kernel: KernelModel) -> float:
    """``int Q(f, f) |v|^2 dv = (lambda_e(1) / 2) E|v - v*|^2`` for ``v, v* ~ f``.

    Per collision ``|v'|^2 - |v|^2`` averages to
    ``-(a_+ a_- / 2)(1 - cos theta)|u|^2`` over the azimuth and over the
    centre of mass, and ``int b (1 - cos theta) = 2 int G s ds``.
    """
    e_u2 = 6.0 * f.variance
    return 0.5 * lambda_e(kernel, params, 1.0) * e_u2


@dataclass
class ProductionReport:
    mass: McEstimate
    momentum: list
    energy: McEstimate
    energy_exact: float
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"mass": self.mass.as_dict(), "momentum": [m.as_dict() for m in self.momentum],
                "energy": self.energy.as_dict(), "energy_exact": self.energy_exact, **self.extra}


def _production_samples(f, params, kernel, n, seed, omega_form=False):
    acc = np.zeros(5)
    acc2 = np.zeros(5)
    for rng, m in _blocks(n, seed):
        v = f.sample(rng, m)
        vs = f.sample(rng, m)
        s = sample_s(kernel, rng, m)
        phi = 2.0 * math.pi * rng.random(m)
        if omega_form:
            vp = _collide_omega(v, vs, s, phi, params)
        else:
            vp = _collide(v, vs, s, phi, params)
        d = np.empty((m, 5))
        d[:, 0] = 0.0
        d[:, 1:4] = vp - v
        d[:, 4] = np.sum(vp * vp, axis=1) - np.sum(v * v, axis=1)
        acc += d.sum(axis=0)
        acc2 += (d * d).sum(axis=0)
    return acc, acc2


def _collide_omega(v, vs, s, phi, params):
    """``v' = v - a_+ (u . omega) omega`` with ``omega . u^ = sqrt(s)``."""
    u = v - vs
    omega = _directions(_unit(u), np.sqrt(s), phi)
    return v - params.a_plus * np.sum(u * omega, axis=1)[:, None] * omega


def moment_production(f: VelocityLaw, params: RestitutionParams, kernel: KernelModel,
                      n: int = 1_000_000, seed: int = 0, omega_form: bool = False) -> ProductionReport:
    """Monte Carlo weak-form production ``int Q(f, f) phi`` for ``phi = 1, v, |v|^2``.

    Estimated as ``gamma2 * E[phi(v') - phi(v)]``; the mass entry is exact
    zero with zero error.
    """
    _require_cutoff(kernel)
    if n < 100_000:
        raise PreconditionError("need at least 1e5 samples")
    g2 = gamma2(kernel)
    acc, acc2 = _production_samples(f, params, kernel, n, seed, omega_form)
    est = []
    for k in range(5):
        mean, se = _mean_se(acc[k], acc2[k], n)
        est.append(McEstimate(g2 * float(mean), g2 * se, n, seed))
    return ProductionReport(est[0], est[1:4], est[4], energy_production_exact(f, params, kernel),
                            {"form": "omega" if omega_form else "sigma"})


def energy_increment_stats(f: VelocityLaw, params: RestitutionParams, kernel: KernelModel,
                           n: int, seed: int, omega_form: bool) -> tuple[float, float, float]:
    """Mean, variance and standard error of the mean of ``|v'|^2 - |v|^2``."""
    _require_cutoff(kernel)
    acc, acc2 = _production_samples(f, params, kernel, n, seed, omega_form)
    mean, se = _mean_se(acc[4], acc2[4], n)
    var = se * se * n
    return float(mean), float(var), float(se)


def bobylev_check(n: int = 1_000_000, seed: int = 7, magnitudes=(0.5, 1.0, 2.0),
                  es=(0.75, 1.0), kernel: KernelModel | None = None,
                  direction=(0.36, 0.48, 0.8)) -> list[dict]:
    """Gain-transform identity on the default fixture ``f = g = N(0, 1)``.

    Returns one record per ``(e, |xi|)`` with the JSON fields
    ``check, params, estimate, stderr, reference, pass``.
    """
    kernel = kernel or KernelModel.constant(1.0 / (4.0 * math.pi))
    f = VelocityLaw()
    d = np.asarray(direction, dtype=float)
    d /= np.linalg.norm(d)
    out = []
    for k, e in enumerate(es):
        params = RestitutionParams(e)
        for j, r in enumerate(magnitudes):
            xi = r * d
            est = mc_gain_transform(f, f, params, kernel, xi, n, seed + 1000 * k + j)
            ref = sphere_gain_transform(f.charfn(), f.charfn(), params, kernel, xi)
            out.append({"check": "gain_transform", "params": {"e": e, "xi": float(r),
                                                              "kernel": kernel.kernel_id},
                        "estimate": [est.value.real, est.value.imag], "stderr": est.stderr,
                        "reference": [ref.real, ref.imag], "pass": est.brackets(ref)})
    return out
