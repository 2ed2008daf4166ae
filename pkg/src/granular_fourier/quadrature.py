"""Gauss-Legendre quadrature on panels graded geometrically toward s = 0.

Integrands of the collision moments behave like a power of ``s`` near the
origin, possibly non-integrable.  The rule below places panels
``[h/2, h]`` with ratio 2 down to ``s_min`` and extrapolates the part
``(0, s_min)`` geometrically from the last two panel sums.  The same
panel ratio drives divergence detection: contributions that do not shrink
toward the origin signal a non-integrable singularity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

DEFAULT_TOL = 1e-10
DIVERGENCE_CEILING = 1e12


class NonIntegrableError(ArithmeticError):
    """Raised when a quadrature detects a divergent singular integral."""


class QuadratureError(ArithmeticError):
    """Raised when the error estimate cannot be brought under tolerance."""


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@dataclass(frozen=True)
class QuadratureConfig:
    """Panel layout of the graded rule.

    ``order`` Gauss points per panel; ``ratio`` is the geometric panel
    ratio; ``s_min`` the left edge of the smallest panel.
    """

    order: int = 16
    ratio: float = 2.0
    s_min: float = 1e-14
    check_order: int = 24

    def as_dict(self) -> dict:
        return {"order": self.order, "ratio": self.ratio, "s_min": self.s_min,
                "check_order": self.check_order}


@dataclass
class QuadResult:
    value: float
    est_error: float
    tail: float = 0.0
    diverged: bool = False
    config: dict = field(default_factory=dict)


def panel_edges(lo: float, hi: float, cfg: QuadratureConfig,
                breakpoints=()) -> np.ndarray:
    """Panel edges on ``[lo, hi]``, graded toward ``lo`` when ``lo == 0``."""
    if lo == 0.0:
        k = int(np.floor(np.log(hi / cfg.s_min) / np.log(cfg.ratio)))
        edges = hi / cfg.ratio ** np.arange(k + 1)
        edges = edges[::-1]
    else:
        edges = np.array([lo, hi])
    extra = [b for b in (breakpoints if breakpoints is not None else ()) if edges[0] < b < edges[-1]]
    if extra:
        edges = np.unique(np.concatenate([edges, extra]))
    return edges


class GradedRule:
    """Fixed nodes and weights for integrals over ``(0, hi]``.

    Panels are stored left to right; the first two panels are the ones
    nearest the origin and drive the tail extrapolation.  Nodes are fixed
    by the config, so repeated integrations are bit-reproducible.
    """

    def __init__(self, hi: float, cfg: QuadratureConfig | None = None,
                 breakpoints=(), order: int | None = None):
        self.cfg = cfg or QuadratureConfig()
        self.hi = hi
        self.edges = panel_edges(0.0, hi, self.cfg, breakpoints)
        n = order or self.cfg.order
        x, w = gauss_legendre(n)
        left = self.edges[:-1, None]
        half = 0.5 * np.diff(self.edges)[:, None]
        self.nodes = (left + half * (x + 1.0)).ravel()
        self.weights = (half * w).ravel()
        self.order = n
        self.n_panels = len(self.edges) - 1

    def panel_sums(self, values: np.ndarray) -> np.ndarray:
        """Per-panel sums along the last axis, shape ``(..., n_panels)``."""
        v = np.asarray(values) * self.weights
        return v.reshape(v.shape[:-1] + (self.n_panels, self.order)).sum(axis=-1)

    def integrate(self, values: np.ndarray, extrapolate: bool = True):
        """Return ``(total, tail, ratio)`` for integrand samples at ``nodes``.

        ``ratio`` is the contribution ratio between the two panels nearest
        the origin; ``ratio >= 1`` means the integrand is not integrable at
        zero.
        """
        ps = self.panel_sums(values)
        first, second = ps[..., 0], ps[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(second != 0.0, first / second, 0.0)
        if extrapolate:
            ok = (r > 0.0) & (r < 1.0)
            tail = np.where(ok, first * r / np.where(ok, 1.0 - r, 1.0), 0.0)
        else:
            tail = np.zeros_like(first)
        # sum small panels first for accuracy
        total = ps.sum(axis=-1) + tail
        return total, tail, r


def integrate_singular(f, hi: float, tol: float = DEFAULT_TOL,
                       cfg: QuadratureConfig | None = None, breakpoints=(),
                       raise_on_divergence: bool = True,
                       raise_on_tol: bool = False) -> QuadResult:
    """Integrate ``f`` over ``(0, hi]`` with graded panels.

    ``f`` must accept an array of nodes.  The error estimate compares the
    ``order``-point rule with a ``check_order``-point rule on the same
    panels and adds the spread between two tail extrapolations.
    """
    cfg = cfg or QuadratureConfig()
    rule = GradedRule(hi, cfg, breakpoints)
    check = GradedRule(hi, cfg, breakpoints, order=cfg.check_order)
    vals = np.asarray(f(rule.nodes), dtype=float)
    total, tail, r = rule.integrate(vals)
    ps = rule.panel_sums(vals)
    growing = r >= 1.0 - 1e-12 and ps[0] != 0.0
    if growing or not np.isfinite(total) or abs(total) > DIVERGENCE_CEILING:
        if raise_on_divergence:
            raise NonIntegrableError(
                f"integral diverges near s=0 (panel ratio {float(r):.6g})")
        return QuadResult(np.inf, np.inf, np.inf, True, cfg.as_dict())
    cvals = np.asarray(f(check.nodes), dtype=float)
    ctotal, ctail, _ = check.integrate(cvals)
    # alternative tail from panels 1 and 2
    r2 = ps[1] / ps[2] if ps[2] != 0.0 else 0.0
    alt_tail = ps[0] * r2 / (1.0 - r2) if 0.0 < r2 < 1.0 else 0.0
    err = abs(float(ctotal) - float(total)) + abs(alt_tail - float(tail))
    err += 64 * np.finfo(float).eps * float(np.abs(ps).sum())
    if raise_on_tol and err > tol:
        raise QuadratureError(f"error estimate {err:.3g} exceeds tol {tol:.3g}")
    return QuadResult(float(total), float(err), float(tail), False, cfg.as_dict())
