"""Radial grid functions ``u(x)``, ``x = |xi|^2 / 2``, and their interpolation.

Grid values are stored as ``w = u - 1`` so that the small-x behaviour
``w ~ C x^q`` keeps full relative precision.  Interpolation is a cubic
Hermite interpolant in ``z = log x`` with fourth-order slopes, limited
so that on each cell it stays within the range of its two end values.
Below the first positive node the one-term closure ``w = C x^q`` is
used, with ``q`` fitted on the three smallest positive nodes (or given)
and ``C`` anchored at the first of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def make_grid(x_min: float = 1e-8, x_max: float = 1e3, n_nodes: int = 512) -> np.ndarray:
    """Nodes ``0, x_min, ..., x_max`` with ``n_nodes - 1`` log-spaced positive nodes."""
    if not 0.0 < x_min < x_max:
        raise DomainError("need 0 < x_min < x_max")
    if n_nodes < 64:
        raise DomainError("need at least 64 nodes")
    return np.concatenate([[0.0], np.geomspace(x_min, x_max, n_nodes - 1)])


def pchip_slopes(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Shape-preserving derivatives ``dw/dz`` at the nodes ``z``.

    Fourth-order finite differences (uniform spacing) or Fritsch-Butland
    harmonic means (otherwise), then limited so that every cell's cubic
    stays monotone between its end values (Hyman filter).
    """
    h = np.diff(z)
    d = np.diff(w) / h
    n = len(w)
    if n >= 5 and np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        m = _slopes_uniform(w, h[0])
    else:
        m = _slopes_butland(h, d)
    return _hyman(m, d)


def _slopes_uniform(w, dz):
    m = np.empty_like(w)
    m[2:-2] = (w[:-4] - 8.0 * w[1:-3] + 8.0 * w[3:-1] - w[4:]) / (12.0 * dz)
    m[0] = (-25.0 * w[0] + 48.0 * w[1] - 36.0 * w[2] + 16.0 * w[3] - 3.0 * w[4]) / (12.0 * dz)
    m[1] = (-3.0 * w[0] - 10.0 * w[1] + 18.0 * w[2] - 6.0 * w[3] + w[4]) / (12.0 * dz)
    m[-1] = (25.0 * w[-1] - 48.0 * w[-2] + 36.0 * w[-3] - 16.0 * w[-4] + 3.0 * w[-5]) / (12.0 * dz)
    m[-2] = (3.0 * w[-1] + 10.0 * w[-2] - 18.0 * w[-3] + 6.0 * w[-4] - w[-5]) / (12.0 * dz)
    return m


def _slopes_butland(h, d):
    m = np.zeros(len(d) + 1)
    same = d[:-1] * d[1:] > 0
    w1 = 2.0 * h[1:] + h[:-1]
    w2 = h[1:] + 2.0 * h[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = (w1 + w2) / (w1 / d[:-1] + w2 / d[1:])
    m[1:-1] = np.where(same, inner, 0.0)
    m[0], m[-1] = d[0], d[-1]
    return m


def _hyman(m, d):
    """Clip slopes into the monotonicity region of each adjacent cell."""
    left = np.concatenate([[d[0]], d])
    right = np.concatenate([d, [d[-1]]])
    bound = 3.0 * np.minimum(np.abs(left), np.abs(right))
    ok = (left * right > 0) & (m * right > 0)
    return np.where(ok, np.sign(m) * np.minimum(np.abs(m), bound), 0.0)


def closure_fit(x: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """``(C, q)`` of ``w ~ C x^q`` from the three smallest positive nodes.

    Returns ``(0, 1)`` when any of those values vanishes, they change sign,
    the fitted exponent is not positive or ``C`` overflows.
    """
    xs, ws = x[1:4], w[1:4]
    if np.any(ws == 0.0) or not (np.all(ws > 0) or np.all(ws < 0)):
        return 0.0, 1.0
    lx, lw = np.log(xs), np.log(np.abs(ws))
    q = float(np.polyfit(lx, lw, 1)[0])
    with np.errstate(over="ignore"):
        C = float(np.sign(ws[0]) * np.exp(lw[0] - q * lx[0]))
    if not (q > 0.0 and math.isfinite(C)):
        return 0.0, 1.0
    return C, q


def hermite_weights(tau: np.ndarray):
    """Hermite basis written in ``tau = 1 - t``, distance from the right node.

    ``w(y) - w_R = h00 (w_L - w_R) + dz (h10 m_L + h11 m_R)``.
    """
    t = 1.0 - tau
    h00 = tau * tau * (3.0 - 2.0 * tau)
    h10 = t * tau * tau
    h11 = -t * t * tau
    return h00, h10, h11


class RadialInterpolant:
    """Evaluate a grid function ``w = u - 1`` at arbitrary ``y in [0, x_max]``."""

    def __init__(self, x: np.ndarray, w: np.ndarray, closure_p: float | None = None):
        self.x = np.asarray(x, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.z = np.log(self.x[1:])
        self.m = pchip_slopes(self.z, self.w[1:])
        if closure_p is None:
            self.C, self.q = closure_fit(self.x, self.w)
        else:
            self.C, self.q = float(self.w[1] / self.x[1] ** closure_p), float(closure_p)

    def w_at(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if np.any(y < 0.0) or np.any(y > self.x[-1] * (1.0 + 1e-12)):
            raise DomainError("interpolation argument outside [0, x_max]")
        out = np.empty_like(y)
        low = y < self.x[1]
        out[low] = self.C * y[low] ** self.q
        yy = np.minimum(y[~low], self.x[-1])
        zy = np.log(yy)
        j = np.clip(np.searchsorted(self.z, zy, side="right") - 1, 0, len(self.z) - 2)
        dz = self.z[j + 1] - self.z[j]
        tau = (self.z[j + 1] - zy) / dz
        h00, h10, h11 = hermite_weights(tau)
        wl, wr = self.w[1:][j], self.w[1:][j + 1]
        out[~low] = wr + h00 * (wl - wr) + dz * (h10 * self.m[j] + h11 * self.m[j + 1])
        return out

    def __call__(self, y) -> np.ndarray:
        return 1.0 + self.w_at(y)


@dataclass
class RadialGridState:
    """Samples of ``u(t, x)`` on ``x_nodes`` with ``x_nodes[0] = 0``.

    ``w`` holds ``u - 1``; ``values`` returns ``u``.
    """

    x_nodes: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x_nodes = np.asarray(self.x_nodes, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.x_nodes[0] != 0.0 or np.any(np.diff(self.x_nodes) <= 0):
            raise DomainError("x_nodes must start at 0 and increase strictly")
        if self.w.shape != self.x_nodes.shape:
            raise DomainError("values and nodes differ in shape")
        if self.w[0] != 0.0:
            raise DomainError("u(t, 0) must equal 1")

    @property
    def values(self) -> np.ndarray:
        return 1.0 + self.w

    @classmethod
    def from_charfn(cls, phi, x_nodes, t: float = 0.0) -> "RadialGridState":
        x = np.asarray(x_nodes, dtype=float)
        return cls(x, np.asarray(phi.om1_x(x), dtype=float), t)

    def interpolant(self) -> RadialInterpolant:
        return RadialInterpolant(self.x_nodes, self.w)

    def copy(self) -> "RadialGridState":
        return RadialGridState(self.x_nodes.copy(), self.w.copy(), self.t)
