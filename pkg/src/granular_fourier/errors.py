"""Exception and warning types shared across the package."""

from __future__ import annotations

from .quadrature import NonIntegrableError, QuadratureError


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(ValueError):
    """The inputs do not satisfy a documented precondition."""


class StabilityRegimeError(ArithmeticError):
    """The rate constant lambda_e(p) is not positive.

    The computed value is available as ``lam``.
    """

    def __init__(self, lam: float, message: str | None = None):
        self.lam = lam
        super().__init__(message or f"lambda_e(p) = {lam:.6g} is not positive")


class StabilityRegimeWarning(RuntimeWarning):
    """lambda_e(p) <= 0, so the bound gamma_n >= (n-1) lambda is vacuous."""


class EvolveError(RuntimeError):
    """Time stepping failed: repeated rejections or an invariant breach."""


class IntegrationFailure(RuntimeError):
    """A coefficient trajectory broke its a-priori bound."""


__all__ = [
    "DomainError", "PreconditionError", "StabilityRegimeError",
    "StabilityRegimeWarning", "EvolveError", "IntegrationFailure",
    "NonIntegrableError", "QuadratureError",
]
