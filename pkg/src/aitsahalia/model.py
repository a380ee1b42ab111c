"""Aït-Sahalia short-rate model with Poisson jumps.

    dX = (a_{-1}/X - a_0 + a_1 X - a_2 X^r) dt + sigma X^rho dW + nu(X-) dN

The drift is split into the part handled implicitly/linearly by the schemes
(a_{-1}/x - a_0 + a_1 x) and the superlinear part ``f(x) = -a_2 x^r``; the
diffusion is ``g(x) = sigma x^rho``.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .errors import DomainError, InvalidParameterError

__all__ = [
    "ModelParams",
    "JumpCoefficient",
    "RegimeTag",
    "Regime",
    "drift_full",
    "f",
    "g",
    "nu",
    "classify_regime",
    "validate_jump",
    "EXAMPLE1",
    "EXAMPLE2",
    "PRESETS",
]

_EQ_RTOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Model constants.

    Construction does not raise; call :meth:`validate` (simulation entry
    points do) or :func:`classify_regime` to inspect the invariants.
    """

    alpha_m1: float
    alpha0: float
    alpha1: float
    alpha2: float
    sigma: float
    r: float
    rho: float
    lam: float = 1.0
    x0: float = 1.0

    def violations(self) -> list[str]:
        out = []
        for name in ("alpha_m1", "alpha0", "alpha1", "alpha2", "sigma", "lam", "x0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                out.append(f"{name} must be a finite positive number, got {v!r}")
        if not self.r > 1:
            out.append(f"r must exceed 1, got {self.r!r}")
        if not self.rho > 1:
            out.append(f"rho must exceed 1, got {self.rho!r}")
        if self.r + 1 < 2 * self.rho and not _close(self.r + 1, 2 * self.rho):
            out.append(f"r + 1 >= 2 rho fails: r + 1 = {self.r + 1!r}, 2 rho = {2 * self.rho!r}")
        return out

    def validate(self) -> "ModelParams":
        bad = self.violations()
        if bad:
            raise InvalidParameterError("; ".join(bad))
        return self

    def replace(self, **changes: float) -> "ModelParams":
        values = {fl.name: getattr(self, fl.name) for fl in fields(self)}
        values.update(changes)
        return ModelParams(**values)

    def as_dict(self) -> dict[str, float]:
        return {fl.name: getattr(self, fl.name) for fl in fields(self)}

    def digest(self) -> str:
        """Short stable hash of the parameter values (hex)."""
        text = ";".join(f"{k}={float(v).hex()}" for k, v in self.as_dict().items())
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=_EQ_RTOL, abs_tol=0.0)


def _power(x: float, p: float) -> float:
    if x < 0 and not float(p).is_integer():
        raise DomainError(f"negative base {x!r} with non-integer exponent {p!r}")
    if x == 0:
        return 0.0
    try:
        return x**p if x > 0 else x ** int(p)
    except OverflowError:
        # float ** raises instead of returning inf
        return math.inf if x > 0 or int(p) % 2 == 0 else -math.inf


def f(x: float, p: ModelParams) -> float:
    """Superlinear drift part ``-alpha2 * x**r``."""
    return -p.alpha2 * _power(x, p.r)


def g(x: float, p: ModelParams) -> float:
    """Diffusion coefficient ``sigma * x**rho``."""
    return p.sigma * _power(x, p.rho)


def drift_full(x: float, p: ModelParams) -> float:
    """Full drift ``alpha_m1/x - alpha0 + alpha1*x - alpha2*x**r`` for x > 0."""
    if not x > 0:
        raise DomainError(f"drift is defined for x > 0 only, got {x!r}")
    return p.alpha_m1 / x - p.alpha0 + p.alpha1 * x - p.alpha2 * x**p.r


class RegimeTag(str, enum.Enum):
    NON_CRITICAL = "NonCritical"
    CRITICAL_SUPPORTED = "CriticalSupported"
    CRITICAL_UNSUPPORTED = "CriticalUnsupported"
    INVALID = "Invalid"


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    details: str = ""

    @property
    def is_warning(self) -> bool:
        return self.tag is RegimeTag.CRITICAL_UNSUPPORTED


def classify_regime(p: ModelParams) -> Regime:
    """Place the parameters relative to the order-1/2 convergence conditions.

    ``r + 1 > 2 rho`` is non-critical. On the critical line ``r + 1 = 2 rho``
    the rate result needs ``alpha2 / sigma**2 >= 2 r - 1/2``; parameters
    below that bound are still simulated but flagged.
    """
    bad = p.violations()
    if bad:
        return Regime(RegimeTag.INVALID, "; ".join(bad))
    lhs, rhs = p.r + 1, 2 * p.rho
    if not _close(lhs, rhs):
        return Regime(RegimeTag.NON_CRITICAL, f"r + 1 = {lhs:g} > 2 rho = {rhs:g}")
    ratio = p.alpha2 / p.sigma**2
    bound = 2 * p.r - 0.5
    if ratio >= bound:
        return Regime(
            RegimeTag.CRITICAL_SUPPORTED,
            f"critical r + 1 = 2 rho; alpha2/sigma^2 = {ratio:g} >= 2r - 1/2 = {bound:g}",
        )
    return Regime(
        RegimeTag.CRITICAL_UNSUPPORTED,
        f"critical r + 1 = 2 rho; alpha2/sigma^2 = {ratio:g} < 2r - 1/2 = {bound:g}: "
        "order 1/2 is not covered by the convergence theorem",
    )


@dataclass(frozen=True)
class JumpCoefficient:
    """Jump amplitude ``nu``.

    ``scale`` is set for the linear family ``nu(x) = scale * x``; otherwise
    ``func`` holds an arbitrary callable. ``lipschitz_M`` and ``lower_m`` are
    the constants of ``|nu(x) - nu(y)| <= M |x - y|`` and
    ``x + nu(x) > m min(1, x)``.
    """

    lipschitz_M: float
    lower_m: float
    scale: float | None = None
    func: Callable[[float], float] | None = field(default=None, compare=False)

    @classmethod
    def linear(cls, c: float, lower_m: float | None = None) -> "JumpCoefficient":
        if not c > -1:
            raise InvalidParameterError(f"linear jump scale must exceed -1 so that x + nu(x) > 0, got {c!r}")
        # any m in (0, 1 + c) works for nu(x) = c x
        m = 0.5 * (1.0 + c) if lower_m is None else lower_m
        if not 0 < m < 1 + c:
            raise InvalidParameterError(f"lower_m must lie in (0, 1 + c) = (0, {1 + c!r}), got {m!r}")
        return cls(lipschitz_M=abs(c), lower_m=m, scale=float(c))

    @classmethod
    def custom(cls, func: Callable[[float], float], lipschitz_M: float, lower_m: float) -> "JumpCoefficient":
        if not (lipschitz_M >= 0 and lower_m > 0):
            raise InvalidParameterError("custom jump needs lipschitz_M >= 0 and lower_m > 0")
        return cls(lipschitz_M=lipschitz_M, lower_m=lower_m, func=func)

    @property
    def is_linear(self) -> bool:
        return self.scale is not None

    def describe(self) -> str:
        return f"linear(c={self.scale!r})" if self.is_linear else f"custom({getattr(self.func, '__name__', 'func')})"


def nu(x: float, j: JumpCoefficient) -> float:
    if j.scale is not None:
        return j.scale * x
    return float(j.func(x))


def validate_jump(j: JumpCoefficient, lo: float = 1e-3, hi: float = 1e3, n: int = 10_000) -> list[str]:
    """Sampled check of the Lipschitz and lower-bound conditions on a log grid.

    Returns the list of violations (empty when both conditions hold at every
    sample).
    """
    xs = np.geomspace(lo, hi, n)
    vals = np.array([nu(float(x), j) for x in xs])
    problems = []

    dx = np.diff(xs)
    dv = np.abs(np.diff(vals))
    lip = dv - j.lipschitz_M * dx
    # rounding of nu itself is tolerated at the ulp level
    slack = 4 * np.finfo(float).eps * (np.abs(vals[1:]) + np.abs(vals[:-1]))
    k = int(np.argmax(lip - slack))
    if lip[k] > slack[k]:
        problems.append(
            f"Lipschitz bound M={j.lipschitz_M!r} violated between x={xs[k]!r} and x={xs[k + 1]!r}"
        )

    lower = xs + vals - j.lower_m * np.minimum(1.0, xs)
    k = int(np.argmin(lower))
    if not lower[k] > 0:
        problems.append(f"x + nu(x) > m min(1, x) fails at x={xs[k]!r} with m={j.lower_m!r}")
    return problems


EXAMPLE1 = ModelParams(alpha_m1=1.5, alpha0=2.0, alpha1=1.0, alpha2=3.0, sigma=1.0, r=5.0, rho=2.0, lam=1.0, x0=1.0)
EXAMPLE2 = EXAMPLE1.replace(r=3.0)

PRESETS: dict[str, ModelParams] = {"example1": EXAMPLE1, "example2": EXAMPLE2}
