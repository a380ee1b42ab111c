"""Single steps and whole paths for the explicit modified Euler scheme and
the drift-implicit (backward) Euler reference.

The explicit scheme keeps only ``alpha_m1 / Y_{n+1}`` implicit, so each step
is the positive root of

    Y^2 - b Y - alpha_m1 h = 0,   b = Y_n + theta_n h + S_n,
    theta_n = -alpha0 + alpha1 Y_n + f_h(Y_n),
    S_n     = g_h(Y_n) dW_n + nu(Y_n) dN_n,

which is positive for every h > 0 and every noise value.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .corrections import Correction, CorrectionKind, f_h, g_h
from .errors import (
    BracketError,
    InvalidParameterError,
    NoConvergenceError,
    NumericOverflowError,
)
from .model import JumpCoefficient, ModelParams, g, nu
from .noise import NoisePath

__all__ = [
    "Scheme",
    "StepInputs",
    "Trajectory",
    "explicit_step",
    "explicit_step_b",
    "quadratic_residual",
    "bem_step",
    "bem_residual",
    "simulate_path",
    "correction_for",
]


class Scheme(str, enum.Enum):
    TEM = "tem"
    PEM = "pem"
    BEM = "bem"
    EXPLICIT = "explicit"  # explicit step with the identity correction
    EM = "em"  # plain Euler-Maruyama, demonstration only

    @classmethod
    def parse(cls, value: "str | Scheme") -> "Scheme":
        if isinstance(value, Scheme):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise InvalidParameterError(f"unknown scheme {value!r}; expected one of {names}") from None

    @property
    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class StepInputs:
    y_prev: float
    h: float
    dW: float
    dN: int = 0

    def __post_init__(self):
        if not (self.y_prev > 0 and math.isfinite(self.y_prev)):
            raise InvalidParameterError(f"y_prev must be positive, got {self.y_prev!r}")
        if not self.h > 0:
            raise InvalidParameterError(f"h must be positive, got {self.h!r}")
        if self.dN < 0 or int(self.dN) != self.dN:
            raise InvalidParameterError(f"dN must be a non-negative integer, got {self.dN!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    max_quadratic_residual: float
    scheme: Scheme

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise InvalidParameterError("times and values must have equal length")

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def to_csv(self, path: str | Path, *, params_hash: str = "", seed: int | None = None, path_index: int | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# scheme = {self.scheme.label}\n")
            fh.write(f"# params_hash = {params_hash}\n")
            fh.write(f"# seed = {'' if seed is None else seed}\n")
            if path_index is not None:
                fh.write(f"# path_index = {path_index}\n")
            fh.write(f"# max_residual = {self.max_quadratic_residual!r}\n")
            fh.write("t,y\n")
            for t, y in zip(self.times, self.values):
                fh.write(f"{float(t)!r},{float(y)!r}\n")

    @classmethod
    def read_csv(cls, path: str | Path) -> "Trajectory":
        meta = {}
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, val = line[1:].partition("=")
                    meta[key.strip()] = val.strip()
                elif line.startswith("t,"):
                    continue
                elif line.strip():
                    t, y = line.split(",")
                    rows.append((float(t), float(y)))
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], float(meta.get("max_residual", "nan")), Scheme[meta["scheme"]])


def _check_h(s: StepInputs, c: Correction) -> None:
    if c.h != s.h:
        raise InvalidParameterError(f"correction built for h={c.h!r} used with step h={s.h!r}")


def explicit_step_b(s: StepInputs, c: Correction, p: ModelParams, j: JumpCoefficient) -> float:
    """Linear coefficient ``b = Y_n + theta_n h + S_n`` of the step quadratic."""
    _check_h(s, c)
    return K.explicit_b(s.y_prev, s.h, s.dW, s.dN, p.alpha0, p.alpha1, f_h(s.y_prev, c), g_h(s.y_prev, c), nu(s.y_prev, j))


def explicit_step(s: StepInputs, c: Correction, p: ModelParams, j: JumpCoefficient) -> float:
    """One step of the explicit modified Euler scheme; always > 0."""
    b = explicit_step_b(s, c, p, j)
    y = K.positive_root(b, p.alpha_m1 * s.h)
    if not (math.isfinite(y) and y > 0):
        raise NumericOverflowError(f"explicit step produced {y!r} from Y_n={s.y_prev!r} (b={b!r})")
    return y


def quadratic_residual(y_next: float, s: StepInputs, c: Correction, p: ModelParams, j: JumpCoefficient) -> float:
    """Relative residual of ``y_next`` in the step quadratic."""
    return K.quadratic_residual(y_next, explicit_step_b(s, c, p, j), p.alpha_m1 * s.h)


def bem_residual(y: float, s: StepInputs, p: ModelParams, j: JumpCoefficient) -> float:
    """``G(y) = y - Y_n - F(y) h - g(Y_n) dW - nu(Y_n) dN``."""
    drift = p.alpha_m1 / y - p.alpha0 + p.alpha1 * y - p.alpha2 * y**p.r
    return y - s.y_prev - drift * s.h - g(s.y_prev, p) * s.dW - nu(s.y_prev, j) * s.dN


def _bem_constant(y, h, dW, dN, p: ModelParams, jump_value: float) -> float:
    return y + (-p.alpha0) * h + p.sigma * y**p.rho * dW + jump_value * dN


def bem_step(s: StepInputs, p: ModelParams, j: JumpCoefficient) -> float:
    """Drift-implicit Euler step: the root y > 0 of :func:`bem_residual`.

    Implicit in ``alpha_m1/y``, ``alpha1 y`` and ``-alpha2 y^r``; diffusion and
    jump use ``Y_n``. For ``h >= 1/alpha1`` the residual may be non-monotone
    and the root need not be unique; a warning is issued.
    """
    if s.h * p.alpha1 >= 1.0:
        warnings.warn(
            f"h={s.h:g} >= 1/alpha1: the implicit equation may have several positive roots",
            RuntimeWarning,
            stacklevel=2,
        )
    cst = _bem_constant(s.y_prev, s.h, s.dW, s.dN, p, nu(s.y_prev, j))
    tol = 1e-12 * (1.0 + abs(s.y_prev))
    y, _, status, _ = K.bem_solve(cst, s.y_prev, s.h, p.alpha_m1, p.alpha1, p.alpha2, p.r, tol)
    _raise_bem_status(status, s.y_prev)
    return y


def _raise_bem_status(status: int, y_prev: float, step: int | None = None) -> None:
    where = "" if step is None else f" at step {step}"
    if status == K.NO_CONVERGENCE:
        raise NoConvergenceError(f"implicit solver did not converge in {K.BEM_MAXIT} iterations{where} (Y_n={y_prev!r})")
    if status == K.BRACKET_FAILURE:
        raise BracketError(f"no sign change of G in ({K.BEM_LO:g}, {K.BEM_HI:g}){where} (Y_n={y_prev!r})")
    if status == K.NON_FINITE:
        raise NumericOverflowError(f"implicit residual became non-finite{where} (Y_n={y_prev!r})", step)


def correction_for(scheme: Scheme, h: float, p: ModelParams, kappa: float | None = None) -> Correction | None:
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.TEM:
        return Correction.tamed(h, p)
    if scheme is Scheme.PEM:
        return Correction.projected(h, p, kappa)
    if scheme is Scheme.EXPLICIT:
        return Correction.identity(h, p)
    return None


_EXPECTED_KIND = {
    Scheme.TEM: CorrectionKind.TAMED,
    Scheme.PEM: CorrectionKind.PROJECTED,
    Scheme.EXPLICIT: CorrectionKind.IDENTITY,
}


def simulate_path(
    scheme: Scheme | str,
    noise: NoisePath,
    p: ModelParams,
    j: JumpCoefficient,
    correction: Correction | None = None,
    *,
    kappa: float | None = None,
    demonstration: bool = False,
) -> Trajectory:
    """Run ``scheme`` on the increments of ``noise`` starting from ``p.x0``.

    ``correction`` defaults to the one matching the scheme at ``noise.h``.
    The plain EM scheme needs ``demonstration=True``; it may leave the
    positive half-line, in which case the returned values stop at the first
    non-positive iterate and the rest are NaN.
    """
    scheme = Scheme.parse(scheme)
    p.validate()
    h = noise.h
    if scheme is Scheme.EM and not demonstration:
        raise InvalidParameterError("plain Euler-Maruyama is only available with demonstration=True")
    if scheme in _EXPECTED_KIND:
        if correction is None:
            correction = correction_for(scheme, h, p, kappa)
        elif correction.kind is not _EXPECTED_KIND[scheme]:
            raise InvalidParameterError(f"{scheme.label} needs a {_EXPECTED_KIND[scheme].value} correction")
        if correction.h != h:
            raise InvalidParameterError(f"correction h={correction.h!r} does not match noise h={h!r}")
    times = np.arange(noise.n_fine + 1) * h

    if not j.is_linear:
        values, resid = _simulate_python(scheme, noise, p, j, correction)
        return Trajectory(times, values, resid, scheme)

    args = (p.x0, h, noise.dW, noise.dN, p.alpha_m1, p.alpha0, p.alpha1, p.alpha2, p.sigma, p.r, p.rho, j.scale)
    if scheme is Scheme.BEM:
        if h * p.alpha1 >= 1.0:
            warnings.warn(f"h={h:g} >= 1/alpha1: implicit roots may not be unique", RuntimeWarning, stacklevel=2)
        values, resid, status, step = K.bem_path(*args)
        if status != K.OK:
            _raise_bem_status(status, float(values[step]), step)
    else:
        if scheme is Scheme.EM:
            kind, thr = K.PLAIN_EM, math.inf
        else:
            kind, thr = correction.kind_code, correction.threshold
        values, resid, status, step = K.explicit_path(*args, kind, thr)
        if status == K.NON_POSITIVE:
            values[step + 2:] = np.nan
        elif status != K.OK:
            if scheme is Scheme.EM:
                values[step + 1:] = np.nan
            else:
                raise NumericOverflowError(
                    f"{scheme.label} produced a non-finite value at step {step} (Y_n={values[step]!r})", step
                )
    return Trajectory(times, values, resid, scheme)


def _simulate_python(scheme, noise, p, j, correction):
    n = noise.n_fine
    h = noise.h
    values = np.empty(n + 1)
    values[0] = p.x0
    resid = 0.0
    for i in range(n):
        y = values[i]
        if scheme is Scheme.EM:
            y_new = y + (p.alpha_m1 / y - p.alpha0 + p.alpha1 * y - p.alpha2 * y**p.r) * h \
                + g(y, p) * noise.dW[i] + nu(y, j) * noise.dN[i]
            values[i + 1] = y_new
            if not (math.isfinite(y_new) and y_new > 0):
                values[i + 2:] = np.nan
                break
            continue
        s = StepInputs(float(y), h, float(noise.dW[i]), int(noise.dN[i]))
        try:
            if scheme is Scheme.BEM:
                y_new = bem_step(s, p, j)
                resid = max(resid, abs(bem_residual(y_new, s, p, j)))
            else:
                y_new = explicit_step(s, correction, p, j)
                resid = max(resid, quadratic_residual(y_new, s, correction, p, j))
        except NumericOverflowError as exc:
            raise NumericOverflowError(f"step {i}: {exc}", i) from exc
        except (NoConvergenceError, BracketError) as exc:
            raise type(exc)(f"step {i}: {exc}") from exc
        values[i + 1] = y_new
    return values, resid
