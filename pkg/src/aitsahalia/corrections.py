"""Step-size dependent modifications ``(f_h, g_h)`` of the superlinear terms.

Two built-in families are provided next to the identity:

* taming      ``f_h = f / (1 + sqrt(h) |x|^r)``, same denominator for ``g_h``
* projection  ``f_h = f(P_h(x))`` with ``P_h(x) = min(1, h^-kappa / |x|) x``

:func:`check_assumption` verifies numerically, on a sample grid, the four
inequality families a correction must satisfy for the order-1/2 result.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParameterError
from .model import ModelParams, f, g

__all__ = [
    "CorrectionKind",
    "Correction",
    "f_h",
    "g_h",
    "project",
    "kappa_range",
    "SampleGrid",
    "AssumptionReport",
    "check_assumption",
    "closed_form_constants",
]


class CorrectionKind(str, enum.Enum):
    IDENTITY = "identity"
    TAMED = "tamed"
    PROJECTED = "projected"


def kappa_range(r: float) -> tuple[float, float]:
    return 1.0 / (2 * r), 1.0 / (2 * r - 2)


@dataclass(frozen=True)
class Correction:
    kind: CorrectionKind
    h: float
    params: ModelParams
    kappa: float | None = None

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidParameterError(f"step size must be positive, got {self.h!r}")
        kind = CorrectionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is CorrectionKind.PROJECTED:
            lo, hi = kappa_range(self.params.r)
            k = hi if self.kappa is None else self.kappa
            if not lo <= k <= hi:
                raise InvalidParameterError(
                    f"kappa must lie in [1/(2r), 1/(2r-2)] = [{lo!r}, {hi!r}], got {k!r}"
                )
            object.__setattr__(self, "kappa", float(k))
        elif self.kappa is not None:
            raise InvalidParameterError(f"kappa only applies to projected corrections, not {kind.value}")

    @classmethod
    def identity(cls, h: float, params: ModelParams) -> "Correction":
        return cls(CorrectionKind.IDENTITY, h, params)

    @classmethod
    def tamed(cls, h: float, params: ModelParams) -> "Correction":
        return cls(CorrectionKind.TAMED, h, params)

    @classmethod
    def projected(cls, h: float, params: ModelParams, kappa: float | None = None) -> "Correction":
        return cls(CorrectionKind.PROJECTED, h, params, kappa)

    def with_h(self, h: float) -> "Correction":
        return Correction(self.kind, h, self.params, self.kappa)

    @property
    def threshold(self) -> float:
        """Projection radius ``h**-kappa`` (inf for the other kinds)."""
        if self.kind is CorrectionKind.PROJECTED:
            return self.h ** (-self.kappa)
        return math.inf

    @property
    def kind_code(self) -> int:
        return {CorrectionKind.IDENTITY: 0, CorrectionKind.TAMED: 1, CorrectionKind.PROJECTED: 2}[self.kind]


def project(x: float, c: Correction) -> float:
    """``P_h(x) = min(1, h^-kappa / |x|) x``; sign preserving, ``P_h(0) = 0``."""
    if c.kind is not CorrectionKind.PROJECTED:
        raise InvalidParameterError("project() needs a projected correction")
    thr = c.threshold
    if abs(x) <= thr:
        return x
    # min(1, thr/|x|) x == thr * sign(x); written this way |result| <= thr holds exactly
    return math.copysign(thr, x)


def _abs_pow(x: float, r: float) -> float:
    try:
        return abs(x) ** r
    except OverflowError:
        return math.inf


def f_h(x: float, c: Correction) -> float:
    p = c.params
    if c.kind is CorrectionKind.IDENTITY:
        return f(x, p)
    if c.kind is CorrectionKind.PROJECTED:
        return f(project(x, c), p)
    xr = _abs_pow(x, p.r)
    if math.isinf(xr):
        return -p.alpha2 / math.sqrt(c.h)
    return f(x, p) / (1.0 + math.sqrt(c.h) * xr)


def g_h(x: float, c: Correction) -> float:
    p = c.params
    if c.kind is CorrectionKind.IDENTITY:
        return g(x, p)
    if c.kind is CorrectionKind.PROJECTED:
        return g(project(x, c), p)
    xr = _abs_pow(x, p.r)
    if math.isinf(xr):
        return p.sigma * abs(x) ** (p.rho - p.r) / math.sqrt(c.h)
    return g(x, p) / (1.0 + math.sqrt(c.h) * xr)


def closed_form_constants(c: Correction, T: float = 1.0) -> dict[str, float]:
    """Closed-form L1 and L2 worked out for the built-in corrections.

    Taming: ``L1 = max(alpha2, sigma)``, ``L2 = alpha2 r``.
    Projection: ``L1 = max(2 alpha2 r, 2 sigma rho)``,
    ``L2 = alpha2 r T^((1 - kappa (2r - 2)) / 2)`` (valid for h <= T).
    """
    p = c.params
    if c.kind is CorrectionKind.TAMED:
        return {"L1": max(p.alpha2, p.sigma), "L2": p.alpha2 * p.r}
    if c.kind is CorrectionKind.PROJECTED:
        return {
            "L1": max(2 * p.alpha2 * p.r, 2 * p.sigma * p.rho),
            "L2": p.alpha2 * p.r * T ** ((1 - c.kappa * (2 * p.r - 2)) / 2),
        }
    return {}


@dataclass(frozen=True)
class SampleGrid:
    """Sample points for the assumption checker.

    ``n_points`` log-spaced points in ``[lo, hi]``; pairs are all neighbouring
    grid points plus ``n_pairs`` log-uniform random pairs drawn with ``seed``.
    """

    lo: float = 1e-3
    hi: float = 1e3
    n_points: int = 200
    n_pairs: int = 1000
    seed: int = 0

    def points(self) -> np.ndarray:
        return np.geomspace(self.lo, self.hi, self.n_points)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.points()
        rng = np.random.default_rng(self.seed)
        a = np.exp(rng.uniform(math.log(self.lo), math.log(self.hi), size=(2, self.n_pairs)))
        x = np.concatenate([xs[:-1], a[0]])
        y = np.concatenate([xs[1:], a[1]])
        keep = x != y
        return x[keep], y[keep]

    def describe(self) -> str:
        return f"log[{self.lo:g},{self.hi:g}]x{self.n_points}+{self.n_pairs}pairs(seed={self.seed})"


@dataclass(frozen=True)
class AssumptionReport:
    kind: str
    h: float
    kappa: float | None
    max_ratio_f: float
    max_ratio_g: float
    estimated_L1: float
    estimated_L2: float
    estimated_L3: float
    v_used: float
    grid: str
    passed: bool
    holds_with_estimates: bool = True
    closed_form_ok: bool | None = None
    closed_form_L1: float | None = None
    closed_form_L2: float | None = None
    worst: str = ""

    CSV_FIELDS = (
        "kind", "h", "kappa", "estimated_L1", "estimated_L2", "estimated_L3", "v_used",
        "max_ratio_f", "max_ratio_g", "closed_form_L1", "closed_form_L2", "holds_with_estimates",
        "closed_form_ok", "passed", "worst",
    )

    def csv_row(self) -> dict[str, object]:
        d = asdict(self)
        return {k: ("" if d[k] is None else d[k]) for k in self.CSV_FIELDS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()


_MARGIN = 1.01
# floating-point slack for inequalities that hold with equality
_RTOL = 1e-12


def check_assumption(
    c: Correction,
    grid: SampleGrid | None = None,
    v: float = 3.0,
    T: float = 1.0,
) -> AssumptionReport:
    """Numerically check the four conditions on ``(f_h, g_h)`` at sample points.

    * ``|f_h| <= |f|`` and ``|g_h| <= |g|`` at every point;
    * ``|f - f_h| + |g - g_h| <= L1 sqrt(h) (1 + x^(2r))``;
    * ``|f_h(x) - f_h(y)| <= L2 (1 + h^-1/2) |x - y|`` on pairs;
    * ``(x - y)(f_h(x) - f_h(y)) + (v-1)/2 |g_h(x) - g_h(y)|^2 <= L3 |x - y|^2``.

    L1, L2 and L3 are estimated as the largest observed quotient times 1.01
    (``holds_with_estimates`` then reduces to the first condition plus finite
    constants). For the built-in corrections the closed-form L1 and L2 are
    also checked as upper bounds (``closed_form_ok``); ``passed`` requires
    both. Never raises: ``worst`` names the first violation and where.
    """
    grid = grid or SampleGrid()
    if not v > 2:
        raise InvalidParameterError(f"v must exceed 2, got {v!r}")
    p, h = c.params, c.h
    sqh = math.sqrt(h)
    failures: list[str] = []
    closed_failures: list[str] = []

    xs = grid.points()
    fx = np.array([f(x, p) for x in xs])
    gx = np.array([g(x, p) for x in xs])
    fhx = np.array([f_h(x, c) for x in xs])
    ghx = np.array([g_h(x, c) for x in xs])

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_f = np.where(fx != 0, np.abs(fhx) / np.abs(fx), 0.0)
        ratio_g = np.where(gx != 0, np.abs(ghx) / np.abs(gx), 0.0)
    max_rf, max_rg = float(ratio_f.max()), float(ratio_g.max())
    for name, ratio in (("|f_h|<=|f|", ratio_f), ("|g_h|<=|g|", ratio_g)):
        k = int(np.argmax(ratio))
        if ratio[k] > 1.0:
            failures.append(f"{name} at x={float(xs[k])!r} (ratio {float(ratio[k])!r})")

    known = closed_form_constants(c, T)

    gap = np.abs(fx - fhx) + np.abs(gx - ghx)
    q1 = gap / (sqh * (1.0 + xs ** (2 * p.r)))
    L1_raw = float(q1.max())
    L1_est = max(L1_raw * _MARGIN, np.finfo(float).tiny)
    if not math.isfinite(L1_est):
        failures.append("consistency quotient is not finite")
    if "L1" in known and L1_raw > known["L1"] * (1 + _RTOL):
        k = int(np.argmax(q1))
        closed_failures.append(
            f"closed-form L1={known['L1']!r} exceeded at x={float(xs[k])!r} (quotient {float(q1[k])!r})"
        )

    x, y = grid.pairs()
    fhx_p = np.array([f_h(t, c) for t in x])
    fhy_p = np.array([f_h(t, c) for t in y])
    ghx_p = np.array([g_h(t, c) for t in x])
    ghy_p = np.array([g_h(t, c) for t in y])
    dxy = np.abs(x - y)

    q2 = np.abs(fhx_p - fhy_p) / ((1.0 + 1.0 / sqh) * dxy)
    L2_raw = float(q2.max())
    L2_est = max(L2_raw * _MARGIN, np.finfo(float).tiny)
    if not math.isfinite(L2_est):
        failures.append("Lipschitz quotient of f_h is not finite")
    if "L2" in known and L2_raw > known["L2"] * (1 + _RTOL):
        k = int(np.argmax(q2))
        closed_failures.append(
            f"closed-form L2={known['L2']!r} exceeded at x={float(x[k])!r}, y={float(y[k])!r} "
            f"(quotient {float(q2[k])!r})"
        )

    mono = (x - y) * (fhx_p - fhy_p) + 0.5 * (v - 1) * (ghx_p - ghy_p) ** 2
    q3_max = float((mono / dxy**2).max())
    L3_est = max(q3_max + 0.01 * abs(q3_max), np.finfo(float).tiny)
    if not math.isfinite(L3_est):
        failures.append("one-sided Lipschitz quotient is not finite")

    closed_ok = None if not known else not closed_failures
    return AssumptionReport(
        kind=c.kind.value,
        h=h,
        kappa=c.kappa,
        max_ratio_f=max_rf,
        max_ratio_g=max_rg,
        estimated_L1=L1_est,
        estimated_L2=L2_est,
        estimated_L3=L3_est,
        v_used=v,
        grid=grid.describe(),
        passed=not failures and closed_ok is not False,
        holds_with_estimates=not failures,
        closed_form_ok=closed_ok,
        closed_form_L1=known.get("L1"),
        closed_form_L2=known.get("L2"),
        worst=(failures + closed_failures)[0] if failures or closed_failures else "",
    )
