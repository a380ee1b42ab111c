"""Strong-error harness: mean-square errors against a fine reference on
coupled noise, log-log rate fits, positivity stress runs and timings.

The error for step ``h`` is

    e_h = ( max_n  mean_paths |X(t_n) - Y_n|^2 )^(1/2)

over the coarse grid points ``t_n = n h``: paths are averaged first, the
maximum over grid points is taken second.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import atomic_write_text, csv_text
from .corrections import kappa_range
from .errors import (
    AitSahaliaError,
    DegenerateFitError,
    DivisibilityError,
    InvalidParameterError,
    NumericOverflowError,
    SimulationError,
)
from .model import JumpCoefficient, ModelParams
from .noise import NoisePath, coarsen, generate, head
from .schemes import Scheme, simulate_path

__all__ = [
    "DEFAULT_H_LIST",
    "ExperimentConfig",
    "ConvergenceReport",
    "BenchmarkResult",
    "run_convergence",
    "mean_square_error",
    "fit_rate",
    "positivity_stress",
    "benchmark",
]

DEFAULT_H_LIST = tuple(2.0**-i for i in range(5, 11))
CHUNK = 64  # paths per reduction block; fixed so results do not depend on worker count
_RATIO_TOL = 1e-9


def _multiple(h: float, base: float, what: str) -> int:
    ratio = h / base
    k = round(ratio)
    if k < 1 or abs(ratio - k) > _RATIO_TOL * max(k, 1):
        raise DivisibilityError(f"{what} = {h!r} is not an integer multiple of h_exact = {base!r}")
    return int(k)


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    jump: JumpCoefficient
    T: float = 1.0
    h_list: tuple[float, ...] = DEFAULT_H_LIST
    h_exact: float = 2.0**-14
    n_paths: int = 10_000
    reference_scheme: Scheme = Scheme.BEM
    schemes_under_test: tuple[Scheme, ...] = (Scheme.TEM, Scheme.PEM, Scheme.BEM)
    seed: int = 0
    kappa: float | None = None
    n_boot: int = 200

    def __post_init__(self):
        object.__setattr__(self, "h_list", tuple(float(h) for h in self.h_list))
        object.__setattr__(self, "reference_scheme", Scheme.parse(self.reference_scheme))
        object.__setattr__(self, "schemes_under_test", tuple(Scheme.parse(s) for s in self.schemes_under_test))
        self.validate()

    def validate(self) -> None:
        self.params.validate()
        if not (self.T > 0 and self.h_exact > 0):
            raise InvalidParameterError("T and h_exact must be positive")
        if self.n_paths < 1:
            raise InvalidParameterError("n_paths must be at least 1")
        if self.seed < 0:
            raise InvalidParameterError("seed must be non-negative")
        if self.reference_scheme not in (Scheme.BEM, Scheme.TEM):
            raise InvalidParameterError("reference scheme must be bem or tem")
        if Scheme.EM in self.schemes_under_test:
            raise InvalidParameterError("plain EM is not a convergence scheme")
        if self.kappa is not None:
            lo, hi = kappa_range(self.params.r)
            if not lo <= self.kappa <= hi:
                raise InvalidParameterError(
                    f"kappa must lie in [1/(2r), 1/(2r-2)] = [{lo!r}, {hi!r}], got {self.kappa!r}"
                )
        _multiple(self.T, self.h_exact, "T")
        for h in self.h_list:
            self.factor(h)
            if h > self.T:
                raise InvalidParameterError(f"h = {h!r} exceeds the horizon T = {self.T!r}")

    @property
    def n_fine(self) -> int:
        return _multiple(self.T, self.h_exact, "T")

    def factor(self, h: float) -> int:
        return _multiple(h, self.h_exact, "h")

    def n_steps(self, h: float) -> int:
        """Coarse steps for ``h``; the grid stops at the last point <= T."""
        return self.n_fine // self.factor(h)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


@dataclass
class ConvergenceReport:
    """Per-scheme ``h -> e_h`` errors, bootstrap standard errors, fitted rates
    and wall-clock seconds spent in each scheme."""

    errors: dict[str, dict[float, float]]
    stderr: dict[str, dict[float, float]]
    rates: dict[str, tuple[float, float]]
    wall_times: dict[str, float]
    positivity_failures: int
    n_paths: int
    seed: int
    path_errors: dict[tuple[str, float], np.ndarray] | None = field(default=None, repr=False)

    def comparable(self) -> dict:
        """Everything except timings, for determinism checks."""
        return {
            "errors": self.errors,
            "stderr": self.stderr,
            "rates": self.rates,
            "positivity_failures": self.positivity_failures,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }

    def errors_csv(self) -> str:
        rows = [
            (s, h, e, self.stderr.get(s, {}).get(h, float("nan")))
            for s, byh in self.errors.items()
            for h, e in sorted(byh.items(), reverse=True)
        ]
        return csv_text(("scheme", "h", "e_h", "stderr"), rows)

    def rates_csv(self) -> str:
        return csv_text(("scheme", "q", "resid"), [(s, q, r) for s, (q, r) in self.rates.items()])

    def timings_csv(self) -> str:
        return csv_text(("scheme", "seconds"), list(self.wall_times.items()))

    def plot_csv(self) -> str:
        rows = [
            (math.log2(h), math.log2(e) if e > 0 else float("-inf"), s)
            for s, byh in self.errors.items()
            for h, e in sorted(byh.items(), reverse=True)
        ]
        return csv_text(("log2h", "log2e", "scheme"), rows)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        return {
            "errors": atomic_write_text(out / "errors.csv", self.errors_csv()),
            "rates": atomic_write_text(out / "rates.csv", self.rates_csv()),
            "timings": atomic_write_text(out / "timings.csv", self.timings_csv()),
            "plot": atomic_write_text(out / "plot_data.csv", self.plot_csv()),
        }


def fit_rate(errors: Mapping[float, float]) -> tuple[float, float]:
    """Least-squares slope of ``log2 e_h`` against ``log2 h``.

    Returns ``(q, resid)`` with ``resid`` the Euclidean norm of the fit
    residuals in log2 space.
    """
    hs = np.array(sorted(errors), dtype=float)
    es = np.array([errors[h] for h in hs], dtype=float)
    if len(np.unique(hs)) < 3:
        raise DegenerateFitError("need at least three distinct step sizes")
    if not np.all(es > 0) or not np.all(np.isfinite(es)):
        raise DegenerateFitError("all errors must be finite and positive")
    x = np.log2(hs)
    y = np.log2(es)
    A = np.column_stack([x, np.ones_like(x)])
    (q, c), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.sum((y - (q * x + c)) ** 2)))
    return float(q), resid


# --------------------------------------------------------------------------- paths


def _coupled_noise(cfg: ExperimentConfig, fine: NoisePath, h: float) -> tuple[NoisePath, int]:
    k = cfg.factor(h)
    m = cfg.n_fine // k
    coarse = coarsen(head(fine, m * k), k)
    if coarse.source_digest != fine.source_digest:
        raise AssertionError("coarse noise is not derived from the reference path")
    return coarse, k


def _path_errors(cfg: ExperimentConfig, schemes, h_list, index: int, timers: dict[str, float]):
    """Squared errors ``|X(t_n) - Y_n|^2`` on each coarse grid for one path."""
    p, j = cfg.params, cfg.jump
    fine = generate(cfg.seed, index, cfg.n_fine, cfg.h_exact, p.lam)
    t0 = time.perf_counter()
    ref = simulate_path(cfg.reference_scheme, fine, p, j, kappa=cfg.kappa).values
    timers["reference"] = timers.get("reference", 0.0) + time.perf_counter() - t0
    out = {}
    failures = 0
    for h in h_list:
        coarse, k = _coupled_noise(cfg, fine, h)
        ref_on_grid = ref[: coarse.n_fine * k + 1 : k]
        for s in schemes:
            t0 = time.perf_counter()
            y = simulate_path(s, coarse, p, j, kappa=cfg.kappa).values
            timers[s.label] = timers.get(s.label, 0.0) + time.perf_counter() - t0
            failures += int(np.count_nonzero(~(y > 0)))
            out[(s.label, h)] = (ref_on_grid - y) ** 2
    return out, failures


def _run_chunk(cfg: ExperimentConfig, schemes, h_list, start: int, stop: int, weights, keep: bool):
    sums: dict = {}
    boots: dict = {}
    kept: dict = {}
    timers: dict[str, float] = {}
    failures = 0
    rows: dict = {}
    for idx in range(start, stop):
        try:
            errs, nfail = _path_errors(cfg, schemes, h_list, idx, timers)
        except AitSahaliaError as exc:
            raise SimulationError(f"path {idx}: {exc}", idx, exc) from exc
        failures += nfail
        for key, e2 in errs.items():
            if key in sums:
                sums[key] += e2
            else:
                sums[key] = e2.copy()
            rows.setdefault(key, []).append(e2)
    for key, lst in rows.items():
        block = np.vstack(lst)
        if weights is not None:
            boots[key] = weights @ block
        if keep:
            kept[key] = block
    return sums, boots, kept, timers, failures


def _bootstrap_weights(cfg: ExperimentConfig) -> np.ndarray | None:
    if cfg.n_boot <= 1:
        return None
    # resampling stream lives outside the path index range used for noise
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(2**63, 7))
    rng = np.random.Generator(np.random.Philox(ss))
    idx = rng.integers(0, cfg.n_paths, size=(cfg.n_boot, cfg.n_paths))
    w = np.zeros((cfg.n_boot, cfg.n_paths))
    for b in range(cfg.n_boot):
        w[b] = np.bincount(idx[b], minlength=cfg.n_paths)
    return w


def run_convergence(
    cfg: ExperimentConfig,
    *,
    schemes: Sequence[Scheme | str] | None = None,
    h_list: Sequence[float] | None = None,
    workers: int = 1,
    keep_path_errors: bool = False,
    fit: bool = True,
) -> ConvergenceReport:
    """Full error study: every scheme at every step size on coupled noise."""
    schemes = tuple(Scheme.parse(s) for s in (schemes if schemes is not None else cfg.schemes_under_test))
    h_list = tuple(float(h) for h in (h_list if h_list is not None else cfg.h_list))
    for h in h_list:
        cfg.factor(h)
    weights = _bootstrap_weights(cfg)
    chunks = [(a, min(a + CHUNK, cfg.n_paths)) for a in range(0, cfg.n_paths, CHUNK)]

    def job_args(a, b):
        w = None if weights is None else weights[:, a:b]
        return (cfg, schemes, h_list, a, b, w, keep_path_errors)

    if workers <= 1 or len(chunks) == 1:
        results = (_run_chunk(*job_args(a, b)) for a, b in chunks)
        return _reduce(cfg, schemes, h_list, results, keep_path_errors, fit)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, *job_args(a, b)) for a, b in chunks]
        return _reduce(cfg, schemes, h_list, (fu.result() for fu in futures), keep_path_errors, fit)


def _reduce(cfg, schemes, h_list, results: Iterable, keep: bool, fit: bool) -> ConvergenceReport:
    total: dict = {}
    boot_total: dict = {}
    kept: dict = {}
    timers: dict[str, float] = {}
    failures = 0
    for sums, boots, kept_chunk, t, nfail in results:
        failures += nfail
        for key, v in sums.items():
            total[key] = total[key] + v if key in total else v
        for key, v in boots.items():
            boot_total[key] = boot_total[key] + v if key in boot_total else v
        for key, v in kept_chunk.items():
            kept.setdefault(key, []).append(v)
        for k, v in t.items():
            timers[k] = timers.get(k, 0.0) + v

    n = cfg.n_paths
    errors: dict[str, dict[float, float]] = {}
    stderr: dict[str, dict[float, float]] = {}
    for s in schemes:
        errors[s.label] = {}
        stderr[s.label] = {}
        for h in h_list:
            errors[s.label][h] = math.sqrt(float(np.max(total[(s.label, h)] / n)))
            if (s.label, h) in boot_total:
                eb = np.sqrt(np.max(boot_total[(s.label, h)] / n, axis=1))
                stderr[s.label][h] = float(np.std(eb, ddof=1))
            else:
                stderr[s.label][h] = float("nan")
    rates = {}
    if fit and len(h_list) >= 3:
        for s in schemes:
            try:
                rates[s.label] = fit_rate(errors[s.label])
            except DegenerateFitError:
                rates[s.label] = (float("nan"), float("nan"))
    return ConvergenceReport(
        errors=errors,
        stderr=stderr,
        rates=rates,
        wall_times=timers,
        positivity_failures=failures,
        n_paths=n,
        seed=cfg.seed,
        path_errors={k: np.vstack(v) for k, v in kept.items()} if keep else None,
    )


def mean_square_error(cfg: ExperimentConfig, scheme: Scheme | str, h: float, *, workers: int = 1) -> float:
    """``e_h`` of one scheme at one step size (``h`` may equal ``h_exact``)."""
    rep = run_convergence(cfg.with_(n_boot=0), schemes=[scheme], h_list=[h], workers=workers, fit=False)
    return rep.errors[Scheme.parse(scheme).label][float(h)]


# --------------------------------------------------------------------------- stress


def positivity_stress(
    scheme: Scheme | str,
    cfg: ExperimentConfig,
    h_large: Sequence[float],
    *,
    n_steps: int = 16,
    n_paths: int | None = None,
) -> int:
    """Count non-positive (or non-finite) iterates over short runs at large h.

    A path stops at its first failure, so the count is the number of failed
    paths. Implicit solver breakdowns are counted as failures too.
    """
    scheme = Scheme.parse(scheme)
    n_paths = cfg.n_paths if n_paths is None else n_paths
    p, j = cfg.params, cfg.jump
    failures = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for h in h_large:
            for i in range(n_paths):
                nz = generate(cfg.seed, i, n_steps, h, p.lam)
                try:
                    y = simulate_path(scheme, nz, p, j, kappa=cfg.kappa, demonstration=scheme is Scheme.EM).values
                except AitSahaliaError:
                    failures += 1
                    continue
                failures += int(not np.all(y > 0))
    return failures


# --------------------------------------------------------------------------- timing


@dataclass
class BenchmarkResult:
    single: dict[str, float]
    parallel: dict[str, float] = field(default_factory=dict)
    workers: int = 1

    def timings_csv(self) -> str:
        rows = [(s, "single", t) for s, t in self.single.items()]
        rows += [(s, f"parallel[{self.workers}]", t) for s, t in self.parallel.items()]
        return csv_text(("scheme", "mode", "seconds"), rows)


def _warm_up(cfg: ExperimentConfig, schemes) -> None:
    nz = generate(cfg.seed, 0, 4, cfg.h_list[0] if cfg.h_list else cfg.h_exact, cfg.params.lam)
    for s in schemes:
        simulate_path(s, nz, cfg.params, cfg.jump, kappa=cfg.kappa)


def _bench_chunk(cfg: ExperimentConfig, schemes, start: int, stop: int) -> dict[str, float]:
    p, j = cfg.params, cfg.jump
    timers = {s.label: 0.0 for s in schemes}
    for idx in range(start, stop):
        fine = generate(cfg.seed, idx, cfg.n_fine, cfg.h_exact, p.lam)
        coarse = [_coupled_noise(cfg, fine, h)[0] for h in cfg.h_list]
        # rotate the order so no scheme always runs first on fresh noise
        order = schemes[idx % len(schemes):] + schemes[: idx % len(schemes)]
        for s in order:
            t0 = time.perf_counter()
            for nz in coarse:
                simulate_path(s, nz, p, j, kappa=cfg.kappa)
            timers[s.label] += time.perf_counter() - t0
    return timers


def benchmark(cfg: ExperimentConfig, schemes: Sequence[Scheme | str], *, workers: int = 1) -> BenchmarkResult:
    """Seconds spent integrating every path at every ``h`` in ``cfg.h_list``.

    Noise generation and coarsening are excluded; every scheme integrates the
    same increments. The single-worker figure is the fair comparison; with
    ``workers > 1`` the wall time of a parallel pass per scheme is reported
    separately.
    """
    schemes = tuple(Scheme.parse(s) for s in schemes)
    if not schemes:
        return BenchmarkResult({}, {}, workers)
    _warm_up(cfg, schemes)
    single = _bench_chunk(cfg, schemes, 0, cfg.n_paths)
    parallel: dict[str, float] = {}
    if workers > 1:
        chunks = [(a, min(a + CHUNK, cfg.n_paths)) for a in range(0, cfg.n_paths, CHUNK)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for s in schemes:
                t0 = time.perf_counter()
                list(pool.map(_bench_chunk, *zip(*[(cfg, (s,), a, b) for a, b in chunks])))
                parallel[s.label] = time.perf_counter() - t0
    return BenchmarkResult(single, parallel, workers)
