"""Command-line front end.

    aitsahalia simulate    --preset example1 --paths 3 --out runs/sim
    aitsahalia convergence --preset example1 --paths 2000 --workers 4 --out runs/ex1
    aitsahalia check       --preset example2 --out runs/check
    aitsahalia bench       --preset example1 --paths 1000 --workers 1

Exit codes: 0 ok, 2 configuration, 3 numeric overflow, 4 simulation
failure, 5 assumption check failed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import math
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from ._io import atomic_write_text, csv_text
from .config import RunConfig, load_config
from .corrections import AssumptionReport, Correction, CorrectionKind, check_assumption
from .errors import AitSahaliaError, ConfigError, InvalidParameterError, NumericOverflowError, SimulationError
from .experiment import DEFAULT_H_LIST, benchmark, run_convergence
from .model import classify_regime
from .noise import generate
from .schemes import Scheme, simulate_path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SIMULATION, EXIT_ASSUMPTION = 0, 2, 3, 4, 5


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _manifest(out: Path, command: str, rc: RunConfig, seed: int, outputs: dict[str, Path], started: str) -> Path:
    regime = classify_regime(rc.params)
    lines = {
        "command": command,
        "version": __version__,
        "preset": rc.preset or "",
        "config": rc.source or "",
        "seed": seed,
        **rc.echo(),
        "regime": regime.tag.value,
        "regime_details": regime.details,
    }
    for name, p in outputs.items():
        lines[f"output.{name}"] = str(p)
    lines["started"] = started
    lines["finished"] = _now()
    text = "".join(f"{k} = {v}\n" for k, v in lines.items())
    return atomic_write_text(out / "manifest.txt", text)


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


def _regime_check(rc: RunConfig) -> None:
    regime = classify_regime(rc.params)
    if regime.is_warning:
        _err(f"warning: regime {regime.tag.value}: {regime.details}")


def _load(args) -> RunConfig:
    rc = load_config(args.config, args.preset)
    _regime_check(rc)
    return rc


# --------------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    started = _now()
    rc = _load(args)
    sim = rc.simulate
    h = sim.get("h", 2.0**-10)
    T = sim.get("T", rc.experiment.get("T", 1.0))
    n = T / h
    if not (h > 0 and abs(n - round(n)) <= 1e-9 * max(n, 1) and round(n) >= 1):
        raise ConfigError(f"T / h must be a positive integer (T={T!r}, h={h!r})", field="simulate.h")
    n = int(round(n))
    seed = args.seed if args.seed is not None else rc.experiment.get("seed", 0)
    paths = args.paths if args.paths is not None else sim.get("paths", 1)
    schemes = tuple(Scheme.parse(s) for s in args.scheme) if args.scheme else sim.get("schemes", (Scheme.TEM,))
    if Scheme.EM in schemes and not args.demonstration:
        raise ConfigError("plain EM requires --demonstration", field="scheme")
    kappa = rc.experiment.get("kappa")
    out = Path(args.out)
    outputs: dict[str, Path] = {}
    try:
        for i in range(paths):
            nz = generate(seed, i, n, h, rc.params.lam)
            for s in schemes:
                tr = simulate_path(s, nz, rc.params, rc.jump, kappa=kappa, demonstration=args.demonstration)
                target = out / f"trajectory_{s.value}_{i:04d}.csv"
                tmp = target.with_name(f".{target.name}.tmp")
                out.mkdir(parents=True, exist_ok=True)
                tr.to_csv(tmp, params_hash=rc.params.digest(), seed=seed, path_index=i)
                os.replace(tmp, target)
                outputs[f"trajectory.{s.value}.{i}"] = target
    except NumericOverflowError as exc:
        _err(f"numeric overflow: {exc}")
        return EXIT_NUMERIC
    rc.simulate.update({"h": h, "T": T, "paths": paths, "schemes": schemes})
    _manifest(out, "simulate", rc, seed, outputs, started)
    print(f"wrote {len(outputs)} trajectories to {out}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    started = _now()
    rc = _load(args)
    schemes = tuple(Scheme.parse(s) for s in args.scheme) if args.scheme else None
    cfg = rc.experiment_config(seed=args.seed, n_paths=args.paths, schemes_under_test=schemes)
    out = Path(args.out)
    try:
        report = run_convergence(cfg, workers=args.workers)
    except SimulationError as exc:
        _err(f"simulation failed on path {exc.path_index}: {exc}")
        for name in ("errors.csv", "rates.csv", "timings.csv", "plot_data.csv", "manifest.txt"):
            (out / name).unlink(missing_ok=True)
        return EXIT_SIMULATION
    outputs = report.write(out)
    rc.experiment.update({
        "T": cfg.T, "h_list": cfg.h_list, "h_exact": cfg.h_exact, "n_paths": cfg.n_paths,
        "reference_scheme": cfg.reference_scheme, "schemes_under_test": cfg.schemes_under_test,
        "seed": cfg.seed, "n_boot": cfg.n_boot,
    })
    if cfg.kappa is not None:
        rc.experiment["kappa"] = cfg.kappa
    _manifest(out, "convergence", rc, cfg.seed, outputs, started)

    print(f"{'scheme':<8}" + "".join(f"{'h=2^' + str(round(math.log2(h))):>12}" for h in cfg.h_list) + f"{'q':>9}{'resid':>9}")
    for s, byh in report.errors.items():
        q, r = report.rates.get(s, (float("nan"), float("nan")))
        print(f"{s:<8}" + "".join(f"{byh[h]:>12.5f}" for h in cfg.h_list) + f"{q:>9.4f}{r:>9.4f}")
    return EXIT_OK


def cmd_check(args) -> int:
    started = _now()
    rc = _load(args)
    chk = rc.check
    kinds = chk.get("corrections", (CorrectionKind.TAMED, CorrectionKind.PROJECTED))
    h_list = chk.get("h_list", rc.experiment.get("h_list", DEFAULT_H_LIST))
    kappa = chk.get("kappa", rc.experiment.get("kappa"))
    v = chk.get("v", 3.0)
    T = rc.experiment.get("T", 1.0)
    grid = rc.sample_grid()
    reports: list[AssumptionReport] = []
    for kind in kinds:
        for h in h_list:
            try:
                c = Correction(kind, h, rc.params, kappa if kind is CorrectionKind.PROJECTED else None)
            except InvalidParameterError as exc:
                raise ConfigError(str(exc), field="check.kappa") from None
            reports.append(check_assumption(c, grid, v=v, T=T))
    out = Path(args.out)
    text = csv_text(AssumptionReport.CSV_FIELDS, [[r.csv_row()[k] for k in AssumptionReport.CSV_FIELDS] for r in reports])
    outputs = {"assumptions": atomic_write_text(out / "assumptions.csv", text)}
    _manifest(out, "check", rc, grid.seed, outputs, started)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{r.kind:<10} h={r.h:<12.6g} L1={r.estimated_L1:<11.4g} L2={r.estimated_L2:<11.4g} "
              f"L3={r.estimated_L3:<11.4g} {'pass' if r.passed else 'FAIL'}")
        if r.holds_with_estimates and r.closed_form_ok is False:
            _err(f"warning: {r.kind} h={r.h!r}: inequalities hold with estimated constants "
                 f"but not with the closed-form ones")
    if failed:
        for r in failed:
            _err(f"assumption failed for {r.kind} h={r.h!r}: {r.worst}")
        return EXIT_ASSUMPTION
    return EXIT_OK


def cmd_bench(args) -> int:
    started = _now()
    rc = _load(args)
    schemes = tuple(Scheme.parse(s) for s in args.scheme) if args.scheme else (Scheme.TEM, Scheme.BEM)
    cfg = rc.experiment_config(seed=args.seed, n_paths=args.paths)
    try:
        res = benchmark(cfg, schemes, workers=args.workers)
    except AitSahaliaError as exc:
        _err(f"simulation failed: {exc}")
        return EXIT_SIMULATION
    out = Path(args.out)
    outputs = {"timings": atomic_write_text(out / "timings.csv", res.timings_csv())}
    rc.experiment.update({"n_paths": cfg.n_paths, "seed": cfg.seed, "h_list": cfg.h_list})
    _manifest(out, "bench", rc, cfg.seed, outputs, started)
    for s, t in res.single.items():
        print(f"{s:<6} single {t:10.3f} s")
    for s, t in res.parallel.items():
        print(f"{s:<6} parallel[{res.workers}] {t:10.3f} s")
    return EXIT_OK


# --------------------------------------------------------------------------- entry


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--preset", choices=("example1", "example2"), help="built-in parameter set")
    common.add_argument("--seed", type=_u64, help="master seed (u64)")
    common.add_argument("--paths", type=_positive, help="number of Monte Carlo paths")
    common.add_argument("--workers", type=_positive, default=os.cpu_count() or 1,
                        help="worker processes (default: all cores; 1 = benchmark-fair)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--scheme", action="append", choices=[s.value for s in Scheme],
                        help="scheme to run (repeatable)")

    parser = argparse.ArgumentParser(prog="aitsahalia", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("simulate", parents=[common], help="write trajectories")
    sp.add_argument("--demonstration", action="store_true", help="allow the plain EM scheme")
    sp.set_defaults(func=cmd_simulate)
    sub.add_parser("convergence", parents=[common], help="strong error study").set_defaults(func=cmd_convergence)
    sub.add_parser("check", parents=[common], help="check the correction assumptions").set_defaults(func=cmd_check)
    sub.add_parser("bench", parents=[common], help="time schemes on identical noise").set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except InvalidParameterError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except NumericOverflowError as exc:
        _err(f"numeric overflow: {exc}")
        return EXIT_NUMERIC
    except SimulationError as exc:
        _err(f"simulation failed on path {exc.path_index}: {exc}")
        return EXIT_SIMULATION


if __name__ == "__main__":
    raise SystemExit(main())
