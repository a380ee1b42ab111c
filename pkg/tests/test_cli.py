import csv
import math
import time

import numpy as np
import pytest

from aitsahalia.cli import EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_OK, main, read_manifest
from aitsahalia.config import load_config
from aitsahalia.experiment import run_convergence
from aitsahalia.schemes import Trajectory

QUICK = """\
[model]
preset = example1

[experiment]
h_list = 2^-3, 2^-4, 2^-5
h_exact = 2^-8
bootstrap = 10
"""


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate(tmp_path):
    rc = main(["simulate", "--preset", "example1", "--paths", "2", "--scheme", "tem", "--scheme", "bem",
               "--out", str(tmp_path)])
    assert rc == EXIT_OK
    for name in ("trajectory_tem_0000.csv", "trajectory_bem_0001.csv", "manifest.txt"):
        assert (tmp_path / name).exists()
    tr = Trajectory.read_csv(tmp_path / "trajectory_tem_0000.csv")
    assert len(tr.values) == 1025 and np.all(tr.values > 0)
    man = read_manifest(tmp_path / "manifest.txt")
    assert man["command"] == "simulate" and man["regime"] == "NonCritical"
    assert "started" in man and "finished" in man


def test_simulate_em_needs_flag(tmp_path):
    assert main(["simulate", "--preset", "example1", "--scheme", "em", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--preset", "example1", "--scheme", "em", "--demonstration",
                 "--out", str(tmp_path)]) == EXIT_OK


def test_convergence_quick_and_recomputable(tmp_path):
    cfg_file = tmp_path / "quick.ini"
    cfg_file.write_text(QUICK)
    out = tmp_path / "run"
    t0 = time.perf_counter()
    rc = main(["convergence", "--config", str(cfg_file), "--paths", "100", "--workers", "1", "--seed", "5",
               "--out", str(out)])
    assert rc == EXIT_OK
    assert time.perf_counter() - t0 < 10
    for name in ("errors.csv", "rates.csv", "timings.csv", "plot_data.csv", "manifest.txt"):
        assert (out / name).exists()
    rates = _rows(out / "rates.csv")
    assert [r["scheme"] for r in rates] == ["TEM", "PEM", "BEM"]
    man = read_manifest(out / "manifest.txt")
    assert man["seed"] == "5" and man["experiment.n_paths"] == "100"
    # the printed numbers are recomputable from the library
    lib = run_convergence(load_config(cfg_file).experiment_config(seed=5, n_paths=100))
    for row in _rows(out / "errors.csv"):
        assert float(row["e_h"]) == lib.errors[row["scheme"]][float(row["h"])]
    for row in rates:
        assert float(row["q"]) == lib.rates[row["scheme"]][0]


def test_convergence_non_dividing_h(tmp_path):
    cfg_file = tmp_path / "c.ini"
    cfg_file.write_text(QUICK.replace("2^-3, 2^-4, 2^-5", "2^-3, 2^-4, 3*2^-7"))
    assert main(["convergence", "--config", str(cfg_file), "--paths", "4", "--workers", "1",
                 "--out", str(tmp_path / "a")]) == EXIT_OK
    cfg_file.write_text(QUICK.replace("2^-5", "0.01"))
    assert main(["convergence", "--config", str(cfg_file), "--paths", "4", "--workers", "1",
                 "--out", str(tmp_path / "b")]) == EXIT_CONFIG


def test_bad_kappa_and_missing_key(tmp_path, capsys):
    cfg_file = tmp_path / "k.ini"
    cfg_file.write_text(QUICK + "kappa = 1\n")
    assert main(["convergence", "--config", str(cfg_file), "--paths", "4", "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg_file.write_text("[model]\nalpha_m1 = 1.5\nalpha0 = 2\nalpha1 = 1\nalpha2 = 3\nsigma = 1\nr = 5\nrho = 2\n")
    assert main(["check", "--config", str(cfg_file), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "x0" in capsys.readouterr().err


def test_check_example1(tmp_path):
    assert main(["check", "--preset", "example1", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "assumptions.csv")
    assert len(rows) == 12 and all(r["passed"] == "True" for r in rows)


def test_check_example2_flags_closed_form(tmp_path, capsys):
    rc = main(["check", "--preset", "example2", "--out", str(tmp_path)])
    err = capsys.readouterr().err
    assert "CriticalUnsupported" in err
    rows = _rows(tmp_path / "assumptions.csv")
    assert all(r["holds_with_estimates"] == "True" for r in rows)
    failed = [r for r in rows if r["passed"] != "True"]
    assert rc == (EXIT_ASSUMPTION if failed else EXIT_OK)
    assert all(r["kind"] == "tamed" and r["closed_form_ok"] == "False" for r in failed)


def test_bench(tmp_path):
    assert main(["bench", "--preset", "example2", "--paths", "4", "--workers", "1", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "timings.csv")
    assert {r["scheme"] for r in rows} == {"TEM", "BEM"}
    assert all(math.isfinite(float(r["seconds"])) for r in rows)


def test_seed_range():
    with pytest.raises(SystemExit):
        main(["simulate", "--preset", "example1", "--seed", str(2**64)])
