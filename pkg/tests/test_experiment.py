import math

import numpy as np
import pytest

from aitsahalia.errors import DegenerateFitError, DivisibilityError, InvalidParameterError
from aitsahalia.experiment import (
    ExperimentConfig,
    benchmark,
    fit_rate,
    mean_square_error,
    positivity_stress,
    run_convergence,
)
from aitsahalia.model import EXAMPLE1, EXAMPLE2, JumpCoefficient
from aitsahalia.noise import coarsen, generate
from aitsahalia.schemes import Scheme, simulate_path

J = JumpCoefficient.linear(0.5)
H4 = tuple(2.0**-i for i in range(3, 7))


def small(**kw):
    base = dict(params=EXAMPLE1, jump=J, h_list=H4, h_exact=2.0**-10, n_paths=96, n_boot=20)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize("q", [0.5, 1.0, 0.25])
def test_fit_rate_exact_power_law(q):
    hs = [2.0**-i for i in range(5, 11)]
    q_hat, resid = fit_rate({h: 0.7 * h**q for h in hs})
    assert abs(q_hat - q) < 1e-12
    assert resid < 1e-12


def test_fit_rate_resid():
    # one point off by a factor 2 (one unit in log2)
    hs = [1.0, 0.5, 0.25, 0.125]
    e = {h: h**0.5 for h in hs}
    e[0.25] *= 2
    x = np.log2(hs)
    y = np.log2([e[h] for h in hs])
    coef = np.polyfit(x, y, 1)
    q, resid = fit_rate(e)
    assert q == pytest.approx(coef[0], abs=1e-12)
    assert resid == pytest.approx(np.linalg.norm(y - np.polyval(coef, x)), abs=1e-12)


def test_fit_rate_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_rate({0.1: 1.0, 0.2: 2.0})
    with pytest.raises(DegenerateFitError):
        fit_rate({0.1: 1.0, 0.2: 0.0, 0.4: 2.0})


def test_config_validation():
    with pytest.raises(DivisibilityError):
        small(h_list=(0.01,))
    with pytest.raises(InvalidParameterError):
        small(schemes_under_test=(Scheme.EM,))
    # non-dividing multiples of h_exact are allowed; the grid stops before T
    cfg = small(h_list=(3 * 2.0**-7,))
    assert cfg.n_steps(3 * 2.0**-7) == 42


def _independent_e_h(cfg, scheme, h):
    """Plain double loop: mean over paths of squared gaps, max over grid points."""
    k = round(h / cfg.h_exact)
    m = cfg.n_fine // k
    acc = np.zeros(m + 1)
    for i in range(cfg.n_paths):
        fine = generate(cfg.seed, i, cfg.n_fine, cfg.h_exact, cfg.params.lam)
        ref = simulate_path(Scheme.BEM, fine, cfg.params, cfg.jump).values
        from aitsahalia.noise import head
        y = simulate_path(scheme, coarsen(head(fine, m * k), k), cfg.params, cfg.jump).values
        acc += (ref[:: k][: m + 1] - y) ** 2
    return math.sqrt(max(acc / cfg.n_paths))


def test_error_metric_matches_independent_reducer():
    cfg = small(n_paths=40)
    rep = run_convergence(cfg, schemes=[Scheme.TEM], h_list=[2.0**-4, 3 * 2.0**-7])
    for h in (2.0**-4, 3 * 2.0**-7):
        want = _independent_e_h(cfg, Scheme.TEM, h)
        assert rep.errors["TEM"][h] == pytest.approx(want, rel=1e-12)


def test_self_comparison_is_zero():
    cfg = small(n_paths=20)
    assert mean_square_error(cfg, Scheme.BEM, cfg.h_exact) == 0.0


def test_same_seed_bit_identical_and_worker_independent():
    cfg = small()
    a = run_convergence(cfg)
    b = run_convergence(cfg)
    c = run_convergence(cfg, workers=2)
    assert a.comparable() == b.comparable() == c.comparable()
    d = run_convergence(cfg.with_(seed=1))
    assert d.comparable() != a.comparable()


def test_more_paths_smaller_stderr():
    e1 = run_convergence(small(n_paths=64, n_boot=50), schemes=[Scheme.TEM], fit=False)
    e2 = run_convergence(small(n_paths=256, n_boot=50), schemes=[Scheme.TEM], fit=False)
    h = H4[0]
    assert e2.stderr["TEM"][h] < e1.stderr["TEM"][h]
    # same estimator on nested path sets stays within a few standard errors
    assert abs(e2.errors["TEM"][h] - e1.errors["TEM"][h]) < 5 * e1.stderr["TEM"][h]


def test_errors_decrease_with_h():
    cfg = small(n_paths=256, h_list=tuple(2.0**-i for i in range(4, 8)), n_boot=0)
    rep = run_convergence(cfg)
    for byh in rep.errors.values():
        vals = [byh[h] for h in sorted(byh, reverse=True)]
        assert vals[0] > vals[-1]
    assert rep.positivity_failures == 0


@pytest.mark.slow
def test_rate_structural_band_example1():
    # default step sizes and reference, desk-scale path count
    cfg = ExperimentConfig(EXAMPLE1, J, n_paths=2000, n_boot=0)
    rep = run_convergence(cfg)
    for s, (q, _) in rep.rates.items():
        print(f"structural band {s}: q={q:.4f}")
    bad = {s: q for s, (q, _) in rep.rates.items() if not 0.35 <= q <= 0.70}
    assert not bad, bad


def test_report_files(tmp_path):
    rep = run_convergence(small(n_paths=16, n_boot=5))
    out = rep.write(tmp_path)
    assert set(out) == {"errors", "rates", "timings", "plot"}
    lines = (tmp_path / "errors.csv").read_text().splitlines()
    assert lines[0] == "scheme,h,e_h,stderr" and len(lines) == 1 + 3 * len(H4)
    rates = (tmp_path / "rates.csv").read_text().splitlines()
    assert rates[0] == "scheme,q,resid" and len(rates) == 4
    assert (tmp_path / "plot_data.csv").read_text().startswith("log2h,log2e,scheme")


def test_keep_path_errors():
    cfg = small(n_paths=10, n_boot=0)
    rep = run_convergence(cfg, schemes=[Scheme.PEM], keep_path_errors=True)
    block = rep.path_errors[("PEM", H4[0])]
    assert block.shape == (10, cfg.n_steps(H4[0]) + 1)
    assert rep.errors["PEM"][H4[0]] == pytest.approx(math.sqrt(block.mean(axis=0).max()), rel=1e-14)


def test_positivity_stress():
    cfg = small(params=EXAMPLE1.replace(x0=2.0), n_paths=20)
    for s in (Scheme.TEM, Scheme.PEM, Scheme.BEM):
        assert positivity_stress(s, cfg, [0.5, 1.0, 4.0]) == 0
    # plain EM leaves the positive half-line at large steps
    assert positivity_stress(Scheme.EM, cfg, [0.5, 1.0]) > 0


def test_benchmark_shapes():
    cfg = small(n_paths=8, params=EXAMPLE2)
    res = benchmark(cfg, [Scheme.TEM, Scheme.BEM])
    assert set(res.single) == {"TEM", "BEM"}
    assert all(t > 0 for t in res.single.values())
    assert res.timings_csv().splitlines()[0] == "scheme,mode,seconds"
    assert benchmark(cfg, []).single == {}
