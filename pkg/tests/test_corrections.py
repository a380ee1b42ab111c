import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aitsahalia.corrections import (
    AssumptionReport,
    Correction,
    CorrectionKind,
    SampleGrid,
    check_assumption,
    f_h,
    g_h,
    kappa_range,
    closed_form_constants,
    project,
)
from aitsahalia.errors import InvalidParameterError
from aitsahalia.model import EXAMPLE1, EXAMPLE2, f, g

H = 2.0**-10
positive = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)
reals = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_kappa_default_and_range():
    c = Correction.projected(H, EXAMPLE1)
    assert c.kappa == 1 / 8
    assert kappa_range(5.0) == (0.1, 0.125)
    Correction.projected(H, EXAMPLE1, kappa=0.1)
    with pytest.raises(InvalidParameterError):
        Correction.projected(H, EXAMPLE1, kappa=1.0)
    with pytest.raises(InvalidParameterError):
        Correction(CorrectionKind.TAMED, H, EXAMPLE1, kappa=0.1)
    with pytest.raises(InvalidParameterError):
        Correction.tamed(0.0, EXAMPLE1)


def test_projection_examples():
    c = Correction.projected(2.0**-8, EXAMPLE1)  # threshold 2
    assert c.threshold == 2.0
    assert project(1.5, c) == 1.5
    assert project(5.0, c) == 2.0
    assert project(-5.0, c) == -2.0
    assert project(0.0, c) == 0.0


@settings(max_examples=300, deadline=None)
@given(reals, reals)
def test_projection_lipschitz_and_bounded(x, y):
    c = Correction.projected(H, EXAMPLE1)
    px, py = project(x, c), project(y, c)
    assert abs(px - py) <= abs(x - y) * (1 + 1e-15) + 1e-300
    assert abs(px) <= c.threshold
    if x <= y:
        assert px <= py


def test_taming_closed_form():
    c = Correction.tamed(0.25, EXAMPLE1)
    # f(2) = -96, denominator 1 + 0.5 * 32 = 17
    assert f_h(2.0, c) == pytest.approx(-96 / 17, rel=1e-15)
    assert g_h(2.0, c) == pytest.approx(4 / 17, rel=1e-15)
    # saturation for huge x stays finite
    assert math.isfinite(f_h(1e100, c)) and math.isfinite(g_h(1e100, c))


@settings(max_examples=200, deadline=None)
@given(positive)
def test_corrected_terms_dominated(x):
    for kind in (CorrectionKind.TAMED, CorrectionKind.PROJECTED):
        c = Correction(kind, H, EXAMPLE2)
        assert abs(f_h(x, c)) <= abs(f(x, EXAMPLE2)) * (1 + 1e-15)
        assert abs(g_h(x, c)) <= abs(g(x, EXAMPLE2)) * (1 + 1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=20.0))
def test_corrections_converge_to_original(x):
    # gap shrinks with h and obeys the sqrt(h) (1 + x^(2r)) consistency bound
    p = EXAMPLE1
    for kind in (CorrectionKind.TAMED, CorrectionKind.PROJECTED):
        gaps = []
        for k in (10, 20, 40):
            c = Correction(kind, 2.0**-k, p)
            gap = abs(f_h(x, c) - f(x, p)) + abs(g_h(x, c) - g(x, p))
            bound = closed_form_constants(c)["L1"] if kind is CorrectionKind.PROJECTED else p.alpha2 + p.sigma
            assert gap <= bound * math.sqrt(c.h) * (1 + x ** (2 * p.r)) * (1 + 1e-12)
            gaps.append(gap)
        assert gaps[2] <= gaps[1] <= gaps[0]


def test_closed_form_constants():
    assert closed_form_constants(Correction.tamed(H, EXAMPLE1)) == {"L1": 3.0, "L2": 15.0}
    pc = closed_form_constants(Correction.projected(H, EXAMPLE1))
    assert pc["L1"] == 30.0
    assert pc["L2"] == 15.0
    assert closed_form_constants(Correction.identity(H, EXAMPLE1)) == {}


def test_check_projected_passes():
    rep = check_assumption(Correction.projected(2.0**-5, EXAMPLE1), SampleGrid(n_points=100, n_pairs=200))
    assert rep.passed and rep.holds_with_estimates and rep.closed_form_ok
    assert rep.max_ratio_f <= 1 and rep.max_ratio_g <= 1
    assert rep.estimated_L1 <= 30.0


def test_check_identity_has_no_closed_form():
    rep = check_assumption(Correction.identity(H, EXAMPLE1), SampleGrid(n_points=50, n_pairs=50))
    assert rep.closed_form_ok is None
    assert rep.estimated_L1 == pytest.approx(0.0, abs=1e-300)


def test_check_reports_tamed_constant_gap():
    # the tamed consistency gap sums the f and g bounds, so max(alpha2, sigma)
    # is exceeded once sqrt(h) is small enough
    rep = check_assumption(Correction.tamed(2.0**-14, EXAMPLE2), SampleGrid(n_points=2000, n_pairs=100))
    assert rep.holds_with_estimates
    assert rep.closed_form_ok is False and not rep.passed
    assert "closed-form L1" in rep.worst
    assert rep.estimated_L1 <= 1.01 * (EXAMPLE2.alpha2 + EXAMPLE2.sigma)


def test_check_rejects_bad_v():
    with pytest.raises(InvalidParameterError):
        check_assumption(Correction.tamed(H, EXAMPLE1), v=2.0)


def test_report_csv():
    rep = check_assumption(Correction.tamed(2.0**-5, EXAMPLE1), SampleGrid(n_points=20, n_pairs=20))
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == list(AssumptionReport.CSV_FIELDS)
    assert len(lines) == 2
