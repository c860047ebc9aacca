import math

import numpy as np
import pytest

from nowcast import calendar as cal
from nowcast import diagnostics as dg
from nowcast.data import QuarterlySeries
from nowcast.errors import DegenerateError, InsufficientDataError, ValidationError


def qseries(values, start=cal.quarter(2000, 1)):
    return QuarterlySeries(np.arange(start, start + len(values)), np.array(values, float))


def test_describe_examples():
    r = dg.describe([1, 1, 1, 1])
    assert (r.mean, r.sd, r.cv) == (1, 0, 0)
    r = dg.describe([0, 2])
    assert r.mean == 1 and r.sd == pytest.approx(math.sqrt(2))
    assert r.cv == pytest.approx(141.42, abs=0.005)
    assert dg.describe([-1, 1]).cv is None
    with pytest.raises(InsufficientDataError):
        dg.describe([1.0])


def test_describe_equivariance():
    x = np.random.default_rng(0).normal(size=50)
    a, b = dg.describe(x), dg.describe(3 * x + 7)
    assert b.mean == pytest.approx(3 * a.mean + 7)
    assert b.sd == pytest.approx(3 * a.sd)


def test_describe_period():
    s = qseries(range(1, 9))
    r = dg.describe(s, (cal.quarter(2000, 1), cal.quarter(2000, 4)))
    assert r.n == 4 and r.mean == 2.5


def test_acf_white_noise():
    x = np.random.default_rng(1).normal(size=500)
    rho = dg.acf(x, 40)
    assert rho[0] == 1.0
    assert np.mean(np.abs(rho[1:]) < 3 / math.sqrt(500)) >= 0.95


def test_acf_ar1():
    rng = np.random.default_rng(2)
    x = np.zeros(2000)
    for t in range(1, 2000):
        x[t] = 0.5 * x[t - 1] + rng.normal()
    rho, pacf = dg.acf_pacf(x, 10)
    assert abs(rho[1] - 0.5) < 0.1
    assert abs(pacf[2]) < 0.1
    assert pacf[1] == rho[1]


def test_pacf_ar2_oracle():
    """For an AR(2) the theoretical PACF at lag 2 is the second coefficient."""
    p1, p2 = 0.5, 0.3
    r1 = p1 / (1 - p2)
    r2 = p1 * r1 + p2
    r3 = p1 * r2 + p2 * r1
    pacf = dg.pacf_from_acf(np.array([1.0, r1, r2, r3]))
    assert pacf[2] == pytest.approx(p2, abs=1e-12)
    assert pacf[3] == pytest.approx(0.0, abs=1e-12)


def test_acf_errors():
    with pytest.raises(DegenerateError):
        dg.acf(np.ones(20), 3)
    with pytest.raises(ValidationError):
        dg.acf(np.arange(10.0), 5)


def test_quarterly_grouping():
    groups, means = dg.quarterly_grouping(qseries([1.0] * 8))
    assert all(v == [1.0, 1.0] for v in groups.values())
    _, means = dg.quarterly_grouping(qseries([1, 2] * 4))
    assert means == {1: 1, 2: 2, 3: 1, 4: 2}
    for n in range(1, 15):
        g, _ = dg.quarterly_grouping(qseries(range(n), start=cal.quarter(2001, 3)))
        sizes = [len(v) for v in g.values()]
        assert max(sizes) - min(sizes) <= 1


def test_csv_exports():
    s = qseries([0.5, 1.0, 1.5, 0.2, -0.1, 0.4])
    text = dg.descriptive_csv([("all", dg.describe(s))])
    assert text.splitlines()[0] == "period,mean,sd,cv,n"
    rho, pacf = dg.acf_pacf(s.values, 2)
    assert len(dg.acf_csv("all", rho, pacf).splitlines()) == 4
    assert dg.grouping_csv("all", s).splitlines()[1].startswith("all,2000Q1,1,")
