"""Descriptive statistics, ACF/PACF and quarterly grouping for the target and features."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import calendar as cal
from .errors import DegenerateError, InsufficientDataError, ValidationError


@dataclass(frozen=True)
class DescriptiveRow:
    mean: float
    sd: float
    cv: object        # None when the mean is zero
    n: int


def describe(series, period=None):
    """Sample mean, sample sd (n-1) and coefficient of variation ``100 * sd / mean``.

    ``series`` is a :class:`~nowcast.data.QuarterlySeries` (``period`` = inclusive quarter
    bounds) or a plain vector.
    """
    if hasattr(series, "quarters"):
        if period is not None:
            series = series.between(*period)
        y = series.values
    else:
        y = np.asarray(series, dtype=np.float64)
    y = y[~np.isnan(y)]
    if y.size < 2:
        raise InsufficientDataError("describe needs at least two observations")
    m = float(np.mean(y))
    sd = float(np.std(y, ddof=1))
    cv = None if m == 0 else 100.0 * sd / m
    return DescriptiveRow(m, sd, cv, int(y.size))


def acf(series, max_lag):
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if max_lag >= n / 2:
        raise ValidationError(f"max_lag must be below n/2 = {n / 2}")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom <= 0:
        raise DegenerateError("constant series has no autocorrelation")
    return np.array([1.0] + [float(xc[k:] @ xc[:-k]) / denom for k in range(1, max_lag + 1)])


def pacf_from_acf(rho):
    """Durbin-Levinson recursion; returns partial autocorrelations for lags 0..len(rho)-1."""
    max_lag = len(rho) - 1
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0:
        return out
    phi = np.zeros(max_lag + 1)
    phi[1] = rho[1]
    out[1] = rho[1]
    v = 1.0 - rho[1] ** 2
    for k in range(2, max_lag + 1):
        if v <= 0:
            break
        a = (rho[k] - phi[1:k] @ rho[k - 1:0:-1]) / v
        new = phi.copy()
        new[k] = a
        new[1:k] = phi[1:k] - a * phi[k - 1:0:-1]
        phi = new
        out[k] = a
        v *= 1.0 - a * a
    return out


def acf_pacf(series, max_lag):
    rho = acf(series, max_lag)
    return rho, pacf_from_acf(rho)


def quarterly_grouping(series):
    """Values of a quarterly series grouped by quarter of the year, with group means."""
    groups = {1: [], 2: [], 3: [], 4: []}
    for q, v in zip(series.quarters, series.values):
        groups[cal.quarter_of_year(int(q))].append(float(v))
    means = {k: (float(np.mean(v)) if v else math.nan) for k, v in groups.items()}
    return groups, means


def _num(x):
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def descriptive_csv(rows):
    """``rows``: list of (label, DescriptiveRow)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["period", "mean", "sd", "cv", "n"])
    for label, r in rows:
        w.writerow([label, _num(r.mean), _num(r.sd), _num(r.cv), r.n])
    return out.getvalue()


def acf_csv(label, rho, pacf):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["period", "lag", "acf", "pacf"])
    for k, (a, p) in enumerate(zip(rho, pacf)):
        w.writerow([label, k, repr(float(a)), repr(float(p))])
    return out.getvalue()


def grouping_csv(label, series):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["period", "quarter", "quarter_of_year", "value"])
    for q, v in zip(series.quarters, series.values):
        w.writerow([label, cal.format_quarter(int(q)), cal.quarter_of_year(int(q)), _num(v)])
    return out.getvalue()
