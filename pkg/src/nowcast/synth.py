"""Deterministic synthetic fixture with a known one-factor structure."""

import os
from dataclasses import dataclass

import numpy as np

from . import calendar as cal
from .benchmarks import DFM_INDICATORS
from .data import MonthlyPanel

FIRST_MONTH = cal.month(1959, 1)
LAST_MONTH = cal.month(2024, 6)
N_INDICATORS = 20
N_NOISE = 5
FACTOR_AR = 0.7
BETA = 2.0
NOISE_SD = 0.5


@dataclass
class Fixture:
    panel: MonthlyPanel            # raw levels, FRED-MD layout
    factor: np.ndarray             # monthly factor on the panel calendar
    loadings: np.ndarray
    quarters: np.ndarray
    growth: np.ndarray             # y_q
    levels: np.ndarray             # GDP levels, one more quarter than growth
    level_quarters: np.ndarray
    seed: int


def _levels_for(x, code, rng):
    """Raw series whose transform under ``code`` recovers the stationary signal ``x``."""
    if code == 1:
        return x.copy()
    if code == 2:
        return 50.0 + rng.normal() + np.cumsum(x)
    if code == 5:
        return 100.0 * np.exp(np.cumsum(0.005 + 0.01 * x))
    raise ValueError(code)


def make_fixture(seed=7, first=FIRST_MONTH, last=LAST_MONTH, n_indicators=N_INDICATORS,
                 n_noise=N_NOISE):
    rng = np.random.default_rng(seed)
    T = last - first + 1
    months = np.arange(first, last + 1)
    innov = rng.normal(0.0, np.sqrt(1.0 - FACTOR_AR ** 2), T)
    f = np.empty(T)
    f[0] = rng.normal()
    for t in range(1, T):
        f[t] = FACTOR_AR * f[t - 1] + innov[t]

    names = list(DFM_INDICATORS)
    names += [f"SYN{i:02d}" for i in range(1, n_indicators - len(names) - n_noise + 1)]
    names += [f"NOISE{i:02d}" for i in range(1, n_noise + 1)]
    k = len(names)
    lam = np.zeros(k)
    sd = np.ones(k)
    lam[:len(DFM_INDICATORS)] = rng.uniform(0.7, 0.9, len(DFM_INDICATORS))
    sd[:len(DFM_INDICATORS)] = 0.5
    n_syn = k - len(DFM_INDICATORS) - n_noise
    lam[len(DFM_INDICATORS):len(DFM_INDICATORS) + n_syn] = rng.uniform(0.3, 0.9, n_syn)
    codes = [5] * len(DFM_INDICATORS) + [(1, 2, 5)[i % 3] for i in range(k - len(DFM_INDICATORS))]

    cols = []
    for i in range(k):
        x = lam[i] * f + rng.normal(0.0, sd[i], T)
        cols.append(_levels_for(x, codes[i], rng))
    values = np.column_stack(cols)
    # a ragged edge on the last month
    values[-1, [1, 5, 9]] = np.nan

    q_first = cal.quarter_of_month(first) + (0 if (first % 12) % 3 == 0 else 1)
    q_last = cal.quarter_of_month(last) - (0 if (last % 12) % 3 == 2 else 1)
    quarters = np.arange(q_first, q_last + 1)
    fbar = np.array([f[cal.last_month(q) - 2 - first:cal.last_month(q) + 1 - first].mean()
                     for q in quarters])
    y = BETA * fbar + rng.normal(0.0, NOISE_SD, len(quarters))
    # growth is 100 * diff(log level); the first quarter only anchors the level
    levels = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(y[1:])]) / 100.0)
    panel = MonthlyPanel(months, names, codes, values)
    return Fixture(panel, f, lam, quarters[1:], y[1:], levels, quarters, seed)


def _num(v):
    return repr(float(v))


def default_config():
    return "\n".join([
        "data = fred_md.csv",
        "gdp = gdp.csv",
        "models = CNN1D,naive,dfm",
        "lengths = 8",
        "scenarios = 1,2,3",
        "eval_start = 2012Q1",
        "eval_end = 2019Q4",
        "n_seeds = 5",
        "seed = 7",
        "lr = 0.01",
        "",
    ])


def write_fixture(out_dir, seed=7):
    """Write panel, GDP levels, ground truth and a run config; returns the file paths."""
    fx = make_fixture(seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("fred_md.csv", "gdp.csv", "truth.csv", "run.cfg")}
    with open(paths["fred_md.csv"], "w", newline="") as fh:
        fx.panel.to_csv(fh)
    with open(paths["gdp.csv"], "w") as fh:
        fh.write("observation_date,GDPC1\n")
        for q, v in zip(fx.level_quarters, fx.levels):
            fh.write(f"{cal.format_quarter(int(q))},{_num(v)}\n")
    with open(paths["truth.csv"], "w") as fh:
        fh.write(f"# beta={_num(BETA)} factor_ar={_num(FACTOR_AR)} noise_sd={_num(NOISE_SD)}\n")
        fh.write("month,factor\n")
        for m, v in zip(fx.panel.calendar, fx.factor):
            fh.write(f"{cal.format_month(int(m))},{_num(v)}\n")
    with open(paths["run.cfg"], "w") as fh:
        fh.write(default_config())
    return paths
