"""Forecast evaluation: RMSE/MAE, relative metrics, RCSSE and the Diebold-Mariano test."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, InsufficientDataError, ShapeError, ValidationError

BENCHMARKS = ("naive", "dfm")


def point_metrics(errors):
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise InsufficientDataError("no errors to evaluate")
    return math.sqrt(float(np.mean(e * e))), float(np.mean(np.abs(e)))


def relative(metric_model, metric_bench):
    if metric_bench == 0:
        raise DegenerateError("benchmark metric is zero")
    return metric_model / metric_bench


def _betacf(a, b, x, max_iter=300, tol=1e-16):
    """Continued fraction for the regularised incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return h


def betainc(a, b, x):
    """Regularised incomplete beta function ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t, df):
    """Student-t distribution function."""
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def _loss(e, kind):
    if kind == "squared":
        return e * e
    if kind == "absolute":
        return np.abs(e)
    raise ValidationError(f"unknown loss {kind!r}")


@dataclass(frozen=True)
class DMResult:
    statistic: float
    p_value: float
    mean_diff: float
    n: int


def dm_test(e_a, e_b, loss="squared"):
    """One-sided Diebold-Mariano test that model ``a`` is more accurate than model ``b``.

    ``d_t = L(e_a,t) - L(e_b,t)``; the variance of its mean uses the lag-0
    autocovariance (one-step nowcasts), the statistic carries the Harvey-Leybourne-Newbold
    small-sample factor and is referred to Student t with ``T - 1`` degrees of freedom.
    Small p-values favour ``a``.
    """
    a = np.asarray(e_a, dtype=np.float64)
    b = np.asarray(e_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"error series must be equal-length vectors, got {a.shape} and {b.shape}")
    T = a.size
    if T < 5:
        raise InsufficientDataError(f"DM test needs at least 5 observations, got {T}")
    d = _loss(a, loss) - _loss(b, loss)
    dbar = float(np.mean(d))
    gamma0 = float(np.mean((d - dbar) ** 2))
    scale = 1e-14 * max(1.0, float(np.mean(np.abs(d))))
    if gamma0 <= scale * scale:
        if abs(dbar) <= scale:
            return DMResult(0.0, 0.5, dbar, T)
        stat = -math.inf if dbar < 0 else math.inf
        return DMResult(stat, 0.0 if dbar < 0 else 1.0, dbar, T)
    dm = dbar / math.sqrt(gamma0 / T)
    stat = dm * math.sqrt((T - 1) / T)
    return DMResult(stat, t_cdf(stat, T - 1), dbar, T)


def rcsse(e_model, e_bench):
    """Running ratio of cumulative squared errors, model over benchmark."""
    a = np.asarray(e_model, dtype=np.float64)
    b = np.asarray(e_bench, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("error series must have equal length")
    num = np.cumsum(a * a)
    den = np.cumsum(b * b)
    if den.size and den[0] <= 0:
        k = int(np.argmax(den > 0)) if np.any(den > 0) else den.size
        raise DegenerateError(f"benchmark cumulative squared error is zero for the first {k} points")
    return num / den


def stars(p):
    if p is None or math.isnan(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


@dataclass
class EvalRow:
    model: str
    l: object
    scenario: int
    n: int
    rmse: float
    mae: float
    versus: dict          # benchmark -> dict(rel_rmse, rel_mae, dm_stat, dm_p, dm_p_mae)


def _series(records):
    """Group records into ``{(model, l, scenario): {quarter: (nowcast, actual)}}``."""
    groups = {}
    for r in records:
        if r.actual is None or (isinstance(r.actual, float) and math.isnan(r.actual)):
            continue
        groups.setdefault((r.model, r.l, r.scenario), {})[r.quarter] = (r.nowcast, r.actual)
    return groups


def _key_l(l):
    return -1 if l is None else int(l)


def evaluate(records, benchmarks=BENCHMARKS):
    """Absolute and relative metrics and DM tests per (model, l, scenario)."""
    groups = _series(records)
    bench = {}
    for (model, l, j), series in groups.items():
        if model in benchmarks:
            bench[(model, j)] = series
    rows = []
    for (model, l, j) in sorted(groups, key=lambda k: (k[0] not in benchmarks, k[0], _key_l(k[1]), k[2])):
        series = groups[(model, l, j)]
        qs = sorted(series)
        e = np.array([series[q][1] - series[q][0] for q in qs])
        rmse, mae = point_metrics(e)
        versus = {}
        for b in benchmarks:
            if b == model or (b, j) not in bench:
                continue
            bs = bench[(b, j)]
            common = [q for q in qs if q in bs]
            if len(common) < len(qs):
                raise ValidationError(f"benchmark {b} lacks quarters evaluated for {model}")
            eb = np.array([bs[q][1] - bs[q][0] for q in common])
            rb, mb = point_metrics(eb)
            entry = {"rel_rmse": relative(rmse, rb), "rel_mae": relative(mae, mb)}
            if len(common) >= 5:
                sq = dm_test(e, eb, "squared")
                ab = dm_test(e, eb, "absolute")
                entry.update(dm_stat=sq.statistic, dm_p=sq.p_value,
                             dm_stat_mae=ab.statistic, dm_p_mae=ab.p_value)
            else:
                entry.update(dm_stat=math.nan, dm_p=math.nan, dm_stat_mae=math.nan,
                             dm_p_mae=math.nan)
            versus[b] = entry
        rows.append(EvalRow(model, l, j, len(qs), rmse, mae, versus))
    return rows


def rcsse_paths(records, benchmarks=BENCHMARKS):
    """RCSSE of every model against every benchmark, as rows (model, l, scenario, bench, quarter, value)."""
    groups = _series(records)
    out = []
    for (model, l, j), series in sorted(groups.items(), key=lambda kv: (kv[0][0], _key_l(kv[0][1]), kv[0][2])):
        for b in benchmarks:
            if b == model or (b, None, j) not in groups:
                continue
            bs = groups[(b, None, j)]
            qs = [q for q in sorted(series) if q in bs]
            if not qs:
                continue
            e = np.array([series[q][1] - series[q][0] for q in qs])
            eb = np.array([bs[q][1] - bs[q][0] for q in qs])
            try:
                path = rcsse(e, eb)
            except DegenerateError:
                continue
            out.extend((model, l, j, b, q, float(v)) for q, v in zip(qs, path))
    return out


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.6f}"
    return str(x)


def report_long_csv(rows, benchmarks=BENCHMARKS):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    head = ["model", "l", "scenario", "n", "rmse", "mae"]
    for b in benchmarks:
        head += [f"rel_rmse_{b}", f"rel_mae_{b}", f"dm_stat_{b}", f"dm_p_{b}", f"stars_{b}",
                 f"dm_stat_mae_{b}", f"dm_p_mae_{b}", f"stars_mae_{b}"]
    w.writerow(head)
    for r in rows:
        line = [r.model, _fmt(r.l), r.scenario, r.n, _fmt(r.rmse), _fmt(r.mae)]
        for b in benchmarks:
            v = r.versus.get(b)
            if v is None:
                line += ["NA"] * 8
            else:
                line += [_fmt(v["rel_rmse"]), _fmt(v["rel_mae"]), _fmt(v["dm_stat"]),
                         _fmt(v["dm_p"]), stars(v["dm_p"]), _fmt(v["dm_stat_mae"]),
                         _fmt(v["dm_p_mae"]), stars(v["dm_p_mae"])]
        w.writerow(line)
    return out.getvalue()


def report_table_csv(rows, metric="rmse", benchmarks=BENCHMARKS, scenarios=(1, 2, 3)):
    """Wide table: one row per model and l, a (benchmark) column pair per scenario, stars appended."""
    rel = f"rel_{metric}"
    pkey = "dm_p" if metric == "rmse" else "dm_p_mae"
    cells = {}
    for r in rows:
        cells[(r.model, r.l, r.scenario)] = r
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["model", "l"] + [f"m{j}_{b}" for j in scenarios for b in benchmarks])
    keys = sorted({(r.model, r.l) for r in rows if r.model not in benchmarks},
                  key=lambda k: (k[0], _key_l(k[1])))
    for model, l in keys:
        line = [model, _fmt(l)]
        for j in scenarios:
            r = cells.get((model, l, j))
            for b in benchmarks:
                v = r.versus.get(b) if r else None
                line.append("NA" if v is None else f"{v[rel]:.3f}{stars(v[pkey])}")
        w.writerow(line)
    return out.getvalue()


def benchmark_table_csv(rows, benchmarks=BENCHMARKS, scenarios=(1, 2, 3)):
    """Absolute RMSE/MAE of the benchmarks, and DFM relative to the naive model."""
    cells = {(r.model, r.scenario): r for r in rows if r.model in benchmarks}
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["row"] + [f"m{j}_{m}" for j in scenarios for m in ("rmse", "mae")])
    for b in benchmarks:
        line = [b]
        for j in scenarios:
            r = cells.get((b, j))
            line += ["NA", "NA"] if r is None else [f"{r.rmse:.3f}", f"{r.mae:.3f}"]
        w.writerow(line)
    if len(benchmarks) > 1:
        base, other = benchmarks[0], benchmarks[1]
        line = [f"{other}_relative"]
        for j in scenarios:
            r = cells.get((other, j))
            v = r.versus.get(base) if r else None
            line += (["NA", "NA"] if v is None else
                     [f"{v['rel_rmse']:.3f}{stars(v['dm_p'])}", f"{v['rel_mae']:.3f}{stars(v['dm_p_mae'])}"])
        w.writerow(line)
    return out.getvalue()
