"""Loading FRED-MD style vintages and the GDP series, transform codes, gap filling and scaling."""

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import calendar as cal
from .errors import DomainError, InsufficientDataError, ParseError, ValidationError

log = logging.getLogger(__name__)

NA = "NA"
_MISSING_TOKENS = {"", "na", "nan", "."}

# Rows lost at the front of a series by each transform code.
TCODE_LAG = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


@dataclass
class MonthlyPanel:
    calendar: np.ndarray          # month ordinals, consecutive
    names: list
    tcodes: np.ndarray
    values: np.ndarray            # (months, indicators), NaN = missing
    transformed: bool = False

    def __post_init__(self):
        self.calendar = np.asarray(self.calendar, dtype=np.int64)
        self.tcodes = np.asarray(self.tcodes, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.names = list(self.names)
        if self.values.ndim != 2 or self.values.shape != (len(self.calendar), len(self.names)):
            raise ValidationError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.calendar)} months x {len(self.names)} indicators")
        if len(self.tcodes) != len(self.names):
            raise ValidationError("tcodes length must equal indicator count")
        bad = [n for n, c in zip(self.names, self.tcodes) if c not in TCODE_LAG]
        if bad:
            raise ValidationError(f"transform code outside 1..7 for column(s) {bad}")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("duplicate indicator names")
        if len(self.calendar) > 1:
            steps = np.diff(self.calendar)
            if np.any(steps <= 0):
                raise ValidationError("calendar must be strictly increasing")
            if np.any(steps != 1):
                k = int(np.argmax(steps != 1))
                raise ValidationError(
                    f"calendar gap after {cal.format_month(self.calendar[k])}")

    @property
    def missing(self):
        return np.isnan(self.values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def start(self):
        return int(self.calendar[0])

    @property
    def end(self):
        return int(self.calendar[-1])

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def select(self, names):
        idx = [self.names.index(n) for n in names]
        return replace(self, names=[self.names[i] for i in idx], tcodes=self.tcodes[idx],
                       values=self.values[:, idx])

    def between(self, first=None, last=None):
        """Rows with ``first <= month <= last`` (either bound optional)."""
        keep = np.ones(len(self.calendar), dtype=bool)
        if first is not None:
            keep &= self.calendar >= first
        if last is not None:
            keep &= self.calendar <= last
        return replace(self, calendar=self.calendar[keep], values=self.values[keep])

    def extend_to(self, last):
        """Append all-missing rows so the panel ends at month ``last``."""
        extra = last - self.end
        if extra <= 0:
            return self
        cal_ext = np.arange(self.end + 1, last + 1)
        vals = np.vstack([self.values, np.full((extra, len(self.names)), np.nan)])
        return replace(self, calendar=np.concatenate([self.calendar, cal_ext]), values=vals)

    def row(self, m):
        i = m - self.start
        if not 0 <= i < len(self.calendar):
            raise KeyError(cal.format_month(m))
        return i

    def to_csv(self, stream=None):
        """Write in the FRED-MD layout with an explicit NA token; returns the text if no stream."""
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["sasdate"] + self.names)
        w.writerow(["Transform:"] + [str(int(c)) for c in self.tcodes])
        for m, row in zip(self.calendar, self.values):
            w.writerow([_fred_date(m)] + [NA if math.isnan(v) else repr(float(v)) for v in row])
        if stream is None:
            return out.getvalue()


def _fred_date(m):
    return f"{m % 12 + 1}/1/{m // 12}"


@dataclass
class QuarterlySeries:
    quarters: np.ndarray
    values: np.ndarray
    name: str = field(default="GDP")

    def __post_init__(self):
        self.quarters = np.asarray(self.quarters, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.quarters.shape != self.values.shape:
            raise ValidationError("quarters and values must have equal length")
        if len(self.quarters) > 1 and np.any(np.diff(self.quarters) <= 0):
            raise ValidationError("quarters must be strictly increasing")

    def __len__(self):
        return len(self.quarters)

    def between(self, first=None, last=None):
        keep = np.ones(len(self.quarters), dtype=bool)
        if first is not None:
            keep &= self.quarters >= first
        if last is not None:
            keep &= self.quarters <= last
        return QuarterlySeries(self.quarters[keep], self.values[keep], self.name)

    def get(self, q, default=None):
        i = np.searchsorted(self.quarters, q)
        if i < len(self.quarters) and self.quarters[i] == q:
            return float(self.values[i])
        return default

    def to_csv(self, stream=None):
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["quarter", self.name])
        for q, v in zip(self.quarters, self.values):
            w.writerow([cal.format_quarter(q), NA if math.isnan(v) else repr(float(v))])
        if stream is None:
            return out.getvalue()


def _cell(text, row):
    t = text.strip()
    if t.lower() in _MISSING_TOKENS:
        return np.nan
    try:
        return float(t)
    except ValueError:
        raise ParseError(f"non-numeric value {t!r}", row=row) from None


def parse_fred_md(text):
    """Parse a FRED-MD vintage: header of mnemonics, a transform-code row, then month rows.

    Empty cells (and ``NA``) become missing.  Row indices in errors count from 0 at the header.
    """
    if not isinstance(text, str):
        text = text.read()
    rows = [(i, r) for i, r in enumerate(csv.reader(io.StringIO(text)))
            if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ParseError("expected a header row and a transform-code row")
    _, header = rows[0]
    names = [h.strip() for h in header[1:]]
    while names and not names[-1]:
        names.pop()
    k = len(names)

    tc_row, tc = rows[1]
    tcodes = []
    for name, c in zip(names, _pad(tc[1:], k)):
        try:
            code = float(c)
        except ValueError:
            raise ParseError(f"bad transform code {c!r} for column {name}", row=tc_row) from None
        if code != int(code) or int(code) not in TCODE_LAG:
            raise ValidationError(f"transform code {c.strip()} outside 1..7 for column {name}")
        tcodes.append(int(code))

    months, values = [], []
    for i, r in rows[2:]:
        try:
            m = cal.parse_month(r[0])
        except (ValueError, IndexError):
            raise ParseError(f"malformed date {r[0]!r}", row=i) from None
        months.append(m)
        values.append([_cell(c, i) for c in _pad(r[1:], k)])

    if len(set(months)) != len(months):
        seen = set()
        dup = next(m for m in months if m in seen or seen.add(m))
        raise ValidationError(f"duplicate month {cal.format_month(dup)}")
    vals = np.array(values, dtype=np.float64).reshape(len(months), k)
    return MonthlyPanel(np.array(months, dtype=np.int64), names, tcodes, vals)


def _pad(cells, k):
    cells = list(cells[:k])
    return cells + [""] * (k - len(cells))


def read_fred_md(path):
    with open(path, newline="") as fh:
        return parse_fred_md(fh.read())


def parse_gdp(text):
    """Parse a two-column ``date,value`` level file into (quarters, levels)."""
    if not isinstance(text, str):
        text = text.read()
    quarters, levels = [], []
    for i, r in enumerate(csv.reader(io.StringIO(text))):
        if not r or not any(c.strip() for c in r):
            continue
        if i == 0 and not _looks_numeric(r[1] if len(r) > 1 else ""):
            continue
        if len(r) < 2:
            raise ParseError("expected two columns", row=i)
        try:
            q = cal.parse_quarter(r[0])
        except ValueError:
            raise ParseError(f"malformed date {r[0]!r}", row=i) from None
        quarters.append(q)
        levels.append(_cell(r[1], i))
    if len(set(quarters)) != len(quarters):
        raise ValidationError("duplicate quarter in GDP file")
    return np.array(quarters, dtype=np.int64), np.array(levels, dtype=np.float64)


def _looks_numeric(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_gdp(path):
    with open(path, newline="") as fh:
        quarters, levels = parse_gdp(fh.read())
    keep = ~np.isnan(levels)
    return gdp_growth(levels[keep], quarters[keep])


def apply_tcode(series, code):
    """Apply a FRED-MD transform code (1..7) to one series; leading rows lacking lags become NaN."""
    x = np.asarray(series, dtype=np.float64)
    if code not in TCODE_LAG:
        raise ValidationError(f"transform code {code} outside 1..7")
    if code in (4, 5, 6):
        bad = np.flatnonzero(~np.isnan(x) & (x <= 0))
        if bad.size:
            raise DomainError("log transform of non-positive value", index=int(bad[0]))
        x = np.log(x)
    if code in (1, 4):
        return x.copy()
    if code in (2, 5):
        return _diff(x)
    if code in (3, 6):
        return _diff(_diff(x))
    prev = x[:-1]
    zero = np.flatnonzero(prev == 0)
    if zero.size:
        raise DomainError("growth rate with zero denominator", index=int(zero[0]) + 1)
    growth = np.full_like(x, np.nan)
    growth[1:] = x[1:] / prev - 1.0
    return _diff(growth)


def _diff(x):
    out = np.full_like(x, np.nan)
    out[1:] = x[1:] - x[:-1]
    return out


def transform_panel(panel):
    if panel.transformed:
        raise ValidationError("panel is already transformed")
    cols = []
    for j, (name, code) in enumerate(zip(panel.names, panel.tcodes)):
        try:
            cols.append(apply_tcode(panel.values[:, j], int(code)))
        except DomainError as exc:
            raise DomainError(f"column {name}: {exc}") from None
    vals = np.column_stack(cols) if cols else panel.values.copy()
    return replace(panel, values=vals, transformed=True)


def _longest_run(present):
    best, best_start, run, start = 0, 0, 0, 0
    for i, p in enumerate(present):
        if p:
            if run == 0:
                start = i
            run += 1
            if run > best:
                best, best_start = run, start
        else:
            run = 0
    return best_start, best


def fit_ar(x, max_order):
    """OLS AR(p) fit with p chosen by AIC over 0..max_order on a common sample.

    Returns ``(intercept, coefficients)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n_eff = len(x) - max_order
    if n_eff < 2:
        raise InsufficientDataError(f"need at least {max_order + 2} observations, got {len(x)}")
    y = x[max_order:]
    scale = max(float(np.var(x)), 1.0) * 1e-14 + 1e-300
    best = None
    for p in range(max_order + 1):
        if n_eff < p + 2:
            break
        X = np.column_stack([np.ones(n_eff)] + [x[max_order - i:len(x) - i] for i in range(1, p + 1)])
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        sigma2 = max(float(np.mean((y - X @ beta) ** 2)), scale)
        aic = n_eff * math.log(sigma2) + 2 * (p + 1)
        if best is None or aic < best[0] - 1e-9:
            best = (aic, beta)
    beta = best[1]
    return float(beta[0]), beta[1:]


def fill_missing_ar(series, max_order=6):
    """Replace interior and trailing gaps by iterated one-step AR forecasts.

    The AR model is fit on the longest contiguous stretch of present values.  Leading
    missing values (before the first observation) are left as NaN; present values are
    never altered.
    """
    x = np.asarray(series, dtype=np.float64)
    present = ~np.isnan(x)
    if not present.any():
        raise InsufficientDataError("series is entirely missing")
    if present.all():
        return x.copy()
    first = int(np.argmax(present))
    start, length = _longest_run(present)
    if length < max_order + 2:
        raise InsufficientDataError(
            f"longest observed stretch has {length} values, need {max_order + 2}")
    c, phi = fit_ar(x[start:start + length], max_order)
    p = len(phi)
    mean = c / (1.0 - phi.sum()) if p and abs(1.0 - phi.sum()) > 1e-8 else float(np.nanmean(x))
    out = x.copy()
    for t in range(first, len(x)):
        if present[t]:
            continue
        lags = [out[t - i] if t - i >= first else mean for i in range(1, p + 1)]
        out[t] = c + float(np.dot(phi, lags))
    return out


def fill_panel(panel, max_order=6):
    cols = []
    for j, name in enumerate(panel.names):
        try:
            cols.append(fill_missing_ar(panel.values[:, j], max_order))
        except InsufficientDataError as exc:
            raise InsufficientDataError(f"column {name}: {exc}") from None
    return replace(panel, values=np.column_stack(cols))


def gdp_growth(levels, quarters):
    """Quarter-on-quarter growth in percent, ``100 * diff(log level)``; the first quarter is dropped."""
    lv = np.asarray(levels, dtype=np.float64)
    qs = np.asarray(quarters, dtype=np.int64)
    if lv.shape != qs.shape:
        raise ValidationError("levels and quarters must have equal length")
    bad = np.flatnonzero(lv <= 0)
    if bad.size:
        raise DomainError("non-positive GDP level", index=int(bad[0]))
    if len(lv) < 2:
        return QuarterlySeries(qs[:0], lv[:0])
    return QuarterlySeries(qs[1:], 100.0 * np.diff(np.log(lv)))


@dataclass
class Scaling:
    names: list
    location: np.ndarray
    scale: np.ndarray

    def apply(self, panel):
        if list(panel.names) != list(self.names):
            raise ValidationError("panel columns do not match the fitted scaling")
        return replace(panel, values=(panel.values - self.location) / self.scale)


def standardize(panel, fit_range):
    """Z-score each column with mean and sample sd computed only on ``fit_range`` (inclusive months)."""
    first, last = fit_range
    if first < panel.start or last > panel.end or first > last:
        raise ValidationError(
            f"fit range {cal.format_month(first)}..{cal.format_month(last)} outside panel calendar")
    rows = panel.values[panel.row(first):panel.row(last) + 1]
    counts = np.sum(~np.isnan(rows), axis=0)
    for name, n in zip(panel.names, counts):
        if n < 2:
            raise InsufficientDataError(f"column {name} has fewer than 2 values in the fit range")
    loc = np.nanmean(rows, axis=0)
    sd = np.nanstd(rows, axis=0, ddof=1)
    for name, s, m in zip(panel.names, sd, loc):
        if not s > 1e-12 * max(1.0, abs(m)):
            raise ValidationError(f"column {name} has zero variance in the fit range")
    scaling = Scaling(list(panel.names), loc, sd)
    return scaling.apply(panel), scaling
