"""Information sets, fixed-length regressor sequences and the rolling-window backtest."""

import csv
import io
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import benchmarks, data, models, training
from . import calendar as cal
from .errors import InsufficientDataError, NowcastError, ValidationError

log = logging.getLogger(__name__)

SCENARIOS = (1, 2, 3)
DEFAULT_LENGTHS = (8, 18, 36, 48)
BENCHMARK_IDS = ("naive", "dfm")
RECORD_HEADER = ["quarter", "scenario", "model", "l", "nowcast", "actual", "vintage", "mode"]
PSEUDO = "pseudo-real-time"
REAL = "real-time"


@dataclass
class SequenceDataset:
    X: np.ndarray                 # N x l x d
    y: np.ndarray                 # N (NaN where the target is unknown)
    quarters: np.ndarray
    scenario: int
    l: int
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.y)


def build_sequences(panel, target, scenario, l, quarters=None, require_target=True):
    """Pair each quarter's ``l``-month regressor window ending at ``m_j(q)`` with ``y_q``.

    ``panel`` must be free of missing values over the windows used; quarters whose
    window does not fit inside the panel are dropped.  ``quarters`` defaults to the
    target's quarters.
    """
    if l < 1:
        raise ValidationError("sequence length must be at least 1")
    qs = target.quarters if quarters is None else np.asarray(quarters, dtype=np.int64)
    X, y, kept = [], [], []
    for q in qs:
        q = int(q)
        end = cal.scenario_month(q, scenario)
        lo = end - l + 1 - panel.start
        hi = end - panel.start + 1
        if lo < 0 or hi > len(panel.calendar):
            continue
        window = panel.values[lo:hi]
        if np.isnan(window).any():
            continue
        yq = target.get(q, math.nan)
        if require_target and math.isnan(yq):
            continue
        X.append(window)
        y.append(yq)
        kept.append(q)
    if not kept:
        raise InsufficientDataError(
            f"no quarter has {l} months of regressor history for scenario {scenario}")
    return SequenceDataset(np.array(X), np.array(y, dtype=np.float64),
                           np.array(kept, dtype=np.int64), scenario, l, list(panel.names))


def lost_quarters(l, scenario=3):
    """Quarters at the start of the sample without a full window, data starting at the sample's first month."""
    return -(-(l + 3 - scenario) // 3) - 1


@dataclass
class NowcastRecord:
    quarter: int
    scenario: int
    model: str
    l: object                    # int, or None for benchmarks
    nowcast: float
    actual: object               # float or None
    vintage: str
    mode: str

    def row(self):
        return [cal.format_quarter(self.quarter), self.scenario, self.model,
                "NA" if self.l is None else self.l, repr(float(self.nowcast)),
                "NA" if self.actual is None else repr(float(self.actual)), self.vintage, self.mode]


def records_to_csv(records, stream=None):
    out = stream if stream is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    for r in records:
        w.writerow(r.row())
    if stream is None:
        return out.getvalue()


def records_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != RECORD_HEADER:
        raise ValidationError(f"records header must be {','.join(RECORD_HEADER)}")
    out = []
    for i, r in enumerate(reader, start=1):
        if not r:
            continue
        if len(r) != len(RECORD_HEADER):
            raise ValidationError(f"records row {i}: expected {len(RECORD_HEADER)} fields")
        q, j, model, l, now, act, vint, mode = r
        out.append(NowcastRecord(cal.parse_quarter(q), int(j), model,
                                 None if l in ("NA", "") else int(l), float(now),
                                 None if act in ("NA", "") else float(act), vint, mode))
    return out


def _split(value):
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [v.strip() for v in str(value).split(",") if v.strip()]


@dataclass
class RunConfig:
    data: str = ""
    gdp: str = ""
    vintage_dir: str = ""
    out: str = ""
    models: tuple = ("CNN1D", "naive", "dfm")
    lengths: tuple = (8,)
    scenarios: tuple = SCENARIOS
    eval_start: str = "2012Q1"
    eval_end: str = "2019Q4"
    train_start: str = "1960Q1"
    val_quarters: int = 8
    data_start: str = "1960-01"
    seed: int = 0
    seeds: tuple = ()             # explicit member seeds; empty = expand ``seed`` into n_seeds
    n_seeds: int = training.N_ENSEMBLE
    lam: float = 1e-3
    lr: float = 1e-3
    batch_size: int = 0
    max_epochs: int = 500
    patience: int = 25
    bottleneck_dim: int = 8
    hidden: tuple = ()
    channels: tuple = (16, 8)
    kernel_size: int = 3
    activation: str = ""
    ar_order: int = 6
    dfm_indicators: tuple = benchmarks.DFM_INDICATORS
    jobs: int = 1

    _KEYS = {"lambda": "lam", "seeds": "seeds"}

    def __post_init__(self):
        self.models = tuple(m if m in BENCHMARK_IDS else models.normalize_family(m)
                            for m in (x.lower() if x.lower() in BENCHMARK_IDS else x
                                      for x in _split(self.models)))
        self.lengths = tuple(int(v) for v in _split(self.lengths))
        self.scenarios = tuple(int(v) for v in _split(self.scenarios))
        if any(j not in SCENARIOS for j in self.scenarios):
            raise ValidationError("scenarios must be drawn from 1, 2, 3")
        self.seeds = tuple(int(v) for v in _split(self.seeds))
        self.hidden = tuple(int(v) for v in _split(self.hidden))
        self.channels = tuple(int(v) for v in _split(self.channels))
        self.dfm_indicators = tuple(_split(self.dfm_indicators))
        for name in ("val_quarters", "seed", "n_seeds", "batch_size", "max_epochs", "patience",
                     "bottleneck_dim", "kernel_size", "ar_order", "jobs"):
            setattr(self, name, int(getattr(self, name)))
        self.lam, self.lr = float(self.lam), float(self.lr)
        for name in ("eval_start", "eval_end", "train_start"):
            setattr(self, name, cal.format_quarter(cal.parse_quarter(getattr(self, name))))
        self.data_start = cal.format_month(cal.parse_month(self.data_start))
        if self.eval_start_q > self.eval_end_q:
            raise ValidationError("eval_start is after eval_end")
        if self.train_quarters < 1:
            raise ValidationError("training window is empty")

    @property
    def eval_start_q(self):
        return cal.parse_quarter(self.eval_start)

    @property
    def eval_end_q(self):
        return cal.parse_quarter(self.eval_end)

    @property
    def train_quarters(self):
        """Fixed length of the rolling training window, set by the initial window."""
        return self.eval_start_q - self.val_quarters - cal.parse_quarter(self.train_start)

    @property
    def data_start_m(self):
        return cal.parse_month(self.data_start)

    @property
    def mode(self):
        return REAL if self.vintage_dir else PSEUDO

    def member_seeds(self):
        return self.seeds if self.seeds else training.expand_seeds(self.seed, self.n_seeds)

    def train_config(self):
        return training.TrainConfig(lam=self.lam, lr=self.lr, batch_size=self.batch_size,
                                    max_epochs=self.max_epochs, patience=self.patience,
                                    seeds=self.member_seeds())

    def model_spec(self, family, input_dim, l):
        return models.ModelSpec(family, input_dim, l, self.bottleneck_dim, self.hidden,
                                self.channels, self.kernel_size, self.activation)

    def windows(self, q):
        """``(train_first, train_last, val_first, val_last)`` quarters for evaluation quarter ``q``."""
        val_last = q - 1
        val_first = q - self.val_quarters
        train_last = val_first - 1
        return train_last - self.train_quarters + 1, train_last, val_first, val_last

    def eval_quarters(self):
        return list(range(self.eval_start_q, self.eval_end_q + 1))

    @classmethod
    def from_text(cls, text, **overrides):
        values = {}
        names = {f.name for f in fields(cls)}
        for i, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {i}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            key = "lam" if key == "lambda" else key
            if key not in names:
                raise ValidationError(f"config line {i}: unknown key {key!r}")
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides):
        """Read a config file; relative input paths in it resolve against the file's directory."""
        with open(path) as fh:
            cfg = cls.from_text(fh.read())
        base = os.path.dirname(os.path.abspath(path))
        for key in ("data", "gdp", "vintage_dir"):
            v = getattr(cfg, key)
            if v and not os.path.isabs(v):
                setattr(cfg, key, os.path.join(base, v))
        return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})

    def to_text(self, resolve_seeds=True):
        lines = []
        for f in fields(self):
            if f.name in ("out", "jobs"):
                continue
            v = getattr(self, f.name)
            if f.name == "seeds" and resolve_seeds:
                v = self.member_seeds()
            key = "lambda" if f.name == "lam" else f.name
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


_VINTAGE_RE = re.compile(r"(\d{4})-(\d{2})")


def vintage_files(directory):
    """Map month stamps to FRED-MD vintage files named like ``2012-01.csv``."""
    out = {}
    for name in sorted(os.listdir(directory)):
        m = _VINTAGE_RE.search(name)
        if m and name.lower().endswith(".csv"):
            out[cal.month(int(m.group(1)), int(m.group(2)))] = os.path.join(directory, name)
    if not out:
        raise ValidationError(f"no vintage files in {directory}")
    return out


def _late_starters(panel, first_month):
    """Columns whose transformed series is still missing at ``first_month``."""
    t = data.transform_panel(panel)
    if first_month < t.start or first_month > t.end:
        raise InsufficientDataError(f"panel does not cover {cal.format_month(first_month)}")
    row = t.values[t.row(first_month)]
    return {n for n, v in zip(t.names, row) if np.isnan(v)}


@dataclass
class RunContext:
    """Everything a worker needs to produce the records of one quarter."""

    config: RunConfig
    target: data.QuarterlySeries
    columns: list
    final: object = None          # MonthlyPanel in pseudo-real-time mode
    vintages: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config, panel=None, target=None):
        target = target if target is not None else data.read_gdp(config.gdp)
        vintages = {}
        if config.vintage_dir:
            vintages = vintage_files(config.vintage_dir)
            needed = {cal.scenario_month(q, j) for q in config.eval_quarters() for j in config.scenarios}
            missing = sorted(needed - set(vintages))
            if missing:
                raise ValidationError("missing vintages: " + ", ".join(cal.format_month(m) for m in missing))
            panels = [data.read_fred_md(vintages[m]) for m in sorted(needed)]
        else:
            panel = panel if panel is not None else data.read_fred_md(config.data)
            panels = [panel]
        columns = _common_columns(panels, config.data_start_m)
        for name in config.dfm_indicators:
            if "dfm" in config.models and name not in columns:
                raise ValidationError(f"DFM indicator {name} not available in every panel")
        return cls(config, target, columns, panels[0] if not config.vintage_dir else None,
                   {m: p for m, p in vintages.items()
                    if m in {cal.scenario_month(q, j) for q in config.eval_quarters()
                             for j in config.scenarios}})

    def raw_panel(self, q, j):
        """Untransformed panel for quarter ``q`` under scenario ``j``, cut at ``m_j(q)``."""
        m = cal.scenario_month(q, j)
        if self.final is not None:
            panel, stamp = self.final, "final"
        else:
            panel, stamp = data.read_fred_md(self.vintages[m]), cal.format_month(m)
        panel = panel.between(None, m)
        if panel.end < m:
            panel = panel.extend_to(m)
        return panel.select(self.columns), stamp


def _common_columns(panels, first_month):
    names = list(panels[0].names)
    common = set(names)
    late = set()
    for p in panels:
        common &= set(p.names)
        late |= _late_starters(p, first_month)
    dropped = sorted((set().union(*(p.names for p in panels)) - common) | (late & common))
    if dropped:
        log.warning("dropping %d column(s) not available in every panel from %s: %s",
                    len(dropped), cal.format_month(first_month), ", ".join(dropped))
    cols = [n for n in names if n in common and n not in late]
    if not cols:
        raise ValidationError("no indicator is available in every panel")
    return cols


@dataclass
class Cell:
    """Prepared data for one (quarter, scenario)."""

    quarter: int
    scenario: int
    vintage: str
    transformed: data.MonthlyPanel
    filled: data.MonthlyPanel
    config: RunConfig
    target: data.QuarterlySeries

    def windows(self):
        return self.config.windows(self.quarter)

    def fit_range(self):
        first, last, _, _ = self.windows()
        lo = max(cal.last_month(first) - 2, self.filled.start)
        return lo, cal.last_month(last)

    def datasets(self, l):
        """Standardised (train, validation, test) sequence sets for length ``l``."""
        first, last, vfirst, vlast = self.windows()
        scaled, scaling = data.standardize(self.filled, self.fit_range())
        train = build_sequences(scaled, self.target.between(first, last), self.scenario, l)
        val = build_sequences(scaled, self.target.between(vfirst, vlast), self.scenario, l)
        test = build_sequences(scaled, self.target, self.scenario, l, quarters=[self.quarter],
                               require_target=False)
        return train, val, test, scaling

    def actual(self):
        return self.target.get(self.quarter)


def prepare_cell(ctx, q, j):
    cfg = ctx.config
    raw, stamp = ctx.raw_panel(q, j)
    transformed = data.transform_panel(raw).between(cfg.data_start_m, None)
    filled = data.fill_panel(transformed, cfg.ar_order)
    return Cell(q, j, stamp, transformed, filled, cfg, ctx.target)


def _nn_records(ctx, cell, family, l, jobs=1):
    cfg = ctx.config
    train, val, test, _ = cell.datasets(l)
    spec = cfg.model_spec(family, train.X.shape[2], l)
    members, _ = training.train_ensemble(spec, train, val, cfg.train_config(), jobs=jobs)
    return training.ensemble_nowcast(members, test.X[0])


def _dfm_value(cell):
    cfg = cell.config
    first, last, _, _ = cell.windows()
    lo = max(cal.last_month(first) - 2, cell.transformed.start)
    sub = cell.transformed.select(list(cfg.dfm_indicators)).between(lo, None)
    return benchmarks.dfm_nowcast(sub, cell.target.between(first, last), cell.quarter).value


def quarter_records(ctx, q):
    """All records for evaluation quarter ``q``; failing cells are logged and skipped."""
    cfg = ctx.config
    out = []
    for j in cfg.scenarios:
        try:
            cell = prepare_cell(ctx, q, j)
        except NowcastError as exc:
            log.error("%s scenario %d: data preparation failed: %s", cal.format_quarter(q), j, exc)
            continue
        actual = cell.actual()

        def emit(model, l, fn):
            try:
                value = fn()
            except (NowcastError, np.linalg.LinAlgError) as exc:
                log.error("%s scenario %d %s l=%s failed: %s", cal.format_quarter(q), j, model, l, exc)
                return
            out.append(NowcastRecord(q, j, model, l, float(value), actual, cell.vintage, cfg.mode))

        for model in cfg.models:
            if model == "naive":
                first, last, _, _ = cell.windows()
                emit("naive", None,
                     lambda: benchmarks.naive_nowcast(cell.target.between(first, last).values))
            elif model == "dfm":
                emit("dfm", None, lambda: _dfm_value(cell))
            else:
                for l in cfg.lengths:
                    emit(model, l, lambda: _nn_records(ctx, cell, model, l))
        log.info("%s scenario %d done", cal.format_quarter(q), j)
    return out


def _quarter_task(args):
    ctx, q = args
    return quarter_records(ctx, q)


def _limit_threads():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def roll(config, panel=None, target=None, ctx=None):
    """Run the rolling-window backtest and return the records, ordered deterministically."""
    ctx = ctx or RunContext.create(config, panel, target)
    quarters = config.eval_quarters()
    first, _, _, _ = config.windows(quarters[0])
    if ctx.target.quarters.size == 0 or first < ctx.target.quarters[0] - 4:
        log.warning("target history starts after the first training window")
    if config.jobs > 1 and len(quarters) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs, initializer=_limit_threads) as pool:
            chunks = list(pool.map(_quarter_task, [(ctx, q) for q in quarters]))
    else:
        chunks = [quarter_records(ctx, q) for q in quarters]
    order = {m: i for i, m in enumerate(config.models)}
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.quarter, r.scenario, order.get(r.model, 99), -1 if r.l is None else r.l))
    return records
