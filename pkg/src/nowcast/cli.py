"""Batch command line: ingest, diagnose, backtest, evaluate, attribute, synth."""

import argparse
import logging
import os
import sys

import numpy as np

from . import attribution, data, diagnostics, evaluation, harness, synth, training
from . import calendar as cal
from .errors import NowcastError

log = logging.getLogger("nowcast")

RECORDS = "records.csv"
MANIFEST = "manifest.cfg"


class UsageError(NowcastError):
    pass


def _setup_logging():
    level = os.environ.get("NOWCAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _run_flags(p):
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--data", help="FRED-MD style monthly panel")
    p.add_argument("--gdp", help="quarterly GDP level file (date,value)")
    p.add_argument("--vintage-dir", help="directory of monthly vintages named YYYY-MM.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--models", help="comma list, e.g. CNN1D,LSTM,naive,dfm")
    p.add_argument("--lengths", help="comma list of sequence lengths")
    p.add_argument("--scenarios", help="comma list drawn from 1,2,3")
    p.add_argument("--eval-start", help="first evaluation quarter, e.g. 2012Q1")
    p.add_argument("--eval-end", help="last evaluation quarter")
    p.add_argument("--seeds", help="ensemble size, or a comma list of explicit member seeds")
    p.add_argument("--lambda", dest="lam", help="L1 weight on the bottleneck")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: CPU count)")


def _parser():
    ap = argparse.ArgumentParser(prog="nowcast", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="transform and gap-fill a monthly panel")
    p.add_argument("--data", required=True)
    p.add_argument("--gdp")
    p.add_argument("--data-start", default="1960-01")
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="descriptive statistics, ACF/PACF and quarterly grouping")
    p.add_argument("--gdp", required=True)
    p.add_argument("--periods", default="1960Q1:2024Q2",
                   help="comma list of FIRST:LAST quarter spans")
    p.add_argument("--max-lag", type=int, default=20)
    p.add_argument("--out", required=True)

    p = sub.add_parser("backtest", help="rolling-window nowcasting backtest")
    _run_flags(p)

    p = sub.add_parser("evaluate", help="metrics, DM tests and RCSSE from a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attribute", help="feature attribution of the ensemble nowcasts")
    _run_flags(p)
    p.add_argument("--reference", choices=("background", "mean"), default="background")
    p.add_argument("--top-k", type=int, default=attribution.TOP_K)

    p = sub.add_parser("synth", help="write the synthetic fixture")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    return ap


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def _require_file(path, what):
    if not path:
        raise UsageError(f"no {what} given")
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def run_config(args):
    overrides = dict(data=args.data, gdp=args.gdp, vintage_dir=args.vintage_dir, out=args.out,
                     models=args.models, lengths=args.lengths, scenarios=args.scenarios,
                     eval_start=args.eval_start, eval_end=args.eval_end, lam=args.lam)
    if args.seeds:
        parts = [s for s in args.seeds.split(",") if s.strip()]
        if len(parts) == 1:
            overrides.update(n_seeds=parts[0], seeds="")
        else:
            overrides["seeds"] = args.seeds
    overrides["jobs"] = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    if args.config:
        cfg = harness.RunConfig.from_file(_require_file(args.config, "config file"), **overrides)
    else:
        cfg = harness.RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    if not cfg.vintage_dir:
        _require_file(cfg.data, "data file")
    elif not os.path.isdir(cfg.vintage_dir):
        raise UsageError(f"vintage directory not found: {cfg.vintage_dir}")
    _require_file(cfg.gdp, "GDP file")
    return cfg


def cmd_ingest(args):
    out = _outdir(args.out)
    panel = data.read_fred_md(_require_file(args.data, "data file"))
    start = cal.parse_month(args.data_start)
    t = data.transform_panel(panel).between(start, None)
    late = [n for n, v in zip(t.names, t.values[0]) if np.isnan(v)] if len(t.calendar) else []
    if late:
        log.warning("dropping %d column(s) starting after %s: %s", len(late), args.data_start,
                    ", ".join(late))
        t = t.select([n for n in t.names if n not in late])
    _write(os.path.join(out, "transformed.csv"), t.to_csv())
    _write(os.path.join(out, "filled.csv"), data.fill_panel(t).to_csv())
    if args.gdp:
        _write(os.path.join(out, "gdp_growth.csv"), data.read_gdp(_require_file(args.gdp, "GDP file")).to_csv())


def _periods(text):
    out = []
    for span in text.split(","):
        first, sep, last = span.strip().partition(":")
        if not sep:
            raise UsageError(f"period {span!r} must be FIRST:LAST")
        out.append((span.strip(), cal.parse_quarter(first), cal.parse_quarter(last)))
    return out


def cmd_diagnose(args):
    out = _outdir(args.out)
    y = data.read_gdp(_require_file(args.gdp, "GDP file"))
    rows, acfs, groups = [], [], []
    for label, first, last in _periods(args.periods):
        s = y.between(first, last)
        rows.append((label, diagnostics.describe(s)))
        max_lag = min(args.max_lag, (len(s) - 1) // 2)
        rho, pacf = diagnostics.acf_pacf(s.values, max_lag)
        acfs.append(diagnostics.acf_csv(label, rho, pacf))
        groups.append(diagnostics.grouping_csv(label, s))
    _write(os.path.join(out, "descriptive.csv"), diagnostics.descriptive_csv(rows))
    _write(os.path.join(out, "acf.csv"), _concat(acfs))
    _write(os.path.join(out, "grouping.csv"), _concat(groups))


def _concat(tables):
    """Join CSV texts that share a header."""
    head, *rest = tables
    return head + "".join(t.split("\n", 1)[1] for t in rest)


def _manifest_text(cfg, args):
    lines = [f"# config: {args.config or ''}", f"# mode: {cfg.mode}"]
    return "\n".join(lines) + "\n" + cfg.to_text()


def cmd_backtest(args):
    cfg = run_config(args)
    out = _outdir(cfg.out)
    _write(os.path.join(out, MANIFEST), _manifest_text(cfg, args))
    records = harness.roll(cfg)
    if not records:
        raise NowcastError("backtest produced no records")
    _write(os.path.join(out, RECORDS), harness.records_to_csv(records))


def cmd_evaluate(args):
    out = _outdir(args.out)
    with open(_require_file(args.records, "records file")) as fh:
        records = harness.records_from_csv(fh.read())
    present = {r.model for r in records}
    bench = tuple(b for b in evaluation.BENCHMARKS if b in present)
    rows = evaluation.evaluate(records, bench)
    _write(os.path.join(out, "evaluation.csv"), evaluation.report_long_csv(rows, bench))
    scen = tuple(sorted({r.scenario for r in records}))
    for metric in ("rmse", "mae"):
        _write(os.path.join(out, f"table_{metric}.csv"),
               evaluation.report_table_csv(rows, metric, bench, scen))
    _write(os.path.join(out, "benchmarks.csv"), evaluation.benchmark_table_csv(rows, bench, scen))
    lines = ["model,l,scenario,benchmark,quarter,rcsse"]
    for model, l, j, b, q, v in evaluation.rcsse_paths(records, bench):
        lines.append(f"{model},{'NA' if l is None else l},{j},{b},{cal.format_quarter(q)},{v!r}")
    _write(os.path.join(out, "rcsse.csv"), "\n".join(lines) + "\n")


def attribute_quarter(ctx, q, family, l, scenario, reference="background"):
    """Train the ensemble for one cell and attribute its nowcast; returns (map, test sequence, training means)."""
    cfg = ctx.config
    cell = harness.prepare_cell(ctx, q, scenario)
    train, val, test, _ = cell.datasets(l)
    spec = cfg.model_spec(family, train.X.shape[2], l)
    members, _ = training.train_ensemble(spec, train, val, cfg.train_config())
    amap = attribution.attribute_ensemble(members, test.X[0], train.X, reference, train.names, q)
    return amap, test.X[0], train.X.reshape(-1, train.X.shape[2]).mean(axis=0)


def cmd_attribute(args):
    cfg = run_config(args)
    out = _outdir(cfg.out)
    families = [m for m in cfg.models if m not in harness.BENCHMARK_IDS]
    if not families:
        raise UsageError("attribute needs a network family in --models")
    family, l, j = families[0], cfg.lengths[0], cfg.scenarios[-1]
    ctx = harness.RunContext.create(cfg)
    maps, swarm = [], []
    for q in cfg.eval_quarters():
        try:
            amap, seq, means = attribute_quarter(ctx, q, family, l, j, args.reference)
        except NowcastError as exc:
            log.error("%s: attribution failed: %s", cal.format_quarter(q), exc)
            continue
        log.info("%s additivity gap %.3g", cal.format_quarter(q), amap.additivity_gap())
        maps.append(amap)
        swarm.extend(attribution.beeswarm_rows(amap, seq, means))
    if not maps:
        raise NowcastError("no quarter could be attributed")
    _write(os.path.join(out, MANIFEST), _manifest_text(cfg, args))
    _write(os.path.join(out, "local_importance.csv"), attribution.local_importance_csv(maps, args.top_k))
    _write(os.path.join(out, "beeswarm.csv"), attribution.beeswarm_csv(swarm))
    lines = ["quarter,prediction,base,total"]
    for m in maps:
        lines.append(f"{cal.format_quarter(m.quarter)},{m.prediction!r},{m.base!r},{m.total!r}")
    _write(os.path.join(out, "attribution_summary.csv"), "\n".join(lines) + "\n")


def cmd_synth(args):
    synth.write_fixture(_outdir(args.out), args.seed)


COMMANDS = {"ingest": cmd_ingest, "diagnose": cmd_diagnose, "backtest": cmd_backtest,
            "evaluate": cmd_evaluate, "attribute": cmd_attribute, "synth": cmd_synth}


def main(argv=None):
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (NowcastError, OSError, ValueError) as exc:
        print(f"nowcast {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
