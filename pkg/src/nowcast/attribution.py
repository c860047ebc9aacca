"""Additive feature attribution for the trained networks.

Relevance is propagated from the nowcast back to every input cell with the
rescale rule (see :mod:`nowcast.autodiff`), averaged over a background set of
reference sequences.  With the training set as background this is Deep SHAP:
the base value is the mean nowcast over the background and the attributions
sum to the difference between the nowcast and that base value.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import calendar as cal
from . import models
from .errors import NowcastError, ShapeError, ValidationError

TOP_K = 10
OTHER = "other features"


@dataclass
class AttributionMap:
    phi: np.ndarray               # l x d relevance
    base: float
    prediction: float
    names: list = field(default_factory=list)
    quarter: object = None
    model: str = ""

    @property
    def total(self):
        return float(self.phi.sum())

    def additivity_gap(self):
        return abs(self.total + self.base - self.prediction)


def background_expectation(model, background):
    """Mean nowcast over the background sequences."""
    B = np.asarray(background, dtype=np.float64)
    if B.ndim == 2:
        B = B[None]
    if B.shape[0] == 0:
        raise ValidationError("empty background set")
    return float(np.mean(models.predict(model, B)))


def rescale_multipliers(model, X, R):
    """Per-cell multipliers ``m`` with ``f(X) - f(R) = sum(m * (X - R))`` row by row."""
    spec = model.spec
    params = {k: ad.Tensor(v) for k, v in model.params.items()}
    xt = ad.Tensor(X, requires_grad=True)
    rt = ad.Tensor(R, requires_grad=True)
    out = models.forward_graph(spec, params, xt)
    out_ref = models.forward_graph(spec, params, rt)
    if not (np.all(np.isfinite(out.data)) and np.all(np.isfinite(out_ref.data))):
        raise NowcastError("non-finite activations during attribution")
    mult = ad.rescale_backward(out, out_ref, seed=np.ones(out.shape))
    return mult[xt], out.data, out_ref.data


def attribute(model, sequence, background, reference="background", names=None, quarter=None):
    """Attribute one nowcast to the ``l x d`` cells of its input sequence.

    ``reference="background"`` averages single-reference attributions over every
    background sequence (base value = mean background nowcast).
    ``reference="mean"`` uses the mean background sequence as the only reference
    (base value = nowcast at that mean sequence).
    """
    x = np.asarray(sequence, dtype=np.float64)
    spec = model.spec
    if x.shape != (spec.seq_len, spec.input_dim):
        raise ShapeError(f"expected a ({spec.seq_len}, {spec.input_dim}) sequence, got {x.shape}")
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim == 2:
        bg = bg[None]
    if bg.shape[0] == 0:
        raise ValidationError("empty background set")
    if reference == "mean":
        bg = bg.mean(axis=0, keepdims=True)
    elif reference != "background":
        raise ValidationError(f"unknown reference mode {reference!r}")
    X = np.broadcast_to(x, bg.shape).copy()
    mult, fx, fr = rescale_multipliers(model, X, bg)
    phi = np.mean(mult * (X - bg), axis=0)
    return AttributionMap(phi, float(np.mean(fr)), float(fx[0]), list(names or []), quarter,
                          spec.family)


def attribute_ensemble(members, sequence, background, reference="background", names=None,
                       quarter=None):
    """Average of the members' attribution maps (additive, since attributions are linear in f)."""
    if not members:
        raise ValidationError("empty ensemble")
    maps = [attribute(m, sequence, background, reference, names, quarter) for m in members]
    return AttributionMap(np.mean([m.phi for m in maps], axis=0),
                          float(np.mean([m.base for m in maps])),
                          float(np.mean([m.prediction for m in maps])),
                          list(names or []), quarter, members[0].spec.family)


def aggregate_time(amap):
    """Per-feature mean of the attributions over the timesteps (sums to total / l)."""
    phi = amap.phi if isinstance(amap, AttributionMap) else np.asarray(amap, dtype=np.float64)
    return phi.mean(axis=0)


def aggregate_feature_value(sequence, training_means):
    """Per-feature mean absolute deviation of the sequence from the training means."""
    x = np.asarray(sequence, dtype=np.float64)
    mu = np.asarray(training_means, dtype=np.float64)
    if x.ndim != 2 or mu.shape != (x.shape[1],):
        raise ShapeError(f"sequence {x.shape} and training means {mu.shape} do not match")
    return np.mean(np.abs(x - mu), axis=0)


def local_importance(amap, k=TOP_K):
    """Top-k features by absolute time-aggregated attribution, remainder summed into one row."""
    agg = aggregate_time(amap)
    names = amap.names or [f"x{i}" for i in range(len(agg))]
    order = sorted(range(len(agg)), key=lambda i: (-abs(agg[i]), i))
    rows = [(names[i], float(agg[i]), rank) for rank, i in enumerate(order[:k], start=1)]
    rest = order[k:]
    if rest:
        rows.append((OTHER, float(sum(agg[i] for i in rest)), len(rows) + 1))
    return rows


def local_importance_csv(amaps, k=TOP_K):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["quarter", "feature", "phi", "rank"])
    for am in amaps:
        q = "" if am.quarter is None else cal.format_quarter(am.quarter)
        for name, v, rank in local_importance(am, k):
            w.writerow([q, name, repr(v), rank])
    return out.getvalue()


def beeswarm_rows(amap, sequence, training_means):
    agg = aggregate_time(amap)
    alpha = aggregate_feature_value(sequence, training_means)
    names = amap.names or [f"x{i}" for i in range(len(agg))]
    return [(amap.quarter, n, float(p), float(a)) for n, p, a in zip(names, agg, alpha)]


def beeswarm_csv(rows):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["quarter", "feature", "phi", "feature_value"])
    for q, n, p, a in rows:
        w.writerow(["" if q is None else cal.format_quarter(q), n, repr(p), repr(a)])
    return out.getvalue()
