"""L1-penalised MSE training with Adam, early stopping and seed ensembles."""

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models
from .errors import TrainingError, ValidationError
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

N_ENSEMBLE = 30


def expand_seeds(master_seed, n):
    """Derive ``n`` distinct member seeds from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    seeds = [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]
    if len(set(seeds)) != n:
        raise ValidationError("seed expansion produced duplicates")
    return tuple(seeds)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-3
    lr: float = 1e-3
    batch_size: int = 0          # 0 = full batch
    max_epochs: int = 500
    patience: int = 25
    seeds: tuple = field(default_factory=lambda: expand_seeds(0, N_ENSEMBLE))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be non-negative")
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")
        if self.max_epochs < 0 or self.batch_size < 0:
            raise ValidationError("max_epochs and batch_size must be non-negative")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("ensemble seeds must be distinct")


def _loss_graph(spec, tensors, X, y, lam):
    pred = models.forward_graph(spec, tensors, ad.Tensor(X))
    mse = ad.mean(ad.square(pred - y))
    if lam == 0:
        return mse
    return mse + ad.scale(ad.abs_sum(tensors["bottleneck.weight"]), lam)


def loss(model, batch, lam=0.0):
    """``mean((y - f(x))^2) + lam * sum(|bottleneck weights|)`` for a batch with ``X``, ``y``."""
    X, y = _xy(batch)
    if len(y) == 0:
        raise ValidationError("empty batch")
    tensors = {k: ad.Tensor(v) for k, v in model.params.items()}
    return _loss_graph(model.spec, tensors, X, y, lam).item()


def mse(model, batch):
    X, y = _xy(batch)
    return float(np.mean((models.predict(model, X) - y) ** 2))


def _xy(batch):
    if isinstance(batch, tuple):
        X, y = batch
    else:
        X, y = batch.X, batch.y
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


@dataclass
class History:
    seed: int
    rows: list = field(default_factory=list)     # (epoch, train_loss, val_loss)

    def __len__(self):
        return len(self.rows)

    @property
    def val_losses(self):
        return [r[2] for r in self.rows]

    def to_csv(self, stream=None, header=True):
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        if header:
            w.writerow(["epoch", "train_loss", "val_loss", "seed"])
        for epoch, tr, va in self.rows:
            w.writerow([epoch, repr(tr), repr(va), self.seed])
        if stream is None:
            return out.getvalue()


def train_single(model, train, val, config, seed=None):
    """Train ``model`` (a copy is returned) and keep the epoch with the lowest validation MSE.

    The recorded train loss of an epoch is the penalised objective before that
    epoch's update(s); the validation loss is the plain MSE after them.
    """
    X, y = _xy(train)
    Xv, yv = _xy(val)
    if len(yv) == 0:
        raise ValidationError("validation set is empty")
    if len(y) == 0:
        raise ValidationError("training set is empty")
    seed = model.meta.get("seed", 0) if seed is None else seed
    work = model.copy()
    history = History(int(seed))
    if config.max_epochs == 0:
        return work, history

    rng = np.random.default_rng(seed)
    tensors = work.tensors()
    state = AdamState()
    best_val, best_params, best_epoch, stale = np.inf, None, 0, 0
    n = len(y)
    bs = config.batch_size if 0 < config.batch_size < n else n
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n) if bs < n else None
        epoch_loss = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs] if order is not None else slice(None)
            obj = _loss_graph(work.spec, tensors, X[idx], y[idx], config.lam)
            val_obj = obj.item()
            if not np.isfinite(val_obj):
                raise TrainingError("non-finite training loss", epoch=epoch)
            grads = ad.backward(obj)
            adam_step(work.params, {k: grads.get(t) for k, t in tensors.items()}, state,
                      config.lr, config.beta1, config.beta2, config.eps)
            epoch_loss += val_obj * (len(y[idx]) / n)
        val_loss = mse(work, (Xv, yv))
        if not np.isfinite(val_loss):
            raise TrainingError("non-finite validation loss", epoch=epoch)
        history.rows.append((epoch, epoch_loss, val_loss))
        if val_loss < best_val:
            best_val, best_epoch, stale = val_loss, epoch, 0
            best_params = {k: v.copy() for k, v in work.params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    work.params = best_params
    work.meta.update(seed=int(seed), epochs=len(history), best_epoch=best_epoch,
                     val_loss=float(best_val))
    return work, history


def _fit_member(args):
    spec, seed, train, val, config = args
    return train_single(models.build(spec, seed), train, val, config, seed)


def train_ensemble(spec, train, val, config, jobs=1):
    """Train one member per seed in ``config.seeds``; returns ``(members, histories)``."""
    tasks = [(spec, s, _xy(train), _xy(val), config) for s in config.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fit_member, tasks))
    else:
        results = [_fit_member(t) for t in tasks]
    return [r[0] for r in results], [r[1] for r in results]


def ensemble_nowcast(members, sequence):
    """Mean of the members' nowcasts (the mean of any symmetric-kernel density estimate over them)."""
    if not members:
        raise ValidationError("empty ensemble")
    return float(np.mean([models.forward_nowcast(m, sequence) for m in members]))


def ensemble_predict(members, X):
    if not members:
        raise ValidationError("empty ensemble")
    return np.mean([models.predict(m, X) for m in members], axis=0)


def sparsity(model, threshold=1e-3):
    """Fraction of bottleneck weights with magnitude below ``threshold``."""
    w = model.params["bottleneck.weight"]
    return float(np.mean(np.abs(w) < threshold))
