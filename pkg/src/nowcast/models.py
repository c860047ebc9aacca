"""The five competitor networks, each behind a shared linear bottleneck encoder.

Input sequences are arrays of shape ``(N, l, d)`` (or ``(l, d)`` for one
sequence).  The bottleneck maps the ``d`` indicators to ``bottleneck_dim``
embeddings at every timestep with one weight matrix, then the family-specific
body produces one scalar nowcast per sequence.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, ValidationError

FAMILIES = ("MLP", "CNN1D", "RNN", "LSTM", "GRU")
RECURRENT = ("RNN", "LSTM", "GRU")
GATES = {"RNN": ("hidden",), "LSTM": ("input", "forget", "cell", "output"),
         "GRU": ("reset", "update", "new")}
FORMAT_VERSION = 1

_ALIASES = {"CNN": "CNN1D", "1DCNN": "CNN1D", "1D-CNN": "CNN1D", "ELMAN": "RNN"}


def normalize_family(name):
    key = str(name).strip().upper()
    key = _ALIASES.get(key, key)
    if key not in FAMILIES:
        raise ValidationError(f"unknown model family {name!r}; expected one of {FAMILIES}")
    return key


@dataclass(frozen=True)
class ModelSpec:
    family: str
    input_dim: int
    seq_len: int = 8
    bottleneck_dim: int = 8
    hidden: tuple = ()
    channels: tuple = (16, 8)
    kernel_size: int = 3
    activation: str = ""

    def __post_init__(self):
        fam = normalize_family(self.family)
        object.__setattr__(self, "family", fam)
        if not self.hidden:
            object.__setattr__(self, "hidden", (32, 16) if fam == "MLP" else (32,))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.activation:
            object.__setattr__(self, "activation", "tanh" if fam in RECURRENT else "relu")
        if self.activation not in ad.ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.seq_len < 1 or self.input_dim < 1 or self.bottleneck_dim < 1:
            raise ValidationError("seq_len, input_dim and bottleneck_dim must be positive")
        if self.bottleneck_dim >= self.input_dim:
            raise ValidationError(
                f"bottleneck_dim {self.bottleneck_dim} must be below input_dim {self.input_dim}")
        if fam in RECURRENT and len(self.hidden) != 1:
            raise ValidationError("recurrent families take a single hidden size")
        if fam == "CNN1D":
            need = len(self.channels) * (self.kernel_size - 1) + 1
            if self.kernel_size > self.seq_len or self.seq_len < need:
                raise ShapeError(
                    f"kernel size {self.kernel_size} with {len(self.channels)} conv layers "
                    f"needs seq_len >= {need}, got {self.seq_len}")

    @property
    def cell_size(self):
        return self.hidden[0]


def _layout(spec):
    """Ordered ``(name, shape, fan_in)`` for every parameter of ``spec``."""
    b, d, l = spec.bottleneck_dim, spec.input_dim, spec.seq_len
    out = [("bottleneck.weight", (b, d), d), ("bottleneck.bias", (b,), d)]
    fam = spec.family
    if fam == "MLP":
        width = l * b
        for i, h in enumerate(spec.hidden):
            out += [(f"mlp.{i}.weight", (h, width), width), (f"mlp.{i}.bias", (h,), width)]
            width = h
    elif fam == "CNN1D":
        cin = b
        for i, c in enumerate(spec.channels):
            fan = cin * spec.kernel_size
            out += [(f"conv.{i}.weight", (c, cin, spec.kernel_size), fan),
                    (f"conv.{i}.bias", (c,), fan)]
            cin = c
        width = cin
    else:
        h = spec.cell_size
        g = len(GATES[fam]) * h
        out += [("cell.weight_ih", (g, b), b), ("cell.weight_hh", (g, h), h),
                ("cell.bias_ih", (g,), b), ("cell.bias_hh", (g,), h)]
        width = h
    out += [("head.weight", (1, width), width), ("head.bias", (1,), width)]
    return out


@dataclass
class Model:
    """A network: its spec, parameter arrays and training metadata."""

    spec: ModelSpec
    params: dict
    meta: dict = field(default_factory=dict)

    def tensors(self):
        """Parameter tensors sharing memory with ``params`` (in-place updates are visible)."""
        return {k: ad.Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def copy(self):
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()}, dict(self.meta))

    def __call__(self, x):
        return predict(self, x)

    def to_json(self):
        doc = {
            "format": "nowcast-model",
            "version": FORMAT_VERSION,
            "spec": asdict(self.spec),
            "params": {k: {"shape": list(v.shape), "data": [float(a) for a in v.ravel()]}
                       for k, v in self.params.items()},
            "meta": self.meta,
        }
        return json.dumps(doc, sort_keys=True)

    def to_bytes(self):
        return self.to_json().encode()

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != "nowcast-model":
            raise ValidationError("not a saved model")
        if doc.get("version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported model format version {doc.get('version')}")
        spec = ModelSpec(**doc["spec"])
        params = {k: np.array(p["data"], dtype=np.float64).reshape(p["shape"])
                  for k, p in doc["params"].items()}
        model = cls(spec, params, doc.get("meta", {}))
        _check_shapes(model)
        return model

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def _check_shapes(model):
    for name, shape, _ in _layout(model.spec):
        if name not in model.params or model.params[name].shape != shape:
            got = model.params.get(name)
            raise ShapeError(f"parameter {name}: expected {shape}, got "
                             f"{None if got is None else got.shape}")


def build(spec, rng_seed):
    """Initialise a model; every tensor is uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(rng_seed)
    params = {}
    for name, shape, fan_in in _layout(spec):
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return Model(spec, params, {"seed": int(rng_seed), "epochs": 0, "val_loss": None})


def _dense(x, w, b):
    return x @ ad.transpose(w) + b


def forward_graph(spec, p, x):
    """Build the graph for a batch ``x`` (Tensor ``N x l x d``); returns a Tensor of shape ``(N,)``."""
    if x.ndim != 3 or x.shape[1:] != (spec.seq_len, spec.input_dim):
        raise ShapeError(
            f"expected input (N, {spec.seq_len}, {spec.input_dim}), got {x.shape}")
    n = x.shape[0]
    act = ad.ACTIVATIONS[spec.activation]
    z = _dense(x, p["bottleneck.weight"], p["bottleneck.bias"])      # N x l x b
    fam = spec.family
    if fam == "MLP":
        hidden = ad.reshape(z, (n, spec.seq_len * spec.bottleneck_dim))
        for i in range(len(spec.hidden)):
            hidden = act(_dense(hidden, p[f"mlp.{i}.weight"], p[f"mlp.{i}.bias"]))
    elif fam == "CNN1D":
        hidden = ad.transpose(z, (0, 2, 1))                           # N x b x l
        for i in range(len(spec.channels)):
            hidden = act(ad.conv1d_valid(hidden, p[f"conv.{i}.weight"], p[f"conv.{i}.bias"]))
        hidden = ad.mean(hidden, axis=2)
    else:
        hidden = _recurrent(fam, spec.cell_size, p, z, n, spec.seq_len)
    out = _dense(hidden, p["head.weight"], p["head.bias"])
    return ad.reshape(out, (n,))


def cnn_feature_maps(model, x):
    """Activations of every conv layer (before the temporal pooling), as arrays."""
    spec, p = model.spec, model.tensors()
    act = ad.ACTIVATIONS[spec.activation]
    xt = ad.Tensor(_batch(spec, x))
    h = ad.transpose(_dense(xt, p["bottleneck.weight"], p["bottleneck.bias"]), (0, 2, 1))
    maps = []
    for i in range(len(spec.channels)):
        h = act(ad.conv1d_valid(h, p[f"conv.{i}.weight"], p[f"conv.{i}.bias"]))
        maps.append(h.data)
    return maps


def _recurrent(fam, hsize, p, z, n, steps):
    w_ih, w_hh = ad.transpose(p["cell.weight_ih"]), ad.transpose(p["cell.weight_hh"])
    b_ih, b_hh = p["cell.bias_ih"], p["cell.bias_hh"]
    h = ad.Tensor(np.zeros((n, hsize)))
    c = ad.Tensor(np.zeros((n, hsize)))
    s = slice
    for t in range(steps):
        xt = z[:, t, :]
        gi = xt @ w_ih + b_ih
        gh = h @ w_hh + b_hh
        if fam == "RNN":
            h = ad.tanh(gi + gh)
        elif fam == "LSTM":
            g = gi + gh
            i_g = ad.sigmoid(g[:, s(0, hsize)])
            f_g = ad.sigmoid(g[:, s(hsize, 2 * hsize)])
            c_hat = ad.tanh(g[:, s(2 * hsize, 3 * hsize)])
            o_g = ad.sigmoid(g[:, s(3 * hsize, 4 * hsize)])
            c = f_g * c + i_g * c_hat
            h = o_g * ad.tanh(c)
        else:
            r = ad.sigmoid(gi[:, s(0, hsize)] + gh[:, s(0, hsize)])
            u = ad.sigmoid(gi[:, s(hsize, 2 * hsize)] + gh[:, s(hsize, 2 * hsize)])
            new = ad.tanh(gi[:, s(2 * hsize, 3 * hsize)] + r * gh[:, s(2 * hsize, 3 * hsize)])
            h = new + u * (h - new)
    return h


def _batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (spec.seq_len, spec.input_dim):
        raise ShapeError(f"expected sequence(s) of shape ({spec.seq_len}, {spec.input_dim}), "
                         f"got {x.shape}")
    if np.isnan(x).any():
        raise ValidationError("input sequence contains missing values")
    return x


def predict(model, x):
    """Nowcasts for a batch of sequences ``(N, l, d)``; returns an array of length N."""
    xb = _batch(model.spec, x)
    params = {k: ad.Tensor(v) for k, v in model.params.items()}
    return forward_graph(model.spec, params, ad.Tensor(xb)).data.copy()


def forward_nowcast(model, sequence):
    """Nowcast for one ``l x d`` sequence."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2:
        raise ShapeError(f"expected an l x d matrix, got shape {seq.shape}")
    return float(predict(model, seq)[0])


def param_count(model_or_spec):
    """Exact parameter counts per layer, per gate for recurrent cells, and in total."""
    spec = model_or_spec.spec if isinstance(model_or_spec, Model) else model_or_spec
    layers = {}
    for name, shape, _ in _layout(spec):
        block = name.rsplit(".", 1)[0]
        layers[block] = layers.get(block, 0) + int(np.prod(shape))
    counts = {"layers": layers, "total": sum(layers.values())}
    if spec.family in RECURRENT:
        h, b = spec.cell_size, spec.bottleneck_dim
        per_gate = h * (b + h) + 2 * h
        counts["gates"] = {g: per_gate for g in GATES[spec.family]}
        counts["cell"] = layers["cell"]
    return counts


def cell_param_count(family, d, h):
    """Parameters of one recurrent cell with input size ``d`` and hidden size ``h``."""
    fam = normalize_family(family)
    if fam not in RECURRENT:
        raise ValidationError(f"{fam} has no recurrent cell")
    return len(GATES[fam]) * (h * (d + h) + 2 * h)
