"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every :class:`Tensor` produced by a primitive remembers the primitive and its
inputs.  :class:`Tape` linearises the graph behind an output in topological
order; :func:`backward` walks it in reverse.

Besides ordinary gradients, each primitive also knows a *rescale* rule: given
the forward values on an input and on a reference input, it returns
multipliers ``m`` with ``out - out_ref = sum(m * (in - in_ref))`` exactly.
Linear primitives use their Jacobian, elementwise nonlinearities use secant
slopes and bilinear primitives (products, matmul, convolution) use the
operand averages.  :func:`rescale_backward` chains these multipliers through
two tapes of identical structure; this is what the attribution module uses.
"""

import numpy as np

from .errors import ShapeError

DTYPE = np.float64
SECANT_GUARD = 1e-9


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "inputs", "ctx", "__weakref__")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.op = None
        self.inputs = ()
        self.ctx = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Primitive:
    """One differentiable operation.

    ``forward`` returns ``(value, ctx)``; ``vjp`` returns one gradient per input
    (``None`` for inputs that need none).  ``rescale`` defaults to ``vjp``,
    which is exact for linear primitives.
    """

    name = "primitive"
    linear = True

    def forward(self, *xs):
        raise NotImplementedError

    def vjp(self, g, xs, out, ctx):
        raise NotImplementedError

    def rescale(self, g, xs, out, ctx, xs_ref, out_ref, ctx_ref):
        return self.vjp(g, xs, out, ctx)


def apply(prim, *inputs):
    inputs = tuple(as_tensor(x) for x in inputs)
    value, ctx = prim.forward(*(t.data for t in inputs))
    out = Tensor(value)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.op = prim
        out.inputs = inputs
        out.ctx = ctx
    return out


def _check_broadcast(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


class _Add(Primitive):
    name = "add"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        return a + b, None

    def vjp(self, g, xs, out, ctx):
        return _unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)


class _Sub(Primitive):
    name = "sub"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        return a - b, None

    def vjp(self, g, xs, out, ctx):
        return _unbroadcast(g, xs[0].shape), -_unbroadcast(g, xs[1].shape)


class _Scale(Primitive):
    name = "scale"

    def __init__(self, c):
        self.c = float(c)

    def forward(self, a):
        return self.c * a, None

    def vjp(self, g, xs, out, ctx):
        return (self.c * g,)


class _Mul(Primitive):
    name = "mul"
    linear = False

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        return a * b, None

    def vjp(self, g, xs, out, ctx):
        a, b = xs
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    def rescale(self, g, xs, out, ctx, xs_ref, out_ref, ctx_ref):
        a, b = xs
        a0, b0 = xs_ref
        return (_unbroadcast(g * 0.5 * (b + b0), a.shape),
                _unbroadcast(g * 0.5 * (a + a0), b.shape))


def _mm_grads(g, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:
        ga = b @ g if b.ndim == 2 else np.einsum("...ij,...j->...i", b, g)
        gb = np.multiply.outer(a, g) if b.ndim == 2 else a[:, None] * g[..., None, :]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    if b.ndim == 1:
        ga = np.multiply.outer(g, b)
        gb = np.tensordot(g, a, axes=(tuple(range(g.ndim)), tuple(range(a.ndim - 1))))
        return ga, gb
    ga = g @ np.swapaxes(b, -1, -2)
    if b.ndim == 2 and a.ndim > 2:
        gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    else:
        gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class _MatMul(Primitive):
    name = "matmul"
    linear = False

    def forward(self, a, b):
        if a.ndim == 0 or b.ndim == 0:
            raise ShapeError("matmul: operands must be at least 1-d")
        ka = a.shape[-1]
        kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
        if ka != kb:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        return a @ b, None

    def vjp(self, g, xs, out, ctx):
        return _mm_grads(g, xs[0], xs[1])

    def rescale(self, g, xs, out, ctx, xs_ref, out_ref, ctx_ref):
        a_bar = 0.5 * (xs[0] + xs_ref[0])
        b_bar = 0.5 * (xs[1] + xs_ref[1])
        ga, _ = _mm_grads(g, xs[0], b_bar)
        _, gb = _mm_grads(g, a_bar, xs[1])
        return ga, gb


class _Elementwise(Primitive):
    """Unary elementwise map with derivative ``dfn``; rescale uses secant slopes."""

    linear = False

    def __init__(self, name, fn, dfn):
        self.name, self.fn, self.dfn = name, fn, dfn

    def forward(self, a):
        y = self.fn(a)
        return y, None

    def vjp(self, g, xs, out, ctx):
        return (g * self.dfn(xs[0], out),)

    def rescale(self, g, xs, out, ctx, xs_ref, out_ref, ctx_ref):
        dx = xs[0] - xs_ref[0]
        near = np.abs(dx) <= SECANT_GUARD
        safe = np.where(near, 1.0, dx)
        slope = np.where(near, self.dfn(xs[0], out), (out - out_ref) / safe)
        return (g * slope,)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_TANH = _Elementwise("tanh", np.tanh, lambda x, y: 1.0 - y * y)
_SIGMOID = _Elementwise("sigmoid", _sigmoid, lambda x, y: y * (1.0 - y))
_RELU = _Elementwise("relu", lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(DTYPE))
_ABS = _Elementwise("abs", np.abs, lambda x, y: np.sign(x))
_SQUARE = _Elementwise("square", np.square, lambda x, y: 2.0 * x)


class _Sum(Primitive):
    name = "sum"

    def __init__(self, axis=None, keepdims=False):
        self.axis, self.keepdims = axis, keepdims

    def forward(self, a):
        return a.sum(axis=self.axis, keepdims=self.keepdims), None

    def vjp(self, g, xs, out, ctx):
        return (_expand(g, xs[0].shape, self.axis, self.keepdims),)


class _Mean(_Sum):
    name = "mean"

    def forward(self, a):
        return a.mean(axis=self.axis, keepdims=self.keepdims), None

    def vjp(self, g, xs, out, ctx):
        shape = xs[0].shape
        n = np.prod(shape) if self.axis is None else np.prod(
            [shape[ax] for ax in np.atleast_1d(self.axis)])
        return (_expand(g, shape, self.axis, self.keepdims) / n,)


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = [ax % len(shape) for ax in np.atleast_1d(axis)]
        g = np.expand_dims(g, tuple(sorted(axes)))
    return np.broadcast_to(g, shape)


class _AbsSum(Primitive):
    """Sum of absolute values (the L1 norm of all entries)."""

    name = "abs_sum"
    linear = False

    def forward(self, a):
        return np.abs(a).sum(), None

    def vjp(self, g, xs, out, ctx):
        return (g * np.sign(xs[0]),)

    def rescale(self, g, xs, out, ctx, xs_ref, out_ref, ctx_ref):
        x, x0 = xs[0], xs_ref[0]
        return _ABS.rescale(g, (x,), np.abs(x), None, (x0,), np.abs(x0), None)


class _GetItem(Primitive):
    name = "slice"

    def __init__(self, index):
        self.index = index

    def forward(self, a):
        return a[self.index], None

    def vjp(self, g, xs, out, ctx):
        ga = np.zeros_like(xs[0])
        if _fancy(self.index):
            np.add.at(ga, self.index, g)
        else:
            ga[self.index] += g
        return (ga,)


def _fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


class _Concat(Primitive):
    name = "concat"

    def __init__(self, axis):
        self.axis = axis

    def forward(self, *xs):
        try:
            return np.concatenate(xs, axis=self.axis), None
        except ValueError:
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None

    def vjp(self, g, xs, out, ctx):
        bounds = np.cumsum([x.shape[self.axis] for x in xs])[:-1]
        return tuple(np.split(g, bounds, axis=self.axis))


class _Stack(Primitive):
    name = "stack"

    def __init__(self, axis):
        self.axis = axis

    def forward(self, *xs):
        try:
            return np.stack(xs, axis=self.axis), None
        except ValueError:
            raise ShapeError(f"stack: incompatible shapes {[x.shape for x in xs]}") from None

    def vjp(self, g, xs, out, ctx):
        return tuple(np.moveaxis(g, self.axis, 0))


class _Reshape(Primitive):
    name = "reshape"

    def __init__(self, shape):
        self.shape = shape

    def forward(self, a):
        try:
            return a.reshape(self.shape), None
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {a.shape} to {self.shape}") from None

    def vjp(self, g, xs, out, ctx):
        return (g.reshape(xs[0].shape),)


class _Transpose(Primitive):
    name = "transpose"

    def __init__(self, axes):
        self.axes = axes

    def forward(self, a):
        return np.transpose(a, self.axes), None

    def vjp(self, g, xs, out, ctx):
        if self.axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(self.axes)),)


def _im2col(x, k):
    """``(..., C, L)`` -> ``(M, C*k)`` rows of windows, with ``M = prod(...) * L_out``."""
    win = np.lib.stride_tricks.sliding_window_view(x, k, axis=-1)    # ..., C, L_out, k
    win = np.moveaxis(win, -2, -3)                                     # ..., L_out, C, k
    return np.ascontiguousarray(win).reshape(-1, x.shape[-2] * k)


class _Conv1d(Primitive):
    """Valid cross-correlation: ``out[n, o, t] = b[o] + sum_{c, d} w[o, c, d] * x[n, c, t + d]``."""

    name = "conv1d"
    linear = False

    def forward(self, x, w, b):
        if w.ndim != 3:
            raise ShapeError(f"conv1d: kernels must be C_out x C_in x k, got {w.shape}")
        if x.ndim not in (2, 3) or x.shape[-2] != w.shape[1]:
            raise ShapeError(f"conv1d: input {x.shape} does not match kernels {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv1d: bias {b.shape} does not match {w.shape[0]} output channels")
        k = w.shape[2]
        if k > x.shape[-1]:
            raise ShapeError(f"conv1d: kernel size {k} exceeds input length {x.shape[-1]}")
        cols = _im2col(x, k)
        out = cols @ w.reshape(w.shape[0], -1).T + b                      # M x C_out
        lead = x.shape[:-2]
        l_out = x.shape[-1] - k + 1
        out = np.moveaxis(out.reshape(lead + (l_out, w.shape[0])), -1, -2)
        return out, cols

    @staticmethod
    def _grad_x(g2, x, w):
        o, c, k = w.shape
        l_out = x.shape[-1] - k + 1
        gcols = (g2 @ w.reshape(o, -1)).reshape(x.shape[:-2] + (l_out, c, k))
        gx = np.zeros_like(x)
        for d in range(k):
            gx[..., d:d + l_out] += np.swapaxes(gcols[..., d], -1, -2)
        return gx

    @staticmethod
    def _flat(g):
        return np.moveaxis(g, -2, -1).reshape(-1, g.shape[-2])          # M x C_out

    def vjp(self, g, xs, out, ctx):
        x, w, _ = xs
        g2 = self._flat(g)
        gw = (g2.T @ ctx).reshape(w.shape)
        return self._grad_x(g2, x, w), gw, g2.sum(axis=0)

    def rescale(self, g, xs, out, ctx, xs_ref, out_ref, ctx_ref):
        x, w, _ = xs
        g2 = self._flat(g)
        gx = self._grad_x(g2, x, 0.5 * (w + xs_ref[1]))
        gw = (g2.T @ (0.5 * (ctx + ctx_ref))).reshape(w.shape)
        return gx, gw, g2.sum(axis=0)


def add(a, b):
    return apply(_Add(), a, b)


def sub(a, b):
    return apply(_Sub(), a, b)


def scale(a, c):
    return apply(_Scale(c), a)


def mul(a, b):
    return apply(_Mul(), a, b)


def matmul(a, b):
    return apply(_MatMul(), a, b)


def tanh(a):
    return apply(_TANH, a)


def sigmoid(a):
    return apply(_SIGMOID, a)


def relu(a):
    return apply(_RELU, a)


def abs_(a):
    return apply(_ABS, a)


def square(a):
    return apply(_SQUARE, a)


def sum_(a, axis=None, keepdims=False):
    return apply(_Sum(axis, keepdims), a)


def mean(a, axis=None, keepdims=False):
    return apply(_Mean(axis, keepdims), a)


def abs_sum(a):
    return apply(_AbsSum(), a)


def getitem(a, index):
    return apply(_GetItem(index), a)


def concat(tensors, axis=0):
    return apply(_Concat(axis), *tensors)


def stack(tensors, axis=0):
    return apply(_Stack(axis), *tensors)


def reshape(a, shape):
    return apply(_Reshape(tuple(shape)), a)


def transpose(a, axes=None):
    return apply(_Transpose(None if axes is None else tuple(axes)), a)


def conv1d_valid(x, kernels, bias):
    """1-D valid cross-correlation of ``x`` (C_in x L_in, or batched N x C_in x L_in)."""
    return apply(_Conv1d(), x, kernels, bias)


ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "linear": lambda a: a}


class Tape:
    """Topologically ordered record of the nodes that produced ``output``.

    Leaves come first; every node appears after all of its inputs.  Two tapes built
    by the same code on different data have the same length and node kinds at every
    position.
    """

    def __init__(self, output):
        self.output = output
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node.inputs):
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def leaves(self):
        return [n for n in self.nodes if n.op is None and n.requires_grad]

    def backward(self, seed=None):
        return _reverse(self, seed, None)


def _reverse(tape, seed, ref_tape):
    out = tape.output
    grads = {id(out): np.ones_like(out.data) if seed is None else np.asarray(seed, dtype=DTYPE)}
    leaves = {}
    ref_nodes = ref_tape.nodes if ref_tape is not None else None
    for pos in range(len(tape.nodes) - 1, -1, -1):
        node = tape.nodes[pos]
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op is None:
            if node.requires_grad:
                leaves[node] = g
            continue
        xs = tuple(t.data for t in node.inputs)
        if ref_nodes is None:
            gin = node.op.vjp(g, xs, node.data, node.ctx)
        else:
            ref = ref_nodes[pos]
            if ref.op is not None and type(ref.op) is not type(node.op):
                raise ShapeError(f"tapes diverge at node {pos}: {node.op.name} vs {ref.op.name}")
            xs_ref = tuple(t.data for t in ref.inputs)
            gin = node.op.rescale(g, xs, node.data, node.ctx, xs_ref, ref.data, ref.ctx)
        for parent, gp in zip(node.inputs, gin):
            if gp is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = np.array(gp, dtype=DTYPE, copy=True)
    return leaves


def backward(loss):
    """Reverse pass from a scalar ``loss``; returns ``{leaf: gradient}`` and sets ``leaf.grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = Tape(loss).backward(np.ones_like(loss.data))
    for leaf, g in grads.items():
        leaf.grad = g
    return grads


def rescale_backward(output, output_ref, seed=None):
    """Chain rescale multipliers from ``output`` down to its leaves.

    ``output_ref`` must come from the same computation applied to reference data;
    leaves shared by both graphs (parameters) get the same multipliers as a gradient
    would use wherever they enter linearly.  Returns ``{leaf: multiplier}`` for the
    leaves of ``output``'s graph.
    """
    tape = Tape(output)
    ref = Tape(output_ref)
    if len(tape) != len(ref):
        raise ShapeError("reference computation has a different graph")
    return _reverse(tape, seed, ref)
