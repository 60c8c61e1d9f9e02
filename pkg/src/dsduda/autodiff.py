"""Dense reverse-mode automatic differentiation on float64 NumPy arrays.

Every op returns a new :class:`Tensor`. When any input requires a gradient
the output keeps a link to its parents plus a closure mapping the upstream
gradient to parent gradients; :func:`backward` walks that graph in reverse
topological order and accumulates into leaf tensors (usually
:class:`Parameter` objects).

There is no implicit broadcasting. Use :func:`expand_rows` to repeat a
vector across rows, and :func:`scale`/:func:`shift` for scalar constants.
"""

import math

import numpy as np

from . import kernels

LOG_CLAMP = 1e-12


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class Tensor:
    """An n-dimensional float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return list(self.data.shape)

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf: value, gradient accumulator and Adam moment buffers."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    # op results are fresh arrays, so skip the defensive copy Tensor() makes
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(data, dtype=np.float64)
    t.requires_grad = any(p.requires_grad for p in parents)
    t.grad = None
    # parents frozen now stay cut off even if unfrozen before backward
    t._parents = tuple(q if q.requires_grad else None for q in parents) if t.requires_grad else ()
    t._backward = backward if t.requires_grad else None
    t.op = op
    return t


def _same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _same_shape("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def neg(a):
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c):
    """Multiply by a Python scalar (the only implicit broadcast allowed)."""
    a = _wrap(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a, c):
    """Add a Python scalar to every element."""
    a = _wrap(a)
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,), "shift")


def sigmoid(a):
    a = _wrap(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    a = _wrap(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    """Natural log with the input clamped to at least 1e-12."""
    a = _wrap(a)
    clamped = np.maximum(a.data, LOG_CLAMP)
    live = a.data >= LOG_CLAMP
    return _make(np.log(clamped), (a,), lambda g: (np.where(live, g / clamped, 0.0),), "log")


def clamp(a, lo, hi):
    a = _wrap(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(out, (a,), lambda g: (np.where(inside, g, 0.0),), "clamp")


def grad_reverse(a, scale=1.0):
    """Identity on the forward pass; multiplies the gradient by ``-scale`` on the way back."""
    if not scale > 0:
        raise ContractError(f"grad_reverse scale must be positive, got {scale}")
    a = _wrap(a)
    s = float(scale)
    return _make(a.data.copy(), (a,), lambda g: (-s * g,), "grad_reverse")


# shape ---------------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def expand_rows(v, rows):
    """Repeat a vector of shape [n] into a matrix of shape [rows, n]."""
    v = _wrap(v)
    if v.data.ndim != 1:
        raise DimensionError(f"expand_rows expects a vector, got shape {v.shape}")
    out = np.broadcast_to(v.data, (rows, v.data.shape[0])).copy()
    return _make(out, (v,), lambda g: (g.sum(axis=0),), "expand_rows")


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {list(old)} as {list(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a):
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), backward, "concat")


def take_rows(a, index):
    """Select rows ``index`` (along axis 0)."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward, "take_rows")


def diagonal(a):
    """Main diagonal of a square matrix."""
    a = _wrap(a)
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise DimensionError(f"diagonal expects a square matrix, got shape {a.shape}")
    return _make(np.diagonal(a.data).copy(), (a,), lambda g: (np.diag(g),), "diagonal")


# reductions ----------------------------------------------------------------

def _check_axis(a, axis):
    if axis is None:
        if a.data.size == 0:
            raise DimensionError("reduction over an empty tensor")
        return
    if not -a.data.ndim <= axis < a.data.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {a.shape}")
    if a.data.shape[axis] == 0:
        raise DimensionError(f"reduction over empty axis {axis} of shape {a.shape}")


def reduce_sum(a, axis=None):
    a = _wrap(a)
    _check_axis(a, axis)
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), backward, "sum")


def reduce_mean(a, axis=None):
    a = _wrap(a)
    _check_axis(a, axis)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / n)


def reduce(op, a, axis=None):
    if op == "sum":
        return reduce_sum(a, axis)
    if op == "mean":
        return reduce_mean(a, axis)
    raise ValueError(f"unknown reduction {op!r}")


def softmax(a, axis=-1, mask=None):
    """Numerically stable softmax along ``axis``.

    ``mask`` (same shape, bool) marks valid entries; masked-out entries get
    probability exactly zero.
    """
    a = _wrap(a)
    if a.data.size == 0 or a.data.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis of shape {a.shape}")
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax mask shape {list(mask.shape)} != {a.shape}")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


# fused network ops ---------------------------------------------------------

def _check_lengths(lengths, B, T):
    if lengths is None:
        return np.full(B, T, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (B,) or (lengths < 1).any() or (lengths > T).any():
        raise DimensionError(f"lengths {lengths.tolist()} invalid for batch of {B} x {T}")
    return lengths


def conv1d_same(x, w, b, lengths=None):
    """1-D convolution along time with zero same-padding.

    x: [B, T, D], w: [k, D, C], b: [C] -> [B, T, C]. For even k the extra
    padding goes on the right. With ``lengths``, row i is treated as a
    sequence of lengths[i] frames (frames past it must be zero); outputs past
    a row's length are zero.
    """
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 3 or w.data.ndim != 3 or w.data.shape[1] != x.data.shape[2]:
        raise DimensionError(f"conv1d_same: input {x.shape} incompatible with kernel {w.shape}")
    if b.data.shape != (w.data.shape[2],):
        raise DimensionError(f"conv1d_same: bias {b.shape} does not match kernel {w.shape}")
    B, T, D = x.data.shape
    k, _, C = w.data.shape
    ragged = lengths is not None
    lengths = _check_lengths(lengths, B, T)
    left = (k - 1) // 2
    padded = np.zeros((B, T + k - 1, D))
    padded[:, left:left + T] = x.data
    if ragged:
        # only gather windows centred on real frames
        bi = np.repeat(np.arange(B), lengths)
        ti = np.concatenate([np.arange(n) for n in lengths])
        cols = padded[bi[:, None], ti[:, None] + np.arange(k)].reshape(-1, k * D)
    else:
        cols = np.lib.stride_tricks.sliding_window_view(padded, T, axis=1)  # [B, k, D, T]
        cols = np.ascontiguousarray(cols.transpose(0, 3, 1, 2)).reshape(B * T, k * D)
    wmat = w.data.reshape(k * D, C)
    flat = cols @ wmat + b.data
    if ragged:
        out = np.zeros((B, T, C))
        out[bi, ti] = flat
    else:
        out = flat.reshape(B, T, C)

    def backward(g):
        g2 = g[bi, ti] if ragged else g.reshape(B * T, C)
        dw = (cols.T @ g2).reshape(k, D, C)
        dcols = (g2 @ wmat.T).reshape(-1, k, D)
        dpad = np.zeros((B, T + k - 1, D))
        if ragged:
            for j in range(k):
                dpad[bi, ti + j] += dcols[:, j]  # (bi, ti + j) is unique for fixed j
        else:
            dcols = dcols.reshape(B, T, k, D)
            for j in range(k):
                dpad[:, j:j + T] += dcols[:, :, j]
        return dpad[:, left:left + T], dw, g2.sum(axis=0)

    return _make(out, (x, w, b), backward, "conv1d_same")


def conv1d_banks(x, weights, biases, lengths=None):
    """Several same-padded convolutions over one input, concatenated along channels.

    Equivalent to ``concat([conv1d_same(x, w, b, lengths) ...], axis=2)`` but
    gathers the input windows once: every kernel is placed inside one shared
    window of the widest kernel's size at its own same-padding offset.
    """
    x = _wrap(x)
    weights, biases = [_wrap(w) for w in weights], [_wrap(b) for b in biases]
    if x.data.ndim != 3 or not weights or len(weights) != len(biases):
        raise DimensionError(f"conv1d_banks: input {x.shape} with {len(weights)} kernels, {len(biases)} biases")
    B, T, D = x.data.shape
    for w, b in zip(weights, biases):
        if w.data.ndim != 3 or w.data.shape[1] != D or b.data.shape != (w.data.shape[2],):
            raise DimensionError(f"conv1d_banks: kernel {w.shape} / bias {b.shape} incompatible with input {x.shape}")
    lengths = _check_lengths(lengths, B, T)
    K = max(w.data.shape[0] for w in weights)
    L = (K - 1) // 2
    C_total = sum(w.data.shape[2] for w in weights)
    # placement of each kernel: (first window tap, first output channel)
    slots, c0 = [], 0
    full = np.zeros((D, K, C_total))
    for w in weights:
        k, _, C = w.data.shape
        p0 = L - (k - 1) // 2
        full[:, p0:p0 + k, c0:c0 + C] = w.data.transpose(1, 0, 2)
        slots.append((p0, k, c0, C))
        c0 += C
    bias = np.concatenate([b.data for b in biases])
    padded = np.zeros((B, T + K - 1, D))
    padded[:, L:L + T] = x.data
    mask = np.arange(T)[None, :] < lengths[:, None]
    windows = np.lib.stride_tricks.sliding_window_view(padded, K, axis=1)[:, :T]  # [B, T, D, K]
    cols = windows[mask].reshape(-1, D * K)
    wmat = full.reshape(D * K, C_total)
    out = np.zeros((B, T, C_total))
    out[mask] = cols @ wmat + bias

    def backward(g):
        g2 = g[mask]
        dfull = (cols.T @ g2).reshape(D, K, C_total)
        dcols = (g2 @ wmat.T).reshape(-1, D, K)
        dpad = np.zeros((B, T + K - 1, D))
        for p in range(K):
            view = dpad[:, p:p + T]
            view[mask] += dcols[:, :, p]
        dws = [dfull[:, p0:p0 + k, c:c + C].transpose(1, 0, 2) for p0, k, c, C in slots]
        dbs, db = [], g2.sum(axis=0)
        for _, _, c, C in slots:
            dbs.append(db[c:c + C])
        return (dpad[:, L:L + T], *dws, *dbs)

    return _make(out, (x, *weights, *biases), backward, "conv1d_banks")


def lstm(x, w_ih, w_hh, bias, lengths=None):
    """Single-layer unidirectional LSTM with zero initial state.

    x: [B, T, D]; w_ih: [D, 4H]; w_hh: [H, 4H]; bias: [4H]; gate order
    i, f, g, o. Returns all hidden states [B, T, H]. With ``lengths`` (in
    descending order) row i stops after lengths[i] steps and its later
    states are zero.
    """
    x, w_ih, w_hh, bias = _wrap(x), _wrap(w_ih), _wrap(w_hh), _wrap(bias)
    B, T, D = x.data.shape
    G = w_ih.data.shape[1]
    if w_ih.data.shape[0] != D or G % 4 or w_hh.data.shape != (G // 4, G) or bias.data.shape != (G,):
        raise DimensionError(
            f"lstm: input {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, bias {bias.shape} disagree"
        )
    ragged = lengths is not None
    lengths = _check_lengths(lengths, B, T)
    if (np.diff(lengths) > 0).any():
        raise ContractError("lstm lengths must be sorted in descending order")
    if ragged:
        bi = np.repeat(np.arange(B), lengths)
        ti = np.concatenate([np.arange(n) for n in lengths])
        xflat = x.data[bi, ti]
        xp = np.zeros((B, T, G))
        xp[bi, ti] = xflat @ w_ih.data + bias.data
    else:
        xflat = x.data.reshape(B * T, D)
        xp = (xflat @ w_ih.data + bias.data).reshape(B, T, G)
    hs, cs, gates = kernels.lstm_forward(xp, w_hh.data, lengths)

    def backward(g):
        dxp, dw_hh = kernels.lstm_backward(g, hs, cs, gates, w_hh.data, lengths)
        dxp2 = dxp[bi, ti] if ragged else dxp.reshape(B * T, G)
        dflat = dxp2 @ w_ih.data.T
        if ragged:
            dx = np.zeros((B, T, D))
            dx[bi, ti] = dflat
        else:
            dx = dflat.reshape(B, T, D)
        return dx, xflat.T @ dxp2, dw_hh, dxp2.sum(axis=0)

    return _make(hs, (x, w_ih, w_hh, bias), backward, "lstm")


def attention_pool(weights, states):
    """Weighted sum over time: weights [B, T], states [B, T, H] -> [B, H]."""
    weights, states = _wrap(weights), _wrap(states)
    if states.data.ndim != 3 or weights.data.shape != states.data.shape[:2]:
        raise DimensionError(f"attention_pool: weights {weights.shape} vs states {states.shape}")
    out = np.einsum("bt,bth->bh", weights.data, states.data)

    def backward(g):
        return (
            np.einsum("bh,bth->bt", g, states.data),
            weights.data[:, :, None] * g[:, None, :],
        )

    return _make(out, (weights, states), backward, "attention_pool")


def pairwise_gaussian_log_density(x, mu, logvar):
    """P[b, c] = log N(x_b; mu_c, diag(exp(logvar_c))) for every row pair.

    x, mu, logvar: [B, D] -> [B, B]. Each entry sums over D in the same order
    as :func:`gaussian_log_density`, so equal inputs give bit-equal entries.
    """
    x, mu, logvar = _wrap(x), _wrap(mu), _wrap(logvar)
    if x.data.ndim != 2 or mu.data.shape != logvar.data.shape or mu.data.shape[1] != x.data.shape[1]:
        raise DimensionError(f"pairwise density: x {x.shape}, mu {mu.shape}, logvar {logvar.shape}")
    D = x.data.shape[1]
    inv = np.exp(-logvar.data)
    diff = x.data[:, None, :] - mu.data[None, :, :]
    terms = -0.5 * diff * diff * inv[None] - 0.5 * logvar.data[None] - 0.5 * math.log(2.0 * math.pi)
    out = terms.sum(axis=2)

    def backward(g):
        gd = g[:, :, None] * diff * inv[None]
        return (
            -gd.sum(axis=1),
            gd.sum(axis=0),
            (g[:, :, None] * (0.5 * diff * diff * inv[None] - 0.5)).sum(axis=0),
        )

    return _make(out, (x, mu, logvar), backward, "pairwise_gaussian")


def gaussian_log_density(x, mu, logvar):
    """Row-wise diagonal Gaussian log density: [B, D] inputs -> [B]."""
    x, mu, logvar = _wrap(x), _wrap(mu), _wrap(logvar)
    if not x.data.shape == mu.data.shape == logvar.data.shape or x.data.ndim != 2:
        raise DimensionError(f"gaussian density: x {x.shape}, mu {mu.shape}, logvar {logvar.shape}")
    inv = np.exp(-logvar.data)
    diff = x.data - mu.data
    terms = -0.5 * diff * diff * inv - 0.5 * logvar.data - 0.5 * math.log(2.0 * math.pi)
    out = terms.sum(axis=1)

    def backward(g):
        gd = g[:, None] * diff * inv
        return -gd, gd, g[:, None] * (0.5 * diff * diff * inv - 0.5)

    return _make(out, (x, mu, logvar), backward, "gaussian")


def elementwise(op, *inputs):
    """Dispatch by name: add, sub, mul, sigmoid, tanh, log, exp, neg, scale."""
    table = {
        "add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh,
        "log": log, "exp": exp, "neg": neg, "scale": scale,
    }
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*inputs)


# backward ------------------------------------------------------------------

class Tape:
    """Reverse-topological schedule of the graph that produced ``output``.

    ``nodes`` lists every tensor requiring a gradient with parents preceding
    children.
    """

    def __init__(self, output):
        self.output = output
        self.nodes = []
        seen = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p is not None and p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    def run(self, seed):
        grads = {id(self.output): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or parent is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    The graph is left intact, so calling this twice doubles the accumulators.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape(loss).run(np.ones_like(loss.data))


# optimisation --------------------------------------------------------------

def glorot(rng, fan_in, fan_out, shape=None, name=""):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Parameter(rng.uniform(-limit, limit, size=shape), name=name)


def zeros(shape, name=""):
    return Parameter(np.zeros(shape), name=name)


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update per parameter; gradients are zeroed afterwards."""
    for p in params:
        p.step += 1
        g = p.grad
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = np.zeros_like(p.data)


def zero_grad(params):
    for p in params:
        p.zero_grad()


def numeric_grad(fn, tensor, eps=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. ``tensor.data`` (in place)."""
    out = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn().item()
        flat[i] = orig - eps
        lo = fn().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return out


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, tensors, eps=1e-5):
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` builds a scalar loss from the current values of ``tensors``, which
    must be leaves with ``requires_grad``.
    """
    for t in tensors:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()
        worst = max(worst, relative_error(analytic, numeric_grad(fn, t, eps)))
    return worst
