"""Dense tensors with tape-based reverse-mode differentiation.

Every primitive computes its forward value with numpy, and, when a tape is
active and any input requires a gradient, records a node holding a closure
that accumulates the vector-Jacobian product into the inputs' ``grad``.
``Tape.backward`` replays the nodes in reverse creation order.

Leaf tensors created with ``requires_grad=True`` start with a zero ``grad``;
intermediate results allocate theirs on first accumulation.
"""

from __future__ import annotations

import threading

import numpy as np

_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

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

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Records primitive nodes; use as a context manager around a forward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, backward_fn):
        self.nodes.append(backward_fn)

    def backward(self, loss: Tensor, seed=None):
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any tensor requiring grad")
        _acc(loss, np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=loss.dtype))
        for fn in reversed(self.nodes):
            fn()
        self.nodes = []


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    """Coerce a binary op's operands, giving plain numbers the tensor's dtype."""
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def _new(data, needs: bool) -> Tensor:
    out = Tensor(data)
    out.requires_grad = needs
    return out


def _make(out_data, inputs, backward):
    """Wrap an output array and register ``backward(out)`` on the active tape."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = _new(out_data, needs)
    if needs:
        def node():
            if out.grad is not None:
                backward(out)

        tape.record(node)
    return out


def _acc(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.shape), dtype=t.dtype)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check(cond, op, *shapes):
    if not cond:
        raise ValueError(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    _check(_broadcastable(a.shape, b.shape), "add", a.shape, b.shape)

    def bw(o):
        _acc(a, _unbroadcast(o.grad, a.shape))
        _acc(b, _unbroadcast(o.grad, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _pair(a, b)
    _check(_broadcastable(a.shape, b.shape), "sub", a.shape, b.shape)

    def bw(o):
        _acc(a, _unbroadcast(o.grad, a.shape))
        _acc(b, -_unbroadcast(o.grad, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _pair(a, b)
    _check(_broadcastable(a.shape, b.shape), "mul", a.shape, b.shape)

    def bw(o):
        if a.requires_grad:
            _acc(a, _unbroadcast(o.grad * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(o.grad * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def _broadcastable(s1, s2) -> bool:
    try:
        np.broadcast_shapes(s1, s2)
    except ValueError:
        return False
    return True


def scale(a, k: float):
    a = as_tensor(a)
    k = a.data.dtype.type(k)

    def bw(o):
        _acc(a, o.grad * k)

    return _make(a.data * k, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bw(o):
        _acc(a, o.grad * (1 - y * y))

    return _make(y, (a,), bw)


def _sigmoid(x):
    # tanh form is overflow-free
    half = x.dtype.type(0.5)
    return half * (np.tanh(half * x) + 1)


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid(a.data)

    def bw(o):
        _acc(a, o.grad * y * (1 - y))

    return _make(y, (a,), bw)


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)

    def bw(o):
        _acc(a, o.grad * y)

    return _make(y, (a,), bw)


def log(a):
    a = as_tensor(a)

    def bw(o):
        _acc(a, o.grad / a.data)

    return _make(np.log(a.data), (a,), bw)


def softplus(a):
    a = as_tensor(a)
    x = a.data
    y = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def bw(o):
        _acc(a, o.grad * _sigmoid(x))

    return _make(y, (a,), bw)


def square(a):
    a = as_tensor(a)

    def bw(o):
        _acc(a, o.grad * 2 * a.data)

    return _make(a.data * a.data, (a,), bw)


def clip(a, lo, hi):
    """Clamp; gradient passes only where the input is strictly inside."""
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)

    def bw(o):
        _acc(a, o.grad * inside)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


# ----------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(o):
        g = o.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -------------------------------------------------------------------- shaping

def reshape(a, shape):
    a = as_tensor(a)

    def bw(o):
        _acc(a, o.grad.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def flatten(a, start_axis=1):
    """Collapse all axes from ``start_axis`` on."""
    a = as_tensor(a)
    return reshape(a, a.shape[:start_axis] + (-1,))


def transpose(a, axes):
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))

    def bw(o):
        _acc(a, o.grad.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw)


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a, idx):
    a = as_tensor(a)
    basic = _is_basic(idx)

    def bw(o):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if basic:
            a.grad[idx] += o.grad
        else:
            np.add.at(a.grad, idx, o.grad)

    return _make(a.data[idx], (a,), bw)


def broadcast_to(a, shape):
    a = as_tensor(a)

    def bw(o):
        _acc(a, _unbroadcast(o.grad, a.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bw)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        _check(False, "concat", *[t.shape for t in ts])
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(o):
        for t, g in zip(ts, np.split(o.grad, sizes, axis=axis)):
            _acc(t, g)

    return _make(out, ts, bw)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    ax = axis if axis >= 0 else axis + ts[0].ndim + 1
    return concat([reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts], axis=ax)


# ------------------------------------------------------------ linear algebra

def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    _check(a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2], "matmul", a.shape, b.shape)

    def bw(o):
        if a.requires_grad:
            _acc(a, _unbroadcast(np.matmul(o.grad, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), o.grad), b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), bw)


def linear(x, w, b=None):
    """Affine map on the last axis: ``x @ w + b`` with ``w`` of shape (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    _check(w.ndim == 2 and x.shape[-1] == w.shape[0], "linear", x.shape, w.shape)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        b = as_tensor(b)
        _check(b.shape == (w.shape[1],), "linear", w.shape, b.shape)
        out += b.data
    out = out.reshape(lead + (w.shape[1],))
    inputs = (x, w) if b is None else (x, w, b)

    def bw(o):
        g = o.grad.reshape(-1, w.shape[1])
        if x.requires_grad:
            _acc(x, (g @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            _acc(w, x2.T @ g)
        if b is not None and b.requires_grad:
            _acc(b, g.sum(axis=0))

    return _make(out, inputs, bw)


def conv1x1(x, w, b=None):
    """1x1 convolution over a channels-last feature map (..., C_in)."""
    return linear(x, w, b)


def softmax(a):
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(o):
        g = o.grad
        _acc(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (a,), bw)


def log_softmax(a):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def bw(o):
        g = o.grad
        _acc(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _make(y, (a,), bw)


# -------------------------------------------------------------- convolution

def _out_size(n, k, stride, padding):
    if padding == "same":
        out = -(-n // stride)
        return out, max((out - 1) * stride + k - n, 0)
    if padding == "valid":
        _check(n >= k, "conv2d", (n,), (k,))
        return (n - k) // stride + 1, 0
    raise ValueError(f"conv2d: unknown padding {padding!r}")


def conv2d(x, w, b=None, stride=1, padding="same"):
    """2-D cross-correlation, NCHW input, weights (C_out, C_in, k, k).

    ``same`` padding gives ceil(n / stride) outputs, with any odd pad on the
    bottom/right.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check(x.ndim == 4 and w.ndim == 4 and x.shape[1] == w.shape[1] and w.shape[2] == w.shape[3],
           "conv2d", x.shape, w.shape)
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    oh, ph = _out_size(h, k, stride, padding)
    ow, pw = _out_size(wd, k, stride, padding)
    pt, pl = ph // 2, pw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, ph - pt), (pl, pw - pl)))
    span_h, span_w = stride * (oh - 1) + 1, stride * (ow - 1) + 1
    # cols: (n, c, k*k, oh, ow) -> (n, c*k*k, oh*ow)
    cols = np.empty((n, c, k * k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i * k + j] = xp[:, :, i:i + span_h:stride, j:j + span_w:stride]
    cols = cols.reshape(n, c * k * k, oh * ow)
    wm = w.data.reshape(co, -1)
    out = np.matmul(wm, cols)
    if b is not None:
        b = as_tensor(b)
        out += b.data[None, :, None]
    out = out.reshape(n, co, oh, ow)
    inputs = (x, w) if b is None else (x, w, b)

    def bw(o):
        g = o.grad.reshape(n, co, oh * ow)
        if w.requires_grad:
            gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            _acc(w, gw.reshape(w.shape))
        if b is not None and b.requires_grad:
            _acc(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wm.T, g).reshape(n, c, k * k, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += dcols[:, :, i * k + j]
            _acc(x, dxp[:, :, pt:pt + h, pl:pl + wd])

    return _make(out, inputs, bw)


# ------------------------------------------------------------------- LSTM

def _lstm_node(gx: Tensor, gx_data, h, c, w_hh, after):
    """Shared LSTM cell given the input-side gate pre-activations ``gx_data``.

    Gate order (input, forget, candidate, output). ``after(dgates)`` routes the
    gate gradient to whatever produced ``gx_data``.
    """
    H = h.shape[-1]
    gates = gx_data + h.data @ w_hh.data
    i = _sigmoid(gates[..., :H])
    f = _sigmoid(gates[..., H:2 * H])
    g = np.tanh(gates[..., 2 * H:3 * H])
    o = _sigmoid(gates[..., 3 * H:])
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in (gx, h, c, w_hh))
    h_out, c_out = _new(h_new, needs), _new(c_new, needs)
    if needs:
        def node():
            if h_out.grad is None and c_out.grad is None:
                return
            dh = h_out.grad if h_out.grad is not None else np.zeros_like(h_new)
            dc = dh * o * (1 - tc * tc)
            if c_out.grad is not None:
                dc = dc + c_out.grad
            d_o = dh * tc * o * (1 - o)
            d_i = dc * g * i * (1 - i)
            d_f = dc * c.data * f * (1 - f)
            d_g = dc * i * (1 - g * g)
            dgates = np.concatenate([d_i, d_f, d_g, d_o], axis=-1)
            _acc(c, dc * f)
            if h.requires_grad:
                _acc(h, dgates @ w_hh.data.T)
            if w_hh.requires_grad:
                _acc(w_hh, h.data.reshape(-1, H).T @ dgates.reshape(-1, 4 * H))
            after(dgates)

        tape.record(node)
    return h_out, c_out


def lstm_cell_step(x, h, c, w_ih, w_hh, b):
    """One LSTM step returning ``(h_new, c_new)``.

    Weights: ``w_ih`` (in, 4H), ``w_hh`` (H, 4H), ``b`` (4H,).
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    w_ih, w_hh, b = as_tensor(w_ih), as_tensor(w_hh), as_tensor(b)
    H = h.shape[-1]
    _check(w_ih.shape == (x.shape[-1], 4 * H) and w_hh.shape == (H, 4 * H) and b.shape == (4 * H,)
           and c.shape == h.shape and x.shape[:-1] == h.shape[:-1],
           "lstm_cell_step", x.shape, h.shape, w_ih.shape, w_hh.shape)
    gx = x.data @ w_ih.data + b.data

    def after(dgates):
        if x.requires_grad:
            _acc(x, dgates @ w_ih.data.T)
        dg2 = dgates.reshape(-1, 4 * H)
        if w_ih.requires_grad:
            _acc(w_ih, x.data.reshape(-1, x.shape[-1]).T @ dg2)
        if b.requires_grad:
            _acc(b, dg2.sum(axis=0))

    holder = _new(gx, any(t.requires_grad for t in (x, w_ih, b)))
    return _lstm_node(holder, gx, h, c, w_hh, after)


def lstm_cell_step_projected(gx, h, c, w_hh):
    """LSTM step whose input-side pre-activations ``x @ w_ih + b`` are given as ``gx``.

    Lets a decoder that feeds the same input at every step project it once.
    """
    gx, h, c, w_hh = as_tensor(gx), as_tensor(h), as_tensor(c), as_tensor(w_hh)
    H = h.shape[-1]
    _check(gx.shape == h.shape[:-1] + (4 * H,) and w_hh.shape == (H, 4 * H) and c.shape == h.shape,
           "lstm_cell_step_projected", gx.shape, h.shape, w_hh.shape)

    def after(dgates):
        _acc(gx, dgates)

    return _lstm_node(gx, gx.data, h, c, w_hh, after)


# --------------------------------------------------------------- scattering

def scatter_rows_to_grid(rows, index, n_cells):
    """Write row ``i`` of ``rows`` (R, C) to flat cell ``index[i]`` of a zero grid.

    Returns an (n_cells, C) tensor. Indices must be unique; each output cell's
    gradient flows back to exactly the row written there.
    """
    rows = as_tensor(rows)
    index = np.asarray(index, dtype=np.int64)
    _check(rows.ndim == 2 and index.shape == (rows.shape[0],), "scatter_rows_to_grid",
           rows.shape, index.shape)
    if index.size and (index.min() < 0 or index.max() >= n_cells):
        raise ValueError("scatter_rows_to_grid: index out of range")
    if len(np.unique(index)) != index.size:
        raise ValueError("scatter_rows_to_grid: duplicate cell index")
    out = np.zeros((n_cells, rows.shape[1]), dtype=rows.dtype)
    out[index] = rows.data

    def bw(o):
        _acc(rows, o.grad[index])

    return _make(out, (rows,), bw)
