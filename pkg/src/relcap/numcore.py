"""Dense array arithmetic with tape-based reverse-mode differentiation.

Every model in the package is written against the small op set below. A
:class:`Tape` records each op as it runs; :func:`backward` walks the tape in
reverse and deposits parameter gradients into the :class:`ParamStore` the
tape was opened on.

Values are thin handles around numpy arrays. Ops accept plain arrays (or
scalars) wherever a Value is accepted; those are treated as constants.
"""
from __future__ import annotations

import builtins
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

DEFAULT_DTYPE = np.float64
LAYER_NORM_EPS = 1e-5

_MAGIC = b"RCPS"
_VERSION = 1


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

class ParamStore:
    """Named learnable arrays, each paired with a gradient accumulator."""

    def __init__(self, dtype=DEFAULT_DTYPE):
        self.dtype = np.dtype(dtype)
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise ContractError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=self.dtype)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __setitem__(self, name: str, value):
        arr = np.asarray(value, dtype=self.dtype)
        if name in self.values and arr.shape != self.values[name].shape:
            raise DimensionError(
                f"{name}: new shape {arr.shape} != {self.values[name].shape}")
        self.values[name] = arr.copy()
        if name not in self.grads or self.grads[name].shape != arr.shape:
            self.grads[name] = np.zeros_like(self.values[name])

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.values if n.startswith(prefix)]

    def zero_grads(self):
        for g in self.grads.values():
            g.fill(0.0)

    def num_elements(self) -> int:
        return builtins.sum(v.size for v in self.values.values())

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for name, v in self.values.items():
            out.add(name, v.copy())
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, v in self.values.items():
            out.add(name, v)
        return out

    def update(self, other: "ParamStore", prefix: str = ""):
        """Copy every entry of ``other`` whose name starts with ``prefix``."""
        for name in other.names(prefix):
            self[name] = other[name]

    # serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [_MAGIC, struct.pack("<II", _VERSION, len(self.values))]
        for name, v in self.values.items():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", v.ndim))
            parts.append(struct.pack(f"<{v.ndim}Q", *v.shape))
            parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, dtype=DEFAULT_DTYPE) -> "ParamStore":
        if buf[:4] != _MAGIC:
            raise ContractError("not a parameter file (bad magic)")
        version, count = struct.unpack_from("<II", buf, 4)
        if version != _VERSION:
            raise ContractError(f"unsupported parameter file version {version}")
        off = 12
        store = cls(dtype)
        try:
            for _ in range(count):
                (nlen,) = struct.unpack_from("<I", buf, off)
                off += 4
                name = buf[off:off + nlen].decode("utf-8")
                off += nlen
                (rank,) = struct.unpack_from("<I", buf, off)
                off += 4
                dims = struct.unpack_from(f"<{rank}Q", buf, off)
                off += 8 * rank
                n = int(np.prod(dims, dtype=np.int64))
                data = np.frombuffer(buf, dtype="<f8", count=n, offset=off)
                off += 8 * n
                store.add(name, data.reshape(dims))
        except (struct.error, ValueError) as exc:
            raise ContractError(f"truncated parameter file: {exc}") from None
        if off != len(buf):
            raise ContractError("trailing bytes after parameter entries")
        return store

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, dtype=DEFAULT_DTYPE) -> "ParamStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), dtype)


def glorot(rng: np.random.Generator, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(shape)
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_out, fan_in = shape[-2], shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

class _Node:
    __slots__ = ("op", "inputs", "value", "grad_fn", "param")

    def __init__(self, op, inputs, value, grad_fn=None, param=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.grad_fn = grad_fn
        self.param = param


class Value:
    """Handle to an array produced on a tape."""

    __slots__ = ("tape", "id", "data", "requires_grad")
    __array_priority__ = 100

    def __init__(self, tape, node_id, data, requires_grad):
        self.tape = tape
        self.id = node_id
        self.data = data
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Value(shape={self.shape}, op={self.tape.nodes[self.id].op if self.id >= 0 else 'const'})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Append-only record of ops.

    ``grad=False`` gives an inference tape: ops still return Values but no
    nodes are kept, so nothing can be differentiated.
    """

    def __init__(self, store: ParamStore | None = None, grad: bool = True,
                 check_finite: bool = True):
        self.store = store
        self.grad = grad
        self.check_finite = check_finite
        self.dtype = store.dtype if store is not None else np.dtype(DEFAULT_DTYPE)
        self.nodes: list[_Node] = []
        self._params: dict[str, Value] = {}

    def __len__(self):
        return len(self.nodes)

    def const(self, x) -> Value:
        if isinstance(x, Value):
            return x
        arr = np.asarray(x, dtype=self.dtype)
        return Value(self, -1, arr, False)

    def param(self, name: str) -> Value:
        if self.store is None:
            raise ContractError("tape has no parameter store")
        v = self._params.get(name)
        if v is not None:
            return v
        data = self.store.values[name]
        if not self.grad:
            v = Value(self, -1, data, False)
        else:
            self.nodes.append(_Node("param", (), data, param=name))
            v = Value(self, len(self.nodes) - 1, data, True)
        self._params[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self.param(name)

    def record(self, op: str, inputs: Sequence[Value], out: np.ndarray,
               grad_fn: Callable | None) -> Value:
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite output from op {op!r}")
        needs = self.grad and any(v.requires_grad for v in inputs)
        if not needs:
            return Value(self, -1, out, False)
        self.nodes.append(_Node(op, tuple(v.id for v in inputs), out, grad_fn))
        return Value(self, len(self.nodes) - 1, out, True)

    def backward(self, loss: Value, seed: float = 1.0):
        """Accumulate d(seed * loss)/d(param) into the store's gradients."""
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        grads: list = [None] * (loss.id + 1)
        grads[loss.id] = np.full(loss.shape, seed, dtype=loss.data.dtype)
        nodes = self.nodes
        for i in range(loss.id, -1, -1):
            g = grads[i]
            if g is None:
                continue
            grads[i] = None
            node = nodes[i]
            if node.param is not None:
                acc = self.store.grads[node.param]
                acc += g
                continue
            in_grads = node.grad_fn(g)
            for j, gj in zip(node.inputs, in_grads):
                if j < 0 or gj is None:
                    continue
                prev = grads[j]
                grads[j] = gj if prev is None else prev + gj


class Scope:
    """Prefix view of a tape's parameters: ``scope["W"]`` is ``tape.param(prefix + ".W")``."""

    def __init__(self, tape: Tape, prefix: str):
        self.tape = tape
        self.prefix = prefix

    def __getitem__(self, name) -> Value:
        return self.tape.param(f"{self.prefix}.{name}")

    def __contains__(self, name):
        return f"{self.prefix}.{name}" in self.tape.store

    def sub(self, name) -> "Scope":
        return Scope(self.tape, f"{self.prefix}.{name}")


def backward(loss: Value, seed: float = 1.0):
    loss.tape.backward(loss, seed)


def _tape_of(*xs) -> Tape:
    # record on the tape that carries gradients; constants may come from anywhere
    vals = [x for x in xs if isinstance(x, Value)]
    if not vals:
        raise ContractError("op needs at least one Value argument")
    live = {id(v.tape): v.tape for v in vals if v.requires_grad}
    if len(live) > 1:
        raise ContractError("op mixes differentiable Values from different tapes")
    return next(iter(live.values())) if live else vals[0].tape


def _lift(tape: Tape, x) -> Value:
    return x if isinstance(x, Value) else tape.const(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------

def add(a, b) -> Value:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.shape, b.shape
    return t.record("add", (a, b), a.data + b.data,
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Value:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.shape, b.shape
    return t.record("sub", (a, b), a.data - b.data,
                    lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Value:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    ad, bd = a.data, b.data
    return t.record("mul", (a, b), ad * bd,
                    lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Value:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def grad_fn(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))
    return t.record("div", (a, b), out, grad_fn)


def exp(x: Value) -> Value:
    out = np.exp(x.data)
    return x.tape.record("exp", (x,), out, lambda g: (g * out,))


def log(x: Value) -> Value:
    xd = x.data
    return x.tape.record("log", (x,), np.log(xd), lambda g: (g / xd,))


def clip(x: Value, lo: float, hi: float) -> Value:
    """Clamp to [lo, hi]; gradient is zero where clamping is active."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return x.tape.record("clip", (x,), np.clip(xd, lo, hi), lambda g: (g * inside,))


def square(x: Value) -> Value:
    xd = x.data
    return x.tape.record("square", (x,), xd * xd, lambda g: (2.0 * g * xd,))


# --------------------------------------------------------------------------
# Activations
# --------------------------------------------------------------------------

def relu(x: Value) -> Value:
    pos = x.data > 0
    return x.tape.record("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (g * pos,))


def sigmoid(x: Value) -> Value:
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return x.tape.record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x: Value) -> Value:
    out = np.tanh(x.data)
    return x.tape.record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def _softmax_array(x: np.ndarray, mask=None) -> np.ndarray:
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    mask = np.broadcast_to(mask, x.shape)
    z = np.where(mask, x, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x, 0.0) - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def softmax(x: Value, mask=None) -> Value:
    """Softmax over the last axis. Positions where ``mask`` is False get 0."""
    out = _softmax_array(x.data, mask)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return x.tape.record("softmax", (x,), out, grad_fn)


def log_softmax(x: Value) -> Value:
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return x.tape.record("log_softmax", (x,), out,
                         lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "softmax": softmax,
                "softmax-lastdim": softmax}


def activation(x: Value, kind: str) -> Value:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None
    if fn is softmax and (x.ndim == 0 or x.shape[-1] < 1):
        raise ContractError("softmax needs a last dimension of size >= 1")
    return fn(x)


# --------------------------------------------------------------------------
# Linear algebra and normalization
# --------------------------------------------------------------------------

def matmul(a, b) -> Value:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))
    return t.record("matmul", (a, b), ad @ bd, grad_fn)


def linear(x, W, b=None) -> Value:
    """``x @ W.T + b`` over the last axis of x. W has shape (d_out, d_in)."""
    t = _tape_of(x, W, b)
    x, W = _lift(t, x), _lift(t, W)
    xd, Wd = x.data, W.data
    if Wd.ndim != 2 or xd.shape[-1] != Wd.shape[1]:
        raise DimensionError(f"linear shape mismatch: x {xd.shape}, W {Wd.shape}")
    out = xd @ Wd.T
    if b is not None:
        b = _lift(t, b)
        if b.shape != (Wd.shape[0],):
            raise DimensionError(f"linear bias shape {b.shape} != ({Wd.shape[0]},)")
        out = out + b.data
    x2 = xd.reshape(-1, xd.shape[-1])

    def grad_fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wd
        gW = g2.T @ x2
        if b is None:
            return (gx, gW)
        return (gx, gW, g2.sum(axis=0))
    inputs = (x, W) if b is None else (x, W, b)
    return t.record("linear", inputs, out, grad_fn)


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Value:
    """Normalize each row over the last axis, then scale and shift.

    A zero-variance row normalizes to zero (so it maps to ``beta``) even
    when ``eps`` is 0.
    """
    t = _tape_of(x, gamma, beta)
    x, gamma, beta = _lift(t, x), _lift(t, gamma), _lift(t, beta)
    xd = x.data
    if xd.shape[-1] < 1:
        raise DimensionError("layer_norm needs a last dimension >= 1")
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + eps)
    inv = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data
    lead = tuple(range(xd.ndim - 1))

    def grad_fn(g):
        dxhat = g * gd
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (gx, (g * xhat).sum(axis=lead), g.sum(axis=lead))
    return t.record("layer_norm", (x, gamma, beta), out, grad_fn)


# --------------------------------------------------------------------------
# Shape manipulation and reductions
# --------------------------------------------------------------------------

def reshape(x: Value, shape) -> Value:
    s = x.shape
    return x.tape.record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(s),))


def transpose(x: Value, axes=None) -> Value:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return x.tape.record("transpose", (x,), x.data.transpose(axes),
                         lambda g: (g.transpose(inv),))


def concat(xs: Iterable, axis: int = -1) -> Value:
    xs = list(xs)
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return t.record("concat", xs, out, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(xs: Iterable, axis: int = 0) -> Value:
    xs = list(xs)
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)
    n = len(xs)
    return t.record("stack", xs, out,
                    lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def index(x: Value, key) -> Value:
    """``x[key]`` for basic or advanced numpy indexing."""
    xd = x.data
    out = xd[key]
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(k is Ellipsis or k is None or isinstance(k, (slice, int, np.integer))
                for k in parts)

    def grad_fn(g):
        gx = np.zeros_like(xd)
        if basic:
            gx[key] += g
        else:
            np.add.at(gx, key, g)
        return (gx,)
    return x.tape.record("index", (x,), np.array(out, copy=True), grad_fn)


def take(x: Value, ids, axis: int = 0) -> Value:
    """Gather slices along ``axis`` (embedding lookup when axis=0)."""
    ids = np.asarray(ids, dtype=np.int64)
    xd = x.data
    if ids.size and (ids.min() < -xd.shape[axis] or ids.max() >= xd.shape[axis]):
        raise ContractError(f"take: index out of range for axis of size {xd.shape[axis]}")
    out = np.take(xd, ids, axis=axis)

    def grad_fn(g):
        gx = np.zeros_like(xd)
        if axis == 0:
            np.add.at(gx, ids, g)
        else:
            gm = np.moveaxis(gx, axis, 0)
            np.add.at(gm, ids, np.moveaxis(g, list(range(axis, axis + ids.ndim)),
                                           list(range(ids.ndim))))
        return (gx,)
    return x.tape.record("take", (x,), out, grad_fn)


def sum(x: Value, axis=None, keepdims: bool = False) -> Value:  # noqa: A001
    xd = x.data
    out = np.asarray(xd.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xd.shape).copy(),)
    return x.tape.record("sum", (x,), out, grad_fn)


def mean(x: Value, axis=None, keepdims: bool = False) -> Value:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def segment_sum(x: Value, segments, n: int) -> Value:
    """Sum rows of ``x`` into ``n`` buckets given by ``segments``."""
    seg = np.asarray(segments, dtype=np.int64)
    xd = x.data
    out = np.zeros((n,) + xd.shape[1:], dtype=xd.dtype)
    np.add.at(out, seg, xd)
    return x.tape.record("segment_sum", (x,), out, lambda g: (g[seg],))


def segment_softmax(scores: Value, segments, n: int) -> Value:
    """Softmax of a flat score vector within each segment."""
    seg = np.asarray(segments, dtype=np.int64)
    s = scores.data
    mx = np.full(n, -np.inf, dtype=s.dtype)
    np.maximum.at(mx, seg, s)
    e = np.exp(s - mx[seg])
    z = np.bincount(seg, weights=e, minlength=n)
    out = e / z[seg]

    def grad_fn(g):
        dot = np.bincount(seg, weights=g * out, minlength=n)
        return (out * (g - dot[seg]),)
    return scores.tape.record("segment_softmax", (scores,), out, grad_fn)


# --------------------------------------------------------------------------
# Finite-difference verification
# --------------------------------------------------------------------------

def grad_check(f: Callable[[ParamStore], Value], params: ParamStore,
               eps: float = 1e-6, names: Sequence[str] | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must build a fresh tape on ``params`` and return a scalar Value.
    The error for each element is |a - n| / max(|a|, |n|, 1e-8).
    """
    names = list(params.names()) if names is None else list(names)
    params.zero_grads()
    loss = f(params)
    base = float(loss.data.reshape(-1)[0])
    backward(loss)
    analytic = {n: params.grads[n].copy() for n in names}
    again = float(f(params).data.reshape(-1)[0])
    if again != base:
        raise ContractError("grad_check: f is not deterministic")

    worst = 0.0
    for name in names:
        p = params.values[name]
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(params).data.reshape(-1)[0])
            flat[i] = orig - eps
            fm = float(f(params).data.reshape(-1)[0])
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
