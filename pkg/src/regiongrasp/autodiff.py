"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Design: define-by-run. Ops executed inside a ``with Tape():`` block are
recorded in execution order (which is therefore topological order); a single
``backward(loss)`` pass visits the records exactly once in reverse. Outside a
tape, ops compute forward values only, which doubles as an inference mode.

Everything is float64. Broadcasting follows numpy rules; gradients of
broadcast operands are reduced back to the operand shape by summing over the
expanded axes.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeMismatchError",
    "backward",
    "grad_check",
    "GradCheckReport",
    "add", "sub", "mul", "div", "matmul", "concat", "gather", "narrow",
    "reshape", "transpose", "sum_", "mean_", "max_", "min_",
    "relu", "gelu", "exp", "log", "sin", "cos", "tanh", "pow_const", "abs_",
    "clip", "softmax", "layer_norm", "l1_distance", "squared_l2",
]


class ShapeMismatchError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class Tensor:
    """Dense float64 array participating in the current tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __matmul__(self, other): return matmul(self, other)
    def __neg__(self): return mul(self, -1.0)


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _current_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    bwd: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered list of recorded operations for one thread of execution."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data, inputs: tuple, bwd) -> Tensor:
    out = Tensor(out_data)
    needs = any(i.requires_grad for i in inputs)
    out.requires_grad = needs
    tape = _current_tape()
    if tape is not None and needs:
        out._tape = tape
        tape.records.append(_Record(out, inputs, bwd))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"{opname}: shapes {a.shape} and {b.shape} are not broadcastable"
        ) from None


# ---------------------------------------------------------------------------
# elementwise / linear ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _make(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g / bd, a.shape),
                _unbroadcast(-g * ad / (bd * bd), b.shape))

    return _make(out, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatchError(
            f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError(
            f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), bwd)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), bwd)


def gather(t, idx, axis: int = 0) -> Tensor:
    """Rows (or slices along ``axis``) selected by integer index."""
    t = _as_tensor(t)
    idx = np.asarray(idx, dtype=np.intp)
    out = np.take(t.data, idx, axis=axis)
    shape = t.shape

    def bwd(g):
        gi = np.zeros(shape)
        np.add.at(np.moveaxis(gi, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gi,)

    return _make(out, (t,), bwd)


def narrow(t, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    t = _as_tensor(t)
    sl = [slice(None)] * t.data.ndim
    sl[axis] = slice(start, start + length)
    out = t.data[tuple(sl)]
    shape = t.shape

    def bwd(g):
        gi = np.zeros(shape)
        gi[tuple(sl)] = g
        return (gi,)

    return _make(out, (t,), bwd)


def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)
    old = t.shape
    out = t.data.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return _make(out, (t,), bwd)


def transpose(t, axes) -> Tensor:
    t = _as_tensor(t)
    out = np.transpose(t.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _make(out, (t,), bwd)


def sum_(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    out = t.data.sum(axis=axis, keepdims=keepdims)
    shape = t.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(out, (t,), bwd)


def mean_(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    n = t.size if axis is None else t.shape[axis]
    return mul(sum_(t, axis=axis, keepdims=keepdims), 1.0 / n)


def max_(t, axis: int) -> Tensor:
    """Max along one axis; ties route the gradient to the smallest index."""
    t = _as_tensor(t)
    arg = np.argmax(t.data, axis=axis)
    out = np.take_along_axis(t.data, np.expand_dims(arg, axis), axis=axis)
    out = np.squeeze(out, axis=axis)
    shape = t.shape

    def bwd(g):
        gi = np.zeros(shape)
        np.put_along_axis(gi, np.expand_dims(arg, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (gi,)

    return _make(out, (t,), bwd)


def min_(t, axis: int) -> Tensor:
    t = _as_tensor(t)
    arg = np.argmin(t.data, axis=axis)
    out = np.take_along_axis(t.data, np.expand_dims(arg, axis), axis=axis)
    out = np.squeeze(out, axis=axis)
    shape = t.shape

    def bwd(g):
        gi = np.zeros(shape)
        np.put_along_axis(gi, np.expand_dims(arg, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (gi,)

    return _make(out, (t,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(t) -> Tensor:
    t = _as_tensor(t)
    out = np.maximum(t.data, 0.0)
    mask = t.data > 0.0

    def bwd(g):
        return (g * mask,)

    return _make(out, (t,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(t) -> Tensor:
    """GELU with the tanh approximation."""
    t = _as_tensor(t)
    x = t.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * dinner
        return (g * d,)

    return _make(out, (t,), bwd)


def exp(t) -> Tensor:
    t = _as_tensor(t)
    out = np.exp(t.data)

    def bwd(g):
        return (g * out,)

    return _make(out, (t,), bwd)


def log(t) -> Tensor:
    t = _as_tensor(t)
    out = np.log(t.data)
    x = t.data

    def bwd(g):
        return (g / x,)

    return _make(out, (t,), bwd)


def sin(t) -> Tensor:
    t = _as_tensor(t)
    x = t.data

    def bwd(g):
        return (g * np.cos(x),)

    return _make(np.sin(x), (t,), bwd)


def cos(t) -> Tensor:
    t = _as_tensor(t)
    x = t.data

    def bwd(g):
        return (-g * np.sin(x),)

    return _make(np.cos(x), (t,), bwd)


def tanh(t) -> Tensor:
    t = _as_tensor(t)
    out = np.tanh(t.data)

    def bwd(g):
        return (g * (1.0 - out ** 2),)

    return _make(out, (t,), bwd)


def pow_const(t, p: float) -> Tensor:
    t = _as_tensor(t)
    x = t.data
    out = x ** p

    def bwd(g):
        return (g * p * x ** (p - 1.0),)

    return _make(out, (t,), bwd)


def sqrt(t) -> Tensor:
    return pow_const(t, 0.5)


def abs_(t) -> Tensor:
    t = _as_tensor(t)
    out = np.abs(t.data)
    s = np.sign(t.data)

    def bwd(g):
        return (g * s,)

    return _make(out, (t,), bwd)


def clip(t, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through where lo <= x <= hi."""
    t = _as_tensor(t)
    out = np.clip(t.data, lo, hi)
    mask = (t.data >= lo) & (t.data <= hi)

    def bwd(g):
        return (g * mask,)

    return _make(out, (t,), bwd)


def softmax(t, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    t = _as_tensor(t)
    if not -t.data.ndim <= axis < t.data.ndim:
        raise ShapeMismatchError(
            f"softmax: axis {axis} out of range for shape {t.shape}")
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (t,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeMismatchError(
            f"layer_norm: gain/bias shape {gain.shape}/{bias.shape} "
            f"does not match normalized axis length {n}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data
    gd = gain.data

    def bwd(g):
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        dxhat = g * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _make(out, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# distance helpers


def l1_distance(a, b) -> Tensor:
    """Mean absolute elementwise difference."""
    return mean_(abs_(sub(a, b)))


def squared_l2(a, b) -> Tensor:
    """Sum of squared elementwise differences."""
    d = sub(a, b)
    return sum_(mul(d, d))


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor) -> None:
    """Accumulate gradients of ``loss`` into every reachable requires_grad
    tensor. Repeated calls without zeroing accumulate."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            raise RuntimeError("backward: loss was not recorded on a tape")
        # constant loss: nothing reachable, nothing to do
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.out))
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.bwd(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                holders[key] = inp
    for key, g in grads.items():
        t = holders[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


@dataclass
class GradCheckReport:
    """Outcome of comparing tape gradients against central differences."""

    per_param_max_rel_error: list[float]
    max_rel_error: float
    passed: bool
    probe_count: int
    failure: Optional[str] = None


def grad_check(f: Callable[[], Tensor], params: list[Tensor],
               step: float = 1e-5, tol: float = 1e-6,
               probes_per_param: int = 5, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central finite differences
    on randomly probed entries of each parameter.

    Relative error uses denominator max(|g|, |fd|, 1e-3) so that near-zero
    gradients are judged on an absolute scale where round-off dominates.
    """
    if not (0.0 < step <= 1e-2):
        raise ValueError("grad_check: step must be in (0, 1e-2]")
    for p in params:
        p.zero_grad()
    with Tape():
        out = f()
        if out.size != 1:
            raise ValueError("grad_check: f must be scalar-valued")
        backward(out)
    tape_grads = []
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            return GradCheckReport([], math.inf, False, 0,
                                   failure=f"non-finite tape gradient in param {i}")
        tape_grads.append(g.copy())

    rng = np.random.default_rng(seed)
    per_param = []
    total_probes = 0
    failure = None
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        gflat = tape_grads[i].reshape(-1)
        k = min(probes_per_param, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for j in idxs:
            orig = flat[j]
            flat[j] = orig + step
            fp = f().item()
            flat[j] = orig - step
            fm = f().item()
            flat[j] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                failure = f"non-finite forward value at param {i}, entry {j}"
                worst = math.inf
                break
            fd = (fp - fm) / (2.0 * step)
            denom = max(abs(gflat[j]), abs(fd), 1e-3)
            worst = max(worst, abs(gflat[j] - fd) / denom)
            total_probes += 1
        per_param.append(worst)
        if failure:
            break
    max_err = max(per_param) if per_param else 0.0
    return GradCheckReport(per_param, max_err, max_err < tol and failure is None,
                           total_probes, failure=failure)
