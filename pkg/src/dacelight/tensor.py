"""Minimal dense-tensor arithmetic with reverse-mode autodiff.

The op set is fixed to what the enhancement model needs: elementwise
arithmetic, sigmoid/tanh, square/sqrt/abs, full reductions, a gated
[0,1] clamp, 2-D cross-correlation and forward spatial differences.
Recording happens on an explicitly opened :class:`Tape`; with no tape
active every op is a plain numpy computation, which is the inference
path.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """The innermost open tape of the current thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional real array, optionally participating in a tape.

    `data` is always a numpy array (float32 by default; float64 is used
    by the gradient-checking tests). `grad` is populated by
    :meth:`Tape.backward` and has the same shape as `data`.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_reference")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 is_reference: bool = False):
        # Production math is float32; gradient checking passes dtype=float64.
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        # Ground-truth images are tagged so loss functions can refuse them.
        self.is_reference = is_reference

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, is_reference=self.is_reference)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)

    def mean(self) -> "Tensor":
        return mean(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])


class Tape:
    """Ordered record of operations for one forward pass.

    Ops append in execution order, so the record list is topologically
    sorted by construction. :meth:`backward` seeds the scalar loss with
    adjoint 1 and walks the records in reverse; every reachable leaf
    tensor (one the caller created with requires_grad=True) ends up with
    ``grad`` populated. Calling backward again without resetting grads
    accumulates additively.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        self._records.append((out, tuple(inputs), vjp))

    def backward(self, loss: Tensor) -> None:
        if loss.data.ndim != 0:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
        produced = {id(out) for out, _, _ in self._records}
        if id(loss) not in produced:
            raise ValueError("loss was not produced on this tape")
        adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        tensors: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, vjp in reversed(self._records):
            g = adjoint.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                tensors[key] = t
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gi
                else:
                    adjoint[key] = gi
        # Only leaves (tensors no record produced) get grad materialized;
        # intermediate adjoints are discarded with the walk.
        for key, g in adjoint.items():
            t = tensors[key]
            g = np.broadcast_to(g, t.data.shape).astype(t.dtype, copy=False)
            t.grad = g.copy() if t.grad is None else t.grad + g


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _wrap(data: np.ndarray) -> Tensor:
    """Wrap an op result without touching its dtype."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.is_reference = False
    return out


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Wrap op output; record it if a tape is open and a grad is needed."""
    out = _wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over dimensions that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise binary ops ----------------------------------------------
#
# Python scalars are kept as scalars so they never promote the array
# dtype (float32 stays float32 in production, float64 in gradcheck).


def _binary(a, b, out, grad_a: Callable, grad_b: Callable) -> Tensor:
    inputs = []
    vjps = []
    if isinstance(a, Tensor):
        inputs.append(a)
        vjps.append(lambda g: _unbroadcast(grad_a(g), a.data.shape))
    if isinstance(b, Tensor):
        inputs.append(b)
        vjps.append(lambda g: _unbroadcast(grad_b(g), b.data.shape))
    return _result(out, tuple(inputs), lambda g: tuple(v(g) for v in vjps))


def add(a, b) -> Tensor:
    return _binary(a, b, _data(a) + _data(b), lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, _data(a) - _data(b), lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    return _binary(a, b, ad * bd, lambda g: g * bd, lambda g: g * ad)


def div(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    if np.any(np.asarray(bd) == 0):
        raise ZeroDivisionError(
            "division by zero; add a small offset to the denominator")
    out = ad / bd
    return _binary(a, b, out, lambda g: g / bd, lambda g: -g * out / bd)


# -- elementwise unary ops -------------------------------------------------


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # exp overflow for very negative inputs saturates to inf, and
    # 1/(1+inf) is exactly the correct limit 0, so the plain formula is
    # value-safe; only the overflow warning needs silencing.
    out = np.negative(x.data, out=np.empty_like(x.data))
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (g * 2.0 * x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (g * 0.5 / out,))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clamp01(x) -> Tensor:
    """Clamp to [0,1]; gradient passes inside the open interval, 0 outside."""
    x = as_tensor(x)
    out = np.clip(x.data, 0.0, 1.0)
    gate = (x.data > 0.0) & (x.data < 1.0)
    return _result(out, (x,), lambda g: (g * gate,))


# -- reductions ------------------------------------------------------------


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _result(np.mean(x.data), (x,),
                   lambda g: (np.full(x.data.shape, g / n, dtype=x.dtype),))


def tsum(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.sum(x.data), (x,),
                   lambda g: (np.full(x.data.shape, g, dtype=x.dtype),))


# -- shape ops --------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take(x, idx) -> Tensor:
    """Basic (integer/slice) indexing with scatter-add backward."""
    x = as_tensor(x)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), vjp)


# -- spatial ops -------------------------------------------------------------


def spatial_gradient(x) -> tuple[Tensor, Tensor]:
    """Forward differences along the last two axes.

    dx[..., i, j] = x[..., i, j+1] - x[..., i, j] with the last column 0;
    dy analogously with the last row 0. Output shapes equal the input's.
    """
    x = as_tensor(x)
    if x.data.ndim < 2 or x.data.shape[-1] < 2 or x.data.shape[-2] < 2:
        raise ValueError(f"spatial_gradient needs H,W >= 2, got shape {x.shape}")
    d = x.data
    dx = np.zeros_like(d)
    dy = np.zeros_like(d)
    dx[..., :, :-1] = d[..., :, 1:] - d[..., :, :-1]
    dy[..., :-1, :] = d[..., 1:, :] - d[..., :-1, :]

    def vjp_dx(g):
        gx = np.zeros_like(d)
        gx[..., :, 1:] += g[..., :, :-1]
        gx[..., :, :-1] -= g[..., :, :-1]
        return (gx,)

    def vjp_dy(g):
        gx = np.zeros_like(d)
        gx[..., 1:, :] += g[..., :-1, :]
        gx[..., :-1, :] -= g[..., :-1, :]
        return (gx,)

    return _result(dx, (x,), vjp_dx), _result(dy, (x,), vjp_dy)


def conv2d(x, weight, bias=None, padding: int | tuple[int, int] = 0) -> Tensor:
    """2-D cross-correlation plus bias, stride 1, zero padding.

    x: [N,C,H,W], weight: [K,C,kh,kw] with odd kh,kw, bias: [K] or None.
    padding=(kh//2, kw//2) keeps the spatial size ("same" mode).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects x[N,C,H,W] and weight[K,C,kh,kw]")
    n, c, h, w = x.data.shape
    k, cw, kh, kw = weight.data.shape
    if cw != c:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel dims must be odd")
    if bias is not None and bias.data.shape != (k,):
        raise ValueError(f"bias must have shape ({k},)")
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ValueError("input smaller than kernel after padding")
    if ph > kh - 1 or pw > kw - 1:
        raise ValueError("padding beyond kernel-1 is not supported")

    if kh == 1 and kw == 1 and not ph and not pw:
        # pointwise conv is a plain channel-mixing matmul, no windowing
        flat = x.data.reshape(n, c, h * w)
        out = np.einsum("kc,nci->nki", weight.data[:, :, 0, 0], flat,
                        optimize=True).reshape(n, k, h, w)
        windows = None
    else:
        xp = (np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
              if (ph or pw) else x.data)
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [N,C,H',W',kh,kw]
        out = np.tensordot(windows, weight.data,
                           axes=([1, 4, 5], [1, 2, 3]))  # [N,H',W',K]
        out = np.ascontiguousarray(np.moveaxis(out, 3, 1))
    if bias is not None:
        out += bias.data[None, :, None, None]
    ho, wo = out.shape[2], out.shape[3]

    def vjp(g):
        gw = None
        if weight.requires_grad:
            if windows is None:
                gw = np.einsum("nki,nci->kc", g.reshape(n, k, h * w),
                               x.data.reshape(n, c, h * w),
                               optimize=True).reshape(k, c, 1, 1)
            else:
                gw = np.tensordot(g, windows,
                                  axes=([0, 2, 3], [0, 2, 3]))  # [K,C,kh,kw]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            # d/dx is the full correlation of g with the flipped kernel.
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - ph, kh - 1 - ph),
                            (kw - 1 - pw, kw - 1 - pw)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))  # [N,K,H,W,kh,kw]
            wflip = weight.data[:, :, ::-1, ::-1]
            gx = np.tensordot(gwin, wflip, axes=([1, 4, 5], [0, 2, 3]))  # [N,H,W,C]
            gx = np.ascontiguousarray(np.moveaxis(gx, 3, 1))
        if bias is not None:
            return (gx, gw, gb)
        return (gx, gw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, inputs, vjp)
