"""Reverse-mode automatic differentiation over dense float64 tensors.

A dynamic tape: every operation returns a new :class:`Tensor` holding the
forward value plus a closure that propagates vector-Jacobian products to its
parents. Calling :func:`backward` on a scalar walks the tape in reverse
topological order and accumulates gradients on every tensor that requires
them. The tape is rebuilt on each forward pass, so variable-length inputs
need no special handling.

Everything is float64 and single-threaded; sizes here are desk scale, and
f64 keeps finite-difference gradient checks tight.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when an operation receives incompatibly shaped operands."""


def _shape_error(op: str, a: Array, b: Array) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


class Tensor:
    """A node on the tape: float64 data, optional gradient, parent links."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return time_slice(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def item(self) -> float:
        return float(self.data.reshape(()))


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.data.shape))
    else:
        t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.data, b.data) from None

    def back(out):
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    return _make(data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.data, b.data) from None

    def back(out):
        _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _make(data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise _shape_error("div", a.data, b.data) from None

    def back(out):
        _accumulate(a, _unbroadcast(out.grad / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        _accumulate(a, -out.grad)

    return _make(-a.data, (a,), back)


# -- matrix and vector products -------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise _shape_error("matmul", a.data, b.data)
    data = a.data @ b.data

    def back(out):
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    return _make(data, (a, b), back)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise _shape_error("dot", a.data, b.data)
    data = np.array(a.data @ b.data)

    def back(out):
        _accumulate(a, out.grad * b.data)
        _accumulate(b, out.grad * a.data)

    return _make(data, (a, b), back)


def conv1d(x, w, dilation: int = 1, padding: int | None = None) -> Tensor:
    """Dilated 1-D convolution along the time (first) axis.

    ``x`` is (T, C_in), ``w`` is (K, C_in, C_out). ``padding`` counts zero
    frames added on each side; the default pads to preserve length, which
    requires an odd kernel.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[1]:
        raise _shape_error("conv1d", x.data, w.data)
    k = w.data.shape[0]
    if padding is None:
        if (k - 1) % 2 != 0:
            raise ValueError(f"conv1d: same-padding needs an odd kernel, got {k}")
        padding = dilation * (k - 1) // 2
    t, c_in = x.data.shape
    c_out = w.data.shape[2]
    span = dilation * (k - 1)
    t_out = t + 2 * padding - span
    if t_out < 1:
        raise ShapeError(
            f"conv1d: input of {t} frames too short for kernel {k} at dilation {dilation}"
        )
    xp = np.zeros((t + 2 * padding, c_in))
    xp[padding:padding + t] = x.data
    # im2col: gather the k dilated taps, then one GEMM
    cols = np.empty((t_out, k, c_in))
    for tap in range(k):
        off = tap * dilation
        cols[:, tap] = xp[off:off + t_out]
    cols2 = cols.reshape(t_out, k * c_in)
    w2 = w.data.reshape(k * c_in, c_out)
    data = cols2 @ w2

    def back(out):
        if x.requires_grad:
            gcols = (out.grad @ w2.T).reshape(t_out, k, c_in)
            gxp = np.zeros_like(xp)
            for tap in range(k):
                off = tap * dilation
                gxp[off:off + t_out] += gcols[:, tap]
            _accumulate(x, gxp[padding:padding + t])
        if w.requires_grad:
            _accumulate(w, (cols2.T @ out.grad).reshape(k, c_in, c_out))

    return _make(data, (x, w), back)


# -- nonlinearities --------------------------------------------------------


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # piecewise form avoids overflow for large negative inputs
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def back(out):
        _accumulate(x, out.grad * data * (1.0 - data))

    return _make(data, (x,), back)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def back(out):
        _accumulate(x, out.grad * (1.0 - data * data))

    return _make(data, (x,), back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def back(out):
        _accumulate(x, out.grad * (x.data > 0.0))

    return _make(data, (x,), back)


def exp(x) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)

    def back(out):
        _accumulate(x, out.grad * data)

    return _make(data, (x,), back)


def log(x) -> Tensor:
    x = as_tensor(x)
    data = np.log(x.data)

    def back(out):
        _accumulate(x, out.grad / x.data)

    return _make(data, (x,), back)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through the interior only."""
    x = as_tensor(x)
    data = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def back(out):
        _accumulate(x, out.grad * inside)

    return _make(data, (x,), back)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def back(out):
        inner = (out.grad * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (out.grad - inner))

    return _make(data, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def back(out):
        _accumulate(x, out.grad - soft * out.grad.sum(axis=axis, keepdims=True))

    return _make(data, (x,), back)


# -- reductions and reshaping ---------------------------------------------


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis)

    def back(out):
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(np.asarray(data), (x,), back)


def tmean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def l2_norm(x) -> Tensor:
    """Euclidean norm of all entries; gradient is x / ||x|| (zero at x = 0)."""
    x = as_tensor(x)
    value = float(np.sqrt((x.data * x.data).sum()))
    data = np.array(value)

    def back(out):
        if value > 0.0:
            _accumulate(x, out.grad * x.data / value)

    return _make(data, (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def back(out):
        _accumulate(x, out.grad.reshape(x.data.shape))

    return _make(data, (x,), back)


def time_slice(x, key) -> Tensor:
    """Slice along the first (temporal) axis; backward scatters into place."""
    x = as_tensor(x)
    if isinstance(key, int):
        key = slice(key, key + 1) if key != -1 else slice(-1, None)
    if not isinstance(key, slice):
        raise TypeError(f"time_slice: expected a slice or int index, got {key!r}")
    data = x.data[key]

    def back(out):
        g = np.zeros_like(x.data)
        g[key] = out.grad
        _accumulate(x, g)

    return _make(data, (x,), back)


def dropout(x, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. ``rng=None`` means eval mode (identity)."""
    x = as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * mask

    def back(out):
        _accumulate(x, out.grad * mask)

    return _make(data, (x,), back)


def topk_mean(x, k: int) -> Tensor:
    """Mean of the k largest values per column of a (T, C) tensor.

    Uses all rows when T < k. Ties select the smallest row index, so the
    subgradient is deterministic.
    """
    x = as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ShapeError(f"topk_mean: need a non-empty (T, C) input, got {tuple(x.data.shape)}")
    if k < 1:
        raise ValueError(f"topk_mean: k must be >= 1, got {k}")
    t, c = x.data.shape
    k_eff = min(k, t)
    order = np.argsort(-x.data, axis=0, kind="stable")[:k_eff]
    cols = np.arange(c)
    data = x.data[order, cols].mean(axis=0)

    def back(out):
        g = np.zeros_like(x.data)
        np.add.at(g, (order, cols), out.grad / k_eff)
        _accumulate(x, g)

    return _make(data, (x,), back)


# -- backward pass ---------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) for every tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {tuple(loss.data.shape)}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)


# -- parameter store -------------------------------------------------------


class ParamStore:
    """Named trainable tensors with persistent gradients.

    Insertion order is preserved, so traversal (and hence training) is
    deterministic. One trainer owns a store at a time; concurrent read-only
    inference over a frozen store is safe.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_items(self):
        return [(n, t) for n, t in self._params.items() if self._trainable[n]]

    def set_trainable(self, prefix: str, flag: bool) -> None:
        """Toggle every parameter whose name starts with ``prefix``."""
        hit = False
        for name, t in self._params.items():
            if name.startswith(prefix):
                self._trainable[name] = flag
                t.requires_grad = flag
                if not flag:
                    t.grad = None
                hit = True
        if not hit:
            raise KeyError(f"no parameters match prefix {prefix!r}")

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, Array]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, Array]) -> None:
        for name, value in arrays.items():
            if name not in self._params:
                raise KeyError(f"unknown parameter {name!r}")
            t = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.data.shape:
                raise ShapeError(
                    f"load_arrays: parameter {name!r} has shape {t.data.shape}, file has {value.shape}"
                )
            t.data = value.copy()


# -- gradient verification --------------------------------------------------


class FiniteDifferenceReport:
    """Per-parameter maximum relative error between analytic and numeric grads."""

    def __init__(self, errors: dict[str, float], step: float, tolerance: float):
        self.errors = errors
        self.step = step
        self.tolerance = tolerance

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def __repr__(self) -> str:
        worst = self.max_error
        return f"FiniteDifferenceReport(params={len(self.errors)}, max_error={worst:.3e}, ok={self.ok})"


def finite_difference_check(
    store: ParamStore,
    loss_fn,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> FiniteDifferenceReport:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must be deterministic (re-seed any dropout inside it); two
    forward passes are compared bit-for-bit and a mismatch is rejected. Cost
    is two forward passes per parameter entry, so use small models.
    """
    first = loss_fn()
    second = loss_fn()
    if not isinstance(first, Tensor) or first.data.size != 1:
        raise ValueError("finite_difference_check: loss_fn must return a scalar Tensor")
    if not np.array_equal(first.data, second.data):
        raise ValueError(
            "finite_difference_check: loss_fn is not deterministic "
            f"({first.item()!r} vs {second.item()!r}); disable dropout or fix the seed"
        )

    store.zero_grad()
    backward(loss_fn())
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in store.trainable_items()
    }

    errors: dict[str, float] = {}
    for name, t in store.trainable_items():
        flat = t.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_fn().item()
            flat[i] = keep - step
            down = loss_fn().item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-5)
            worst = max(worst, abs(a - numeric) / denom)
        errors[name] = worst
    return FiniteDifferenceReport(errors, step, tolerance)
