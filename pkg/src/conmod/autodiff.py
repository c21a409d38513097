"""Small reverse-mode autodiff over dense float64 numpy arrays.

Graphs are recorded eagerly by every op and rebuilt on each forward pass.
Complex numbers are carried as (real, imag) pairs of real tensors.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    # make ndarray <op> Tensor defer to the Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    """A named leaf that always requires grad."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def make_node(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result; `backward_fn(g)` returns one gradient (or None) per parent."""
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return value


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return make_node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return make_node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return make_node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = _check_finite(a.value / b.value, "div")

    def bw(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        )

    return make_node(out, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = _check_finite(a.value**p, "power")
    return make_node(out, (a,), lambda g: (g * p * a.value ** (p - 1.0),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sin(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = _check_finite(np.log(a.value), "log")
    return make_node(out, (a,), lambda g: (g / a.value,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = _check_finite(np.sqrt(a.value), "sqrt")
    return make_node(out, (a,), lambda g: (g * 0.5 / out,))


# ------------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return make_node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def total(a, axis=None) -> Tensor:
    """Sum reduction."""
    a = as_tensor(a)
    out = a.value.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return total(a, axis) * (1.0 / n)


def concat(items: Sequence, axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    try:
        out = np.concatenate([t.value for t in items], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in items)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in items])

    def bw(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_node(out, items, bw)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.value[index]

    basic = all(
        isinstance(i, (int, slice, type(None), type(Ellipsis)))
        for i in (index if isinstance(index, tuple) else (index,))
    )

    def bw(g):
        full = np.zeros_like(a.value)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(out), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return make_node(a.value.T, (a,), lambda g: (g.T,))


def complex_mul(ar, ai, br, bi) -> tuple[Tensor, Tensor]:
    """(ar + j ai) * (br + j bi) via the four-term real product."""
    ar, ai, br, bi = map(as_tensor, (ar, ai, br, bi))
    return ar * br - ai * bi, ar * bi + ai * br


def stop_gradient(a) -> Tensor:
    """Identity forward; blocks all gradient flow backward."""
    a = as_tensor(a)
    return Tensor(a.value)


# ------------------------------------------------------------------ fused


def lstm(x, w_x, w_h, bias) -> Tensor:
    """Single-layer LSTM over time with zero initial state.

    x: (T, I), w_x: (I, 4H), w_h: (H, 4H), bias: (4H,). Gate order i, f, g, o.
    Returns hidden states (T, H).
    """
    x, w_x, w_h, bias = map(as_tensor, (x, w_x, w_h, bias))
    T, n_in = x.shape
    H = w_h.shape[0]
    if w_x.shape != (n_in, 4 * H) or w_h.shape != (H, 4 * H) or bias.shape != (4 * H,):
        raise ShapeError(
            f"lstm: x {x.shape}, w_x {w_x.shape}, w_h {w_h.shape}, bias {bias.shape} do not agree"
        )
    pre_x = x.value @ w_x.value + bias.value
    gates = np.empty((T, 4 * H))
    cells = np.empty((T, H))
    hs = np.empty((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    wh = w_h.value
    for t in range(T):
        z = pre_x[t] + h @ wh
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        gg = np.tanh(z[2 * H : 3 * H])
        o = _sigmoid(z[3 * H :])
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates[t, :H], gates[t, H : 2 * H], gates[t, 2 * H : 3 * H], gates[t, 3 * H :] = i, f, gg, o
        cells[t] = c
        hs[t] = h

    def bw(g):
        d_pre = np.empty((T, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            i, f = gates[t, :H], gates[t, H : 2 * H]
            gg, o = gates[t, 2 * H : 3 * H], gates[t, 3 * H :]
            c_prev = cells[t - 1] if t > 0 else np.zeros(H)
            tc = np.tanh(cells[t])
            dh = g[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            d_pre[t, :H] = dc * gg * i * (1.0 - i)
            d_pre[t, H : 2 * H] = dc * c_prev * f * (1.0 - f)
            d_pre[t, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
            d_pre[t, 3 * H :] = dh * tc * o * (1.0 - o)
            dh_next = d_pre[t] @ wh.T
            dc_next = dc * f
        h_prev = np.vstack([np.zeros((1, H)), hs[:-1]])
        return (
            d_pre @ w_x.value.T,
            x.value.T @ d_pre,
            h_prev.T @ d_pre,
            d_pre.sum(axis=0),
        )

    return make_node(hs, (x, w_x, w_h, bias), bw)


# ------------------------------------------------------------------ backward


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf.

    Leaves not reachable from `loss` keep whatever grad they had (None after
    zero_grad); the optimizer treats None as "not live this step".
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    epsilon: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backward grads and central differences.

    `f` rebuilds the graph from the current parameter values on each call.
    With `max_coords`, a random subset of coordinates per parameter is probed.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("finite_difference_check: f is not finite")
    backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + epsilon
            with no_grad():
                up = f().item()
            flat[k] = orig - epsilon
            with no_grad():
                down = f().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("finite_difference_check: f is not finite")
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic.reshape(-1)[k]
            denom = max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
