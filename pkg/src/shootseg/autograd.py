"""Minimal reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps an ndarray plus a closure computing parent gradients; backward
walks the tape in reverse topological order. Everything runs in float64 so
analytic gradients can be checked against central finite differences.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse


class Tensor:
    __slots__ = ("data", "grad", "parents", "_bwd", "requires_grad")

    def __init__(self, data, parents=(), bwd=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self._bwd = bwd
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every requires_grad leaf."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node._bwd(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad back down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# primitive ops -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return Tensor(
        a.data ** p,
        (a,),
        lambda g: (g * p * a.data ** (p - 1.0),),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.T, (a,), lambda g: (g.T,))


_KINK_TRACE: list[float] | None = None


class track_relu_margins:
    """Collect the min distance to every relu/clamp kink while active.

    Finite-difference checks are only valid away from piecewise boundaries;
    callers use this to verify (or re-draw) inputs so nothing sits within the
    finite-difference step of a kink.
    """

    def __enter__(self):
        global _KINK_TRACE
        self._prev = _KINK_TRACE
        _KINK_TRACE = []
        return _KINK_TRACE

    def __exit__(self, *exc):
        global _KINK_TRACE
        _KINK_TRACE = self._prev
        return False


def relu(a) -> Tensor:
    a = as_tensor(a)
    if _KINK_TRACE is not None and a.data.size:
        _KINK_TRACE.append(float(np.min(np.abs(a.data))))
    mask = a.data > 0
    return Tensor(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return Tensor(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def gather_rows(a, idx) -> Tensor:
    """Row selection out = a[idx]; backward scatter-adds into the source."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor(a.data[idx], (a,), bwd)


def spmm(mat: sparse.spmatrix, a, mat_t=None) -> Tensor:
    """Constant sparse matrix times dense tensor (no gradient w.r.t. the matrix).

    `mat_t` lets callers reuse a precomputed transpose across several calls.
    """
    a = as_tensor(a)
    mat = mat.tocsr()
    if mat_t is None:
        mat_t = mat.T.tocsr()
    return Tensor(mat @ a.data, (a,), lambda g: (mat_t @ g,))


def rownorm(a, eps: float = 1e-8) -> Tensor:
    """Per-row Euclidean norm; backward guards the norm by eps at zero."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=1))
    if _KINK_TRACE is not None and n.size:
        _KINK_TRACE.append(float(n.min()))  # sqrt is FD-hostile near zero
    safe = np.maximum(n, eps)
    return Tensor(n, (a,), lambda g: (a.data * (g / safe)[:, None],))


def log_softmax(a) -> Tensor:
    """Numerically stable row-wise log softmax."""
    a = as_tensor(a)
    m = a.data.max(axis=1, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return Tensor(out, (a,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise against a constant; kink handled like relu."""
    a = as_tensor(a)
    if _KINK_TRACE is not None and a.data.size:
        _KINK_TRACE.append(float(np.min(np.abs(a.data - floor))))
    mask = a.data > floor
    return Tensor(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def standardize_columns(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance per column over rows (current-batch statistics).

    eps acts as a variance floor: healthy columns are standardized exactly
    (so the result is invariant to per-column affine rescaling), degenerate
    ones divide by sqrt(eps) instead of exploding.
    """
    mu = tmean(a, axis=0, keepdims=True)
    centered = sub(a, mu)
    var = tmean(mul(centered, centered), axis=0, keepdims=True)
    return div(centered, power(clamp_min(var, eps), 0.5))


# gradient checking ---------------------------------------------------------


def grad_check(loss_fn, params: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Relative error between reverse-mode and central-difference gradients.

    `loss_fn()` must rebuild the graph from the current parameter data and
    return a scalar Tensor. The reported error is the largest absolute
    deviation divided by the largest gradient magnitude seen (coordinates
    whose true gradient is structurally zero, e.g. biases ahead of a
    standardization, carry only finite-difference roundoff and would swamp a
    per-coordinate quotient). Callers should evaluate away from ReLU kinks
    (nudge inputs, see `track_relu_margins`); exact kinks are measure-zero
    and excluded by convention.
    """
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise ValueError("loss is not finite")
    for p in params.values():
        p.zero_grad()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    worst = 0.0
    scale = 0.0
    for k, p in params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(loss_fn().data)
            flat[i] = keep - eps
            dn = float(loss_fn().data)
            flat[i] = keep
            num = (up - dn) / (2.0 * eps)
            ana = analytic[k].reshape(-1)[i]
            worst = max(worst, abs(ana - num))
            scale = max(scale, abs(ana), abs(num))
    return worst / max(scale, 1e-8)
