"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Only the operations needed by the MLP model and the margin losses are
provided. Every op records its parents and a closure that maps the output
gradient to parent gradients; :func:`backward` walks the graph in reverse
topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ArithmeticError):
    """Op evaluated outside its domain (e.g. cosine of a zero vector)."""


KINK_OPS = ("relu", "hinge")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

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
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a constant")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward_fn) -> Tensor:
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        # constant subgraph: keep parents for inspection only
        out._parents = tuple(parents)
    return out


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    """Elementwise (or scalar) product."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), "mul", bw)


def scale(a, c: float) -> Tensor:
    return mul(a, float(c))


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (no batching)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: expected 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    A = a.data if a.ndim == 2 else a.data[None, :]
    B = b.data if b.ndim == 2 else b.data[:, None]

    def bw(g):
        G = g.reshape(A.shape[0], B.shape[1])
        return (G @ B.T).reshape(a.shape), (A.T @ G).reshape(b.shape)

    out = A @ B
    if a.ndim == 1 and b.ndim == 1:
        out = out.reshape(())
    elif a.ndim == 1:
        out = out.reshape(B.shape[1])
    elif b.ndim == 1:
        out = out.reshape(A.shape[0])
    return _make(out, (a, b), "matmul", bw)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: expected two vectors of equal length, got {a.shape} and {b.shape}")
    return matmul(a, b)


# -- nonlinearities ------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    # subgradient 0 at the kink
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


def hinge(x) -> Tensor:
    """max(0, x); same subgradient convention as :func:`relu`."""
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), "hinge", lambda g: (g * mask,))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus_np(x) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def softplus_inverse(y) -> np.ndarray:
    """Inverse of softplus for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("softplus inverse requires positive values")
    # log(expm1(y)) overflows for large y; there softplus(x) ~ x
    return np.where(y > 30.0, y + np.log1p(-np.exp(-y)), np.log(np.expm1(np.minimum(y, 30.0))))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    return _make(softplus_np(x.data), (x,), "softplus", lambda g: (g * sigmoid_np(x.data),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), "exp", lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    return _make(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


# -- reductions and reshaping --------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), "sum", bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _make(out, (x,), "reshape", lambda g: (g.reshape(x.shape),))


def take(x, indices) -> Tensor:
    """Gather from the flattened tensor; duplicate indices accumulate in backward."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < -x.size or idx.max() >= x.size):
        raise ShapeError(f"take: index out of range for tensor of size {x.size}")
    flat = x.data.reshape(-1)

    def bw(g):
        gx = np.zeros(x.size)
        np.add.at(gx, idx, g)
        return (gx.reshape(x.shape),)

    return _make(flat[idx], (x,), "take", bw)


# -- norms and similarities ----------------------------------------------------

def l2_norm(x, axis=None) -> Tensor:
    """Euclidean norm over ``axis`` (all elements by default)."""
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = np.sqrt((x.data * x.data).sum(axis=axes, keepdims=True))

    def bw(g):
        if np.any(n == 0):
            raise DomainError("gradient of the L2 norm at the zero vector is undefined")
        g = np.reshape(g, n.shape) if g.size == n.size else g
        return (x.data / n * g,)

    out = n.sum(axis=axes) if axes else n
    return _make(out.reshape(_reduced_shape(x.shape, axes)), (x,), "l2_norm", bw)


def _reduced_shape(shape, axes):
    return tuple(s for i, s in enumerate(shape) if i not in axes)


def cosine_similarity(a, b) -> Tensor:
    """<a, b> / (|a| |b|) for two vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: expected equal-length vectors, got {a.shape} and {b.shape}")
    na = np.sqrt(a.data @ a.data)
    nb = np.sqrt(b.data @ b.data)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity is undefined for a zero-norm vector")
    s = (a.data @ b.data) / (na * nb)

    def bw(g):
        ga = b.data / (na * nb) - s * a.data / (na * na)
        gb = a.data / (na * nb) - s * b.data / (nb * nb)
        return ga * g, gb * g

    return _make(s, (a, b), "cosine", bw)


def pairwise_cosine(z) -> Tensor:
    """Cosine similarity between every pair of rows of an (n, d) matrix."""
    z = as_tensor(z)
    if z.ndim != 2:
        raise ShapeError(f"pairwise_cosine: expected a 2-D matrix, got {z.shape}")
    norms = np.sqrt((z.data * z.data).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        bad = np.flatnonzero(norms[:, 0] == 0.0).tolist()
        raise DomainError(f"cosine similarity is undefined for zero-norm rows {bad}")
    u = z.data / norms
    s = u @ u.T

    def bw(g):
        gu = (g + g.T) @ u
        radial = (gu * u).sum(axis=1, keepdims=True)
        return ((gu - radial * u) / norms,)

    return _make(s, (z,), "pairwise_cosine", bw)


def softmax_np(v: np.ndarray, axis=-1) -> np.ndarray:
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Fused, shift-stabilized softmax + cross-entropy.

    ``logits`` is (C,) with an integer label, or (n, C) with n labels.
    Labels are 0-based class indices. Returns a scalar or an (n,) vector of
    per-row losses.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    V = logits.data[None, :] if single else logits.data
    if V.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected (C,) or (n, C) logits, got {logits.shape}")
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if y.shape != (V.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: {y.shape[0]} labels for {V.shape[0]} rows")
    if np.any(y < 0) or np.any(y >= V.shape[1]):
        raise ValueError(f"class index out of range [0, {V.shape[1]})")
    rows = np.arange(V.shape[0])
    shifted = V - V.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    losses = logz - shifted[rows, y]
    p = np.exp(shifted - logz[:, None])

    def bw(g):
        d = p.copy()
        d[rows, y] -= 1.0
        d *= np.reshape(g, (-1, 1))
        return (d.reshape(logits.shape),)

    return _make(losses[0] if single else losses, (logits,), "softmax_ce", bw)


# -- graph traversal -----------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each after all of its parents."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every requires_grad leaf."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


def min_kink_distance(root: Tensor) -> float:
    """Smallest |input| at any relu/hinge in the graph (inf if none)."""
    best = np.inf
    for node in topological_order(root):
        if node.op in KINK_OPS and node._parents[0].size:
            best = min(best, float(np.min(np.abs(node._parents[0].data))))
    return best


# -- finite-difference gradient check ------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    passed: bool
    tolerance: float
    step: float
    min_kink_distance: float = np.inf
    message: str = ""
    analytic: list[np.ndarray] = field(default_factory=list, repr=False)
    numeric: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error, default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: str = "tensor") -> float:
    """Largest elementwise discrepancy, relative to the gradient's magnitude.

    ``scale="tensor"`` divides by the largest |gradient| in the tensor, so
    near-zero components are judged against the tensor's scale rather than
    against the finite-difference noise floor. ``scale="element"`` divides
    each component by its own max(|a_i|, |n_i|).
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    diff = np.abs(a - n)
    if scale == "tensor":
        denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))))
        return 0.0 if denom == 0.0 else float(diff.max() / denom)
    if scale == "element":
        denom = np.maximum(np.abs(a), np.abs(n))
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(diff == 0.0, 0.0, diff / denom)
        return float(rel.max())
    raise ValueError(f"unknown scale {scale!r}")


def gradient_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-5,
    scale: str = "tensor",
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call. Parameter values are restored afterwards.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    root = f()
    kink = min_kink_distance(root)
    if not np.isfinite(root.data).all():
        return GradCheckReport([], False, tolerance, step, kink, "objective is not finite")
    backward(root)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    numeric = []
    for p in params:
        num = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * step)
        numeric.append(num)
    for p in params:
        p.zero_grad()
    finite = all(np.isfinite(a).all() for a in analytic) and all(np.isfinite(n).all() for n in numeric)
    if not finite:
        return GradCheckReport([], False, tolerance, step, kink, "non-finite gradient encountered",
                               analytic, numeric)
    errs = [relative_error(a, n, scale) for a, n in zip(analytic, numeric)]
    passed = max(errs, default=0.0) < tolerance
    msg = "" if passed else f"max relative error {max(errs):.3e} >= {tolerance:.1e}"
    return GradCheckReport(errs, passed, tolerance, step, kink, msg, analytic, numeric)
