"""Minimal reverse-mode differentiation over dense 2-D float64 tensors.

Every op records its parents and a backward rule on the output tensor; the
tape is rebuilt on each forward pass.  ``backward`` walks the tape in reverse
topological order and returns fresh gradients without mutating any tensor,
so calling it twice on the same loss gives identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import NumericError, ValidationError


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "grad_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValidationError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.grad_fn: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output in {op}")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.grad_fn = grad_fn
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# kernel ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a, c) -> Tensor:
    """``c * a`` for a Python float or a 1x1 tensor ``c``."""
    a = as_tensor(a)
    if isinstance(c, Tensor):
        if c.shape != (1, 1):
            raise ValidationError(f"scale: factor must be 1x1, got {c.shape}")
        cv = c.data[0, 0]
        return _make(
            "scale", cv * a.data, (a, c), lambda g: (cv * g, np.array([[np.sum(g * a.data)]]))
        )
    c = float(c)
    return _make("scale", c * a.data, (a,), lambda g: (c * g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return _make("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0  # subgradient 0 at the kink
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_grad(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * y * (1.0 - y)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _make("sigmoid", y, (a,), lambda g: (_sigmoid_grad(y, g),))


def concat_cols(*xs) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    if not xs:
        raise ValidationError("concat_cols needs at least one input")
    rows = xs[0].shape[0]
    if any(x.shape[0] != rows for x in xs):
        raise ValidationError(f"concat_cols: row counts differ {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    return _make(
        "concat_cols",
        np.concatenate([x.data for x in xs], axis=1),
        xs,
        lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))),
    )


def row_sum(a) -> Tensor:
    """Sum across columns: (N, D) -> (N, 1)."""
    a = as_tensor(a)
    return _make("row_sum", a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, a.shape[1], axis=1),))


def row_mean(a) -> Tensor:
    """Mean across columns: (N, D) -> (N, 1)."""
    a = as_tensor(a)
    d = a.shape[1]
    return _make(
        "row_mean", a.data.mean(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g / d, d, axis=1),)
    )


def col_broadcast(w, a) -> Tensor:
    """Scale each row of ``a`` (N, D) by the matching entry of the column ``w`` (N, 1)."""
    w, a = as_tensor(w), as_tensor(a)
    if w.shape != (a.shape[0], 1):
        raise ValidationError(f"col_broadcast: weights {w.shape} do not fit {a.shape}")
    return _make(
        "col_broadcast",
        w.data * a.data,
        (w, a),
        lambda g: ((g * a.data).sum(axis=1, keepdims=True), g * w.data),
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def squared_l2_rowdiff(a, b) -> Tensor:
    """Row-wise ``||a_r - b_r||^2``: (N, D), (N, D) -> (N, 1)."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("squared_l2_rowdiff", a, b)
    diff = a.data - b.data
    out = (diff * diff).sum(axis=1, keepdims=True)
    return _make("squared_l2_rowdiff", out, (a, b), lambda g: (2.0 * g * diff, -2.0 * g * diff))


def dot(a, b) -> Tensor:
    """Inner product of two row vectors -> 1x1."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("dot", a, b)
    if a.shape[0] != 1:
        raise ValidationError(f"dot expects row vectors, got {a.shape}")
    return _make("dot", (a.data @ b.data.T).reshape(1, 1), (a, b), lambda g: (g * b.data, g * a.data))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _make("mean_all", np.array([[a.data.mean()]]), (a,), lambda g: (np.full(a.shape, g[0, 0] / n),))


def softmax_cross_entropy(logits, onehot) -> Tensor:
    """Mean cross-entropy of row-wise softmax(logits) against one-hot targets -> 1x1."""
    z, y = as_tensor(logits), as_tensor(onehot)
    _same_shape("softmax_cross_entropy", z, y)
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    n = z.shape[0]
    loss = -(y.data * logp).sum() / n
    probs = np.exp(logp)
    return _make(
        "softmax_cross_entropy",
        np.array([[loss]]),
        (z, y),
        lambda g: (g[0, 0] * (probs * y.data.sum(axis=1, keepdims=True) - y.data) / n, -g[0, 0] * logp / n),
    )


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a 1x1 ``loss`` with respect to every leaf that requires grad.

    Leaves unreachable from ``loss`` are absent from the map (zero gradient).
    """
    if loss.shape != (1, 1):
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad_fn is None:
            if node.requires_grad:
                leaves[node] = g
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def relu_margin(out: Tensor, skip_exact_zeros: bool = False) -> float:
    """Smallest |input| over the relu nodes on ``out``'s tape (inf if none).

    Finite differences are only meaningful when this exceeds the largest
    perturbation the check applies to any pre-activation.  With
    ``skip_exact_zeros`` entries that are exactly 0.0 are ignored: once every
    bias is nonzero such zeros come from products with an all-zero vector
    (e.g. a fully dead layer) and stay zero under small perturbations.
    """
    margins = []
    for n in _topo_order(out):
        if n.op != "relu" or not n.parents:
            continue
        x = np.abs(n.parents[0].data)
        if skip_exact_zeros:
            x = x[x != 0.0]
        if x.size:
            margins.append(float(np.min(x)))
    return min(margins, default=float("inf"))


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def finite_diff_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    step: float = 1e-4,
    tolerance: float = 1e-4,
    floor: float = 1e-6,
    stencil: int = 5,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` with central differences, per parameter.

    ``f`` receives leaf tensors wrapping ``params`` and must return a scalar
    tensor.  Relative error per entry is ``|a - n| / max(|a|, |n|, floor')``
    with ``floor' = floor * max(1, |f(params)|)``, so rescaling ``f`` does not
    change the verdict; the report keeps the worst entry of each parameter.  The default 5-point
    stencil has O(step^4) truncation error, which allows a step large enough
    to keep rounding noise well below ``floor`` on entries whose true
    gradient is zero.
    """
    if step <= 0:
        raise ValidationError("finite-difference step must be positive")
    if stencil == 3:
        offsets, weights = (1.0, -1.0), (0.5, -0.5)
    elif stencil == 5:
        offsets, weights = (2.0, 1.0, -1.0, -2.0), (-1.0 / 12, 8.0 / 12, -8.0 / 12, 1.0 / 12)
    else:
        raise ValidationError(f"stencil must be 3 or 5, got {stencil}")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in work.items()}
    f0 = f(leaves)
    gmap = backward(f0)
    floor = floor * max(1.0, abs(f0.item()))
    errors = {}
    for name, leaf in leaves.items():
        analytic = gmap.get(leaf, np.zeros(leaf.shape))
        arr = work[name]
        flat = arr.reshape(-1)
        worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            numeric = 0.0
            for off, wt in zip(offsets, weights):
                flat[idx] = orig + off * step
                numeric += wt * f({k: Tensor(v) for k, v in work.items()}).item()
            flat[idx] = orig
            numeric /= step
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        errors[name] = worst
    return GradCheckReport(errors, tolerance)
