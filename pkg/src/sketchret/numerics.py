"""Dense-network kernel: reverse-mode differentiation, Adam, gradient checking.

The computation graph is implicit: every operation returns a `Tensor` node
holding its value, links to its input nodes, and a vector-Jacobian closure.
Leaf parameters carry a stable name; everything else is anonymous. Only the
primitives needed by the retrieval model are provided, there is no ambition
of a general autodiff system.

Training runs in float32; gradient checks rebuild the identical graph in
float64 because central differences are unreliable in single precision.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

# Guard added to cosine / norm denominators so zero vectors stay finite.
EPS_GUARD = 1e-12


class Tensor:
    """A value in the computation graph.

    `data` is a numpy array (row-major); `name` is set only for leaf
    parameters; `_vjp(upstream)` returns one gradient per parent, or None
    for non-differentiable inputs. Tensors are immutable once produced by
    an operation and safe to share read-only.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_vjp")

    def __init__(self, data, name=None, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.name = name
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def parameter(data, name: str) -> Tensor:
    """Leaf parameter with a stable name; gradients are collected under it."""
    if not name:
        raise ContractError("parameter requires a non-empty name")
    return Tensor(_as_float_array(data), name=name)


def constant(data, dtype=None) -> Tensor:
    """Leaf input node; participates in the graph but collects no gradient."""
    return Tensor(_as_float_array(data, dtype))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _check_2d(op: str, **operands: Tensor):
    for label, t in operands.items():
        if t.data.ndim != 2:
            raise DimensionError(f"{op}: {label} must be 2-D, got shape {t.data.shape}")


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map y = x @ w + b for a batch of rows."""
    _check_2d("dense", x=x, w=w)
    if b.data.ndim != 1:
        raise DimensionError(f"dense: b must be 1-D, got shape {b.data.shape}")
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"dense: x{x.data.shape} @ w{w.data.shape} + b{b.data.shape} does not conform"
        )
    out = x.data @ w.data + b.data

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor(out, _parents=(x, w, b), _vjp=vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def vjp(g):
        return g, g

    return Tensor(a.data + b.data, _parents=(a, b), _vjp=vjp)


def scale(x: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g * c,)

    return Tensor(x.data * c, _parents=(x,), _vjp=vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (used for eps * sigma in the reparameterization)."""
    _same_shape("mul", a, b)

    def vjp(g):
        return g * b.data, g * a.data

    return Tensor(a.data * b.data, _parents=(a, b), _vjp=vjp)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation of two batches with equal row counts."""
    _check_2d("concat", a=a, b=b)
    if a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(
            f"concat: row counts {a.data.shape[0]} and {b.data.shape[0]} differ"
        )
    na = a.data.shape[1]

    def vjp(g):
        return g[:, :na], g[:, na:]

    return Tensor(np.concatenate([a.data, b.data], axis=1), _parents=(a, b), _vjp=vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _check_2d("slice", x=x)
    if not (0 <= start < stop <= x.data.shape[1]):
        raise DimensionError(
            f"slice: columns [{start}:{stop}] out of range for shape {x.data.shape}"
        )

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return Tensor(np.ascontiguousarray(x.data[:, start:stop]), _parents=(x,), _vjp=vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor(np.asarray(x.data.mean()), _parents=(x,), _vjp=vjp)


def sum_all(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor(np.asarray(x.data.sum()), _parents=(x,), _vjp=vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row cross-entropy -log softmax(logits)[label], shape (batch,).

    Uses the log-sum-exp max shift, so saturated logits cannot overflow.
    """
    _check_2d("softmax_cross_entropy", logits=logits)
    n, c = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(
            f"softmax_cross_entropy: labels shape {labels.shape} does not match batch {n}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise IndexError(f"label {bad} out of range for {c} categories")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    out = log_z - shifted[rows, labels]

    def vjp(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[rows, labels] -= 1
        return (soft * g[:, None],)

    return Tensor(out, _parents=(logits,), _vjp=vjp)


def row_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine similarity (a.b)/(|a||b| + eps), shape (batch,).

    A zero row yields cosine 0 thanks to the epsilon guard.
    """
    _check_2d("cosine", a=a, b=b)
    _same_shape("cosine", a, b)
    dots = (a.data * b.data).sum(axis=1)
    na = np.sqrt((a.data ** 2).sum(axis=1))
    nb = np.sqrt((b.data ** 2).sum(axis=1))
    denom = na * nb + EPS_GUARD
    out = dots / denom
    tiny = np.finfo(a.data.dtype).tiny

    def vjp(g):
        inv = 1.0 / denom
        fa = dots * inv * inv * nb / np.maximum(na, tiny)
        fb = dots * inv * inv * na / np.maximum(nb, tiny)
        ga = g[:, None] * (b.data * inv[:, None] - a.data * fa[:, None])
        gb = g[:, None] * (a.data * inv[:, None] - b.data * fb[:, None])
        return ga, gb

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def row_l2_distance(a: Tensor, b: Tensor, squared: bool = False) -> Tensor:
    """Per-row Euclidean distance |a - b|, shape (batch,).

    `squared=True` gives the squared norm instead (smooth at equality).
    """
    _check_2d("l2_distance", a=a, b=b)
    _same_shape("l2_distance", a, b)
    diff = a.data - b.data
    sq = (diff ** 2).sum(axis=1)
    if squared:

        def vjp(g):
            ga = 2.0 * g[:, None] * diff
            return ga, -ga

        return Tensor(sq, _parents=(a, b), _vjp=vjp)

    out = np.sqrt(sq)
    tiny = np.finfo(a.data.dtype).tiny

    def vjp(g):
        ga = g[:, None] * diff / np.maximum(out, tiny)[:, None]
        return ga, -ga

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def row_gaussian_kl(mu: Tensor, sigma: Tensor) -> Tensor:
    """Per-row KL( N(mu, diag(sigma^2)) || N(0, I) ), shape (batch,)."""
    _check_2d("gaussian_kl", mu=mu, sigma=sigma)
    _same_shape("gaussian_kl", mu, sigma)
    if not (sigma.data > 0).all():
        raise ContractError("gaussian_kl: sigma must be strictly positive")
    out = 0.5 * (mu.data ** 2 + sigma.data ** 2 - 2.0 * np.log(sigma.data) - 1.0).sum(axis=1)

    def vjp(g):
        gmu = g[:, None] * mu.data
        gsigma = g[:, None] * (sigma.data - 1.0 / sigma.data)
        return gmu, gsigma

    return Tensor(out, _parents=(mu, sigma), _vjp=vjp)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar root, accumulating into node.grad.

    Each node reachable from the root is visited exactly once; leaf
    parameters not on a path to the root are never touched, so their
    gradient is exactly zero by construction.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {loss.data.shape}")
    order = _topological(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every named parameter.

    Parameters unreachable from the loss get an exact zero array.
    """
    for p in params.values():
        p.grad = None
    backward(loss)
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a named parameter dict, updated in place.

    Moment tensors mirror their parameters' shape and dtype; the step
    counter increases by one per `step` call. Single-owner object.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        missing = self.params.keys() - grads.keys()
        if missing:
            raise ContractError(f"adam step missing gradients for: {sorted(missing)}")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ContractError(
                    f"adam step: gradient shape {g.shape} != parameter shape "
                    f"{p.data.shape} for {name!r}"
                )
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: Adam) -> Adam:
    """Apply one Adam update to `params` (must be the dict `state` was built on)."""
    if state.params.keys() != params.keys():
        raise ContractError("adam state was built for a different parameter set")
    state.step(grads)
    return state


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                      h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must rebuild the loss graph from the current parameter values
    and be deterministic (any noise inputs held fixed). Parameters must be
    float64; the relative error per element is
    |analytic - central| / (|analytic| + |central| + 1e-12).
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ContractError(
                f"finite_diff_check requires float64 parameters, {name!r} is {p.data.dtype}"
            )
    loss = loss_fn()
    if loss.data.size != 1:
        raise ContractError("finite_diff_check: loss_fn must return a scalar")
    if not np.isfinite(loss.data):
        raise NumericalError(f"finite_diff_check: loss is non-finite ({loss.data})")
    analytic = gradients(loss, params)

    worst = 0.0
    for name, p in params.items():
        ga = analytic[name]
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            lo_hi = float(loss_fn().data)
            p.data[idx] = orig - h
            lo_lo = float(loss_fn().data)
            p.data[idx] = orig
            if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                raise NumericalError(
                    f"finite_diff_check: non-finite loss while perturbing {name}{list(idx)}"
                )
            fd = (lo_hi - lo_lo) / (2.0 * h)
            rel = abs(float(ga[idx]) - fd) / (abs(float(ga[idx])) + abs(fd) + 1e-12)
            if rel > worst:
                worst = rel
    return worst


def require_finite(arrays: Iterable[np.ndarray], context: str) -> None:
    """Raise NumericalError if any array contains NaN or infinity."""
    for arr in arrays:
        if not np.isfinite(arr).all():
            raise NumericalError(f"non-finite values in {context}")
