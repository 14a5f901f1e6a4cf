"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every tensor is shaped (batch, channel, height, width); scalars are
(1, 1, 1, 1) and per-channel vectors are (1, C, 1, 1).  Differentiable
operations record a backward closure on their output, tagged with a
monotonically increasing node id, so creation order is a valid
topological order of the graph.  ``Tensor.backward`` walks the recorded
nodes exactly once in reverse creation order and accumulates gradients
additively across fan-out.

Default arithmetic is float32; gradient verification runs the same graph
in float64 (build the model with ``dtype=np.float64``) through
``finite_diff_check``.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteGradient, NonScalarLoss, ShapeMismatch

Axes = tuple[int, ...]

_node_ids = itertools.count()
_grad_enabled = True
_debug_checks = False


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def set_debug_checks(flag: bool) -> None:
    """Toggle NaN/Inf validation of every op output (slow; tests only)."""
    global _debug_checks
    _debug_checks = bool(flag)


class Tensor:
    """A 4-D array plus optional gradient buffer and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
        if arr.ndim != 4:
            raise ShapeMismatch(f"tensors are strictly 4-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._node_id = next(_node_ids)

    # --- constructors ---

    @staticmethod
    def zeros(shape: Sequence[int], requires_grad: bool = False, dtype=np.float32) -> "Tensor":
        return Tensor(np.zeros(tuple(shape), dtype=dtype), requires_grad=requires_grad,
                      dtype=dtype)

    @staticmethod
    def scalar(value: float, dtype=np.float32) -> "Tensor":
        return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype), dtype=dtype)

    # --- introspection ---

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a scalar tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{rg})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # --- arithmetic (tensor-tensor requires equal shapes, or the second
    #     operand is a (1, C, 1, 1) channel vector broadcast over (B, C, H, W)) ---

    def __add__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return _binary_elementwise(self, other, np.add, _add_backward)
        return _scalar_op(self, float(other), lambda d, c: d + c, lambda g, c: g)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return _binary_elementwise(self, other, np.subtract, _sub_backward)
        return _scalar_op(self, float(other), lambda d, c: d - c, lambda g, c: g)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return _binary_elementwise(self, other, np.multiply, _mul_backward)
        return _scalar_op(self, float(other), lambda d, c: d * c, lambda g, c: g * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    # --- reductions ---

    def sum(self, axes: Iterable[int] | None = None) -> "Tensor":
        return _reduce(self, axes, mean=False)

    def mean(self, axes: Iterable[int] | None = None) -> "Tensor":
        return _reduce(self, axes, mean=True)

    # --- backward pass ---

    def backward(self) -> None:
        """Fill gradients of every requires_grad tensor reachable from this scalar."""
        if self.shape != (1, 1, 1, 1):
            raise NonScalarLoss(f"loss must have shape (1,1,1,1), got {self.shape}")
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._backward is not None:
                nodes.append(t)
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._node_id)
        _accumulate(self, np.ones_like(self.data))
        for t in reversed(nodes):
            t._backward()  # type: ignore[misc]


def record_op(data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[Tensor], None] | None) -> Tensor:
    """Wrap an op result, linking it into the graph when grads are needed.

    ``backward`` receives the output tensor and must push ``out.grad``
    contributions into each requires_grad parent via ``accumulate_grad``.
    """
    if _debug_checks and not np.isfinite(data).all():
        raise NonFiniteGradient("non-finite values in op output")
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and backward is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = lambda: backward(out)
    return out


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        _accumulate(t, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g)  # own the buffer; g may alias an op output
    else:
        t.grad += g


# --- elementwise kernels ---

def _broadcast_axes(a: Tensor, b: Tensor) -> Axes | None:
    """Axes to sum b's gradient over, or None when shapes are equal.

    The only supported broadcast is a channel descriptor as the second
    operand: (1, C, 1, 1) or (B, C, 1, 1) against (B, C, H, W).
    """
    if a.shape == b.shape:
        return None
    if b.shape == (1, a.shape[1], 1, 1):
        return (0, 2, 3)
    if b.shape == (a.shape[0], a.shape[1], 1, 1):
        return (2, 3)
    raise ShapeMismatch(
        f"operands {a.shape} and {b.shape} are neither equal nor (1,C,1,1)-broadcastable")


def _add_backward(out: Tensor, a: Tensor, b: Tensor, axes: Axes | None) -> None:
    g = out.grad
    accumulate_grad(a, g)
    accumulate_grad(b, g if axes is None else g.sum(axis=axes, keepdims=True))


def _sub_backward(out: Tensor, a: Tensor, b: Tensor, axes: Axes | None) -> None:
    g = out.grad
    accumulate_grad(a, g)
    accumulate_grad(b, -(g if axes is None else g.sum(axis=axes, keepdims=True)))


def _mul_backward(out: Tensor, a: Tensor, b: Tensor, axes: Axes | None) -> None:
    g = out.grad
    accumulate_grad(a, g * b.data)
    gb = g * a.data
    accumulate_grad(b, gb if axes is None else gb.sum(axis=axes, keepdims=True))


def _binary_elementwise(a: Tensor, b: Tensor, fwd, bwd) -> Tensor:
    axes = _broadcast_axes(a, b)
    data = fwd(a.data, b.data)
    return record_op(data, (a, b), lambda out: bwd(out, a, b, axes))


def _scalar_op(a: Tensor, c: float, fwd, grad_fn) -> Tensor:
    data = fwd(a.data, c)

    def backward(out: Tensor) -> None:
        accumulate_grad(a, grad_fn(out.grad, c))

    return record_op(data, (a,), backward)


def _normalize_axes(axes: Iterable[int] | None) -> Axes:
    if axes is None:
        return (0, 1, 2, 3)
    ax = tuple(sorted(set(int(a) for a in axes)))
    if not ax or any(a < 0 or a > 3 for a in ax):
        raise ShapeMismatch(f"reduction axes must be within 0..3, got {axes}")
    return ax


def _reduce(a: Tensor, axes: Iterable[int] | None, mean: bool) -> Tensor:
    ax = _normalize_axes(axes)
    n = 1
    for i in ax:
        n *= a.shape[i]
    s = a.data.sum(axis=ax, keepdims=True)
    data = s / n if mean else s

    def backward(out: Tensor) -> None:
        g = out.grad
        if mean:
            g = g / n
        accumulate_grad(a, np.broadcast_to(g, a.shape))

    return record_op(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root (domain must stay positive for the gradient)."""
    data = np.sqrt(a.data)

    def backward(out: Tensor) -> None:
        accumulate_grad(a, out.grad * (0.5 / data))

    return record_op(data, (a,), backward)


# --- finite-difference gradient verification ---

@dataclass
class FdCoordinate:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_err: float
    step: float


@dataclass
class FdReport:
    max_rel_err: float
    passed: bool
    tolerance: float
    n_coordinates: int
    n_refined: int = 0
    worst: FdCoordinate | None = None
    coordinates: list[FdCoordinate] = field(default_factory=list)


def finite_diff_check(loss_fn: Callable[[], Tensor],
                      params: Sequence[tuple[str, Tensor]],
                      step: float = 1e-4,
                      tolerance: float = 1e-3,
                      samples_per_tensor: int = 8,
                      seed: int = 0) -> FdReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``params`` must be float64 (check precision); a fixed seeded subset of
    coordinates per parameter tensor is probed.  Relative error per
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    A coordinate that fails at the base step is re-probed with the step
    shrunk 16x (twice at most): when the base step straddles an activation
    kink the central difference is not an O(step^2) derivative estimate and
    the refined probe resolves it, while a genuinely wrong analytic
    gradient keeps failing at every step size.
    """
    for name, p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"finite_diff_check requires float64 params ({name} is {p.data.dtype})")
        p.zero_grad()

    loss = loss_fn()
    loss.backward()
    analytic: dict[str, np.ndarray] = {}
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"analytic gradient of {name} is not finite")
        analytic[name] = g.copy()

    rng = np.random.default_rng(seed)
    coords: list[FdCoordinate] = []
    n_refined = 0
    with no_grad():
        for name, p in params:
            size = p.data.size
            k = min(samples_per_tensor, size)
            idxs = rng.choice(size, size=k, replace=False) if size > k else np.arange(size)
            base = p.data

            def central(idx: int, h: float) -> float:
                bumped = base.copy()
                bumped.flat[idx] = base.flat[idx] + h
                p.data = bumped
                up = loss_fn().item()
                bumped = base.copy()
                bumped.flat[idx] = base.flat[idx] - h
                p.data = bumped
                down = loss_fn().item()
                p.data = base
                return (up - down) / (2.0 * h)

            for idx in sorted(int(i) for i in idxs):
                ana = float(analytic[name].flat[idx])
                h = step
                numeric = central(idx, h)
                rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
                refined = False
                while rel >= tolerance and h > step / 256.0:
                    h /= 16.0
                    numeric = central(idx, h)
                    rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
                    refined = True
                n_refined += refined
                coords.append(FdCoordinate(name, idx, ana, numeric, rel, h))

    worst = max(coords, key=lambda c: c.rel_err) if coords else None
    max_rel = worst.rel_err if worst else 0.0
    return FdReport(max_rel_err=max_rel, passed=max_rel < tolerance,
                    tolerance=tolerance, n_coordinates=len(coords), n_refined=n_refined,
                    worst=worst, coordinates=coords)
