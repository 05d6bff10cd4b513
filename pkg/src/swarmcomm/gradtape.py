"""Small reverse-mode autodiff over numpy arrays.

Only the operations the agent network and the PPO loss need are provided.
Every op returns a :class:`Tensor` that remembers its parents and a closure
that pushes the upstream gradient back to them. :func:`backward` orders the
graph topologically and runs those closures once each.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ParamSet",
    "Tape",
    "AdamState",
    "DimensionError",
    "tensor",
    "affine",
    "linear",
    "matmul",
    "relu",
    "masked_softmax",
    "log_softmax",
    "concat",
    "reshape",
    "transpose",
    "add",
    "sub",
    "mul",
    "square",
    "exp",
    "sum",
    "mean",
    "clip",
    "minimum",
    "take",
    "backward",
    "adam_step",
    "orthogonal_init",
    "global_norm",
    "clip_global_norm",
    "precision",
    "get_dtype",
    "row_stable",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


_dtype: type = np.float32
_row_stable = False


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors (float32 or float64)."""
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    prev, _dtype = _dtype, dtype
    try:
        yield
    finally:
        _dtype = prev


@contextlib.contextmanager
def row_stable(enabled: bool = True) -> Iterator[None]:
    """Compute forward matrix products with a kernel whose per-row result does
    not depend on how many rows are in the batch.

    BLAS picks different blocking for different shapes, so ``(A @ W)[i]`` and
    ``A[i:i+1] @ W`` can differ in the last bit. Inside this context products
    go through ``np.einsum`` instead, which is slower but row-stable.
    """
    global _row_stable
    prev, _row_stable = _row_stable, enabled
    try:
        yield
    finally:
        _row_stable = prev


def set_row_stable(enabled: bool) -> None:
    global _row_stable
    _row_stable = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        # g may be shared with sibling nodes, so never update it in place
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor whose gradient accumulates across backward calls."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        data = np.array(value, dtype=_dtype, copy=True)
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad += g

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def tensor(value, requires_grad: bool = False, dtype=None) -> Tensor:
    """Wrap an array (or scalar) as a constant tensor, in the current precision unless ``dtype`` is given."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype or _dtype), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce a binary op's operands; bare numbers take the other operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _make(data: np.ndarray, parents: Sequence[Tensor], bw) -> Tensor:
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=bw)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _mm2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a[..., I] @ b[I, O]`` as a single 2-D GEMM."""
    return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))


def _fwd_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if b.ndim == 2:
        if _row_stable:
            return np.einsum("...i,io->...o", a, b)
        return _mm2d(a, b)
    if _row_stable:
        return np.einsum("...mk,...kn->...mn", a, b)
    return np.matmul(a, b)


# ---------------------------------------------------------------------------
# primitives


def linear(x: Tensor, W: Tensor) -> Tensor:
    """``x[..., I] @ W[I, O]``."""
    x, W = _as_tensor(x), _as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: cannot multiply {x.shape} by {W.shape}")
    out_data = _fwd_matmul(x.data, W.data)

    def bw(g):
        if x.requires_grad:
            x._accumulate(_mm2d(g, W.data.T))
        if W.requires_grad:
            W._accumulate(x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]))

    return _make(out_data, (x, W), bw)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer ``x @ W + b`` over the last axis of ``x``."""
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"affine: cannot multiply {x.shape} by {W.shape}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"affine: bias shape {b.shape} does not match output width {W.shape[1]}")
    out_data = _fwd_matmul(x.data, W.data) + b.data

    def bw(g):
        if x.requires_grad:
            x._accumulate(_mm2d(g, W.data.T))
        g2 = g.reshape(-1, g.shape[-1])
        if W.requires_grad:
            W._accumulate(x.data.reshape(-1, x.shape[-1]).T @ g2)
        if b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    return _make(out_data, (x, W, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched product of two tensors over their last two axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim == 2:
        return linear(a, b)
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = _fwd_matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out_data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    active = x.data > 0
    out_data = np.where(active, x.data, 0).astype(x.data.dtype, copy=False)

    def bw(g):
        x._accumulate(g * active)

    return _make(out_data, (x,), bw)


def masked_softmax(logits: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` where entries with ``mask == False`` count as -inf.

    Masked outputs are exactly zero and receive no gradient. Every slice along
    ``axis`` needs at least one unmasked entry.
    """
    logits = _as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_softmax: a row has no unmasked entries")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(logits.data.dtype, copy=False)

    def bw(g):
        logits._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (logits,), bw)


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    logits = _as_tensor(logits)
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    out_data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out_data)

    def bw(g):
        logits._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (logits,), bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat: nothing to concatenate")
    nd = xs[0].ndim
    ax = axis % nd
    lead = [x.shape[:ax] + x.shape[ax + 1:] for x in xs]
    if any(x.ndim != nd for x in xs) or any(s != lead[0] for s in lead):
        raise DimensionError(f"concat: mismatched shapes {[x.shape for x in xs]}")
    out_data = np.concatenate([x.data for x in xs], axis=ax)
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def bw(g):
        for x, part in zip(xs, np.split(g, bounds, axis=ax)):
            if x.requires_grad:
                x._accumulate(part)

    return _make(out_data, xs, bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), bw)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    out_data = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def bw(g):
        x._accumulate(np.transpose(g, inverse))

    return _make(out_data, (x,), bw)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bw)


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def bw(g):
        x._accumulate(2 * g * x.data)

    return _make(x.data * x.data, (x,), bw)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def bw(g):
        x._accumulate(g * out_data)

    return _make(out_data, (x,), bw)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    out_data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(out_data, (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis), 1.0 / float(n))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient flows only strictly inside the interval."""
    x = _as_tensor(x)
    out_data = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def bw(g):
        x._accumulate(g * inside)

    return _make(out_data, (x,), bw)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min of equal-shape tensors. Ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"minimum: shapes differ {a.shape} vs {b.shape}")
    pick_a = a.data <= b.data
    out_data = np.where(pick_a, a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * pick_a)
        if b.requires_grad:
            b._accumulate(g * ~pick_a)

    return _make(out_data, (a, b), bw)


def take(x: Tensor, index: np.ndarray) -> Tensor:
    """Select one entry per row along the last axis: ``out[..., ] = x[..., index[...]]``."""
    x = _as_tensor(x)
    idx = np.asarray(index)[..., None]
    out_data = np.take_along_axis(x.data, idx, axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        x._accumulate(full)

    return _make(out_data, (x,), bw)


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Topologically ordered record of the nodes that produced ``root``."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
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
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate ``d loss / d param`` into every reachable parameter's ``grad``."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError(f"non-finite loss {loss.data!r}")
    if not loss.requires_grad:
        return Tape([loss])
    tape = Tape.record(loss)
    # intermediate grads are scratch; parameters keep accumulating
    for node in tape.nodes:
        if not isinstance(node, Parameter):
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in tape.nodes:
        if not isinstance(node, Parameter):
            node.grad = None
    return tape


# ---------------------------------------------------------------------------
# parameters, optimizer, init


class ParamSet:
    """Ordered, uniquely named collection of parameters."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise KeyError(f"duplicate parameter name {p.name!r}")
        self._params[p.name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: p.shape for n, p in self._params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        diff = shape_diff(self.shapes(), {k: tuple(v.shape) for k, v in state.items()})
        if diff:
            raise ValueError("parameter set mismatch:\n  " + "\n  ".join(diff))
        for n, p in self._params.items():
            p.data = np.array(state[n], dtype=p.data.dtype, copy=True)
            p.zero_grad()


def shape_diff(expected: dict[str, tuple], got: dict[str, tuple]) -> list[str]:
    """Human-readable differences between two name -> shape maps."""
    out = []
    for name in expected:
        if name not in got:
            out.append(f"missing {name} {expected[name]}")
        elif tuple(got[name]) != tuple(expected[name]):
            out.append(f"shape {name}: expected {expected[name]}, got {tuple(got[name])}")
    out.extend(f"unexpected {name} {tuple(got[name])}" for name in got if name not in expected)
    return out


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamSet | Iterable[Parameter], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.data.dtype, copy=False)


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    """(Semi-)orthogonal matrix: the Gram matrix of the smaller side is the identity."""
    if rows < 1 or cols < 1:
        raise ValueError("orthogonal_init needs positive dimensions")
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q).astype(_dtype)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads])))


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = global_norm(grads)
    if total <= max_norm:
        return list(grads)
    scale = max_norm / total
    return [(g * scale).astype(g.dtype, copy=False) for g in grads]
