"""Tensor arithmetic with reverse-mode differentiation on a recording tape.

Values are numpy arrays (float64 by default, float32 selectable). Ops compute
eagerly; while a Graph is active each op appends a node holding a backward
closure, and backward() replays the tape in reverse from a scalar root.
Gradients accumulate additively across fan-out; forward never mutates inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import erf

from .errors import ContractError, InputError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LN_EPS = 1e-12  # layer-norm variance floor; negligible at 64-bit desk scale


class Tensor:
    """A shape-tagged real array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not arr.flags["C_CONTIGUOUS"]:  # keeps 0-d arrays 0-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._tracked = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("kind", "inputs", "output", "fn")

    def __init__(self, kind, inputs, output, fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.fn = fn


class Graph:
    """Recording tape: nodes in execution order, leaves keyed by identity."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[int, Tensor] = {}
        self._prev: Graph | None = None

    def __enter__(self) -> "Graph":
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = self._prev


_ACTIVE: Graph | None = None


def _record(kind: str, inputs: tuple[Tensor, ...], out: Tensor, fn: Callable) -> None:
    g = _ACTIVE
    if g is None:
        return
    if not any(t.requires_grad or t._tracked for t in inputs):
        return
    out._tracked = True
    for t in inputs:
        if t.requires_grad:
            g.leaves.setdefault(id(t), t)
    g.nodes.append(_Node(kind, inputs, out, fn))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._tracked):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -----------------------------------------------------------------------------
# Primitive ops
# -----------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matrix product; trailing two axes multiply, batch axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def fn(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    _record("matmul", (a, b), out, fn)
    return out


def _elementwise_shape_check(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shape_check("add", a, b)
    out = Tensor(a.data + b.data)

    def fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    _record("add", (a, b), out, fn)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shape_check("sub", a, b)
    out = Tensor(a.data - b.data)

    def fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    _record("sub", (a, b), out, fn)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    _elementwise_shape_check("mul", a, b)
    out = Tensor(a.data * b.data)

    def fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    _record("mul", (a, b), out, fn)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shape_check("div", a, b)
    if np.any(b.data == 0.0):
        raise NumericError("div: zero denominator")
    out = Tensor(a.data / b.data)

    def fn(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    _record("div", (a, b), out, fn)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar (not differentiated w.r.t. c)."""
    c = float(c)
    out = Tensor(x.data * c)

    def fn(g):
        _accum(x, g * c)

    _record("scale", (x,), out, fn)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact erf-based GELU."""
    e = erf(x.data * _INV_SQRT2)
    out = Tensor(0.5 * x.data * (1.0 + e))

    def fn(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        _accum(x, g * (0.5 * (1.0 + e) + x.data * pdf))

    _record("gelu", (x,), out, fn)
    return out


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0.0):
        raise NumericError("sqrt: negative input")
    out = Tensor(np.sqrt(x.data))

    def fn(g):
        _accum(x, g / (2.0 * out.data))

    _record("sqrt", (x,), out, fn)
    return out


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; masked entries get weight exactly 0.

    mask broadcasts to x's shape; 1 marks valid positions. Not differentiated
    w.r.t. the mask.
    """
    if mask is not None:
        valid = np.broadcast_to(np.asarray(mask) != 0, x.shape)
        if not valid.any(axis=-1).all():
            raise ContractError("softmax: a row has no unmasked position")
        shifted = np.where(valid, x.data, -np.inf)
        e = np.exp(shifted - shifted.max(axis=-1, keepdims=True))
        e = np.where(valid, e, 0.0)
    else:
        e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = Tensor(e / e.sum(axis=-1, keepdims=True))

    def fn(g):
        s = out.data
        _accum(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    _record("softmax", (x,), out, fn)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit population variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + eps)
    xhat = (x.data - mu) / std
    out = Tensor(xhat * gain.data + bias.data)

    def fn(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(bias, g.sum(axis=reduce_axes))
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        gh = g * gain.data
        gx = (gh - gh.mean(axis=-1, keepdims=True)
              - xhat * (gh * xhat).mean(axis=-1, keepdims=True)) / std
        _accum(x, gx)

    _record("layer_norm", (x, gain, bias), out, fn)
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: table (R, d), integer ids of any shape -> ids.shape + (d,)."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InputError(
            f"embedding: id out of range [0, {table.shape[0]}) "
            f"(min {ids.min()}, max {ids.max()})"
        )
    out = Tensor(table.data[ids])

    def fn(g):
        if not (table.requires_grad or table._tracked):
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    _record("embedding", (table,), out, fn)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def fn(g):
        _accum(x, g.reshape(x.shape))

    _record("reshape", (x,), out, fn)
    return out


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)))
    inv = np.argsort(axes)

    def fn(g):
        _accum(x, np.transpose(g, inv))

    _record("transpose", (x,), out, fn)
    return out


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(tensors)
    if not parts:
        raise ContractError("concat: empty input list")
    out = Tensor(np.concatenate([t.data for t in parts], axis=axis))
    sizes = [t.shape[axis] for t in parts]
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        for t, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    _record("concat", parts, out, fn)
    return out


def abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """|a - b| elementwise; subgradient 0 at ties."""
    _elementwise_shape_check("abs_diff", a, b)
    diff = a.data - b.data
    out = Tensor(np.abs(diff))
    sgn = np.sign(diff)

    def fn(g):
        _accum(a, _unbroadcast(g * sgn, a.shape))
        _accum(b, _unbroadcast(-g * sgn, b.shape))

    _record("abs_diff", (a, b), out, fn)
    return out


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 restricted to mask==1: x (B, T, d), mask (B, T) -> (B, d)."""
    if x.data.ndim != 3 or np.asarray(mask).shape != x.shape[:2]:
        raise ShapeError(f"masked_mean: states {x.shape} vs mask {np.asarray(mask).shape}")
    m = np.asarray(mask).astype(x.dtype)
    counts = m.sum(axis=1)
    if np.any(counts == 0):
        raise ContractError("masked_mean: a row has an all-zero mask")
    out = Tensor((x.data * m[:, :, None]).sum(axis=1) / counts[:, None])

    def fn(g):
        _accum(x, g[:, None, :] * m[:, :, None] / counts[:, None, None])

    _record("masked_mean", (x,), out, fn)
    return out


def sum_last(x: Tensor) -> Tensor:
    """Sum over the last axis."""
    out = Tensor(x.data.sum(axis=-1))

    def fn(g):
        _accum(x, np.broadcast_to(g[..., None], x.shape).copy())

    _record("sum_last", (x,), out, fn)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def fn(g):
        _accum(x, np.full_like(x.data, float(g)))

    _record("sum_all", (x,), out, fn)
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.sum() / n)

    def fn(g):
        _accum(x, np.full_like(x.data, float(g) / n))

    _record("mean_all", (x,), out, fn)
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer targets.

    logits (N, V), targets (N,) -> scalar. Numerically stable log-sum-exp.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-d, got {logits.shape}")
    targets = np.asarray(targets)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs logits rows {n}")
    if n == 0:
        raise ContractError("cross_entropy: empty batch")
    if targets.min() < 0 or targets.max() >= v:
        raise InputError(f"cross_entropy: target id out of range [0, {v})")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    picked = logits.data[np.arange(n), targets]
    out = Tensor((lse - picked).mean())

    def fn(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        _accum(logits, p * (float(g) / n))

    _record("cross_entropy", (logits,), out, fn)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: train-time zeroing with 1/(1-rate) rescale, inference identity."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: rng required in training mode")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    keep = keep.astype(x.dtype)
    out = Tensor(x.data * keep)

    def fn(g):
        _accum(x, g * keep)

    _record("dropout", (x,), out, fn)
    return out


# Dispatch table for the generic entry point. Structural kwargs (ids, mask,
# axes, ...) pass through; tensor operands go in positional order.
_OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "gelu": gelu,
    "sqrt": sqrt,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "embedding": embedding,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "abs_diff": abs_diff,
    "masked_mean": masked_mean,
    "sum_last": sum_last,
    "sum_all": sum_all,
    "mean_all": mean_all,
    "cross_entropy": cross_entropy,
    "dropout": dropout,
}


def primitive_forward(kind: str, inputs, **kwargs) -> Tensor:
    """Apply a primitive op by kind name; records on the active Graph."""
    try:
        op = _OPS[kind]
    except KeyError:
        raise InputError(f"unknown op kind {kind!r}; known: {sorted(_OPS)}") from None
    if kind == "concat":
        return op(inputs, **kwargs)
    return op(*inputs, **kwargs)


def op_kinds() -> tuple[str, ...]:
    return tuple(sorted(_OPS))


# -----------------------------------------------------------------------------
# Backward pass
# -----------------------------------------------------------------------------


def backward(graph: Graph, root: Tensor) -> None:
    """Populate grads of all leaves reachable from root; unreachable leaves get zeros."""
    if root.data.shape != ():
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    produced = {id(n.output) for n in graph.nodes}
    if id(root) not in produced:
        raise ContractError("backward: root was not produced by this graph")

    for node in graph.nodes:
        node.output.grad = None
    for leaf in graph.leaves.values():
        leaf.grad = np.zeros_like(leaf.data)

    # Reachability sweep so every node reachable from root runs exactly once.
    needed = {id(root)}
    active: list[_Node] = []
    for node in reversed(graph.nodes):
        if id(node.output) in needed:
            active.append(node)
            for t in node.inputs:
                if t.requires_grad or t._tracked:
                    needed.add(id(t))

    root.grad = np.ones((), dtype=root.dtype)
    for node in active:
        g = node.output.grad
        if g is not None:
            node.fn(g)


# -----------------------------------------------------------------------------
# Parameter utilities: clipping, Adam, finite differences
# -----------------------------------------------------------------------------


def _iter_params(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return list(params.items())  # anything exposing .items() -> (name, Tensor)


def zero_grads(params) -> None:
    for _, t in _iter_params(params):
        t.grad = np.zeros_like(t.data)


def global_grad_norm(params) -> float:
    """L2 norm of the concatenation of all gradients."""
    total = 0.0
    for name, t in _iter_params(params):
        if t.grad is None:
            raise ContractError(f"global_grad_norm: grad of {name!r} not populated")
        total += float((t.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all grads by max_norm/g when the global norm g exceeds max_norm.

    Returns the applied scale (1.0 when already within the bound). No-op on
    all-zero grads. Raises NumericError on a non-finite global norm.
    """
    if max_norm <= 0:
        raise ContractError(f"clip_gradients: max_norm must be > 0, got {max_norm}")
    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        raise NumericError("clip_gradients: non-finite gradient norm")
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for _, t in _iter_params(params):
        t.grad *= factor
    return factor


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one slot pair per named parameter."""

    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, lr: float = 2e-5) -> "AdamState":
        state = cls(lr=lr)
        for name, tensor in _iter_params(params):
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected Adam update; increments state.t, leaves grads intact."""
    items = _iter_params(params)
    if set(state.m) != {name for name, _ in items}:
        raise ContractError("adam_step: state does not match parameter set")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in items:
        if p.grad is None:
            raise ContractError(f"adam_step: grad of {name!r} not populated")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


@dataclass
class FiniteDiffReport:
    """Result of a central-difference gradient check."""

    per_tensor: dict[str, float]
    violations: list[tuple[str, int, float, float, float]]  # (name, flat idx, analytic, fd, rel)
    h: float
    tol: float
    atol: float

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_rel_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params,
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-7,
    analytic: dict[str, np.ndarray] | None = None,
) -> FiniteDiffReport:
    """Compare analytic grads against central differences (f(x+h)-f(x-h))/2h.

    loss_fn must be deterministic and close over params. When analytic is None
    it is computed here with one recorded forward/backward. Entries where both
    sides are below atol count as zero. Raises NumericError on a non-finite loss.
    """
    items = _iter_params(params)

    def eval_loss() -> float:
        out = loss_fn()
        val = out.item()
        if not math.isfinite(val):
            raise NumericError("finite_diff_check: non-finite loss")
        return val

    if analytic is None:
        zero_grads(params)  # params outside the loss graph must read as zero
        with Graph() as g:
            out = loss_fn()
            if not math.isfinite(out.item()):
                raise NumericError("finite_diff_check: non-finite loss")
            backward(g, out)
        analytic = {name: t.grad.copy() for name, t in items}

    per_tensor: dict[str, float] = {}
    violations: list[tuple[str, int, float, float, float]] = []
    for name, tensor in items:
        flat = tensor.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = eval_loss()
            flat[i] = orig - h
            f_minus = eval_loss()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(fd), abs(ana[i]))
            rel = 0.0 if denom < atol else abs(fd - ana[i]) / denom
            if rel > worst:
                worst = rel
            if rel > tol:
                violations.append((name, i, float(ana[i]), float(fd), float(rel)))
        per_tensor[name] = worst
    return FiniteDiffReport(per_tensor, violations, h=h, tol=tol, atol=atol)
