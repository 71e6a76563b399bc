"""Reverse-mode differentiation over float64 numpy arrays.

Operations run eagerly. Whenever an input carries a node handle, the
operation appends a record (input handles, output handle, backward rule) to
the active ``Tape``. ``backward`` walks the records in reverse creation order,
which is a valid topological order, and accumulates gradients additively at
fan-out. Only tape leaves (trainable parameters bound through
``ParameterSet.bind``) appear in the returned gradient map.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    GradCheckError,
    LabelIndexError,
    NonFiniteError,
    RegistryError,
)

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
_GELU_K = float(np.sqrt(2.0 / np.pi))
_GELU_C = 0.044715

Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Immutable float64 array with an optional handle into the active tape."""

    __slots__ = ("data", "node")

    def __init__(self, data, node: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tracked = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}{tracked})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


TensorLike = Union[Tensor, float, int, np.ndarray]


@dataclass
class _Record:
    inputs: Tuple[Optional[int], ...]
    output: int
    backward: Backward


@dataclass(eq=False)
class Tape:
    """Ordered list of recorded operations for one training step."""

    records: list = field(default_factory=list)
    leaves: Dict[int, str] = field(default_factory=dict)
    _next_node: int = 0

    def _new_node(self) -> int:
        node = self._next_node
        self._next_node += 1
        return node

    def leaf(self, name: str, value: TensorLike) -> Tensor:
        data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        node = self._new_node()
        self.leaves[node] = name
        return Tensor(data, node)

    def clear(self) -> None:
        self.records.clear()
        self.leaves.clear()
        self._next_node = 0

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.remove(self)


_ACTIVE_TAPES: list = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value: TensorLike) -> Tensor:
    """Copy of ``value`` detached from any tape."""
    return Tensor(_as_tensor(value).data)


def record(out: np.ndarray, inputs: Sequence[Tensor], backward: Backward, op: str = "op") -> Tensor:
    """Wrap a forward result, recording its backward rule when any input is tracked."""
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    if all(t.node is None for t in inputs):
        return Tensor(out)
    tape = active_tape()
    if tape is None:
        raise ContractError(f"{op} received a tracked tensor but no tape is active")
    node = tape._new_node()
    tape.records.append(_Record(tuple(t.node for t in inputs), node, backward))
    return Tensor(out, node)


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(np.sum(grad)).reshape(shape)


def _sum_leading(grad: np.ndarray, ndim: int) -> np.ndarray:
    while grad.ndim > ndim:
        grad = grad.sum(axis=0)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)), "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return record(
        ad * bd,
        (a, b),
        lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)),
        "mul",
    )


def scale(x: TensorLike, factor: float) -> Tensor:
    x = _as_tensor(x)
    factor = float(factor)
    return record(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def abs_(x: TensorLike) -> Tensor:
    x = _as_tensor(x)
    sign = np.sign(x.data)  # subgradient 0 at 0
    return record(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def gelu(x: TensorLike) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    t = np.tanh(_GELU_K * (xd + _GELU_C * xd ** 3))
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return record(out, (x,), backward, "gelu")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "abs": abs_,
    "gelu": gelu,
}


def elementwise(kind: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op '{kind}'") from None
    return fn(*args)


# ---------------------------------------------------------------- linear algebra


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product; leading batch axes of ``a`` (and of ``b`` when it has them) are mapped."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _sum_leading(ga, ad.ndim), _sum_leading(gb, bd.ndim)

    return record(np.matmul(ad, bd), (a, b), backward, "matmul")


def bias_add(x: TensorLike, bias: TensorLike) -> Tensor:
    """x + bias where bias matches the trailing axes of x."""
    x, bias = _as_tensor(x), _as_tensor(bias)
    if bias.ndim > x.ndim or x.shape[x.ndim - bias.ndim:] != bias.shape:
        raise DimensionError(f"bias {bias.shape} does not match trailing axes of {x.shape}")
    nb = bias.ndim
    return record(x.data + bias.data, (x, bias), lambda g: (g, _sum_leading(g, nb)), "bias_add")


def linear(x: TensorLike, weight: TensorLike, bias: Optional[TensorLike] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else bias_add(out, bias)


def transpose(x: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    original = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"cannot reshape {original} to {tuple(shape)}") from e
    return record(out, (x,), lambda g: (g.reshape(original),), "reshape")


def repeat_batch(x: TensorLike, n: int) -> Tensor:
    """Stack ``n`` copies of x along a new leading axis."""
    x = _as_tensor(x)
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return record(out, (x,), lambda g: (g.sum(axis=0),), "repeat_batch")


# ---------------------------------------------------------------- reductions


def sum_(x: TensorLike, axis: Optional[int] = None) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    if axis is None:
        return record(np.sum(x.data), (x,), lambda g: (np.full(shape, float(g)),), "sum")
    axis = axis % x.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record(np.sum(x.data, axis=axis), (x,), backward, "sum")


def mean(x: TensorLike, axis: Optional[int] = None) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return scale(sum_(x, axis), 1.0 / count)


def max_reduce(x: TensorLike, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient flows to the first maximal entry."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    xd = x.data
    idx = np.expand_dims(np.argmax(xd, axis=axis), axis)

    def backward(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        return (gx,)

    return record(np.max(xd, axis=axis), (x,), backward, "max_reduce")


# ---------------------------------------------------------------- normalizers


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return record(y, (x,), backward, "softmax")


def log_softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return record(out, (x,), backward, "log_softmax")


def cross_entropy(logits: TensorLike, target) -> Tensor:
    """-log softmax(logits)[target] over the last axis, one value per leading index."""
    logits = _as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    n = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise DimensionError(f"targets {target.shape} do not match logits {logits.shape}")
    if np.any(target < 0) or np.any(target >= n):
        raise LabelIndexError(f"target index out of range [0, {n})")
    x = logits.data
    shifted = x - np.max(x, axis=-1, keepdims=True)
    sum_exp = np.sum(np.exp(shifted), axis=-1, keepdims=True)
    log_probs = shifted - np.log(sum_exp)
    picked = np.take_along_axis(log_probs, target[..., None], axis=-1)[..., 0]
    probs = np.exp(log_probs)

    def backward(g):
        grad = probs.copy()
        np.put_along_axis(grad, target[..., None], np.take_along_axis(grad, target[..., None], -1) - 1.0, -1)
        return (grad * np.asarray(g)[..., None],)

    return record(-picked, (logits,), backward, "cross_entropy")


def layer_norm(x: TensorLike, gain: TensorLike, bias: TensorLike, eps: float = LN_EPS) -> Tensor:
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm over width {d} got gain {gain.shape} and bias {bias.shape}")
    xd = x.data
    centered = xd - xd.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _sum_leading(g * xhat, 1), _sum_leading(g, 1)

    return record(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


# ---------------------------------------------------------------- indexing


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1:] != tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]:
            raise DimensionError(f"concat along {axis}: {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def take(x: TensorLike, indices, axis: int = 0) -> Tensor:
    """Gather entries of x along ``axis``; gradients scatter-add back to the source."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    idx = np.asarray(indices, dtype=np.int64)
    n = x.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"index out of range for axis {axis} of size {n}")
    xd_shape = x.shape

    def backward(g):
        gx = np.zeros(xd_shape)
        moved = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(np.moveaxis(gx, axis, 0), idx, moved)
        return (gx,)

    return record(np.take(x.data, idx, axis=axis), (x,), backward, "take")


def slice_(x: TensorLike, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not 0 <= start <= stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis of size {x.shape[axis]}")
    return take(x, np.arange(start, stop), axis)


def correlate3d(volume: TensorLike, kernel: TensorLike) -> Tensor:
    """Per-sample zero-padded 3D correlation.

    ``volume`` is (B, X, Y, Z, C) and ``kernel`` is (B, KX, KY, KZ, C) with odd
    kernel sides; the result is (B, X, Y, Z) with
    out[b, x, y, z] = sum over (i, j, k, c) of
    volume[b, x + i - KX // 2, y + j - KY // 2, z + k - KZ // 2, c] * kernel[b, i, j, k, c].
    """
    volume, kernel = _as_tensor(volume), _as_tensor(kernel)
    if volume.ndim != 5 or kernel.ndim != 5:
        raise DimensionError(f"correlate3d needs 5-d volume and kernel, got {volume.shape} and {kernel.shape}")
    b, nx, ny, nz, c = volume.shape
    if kernel.shape[0] != b or kernel.shape[4] != c:
        raise DimensionError(f"correlate3d: kernel {kernel.shape} does not match volume {volume.shape}")
    sides = kernel.shape[1:4]
    if any(side % 2 == 0 for side in sides):
        raise DimensionError(f"correlate3d needs odd kernel sides, got {sides}")
    rx, ry, rz = (side // 2 for side in sides)
    padded = np.pad(volume.data, ((0, 0), (rx, rx), (ry, ry), (rz, rz), (0, 0)))
    kd = kernel.data
    offsets = [(i, j, k) for i in range(sides[0]) for j in range(sides[1]) for k in range(sides[2])]

    def window(i, j, k):
        return (slice(None), slice(i, i + nx), slice(j, j + ny), slice(k, k + nz))

    out = np.zeros((b, nx, ny, nz))
    for i, j, k in offsets:
        out += np.einsum("bxyzc,bc->bxyz", padded[window(i, j, k)], kd[:, i, j, k, :])

    track_volume = volume.node is not None

    def backward(g):
        gk = np.zeros(kd.shape)
        gp = np.zeros(padded.shape) if track_volume else None
        for i, j, k in offsets:
            gk[:, i, j, k, :] = np.einsum("bxyz,bxyzc->bc", g, padded[window(i, j, k)])
            if track_volume:
                gp[window(i, j, k)] += np.einsum("bxyz,bc->bxyzc", g, kd[:, i, j, k, :])
        gv = gp[:, rx:rx + nx, ry:ry + ny, rz:rz + nz, :] if track_volume else None
        return gv, gk

    return record(out, (volume, kernel), backward, "correlate3d")


# ---------------------------------------------------------------- gradients


def backward(loss: Tensor, tape: Optional[Tape] = None) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to every reachable tape leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or active_tape()
    if loss.node is None or tape is None:
        return {}
    grads: Dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None)
        if g is None:
            continue
        for node, ig in zip(rec.inputs, rec.backward(g)):
            if node is None or ig is None:
                continue
            grads[node] = grads[node] + ig if node in grads else ig
    return {name: grads[node] for node, name in tape.leaves.items() if node in grads}


class ParameterSet:
    """Named parameters with a per-entry trainable flag."""

    def __init__(self):
        self._values: Dict[str, Tensor] = {}
        self._trainable: Dict[str, bool] = {}

    def add(self, path: str, data, trainable: bool = True) -> None:
        if path in self._values:
            raise RegistryError(f"parameter '{path}' already exists")
        self._values[path] = Tensor(np.array(data, dtype=np.float64, copy=True))
        self._trainable[path] = trainable

    def __contains__(self, path: str) -> bool:
        return path in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __getitem__(self, path: str) -> Tensor:
        return self._values[path]

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        return self._values.items()

    def update(self, path: str, data: np.ndarray) -> None:
        current = self._values[path]
        if data.shape != current.shape:
            raise DimensionError(f"parameter '{path}' has shape {current.shape}, got {data.shape}")
        self._values[path] = Tensor(np.asarray(data, dtype=np.float64))

    def is_trainable(self, path: str) -> bool:
        return self._trainable[path]

    def set_trainable(self, paths: Iterable[str], trainable: bool) -> None:
        for path in paths:
            if path not in self._trainable:
                raise RegistryError(f"unknown parameter '{path}'")
            self._trainable[path] = trainable

    def freeze_prefix(self, prefix: str) -> list:
        hits = [p for p in self._values if p.startswith(prefix)]
        self.set_trainable(hits, False)
        return hits

    def trainable_paths(self) -> list:
        return [p for p, flag in self._trainable.items() if flag]

    def frozen_paths(self) -> list:
        return [p for p, flag in self._trainable.items() if not flag]

    def count(self, trainable_only: bool = False) -> int:
        return int(sum(t.size for p, t in self._values.items() if self._trainable[p] or not trainable_only))

    def bind(self, tape: Tape, everything: bool = False) -> Dict[str, Tensor]:
        """Tensors for a forward pass; trainable entries become tape leaves."""
        bound = {}
        for path, value in self._values.items():
            if everything or self._trainable[path]:
                bound[path] = tape.leaf(path, value)
            else:
                bound[path] = Tensor(value.data)
        return bound

    def constants(self) -> Dict[str, Tensor]:
        return {path: Tensor(value.data) for path, value in self._values.items()}

    def copy(self) -> "ParameterSet":
        clone = ParameterSet()
        for path, value in self._values.items():
            clone.add(path, value.data, self._trainable[path])
        return clone

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {path: value.data.copy() for path, value in self._values.items()}


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: Optional[Tuple[str, Tuple[int, ...]]]
    coordinates: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def grad_check(
    function: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, TensorLike],
    h: float = 1e-5,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare tape gradients with central differences, coordinate by coordinate.

    The relative error of a coordinate is |a - n| / max(|a|, |n|, floor).
    """
    base = {name: np.array(_as_tensor(v).data, dtype=np.float64, copy=True) for name, v in params.items()}

    with Tape() as tape:
        leaves = {name: tape.leaf(name, arr.copy()) for name, arr in base.items()}
        out = function(leaves)
        analytic = backward(out, tape)

    def evaluate(name, idx) -> float:
        try:
            value = function({n: Tensor(a) for n, a in base.items()})
        except NonFiniteError as e:
            raise GradCheckError(f"non-finite output at {name}{idx}: {e}", (name, idx)) from e
        result = value.item()
        if not np.isfinite(result):
            raise GradCheckError(f"non-finite output at {name}{idx}", (name, idx))
        return result

    worst, worst_err, coords = None, 0.0, 0
    for name, arr in base.items():
        grad = analytic.get(name, np.zeros_like(arr))
        for idx in np.ndindex(arr.shape):
            original = arr[idx]
            arr[idx] = original + h
            f_plus = evaluate(name, idx)
            arr[idx] = original - h
            f_minus = evaluate(name, idx)
            arr[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(grad[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            coords += 1
            if err > worst_err:
                worst, worst_err = (name, idx), err
    logger.debug(f"grad_check over {coords} coordinates: max relative error {worst_err:.3e}")
    return GradCheckReport(worst_err, worst, coords)
