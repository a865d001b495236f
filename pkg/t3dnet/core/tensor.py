"""
Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays; every differentiable operation is a `Function`
whose instance is the tape node of its output. Tape policy: each forward
pass builds a fresh graph, and `Tensor.backward()` consumes it (a second
backward over the same graph raises `ContractError`). Leaf tensors keep
accumulating into `.grad` across graphs until `zero_grad()`.

Broadcasting follows numpy: shapes are aligned on trailing axes and size-1
axes are stretched. Gradients of broadcast operands are summed back to the
operand shape.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from t3dnet.core.errors import ContractError, DimensionError, NumericError

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether new operations are recorded on the tape (per thread)."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


Operand = Union["Tensor", np.ndarray, float, int]


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: np.ndarray, b: np.ndarray, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps
    dL/d(output) to a tuple of dL/d(input) (None for inputs without a
    gradient).
    """

    def __init__(self, *inputs: "Tensor") -> None:
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Operand, **kwargs: Any) -> "Tensor":
        dtype = next((x.dtype for x in inputs if isinstance(x, Tensor)), np.float32)
        tensors = tuple(x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype)) for x in inputs)
        fn = cls(*tensors)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = fn.forward(*(t.data for t in tensors), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.__name__} produced non-finite values")
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=requires_grad)
        if requires_grad:
            result._node = fn
            result._leaf = False
        return result


class Tensor:
    """N-dimensional array with an optional autodiff node."""

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Optional[np.dtype] = None) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Function] = None
        self._leaf = True

    # ===== properties =====

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._leaf

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same values, no graph."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ===== autodiff =====

    def backward(self) -> None:
        """
        Populate `.grad` of every reachable leaf with dSelf/dLeaf.

        Raises:
            ContractError: If self is not a scalar, or the graph was already consumed
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar, got shape {self.shape}")
        if not self._leaf and self._node is None:
            raise ContractError("backward already ran over this graph; rebuild it with a new forward")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")

        order = self._topological_order()
        grads = {id(self): np.ones_like(self.data)}
        for tensor in reversed(order):
            grad = grads.pop(id(tensor), None)
            if grad is None:
                continue
            node = tensor._node
            if node is None:
                tensor._accumulate(grad)
                continue
            input_grads = node.backward(grad)
            for inp, inp_grad in zip(node.inputs, input_grads):
                if inp_grad is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + inp_grad if key in grads else inp_grad

        # one backward per tape
        for tensor in order:
            if not tensor._leaf:
                tensor._node = None

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            tensor, processed = stack.pop()
            if processed:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for inp in tensor._node.inputs:
                    if inp.requires_grad and id(inp) not in visited:
                        stack.append((inp, False))
        return order

    # ===== operators =====

    def __add__(self, other: Operand) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: Operand) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return MatMul.apply(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        return Max.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=axes or None)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def relu(self) -> "Tensor":
        return ReLU.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def softmax(self) -> "Tensor":
        return Softmax.apply(self)

    def log_softmax(self) -> "Tensor":
        return LogSoftmax.apply(self)


def as_tensor(value: Operand, dtype: Optional[np.dtype] = None) -> Tensor:
    """Wrap a constant; tensors pass through unchanged."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype or np.float32))


# ===== elementwise =====

class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _broadcast_shape(x, y, "add")
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _broadcast_shape(x, y, "sub")
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _broadcast_shape(x, y, "mul")
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Div(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _broadcast_shape(x, y, "div")
        if np.any(y == 0):
            raise NumericError("division by zero")
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        gx = grad / self.y
        gy = -grad * self.x / (self.y * self.y)
        return unbroadcast(gx, self.x.shape), unbroadcast(gy, self.y.shape)


class Neg(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return -x

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, x: np.ndarray, exponent: float) -> np.ndarray:
        if exponent < 0 and np.any(x == 0):
            raise NumericError(f"negative power {exponent} of zero")
        if not float(exponent).is_integer() and np.any(x < 0):
            raise NumericError(f"fractional power {exponent} of a negative value")
        self.x, self.exponent = x, exponent
        return np.power(x, exponent).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.exponent * np.power(self.x, self.exponent - 1),)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class Exp(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        if np.any(x <= 0):
            raise NumericError("log of a non-positive value")
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Dropout(Function):
    """Inverted dropout: kept activations are scaled by 1/(1-p)."""

    def forward(self, x: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
        keep = rng.random(x.shape) >= p
        self.mask = keep.astype(x.dtype) / x.dtype.type(1.0 - p)
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


# ===== linear algebra =====

class MatMul(Function):
    """(..., M, K) @ (K, N) -> (..., M, N)."""

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
            raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        ga = grad @ self.b.T
        k, n = self.b.shape
        gb = self.a.reshape(-1, k).T @ grad.reshape(-1, n)
        return ga, gb


# ===== reductions =====

def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


class Sum(Function):
    def forward(self, x: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(np.sum(x, axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(self, grad):
        return (_expand_reduced(grad, self.shape, self.axis, self.keepdims).copy(),)


class Mean(Function):
    def forward(self, x: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        out = np.asarray(np.mean(x, axis=axis, keepdims=keepdims), dtype=x.dtype)
        self.count = x.size // max(out.size, 1)
        return out

    def backward(self, grad):
        return (_expand_reduced(grad, self.shape, self.axis, self.keepdims) / self.count,)


class Max(Function):
    """Max over one axis; the gradient goes to the first maximal element."""

    def forward(self, x: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        self.index = np.expand_dims(np.argmax(x, axis=axis), axis)
        out = np.take_along_axis(x, self.index, axis=axis)
        return out if keepdims else np.squeeze(out, axis=axis)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        full = np.zeros(self.shape, dtype=grad.dtype)
        np.put_along_axis(full, self.index, grad, axis=self.axis)
        return (full,)


class Softmax(Function):
    """Softmax over the last axis."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        self.out = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class LogSoftmax(Function):
    """log(softmax(x)) over the last axis, computed stably."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = x - x.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.softmax = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.softmax * grad.sum(axis=-1, keepdims=True),)


# ===== shape and indexing =====

class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x: np.ndarray, axes: Optional[Sequence[int]] = None) -> np.ndarray:
        self.axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


def _is_basic_index(index: Any) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


class GetItem(Function):
    """x[index]; backward scatters (accumulating repeated indices)."""

    def forward(self, x: np.ndarray, index: Any) -> np.ndarray:
        self.shape, self.index = x.shape, index
        try:
            return np.array(x[index], dtype=x.dtype, copy=True)
        except IndexError as exc:
            raise DimensionError(f"index out of range for shape {x.shape}: {exc}") from None

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        if _is_basic_index(self.index):
            full[self.index] += grad
        else:
            np.add.at(full, self.index, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = -1) -> np.ndarray:
        ref = arrays[0]
        ax = axis % ref.ndim
        for arr in arrays[1:]:
            if arr.ndim != ref.ndim or any(
                arr.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
            ):
                raise DimensionError(f"concat: shapes {ref.shape} and {arr.shape} differ off axis {axis}")
        self.axis = ax
        self.splits = np.cumsum([a.shape[ax] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=ax)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class GatherGroups(Function):
    """features (B, N, C) indexed by idx (B, M, K) -> (B, M, K, C)."""

    def forward(self, features: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if features.ndim != 3 or idx.ndim != 3 or idx.shape[0] != features.shape[0]:
            raise DimensionError(f"gather_groups: features {features.shape} vs index {idx.shape}")
        self.shape = features.shape
        self.batch = np.arange(features.shape[0])[:, None, None]
        self.idx = idx
        return features[self.batch, idx]

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(full, (self.batch, self.idx), grad)
        return (full,)


# ===== functional API =====

def add(a: Operand, b: Operand) -> Tensor:
    return Add.apply(a, b)


def mul(a: Operand, b: Operand) -> Tensor:
    return Mul.apply(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def max_over_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return Max.apply(x, axis=axis, keepdims=keepdims)


def softmax(x: Tensor) -> Tensor:
    return Softmax.apply(x)


def log_softmax(x: Tensor) -> Tensor:
    return LogSoftmax.apply(x)


def concat(tensors: Sequence[Operand], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat of an empty sequence")
    return Concat.apply(*tensors, axis=axis)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity in evaluation mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    return Dropout.apply(x, p=p, rng=rng)


def gather_groups(features: Tensor, idx: np.ndarray) -> Tensor:
    return GatherGroups.apply(features, idx=np.asarray(idx))
