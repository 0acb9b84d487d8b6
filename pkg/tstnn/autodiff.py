"""Autodiff core

A small reverse-mode differentiation substrate over numpy arrays.

Operations executed while a :class:`Tape` is active record a node holding the
output, the input tensors and a backward rule mapping the output gradient to
one gradient per input. :func:`backward` replays the tape in reverse order,
visiting every node once, and accumulates into the ``grad`` slot of every leaf
tensor that requires gradients. Outside a tape nothing is recorded, so frozen
inference never retains intermediates.

Example:
    >>> w = Tensor(np.ones((2, 3)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (Tensor(np.array([[1.0, 2.0]])) @ w).sum()
    >>> backward(tape, loss)
"""

import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from tstnn.exceptions import ConfigError, ShapeError, UsageError

ArrayLike = Union['Tensor', np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


class Tensor:
    """Array with optional gradient tracking.

        Attributes:
            data (np.ndarray): Values, row-major.
            requires_grad (bool): Whether gradients flow into this tensor.
            grad (np.ndarray): Accumulated gradient, leaves only.
            node (TapeNode): Producing tape node, ``None`` for leaves.
    """

    __slots__ = ('data', 'requires_grad', 'grad', 'node', 'name', '__weakref__')
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
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
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f'item() needs a single-element tensor, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f' {self.name}' if self.name else ''
        return f'<Tensor{label} shape={self.shape} dtype={self.dtype}>'

    def __add__(self, other: ArrayLike) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> 'Tensor':
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> 'Tensor':
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> 'Tensor':
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> 'Tensor':
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> 'Tensor':
        return div(self, other)

    def __neg__(self) -> 'Tensor':
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> 'Tensor':
        return matmul(self, other)

    def __getitem__(self, index) -> 'Tensor':
        return getitem(self, index)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_mean(self, axis, keepdims)


@dataclass
class TapeNode:
    """One recorded op. The output is held by id only so tensor and node never form a cycle."""

    output_id: int
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is a topological order of the
    computation graph. Use as a context manager; tapes nest per thread.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _tape_stack() -> list[Tape]:
    if not hasattr(_local, 'tapes'):
        _local.tapes = []
    return _local.tapes


def current_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(value: ArrayLike, dtype: Optional[np.dtype] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def record(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wraps an op result and records it on the active tape when any input needs gradients."""

    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data)
    if needs_grad:
        out.requires_grad = True
        out.node = TapeNode(id(out), tuple(inputs), backward_fn)
        tape.nodes.append(out.node)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulates d(loss)/d(leaf) into every leaf reached through the tape.

        Args:
            tape (Tape): Tape the loss was computed under.
            loss (Tensor): Scalar (single element) loss.

        Raises:
            UsageError: if the loss is not a scalar or was not recorded on the tape.
    """

    if loss.size != 1:
        raise UsageError(f'backward needs a scalar loss, got shape {loss.shape}')
    if loss.node is None or not any(node is loss.node for node in tape.nodes):
        raise UsageError('loss is not reachable from the recorded operations')

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        grad = grads.pop(node.output_id, None)
        if grad is None:
            continue
        for tensor, input_grad in zip(node.inputs, node.backward(grad)):
            if input_grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                tensor.grad = tensor.grad + input_grad
            else:
                key = id(tensor)
                grads[key] = grads[key] + input_grad if key in grads else input_grad


class ParamStore:
    """Registry of named learnable tensors with matching gradient slots.

        Attributes:
            dtype (np.dtype): Storage dtype of every parameter.
    """

    def __init__(self, seed: int = 0, dtype=np.float32) -> None:
        self.dtype = np.dtype(dtype)
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, shape: Sequence[int], init: str = 'uniform',
               fan_in: Optional[int] = None, value: float = 0.0) -> Tensor:
        """Registers a new parameter.

            Args:
                name (str): Hierarchical unique name, e.g. ``encoder.conv_in.weight``.
                shape (tuple): Parameter shape.
                init (str): ``uniform`` (±sqrt(1/fan_in)), ``zeros``, ``ones`` or ``const``.
                fan_in (int): Fan-in for uniform initialisation.
                value (float): Fill value for ``const``.

            Returns:
                Tensor: The registered parameter.
        """

        if name in self._params:
            raise ConfigError(f'duplicate parameter name {name}', field=name)
        shape = tuple(int(s) for s in shape)
        if init == 'uniform':
            bound = (1.0 / fan_in) ** 0.5
            data = self._rng.uniform(-bound, bound, size=shape)
        elif init == 'zeros':
            data = np.zeros(shape)
        elif init == 'ones':
            data = np.ones(shape)
        elif init == 'const':
            data = np.full(shape, value)
        else:
            raise ConfigError(f'unknown initialiser {init}', field='init')
        param = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.zero_grad()

    def astype(self, dtype) -> 'ParamStore':
        """Converts every parameter in place, keeping tensor identities."""

        self.dtype = np.dtype(dtype)
        for param in self._params.values():
            param.data = param.data.astype(self.dtype)
            param.grad = np.zeros_like(param.data)
        return self

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self._params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            self._params[name].data[...] = value

    def count(self) -> int:
        return sum(param.size for param in self._params.values())

    def breakdown(self, depth: int = 1) -> dict[str, int]:
        """Scalar parameter counts grouped by the first ``depth`` name components."""

        groups: dict[str, int] = {}
        for name, param in self._params.items():
            key = '.'.join(name.split('.')[:depth])
            groups[key] = groups.get(key, 0) + param.size
        return groups


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _pair(a: ArrayLike, b: ArrayLike) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a.dtype)
    b = as_tensor(b)
    return as_tensor(a, b.dtype), b


def _grad_if(tensor: Tensor, compute: Callable[[], np.ndarray]) -> Optional[np.ndarray]:
    return _unbroadcast(compute(), tensor.shape) if tensor.requires_grad else None


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        return _grad_if(a, lambda: g), _grad_if(b, lambda: g)

    return record(a.data + b.data, (a, b), backward_fn)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        return _grad_if(a, lambda: g), _grad_if(b, lambda: -g)

    return record(a.data - b.data, (a, b), backward_fn)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        return _grad_if(a, lambda: g * b.data), _grad_if(b, lambda: g * a.data)

    return record(a.data * b.data, (a, b), backward_fn)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        return (_grad_if(a, lambda: g / b.data),
                _grad_if(b, lambda: -g * a.data / (b.data * b.data)))

    return record(a.data / b.data, (a, b), backward_fn)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""

    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f'matmul needs rank >= 2 operands, got {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul inner dims differ: {a.shape} @ {b.shape}')

    def backward_fn(g):
        return (_grad_if(a, lambda: np.matmul(g, np.swapaxes(b.data, -1, -2))),
                _grad_if(b, lambda: np.matmul(np.swapaxes(a.data, -1, -2), g)))

    return record(np.matmul(a.data, b.data), (a, b), backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward_fn(g):
        return (g.reshape(x.shape),)

    return record(x.data.reshape(shape), (x,), backward_fn)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inverse),)

    return record(x.data.transpose(axes), (x,), backward_fn)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward_fn)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    total = tensor_sum(x, axis, keepdims)
    count = x.size // max(total.size, 1)
    return mul(total, 1.0 / count)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward_fn)


def getitem(x: Tensor, index) -> Tensor:
    def backward_fn(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return record(x.data[index], (x,), backward_fn)
