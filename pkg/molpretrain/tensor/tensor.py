"""Dense numpy-backed tensors with a thread-local reverse-mode tape.

Every differentiable kernel records its output on the active tape together
with a closure that maps the output gradient to input gradients. Calling
:meth:`Tensor.backward` on a scalar walks the tape in reverse creation order
(a valid topological order), sums gradients of tensors used more than once,
accumulates into the ``.grad`` of leaf tensors and then clears the tape.
Leaf gradients are never cleared implicitly; call ``zero_grad``.
"""

from __future__ import annotations

from typing import Any, Callable, Iterator, Sequence

import threading
from contextlib import contextmanager

import numpy as np

from molpretrain.errors import AutogradError, NonFiniteError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _State(threading.local):
    def __init__(self) -> None:
        self.tape = Tape()
        self.grad_enabled = True
        self.dtype: np.dtype = np.dtype(np.float32)
        self.debug = False


class Tape:
    """Recorded op outputs of the current thread, in creation order."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self.generation = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes.clear()
        self.generation += 1


_state = _State()


def current_tape() -> Tape:
    return _state.tape


def default_dtype() -> np.dtype:
    return _state.dtype


def grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Use ``dtype`` (e.g. ``np.float64`` for gradient checks) for new tensors."""
    previous = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    """Raise :class:`NonFiniteError` as soon as any kernel produces NaN or Inf."""
    previous = _state.debug
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = previous


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_generation")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: Any = None,
    ) -> None:
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif np.issubdtype(array.dtype, np.floating) or requires_grad:
            array = array.astype(_state.dtype, copy=False)
        self.data: np.ndarray = array
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._generation = -1

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

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
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    # operator sugar, implemented in functional
    def __add__(self, other: Any) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.sub(self, other)

    def __mul__(self, other: Any) -> Tensor:
        from molpretrain.tensor import functional as F

        if isinstance(other, (int, float)):
            return F.scale(self, float(other))
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.index(self, key)

    def reshape(self, *shape: int) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes: int) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.transpose(self, axes)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.sum(self, axis, keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from molpretrain.tensor import functional as F

        return F.mean(self, axis, keepdims)


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(out: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap a kernel output and record it on the tape when a parent needs gradients."""
    if _state.debug and np.issubdtype(out.dtype, np.floating) and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    result = Tensor(out, dtype=out.dtype)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        tape = _state.tape
        result.requires_grad = True
        result.name = op
        result._parents = tuple(parents)
        result._backward = backward_fn
        result._generation = tape.generation
        tape.nodes.append(result)
    return result


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires grad.

    Parameters
    ----------
    loss : Tensor
        Scalar produced by recorded ops on this thread's tape

    Raises
    ------
    AutogradError
        If ``loss`` is not a scalar or was not recorded on the active tape
    """
    tape = _state.tape
    if loss.size != 1:
        raise AutogradError(f"backward needs a scalar, got shape {loss.shape}")
    if loss._backward is None or loss._generation != tape.generation:
        raise AutogradError("backward called on a tensor that is not on the active tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                pg = pg.astype(parent.data.dtype, copy=False)
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            elif id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    tape.clear()
