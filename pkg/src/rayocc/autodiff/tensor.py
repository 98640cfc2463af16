"""Dense tensors, the recording tape and precision control."""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class TensorError(ValueError):
    """Shape or usage error raised by a tensor operation."""


class NonFiniteError(FloatingPointError):
    """A forward or backward computation produced NaN or Inf."""


_DTYPES = {"single": np.float32, "double": np.float64}
_state = threading.local()


def _local():
    if not hasattr(_state, "dtype"):
        _state.dtype = np.float32
        _state.grad_enabled = True
        _state.tape = Tape()
    return _state


def default_dtype():
    return _local().dtype


def set_precision(mode: str) -> None:
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    _local().dtype = _DTYPES[mode]


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch the dtype used for newly created tensors."""
    st = _local()
    prev = st.dtype
    set_precision(mode)
    try:
        yield
    finally:
        st.dtype = prev


@contextlib.contextmanager
def no_grad():
    st = _local()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


def grad_enabled() -> bool:
    return _local().grad_enabled


class Tensor:
    """An n-dimensional array that can take part in reverse-mode differentiation.

    ``data`` is always a contiguous numpy array. ``grad`` stays ``None`` for
    tensors that do not require gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        dtype = dtype or default_dtype()
        arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        t = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype, name=self.name)
        return t

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the op functions carry the checks
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


@dataclass(eq=False)
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    consumed: bool = False


@dataclass(eq=False)
class Tape:
    """Ordered record of executed ops. Inputs always precede the ops using them."""

    nodes: list = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def reset(self) -> None:
        for n in self.nodes:
            n.consumed = True
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)


def current_tape() -> Tape:
    return _local().tape


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that requires gradients.

    The tape is consumed: calling ``backward`` again on the same graph raises.
    """
    if loss.size != 1:
        raise TensorError(f"backward: loss must be scalar, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise TensorError("backward: loss is not connected to the tape")
    if node.consumed:
        raise TensorError("backward: tape already consumed; re-run the forward pass")
    tape = current_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for n in reversed(tape.nodes):
        g = grads.pop(id(n.output), None)
        if g is None:
            continue
        in_grads = n.backward(g)
        for t, gi in zip(n.inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise TensorError(f"backward of {n.kind}: grad shape {gi.shape} != input shape {t.shape}")
            if not np.all(np.isfinite(gi)):
                raise NonFiniteError(f"backward of {n.kind} produced non-finite gradient")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if t._node is None:
                leaves[key] = t
    for key, t in leaves.items():
        t.grad = np.ascontiguousarray(grads[key], dtype=t.data.dtype)
    tape.reset()
