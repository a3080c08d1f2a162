"""Dense float64 tensor and the single-use reverse-mode gradient tape."""
from __future__ import annotations

import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..errors import NumericalError, ShapeError, UsageError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()
_debug_numerics = False


def set_debug_numerics(enabled: bool) -> None:
    """Turn the per-operation NaN/Inf guard on or off (process wide)."""
    global _debug_numerics
    _debug_numerics = bool(enabled)


def debug_numerics() -> bool:
    return _debug_numerics


def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Tensor:
    """Immutable float64 array, optionally tracked by a :class:`GradTape`."""

    __slots__ = ("data", "grad_id", "_tape")

    def __init__(self, data, *, check: bool = True):
        array = np.array(data, dtype=np.float64)
        if check and not np.all(np.isfinite(array)):
            raise NumericalError("Tensor construction rejected non-finite values")
        self.data: np.ndarray = _freeze(array)
        self.grad_id: Optional[int] = None
        self._tape: Optional[GradTape] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, op: str = "op", copy: bool = False) -> "Tensor":
        # op outputs are fresh arrays and are frozen in place; external
        # buffers (parameter storage) must be copied first
        out = cls.__new__(cls)
        array = np.array(array, dtype=np.float64) if copy else np.asarray(array, dtype=np.float64)
        if _debug_numerics and not np.all(np.isfinite(array)):
            raise NumericalError(f"Non-finite output from {op}")
        out.data = _freeze(array)
        out.grad_id = None
        out._tape = None
        return out

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    shape = dims

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    @property
    def tracked(self) -> bool:
        return self._tape is not None

    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_as_tensor(other), self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor(dims={self.dims}{flag})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeEntry:
    op: str
    inputs: Tuple[Optional[int], ...]
    output: int
    backward: BackwardFn


class GradTape:
    """Ordered record of primitive operations for one forward pass.

    A tape is single use: ``backward`` may be called once. Parameters enter the
    tape through :meth:`watch` (or :meth:`bind`) under stable string names, and
    gradients come back keyed by those names.
    """

    def __init__(self):
        self._entries: List[TapeEntry] = []
        self._shapes: Dict[int, Tuple[int, ...]] = {}
        self._leaves: Dict[int, str] = {}
        self._next_id = 0
        self._consumed = False
        self._thread = threading.get_ident()
        self._scopes: List[str] = []
        self.scope_bytes: Dict[str, int] = defaultdict(int)
        self.activation_bytes = 0
        self.gradient_bytes = 0

    def __enter__(self) -> "GradTape":
        if getattr(_local, "tape", None) is not None:
            raise UsageError("A gradient tape is already active on this thread")
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = None

    def _new_id(self, shape: Tuple[int, ...]) -> int:
        handle = self._next_id
        self._next_id += 1
        self._shapes[handle] = shape
        return handle

    def _check_thread(self) -> None:
        if threading.get_ident() != self._thread:
            raise UsageError("GradTape used from a thread other than its owner")

    def watch(self, tensor: Tensor, name: str) -> Tensor:
        """Return a tracked alias of ``tensor`` registered as parameter ``name``."""
        self._check_thread()
        if self._consumed:
            raise UsageError("Cannot watch parameters on a consumed tape")
        alias = Tensor._wrap(tensor.data)
        alias.grad_id = self._new_id(alias.dims)
        alias._tape = self
        self._leaves[alias.grad_id] = name
        return alias

    def bind(self, arrays: Mapping[str, np.ndarray],
             names: Optional[Sequence[str]] = None) -> Dict[str, Tensor]:
        """Watch the named arrays; everything else is bound as a constant."""
        watched = set(arrays) if names is None else set(names)
        return {
            name: (self.watch(Tensor._wrap(array, copy=True), name) if name in watched
                   else Tensor._wrap(array, copy=True))
            for name, array in arrays.items()
        }

    def watched_names(self) -> List[str]:
        return sorted(set(self._leaves.values()))

    def tracks(self, tensor: Tensor) -> bool:
        return tensor._tape is self

    @contextmanager
    def scope(self, name: str) -> Iterator[None]:
        """Attribute activation bytes recorded inside the block to ``name``."""
        self._scopes.append(name)
        try:
            yield
        finally:
            self._scopes.pop()

    def record(self, op: str, inputs: Sequence[Tensor], output: np.ndarray,
               backward: BackwardFn) -> Tensor:
        self._check_thread()
        if self._consumed:
            raise UsageError("Cannot record onto a consumed tape")
        out = Tensor._wrap(output, op)
        out.grad_id = self._new_id(out.dims)
        out._tape = self
        handles = tuple(t.grad_id if t._tape is self else None for t in inputs)
        self._entries.append(TapeEntry(op, handles, out.grad_id, backward))
        nbytes = out.data.nbytes
        self.activation_bytes += nbytes
        for scope in self._scopes:
            self.scope_bytes[scope] += nbytes
        return out

    @property
    def peak_bytes(self) -> int:
        return self.activation_bytes + self.gradient_bytes

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Reverse-accumulate from a scalar ``loss``; returns gradients by parameter name."""
        self._check_thread()
        if self._consumed:
            raise UsageError("backward() already called on this tape")
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got dims {loss.dims}")
        if loss._tape is not self:
            raise UsageError("Loss was not produced on this tape")
        self._consumed = True

        grads: Dict[int, np.ndarray] = {loss.grad_id: np.ones(loss.dims)}
        for entry in reversed(self._entries):
            upstream = grads.pop(entry.output, None)
            if upstream is None:
                continue
            contributions = entry.backward(upstream)
            for handle, contribution in zip(entry.inputs, contributions):
                if handle is None or contribution is None:
                    continue
                contribution = np.asarray(contribution, dtype=np.float64)
                if contribution.shape != self._shapes[handle]:
                    raise ShapeError(
                        f"{entry.op} backward produced {contribution.shape}, "
                        f"expected {self._shapes[handle]}"
                    )
                if handle in grads:
                    grads[handle] = grads[handle] + contribution
                else:
                    grads[handle] = contribution

        result: Dict[str, np.ndarray] = {}
        for handle, name in self._leaves.items():
            grad = grads.get(handle)
            if grad is None:
                grad = np.zeros(self._shapes[handle])
            result[name] = result[name] + grad if name in result else grad
        self.gradient_bytes = sum(g.nbytes for g in result.values())
        logger.trace(f"backward over {len(self._entries)} ops, {len(result)} parameters")
        self._entries.clear()
        return result


def current_tape() -> Optional[GradTape]:
    if getattr(_local, "paused", 0):
        return None
    return getattr(_local, "tape", None)


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on this thread's active tape."""
    _local.paused = getattr(_local, "paused", 0) + 1
    try:
        yield
    finally:
        _local.paused -= 1


def make_result(op: str, inputs: Sequence[Tensor], output: np.ndarray,
                backward: BackwardFn) -> Tensor:
    """Wrap an op output, recording it when any input lives on the active tape."""
    tape = current_tape()
    if tape is not None and any(t._tape is tape for t in inputs):
        return tape.record(op, inputs, output, backward)
    return Tensor._wrap(output, op)
