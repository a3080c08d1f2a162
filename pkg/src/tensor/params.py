"""Named parameter storage shared by models, optimizers and checkpoints."""
from __future__ import annotations

from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Type

import numpy as np

from ..errors import ArgumentError, CheckpointError, S5Error
from .tensor import Tensor


class ParameterTable:
    """Ordered ``name -> float64 array`` map.

    Names are dotted paths (``blocks.0.s4.A``); insertion order is the
    serialization order, so two tables built the same way save identically.
    """

    def __init__(self, arrays: Optional[Mapping[str, np.ndarray]] = None):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, array in (arrays or {}).items():
            self.add(name, array)

    def add(self, name: str, array) -> None:
        if name in self._arrays:
            raise ArgumentError(f"Duplicate parameter name: {name}")
        self._arrays[name] = np.array(array, dtype=np.float64)

    def update(self, arrays: Mapping[str, np.ndarray], prefix: str = "") -> None:
        for name, array in arrays.items():
            self.add(prefix + name, array)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, array) -> None:
        value = np.array(array, dtype=np.float64)
        if name in self._arrays and self._arrays[name].shape != value.shape:
            raise CheckpointError(
                f"Shape mismatch for {name}: {value.shape} vs {self._arrays[name].shape}"
            )
        self._arrays[name] = value

    def __contains__(self, name: object) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self, prefix: str = "") -> List[str]:
        return [name for name in self._arrays if name.startswith(prefix)]

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        """Arrays under ``prefix`` with the prefix stripped (views, not copies)."""
        return {name[len(prefix):]: array for name, array in self._arrays.items()
                if name.startswith(prefix)}

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: array.shape for name, array in self._arrays.items()}

    def copy(self) -> "ParameterTable":
        return ParameterTable({name: array.copy() for name, array in self._arrays.items()})

    @property
    def size(self) -> int:
        return int(sum(array.size for array in self._arrays.values()))

    def load_matching(self, source: Mapping[str, np.ndarray], names: Sequence[str],
                      src_prefix: str = "", dst_prefix: str = "",
                      error: Type[S5Error] = CheckpointError) -> None:
        """Copy ``src_prefix + n`` into ``dst_prefix + n`` for every ``n`` in ``names``."""
        for name in names:
            src_name, dst_name = src_prefix + name, dst_prefix + name
            if src_name not in source:
                raise error(f"Missing parameter {src_name}")
            if dst_name not in self._arrays:
                raise error(f"Unknown target parameter {dst_name}")
            value = np.asarray(source[src_name], dtype=np.float64)
            if value.shape != self._arrays[dst_name].shape:
                raise error(f"Shape mismatch for {dst_name}: {value.shape} vs "
                            f"{self._arrays[dst_name].shape}")
            self._arrays[dst_name] = value.copy()

    def equals(self, other: "ParameterTable") -> bool:
        if list(self._arrays) != list(other._arrays):
            return False
        return all(np.array_equal(a, other[name]) for name, a in self._arrays.items())


def constants(arrays: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
    """Bind arrays as untracked tensors (evaluation, shadow and key encoders)."""
    return {name: Tensor._wrap(array, copy=True) for name, array in arrays.items()}
