"""Named parameter registry with freeze flags and optimizer state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import StateError


@dataclass
class ParamEntry:
    tensor: Tensor
    frozen: bool
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParameterStore:
    """Ordered map from dotted names to parameters.

    Frozen entries have ``requires_grad`` off, so backward never touches
    them and their gradient buffer stays exactly zero.
    """

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name: str, value: np.ndarray, frozen: bool = False,
            m: np.ndarray | None = None, v: np.ndarray | None = None,
            step: int = 0) -> ParamEntry:
        if name in self._entries:
            raise StateError(f"duplicate parameter name {name!r}")
        tensor = Tensor(value, requires_grad=not frozen)
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        entry = ParamEntry(
            tensor=tensor,
            frozen=frozen,
            m=np.zeros_like(tensor.data) if m is None else np.asarray(m, dtype=np.float64).reshape(tensor.data.shape),
            v=np.zeros_like(tensor.data) if v is None else np.asarray(v, dtype=np.float64).reshape(tensor.data.shape),
            step=int(step),
        )
        self._entries[name] = entry
        return entry

    def replace(self, name: str, value: np.ndarray, frozen: bool = False) -> ParamEntry:
        """Swap in a fresh value (new shape allowed), resetting optimizer state."""
        if name not in self._entries:
            raise StateError(f"unknown parameter {name!r}")
        tensor = Tensor(value, requires_grad=not frozen)
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        entry = ParamEntry(tensor=tensor, frozen=frozen,
                           m=np.zeros_like(tensor.data), v=np.zeros_like(tensor.data))
        self._entries[name] = entry
        return entry

    def remove(self, name: str) -> None:
        if name not in self._entries:
            raise StateError(f"unknown parameter {name!r}")
        del self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> ParamEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise StateError(f"unknown parameter {name!r}") from None

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def tensor(self, name: str) -> Tensor:
        return self[name].tensor

    def value(self, name: str) -> np.ndarray:
        return self[name].tensor.data

    def grad(self, name: str) -> np.ndarray:
        return self[name].tensor.grad

    def set_frozen(self, name: str, frozen: bool) -> None:
        entry = self[name]
        entry.frozen = frozen
        entry.tensor.requires_grad = not frozen
        if frozen:
            entry.tensor.grad[...] = 0.0

    def freeze_where(self, predicate) -> None:
        for name in self._entries:
            self.set_frozen(name, bool(predicate(name)))

    def zero_grads(self) -> None:
        for entry in self._entries.values():
            entry.tensor.grad[...] = 0.0

    def n_params(self, only_trainable: bool = False) -> int:
        return sum(e.tensor.size for e in self._entries.values()
                   if not (only_trainable and e.frozen))

    def copy_values(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Snapshot of parameter arrays (optionally restricted by name prefix)."""
        return {name: e.tensor.data.copy() for name, e in self._entries.items()
                if name.startswith(prefix)}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            entry = self[name]
            if entry.tensor.data.shape != arr.shape:
                raise StateError(f"shape mismatch restoring {name!r}")
            entry.tensor.data[...] = arr
