"""Tape, variables, and the parameter store.

A :class:`Tape` records one backward closure per primitive application.
Gradients are plain float64 numpy arrays accumulated on :class:`Var`
instances; parameters live in a :class:`ParameterStore` with persistent
gradient buffers.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Incompatible operand shapes, raised by the offending primitive."""


_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    """The innermost open tape, or None when running untaped (pure forward)."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Var:
    """A float64 array plus a lazily-allocated gradient buffer."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        label = self.name or "var"
        return f"Var({label}, shape={self.value.shape})"


class Tape:
    """Records backward closures; context manager makes it the active tape."""

    def __init__(self):
        self._ops: list = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, backward) -> None:
        self._ops.append(backward)

    def __len__(self):
        return len(self._ops)

    def backward(self, out: Var) -> None:
        """One reverse sweep from a scalar output.

        The tape supports exactly one backward pass; gradients accumulate
        into whatever buffers the touched Vars already hold.
        """
        if out.value.size != 1:
            raise ShapeError(
                f"backward requires a scalar output, got shape {out.value.shape}"
            )
        out.accumulate(np.ones_like(out.value))
        for op in reversed(self._ops):
            op()
        self._ops = []


class ParameterStore:
    """Named parameter tensors with paired gradient buffers."""

    def __init__(self):
        self._params: dict[str, Var] = {}

    def add(self, name: str, value) -> Var:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        v = Var(np.array(value, dtype=np.float64), name=name)
        if not np.all(np.isfinite(v.value)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        v.grad = np.zeros_like(v.value)
        self._params[name] = v
        return v

    def __getitem__(self, name: str) -> Var:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for v in self._params.values():
            v.grad[...] = 0.0

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, arr in values.items():
            v = self._params[k]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != v.value.shape:
                raise ShapeError(
                    f"parameter {k!r}: stored shape {arr.shape} != {v.value.shape}"
                )
            v.value[...] = arr

    def num_parameters(self) -> int:
        return sum(v.value.size for v in self._params.values())


def evaluate(graph, params: ParameterStore, *inputs):
    """Run ``graph(params, *inputs)`` under a fresh tape.

    Returns ``(outputs, tape)``; the tape supports one backward pass.
    """
    with Tape() as tape:
        out = graph(params, *inputs)
    return out, tape
