from __future__ import annotations

import numpy as np


class Parameter:
    """A trainable array paired with its accumulated gradient.

    Frozen parameters keep their values through optimizer steps; gradient
    accumulation still works so freezing can be toggled without rebuilding.
    """

    __slots__ = ("name", "value", "grad", "frozen")

    def __init__(self, name: str, value: np.ndarray, frozen: bool = False):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.frozen = frozen

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        tag = " frozen" if self.frozen else ""
        return f"Parameter({self.name!r}, shape={self.value.shape}{tag})"


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Glorot/Xavier uniform init with the given fan-in and fan-out."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=shape if shape else (n_in, n_out))
