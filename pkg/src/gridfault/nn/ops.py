"""Differentiable array primitives: forward plus matching backward.

All backward functions take the upstream gradient first and return the
gradients of the forward inputs in order.  Everything runs in float64.
No tape: callers keep whatever the backward needs (inputs or outputs).
"""

from __future__ import annotations

import numpy as np


def _check_shapes(name: str, a: np.ndarray, b: np.ndarray, ok: bool) -> None:
    if not ok:
        raise ValueError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


# --- linear algebra ------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_shapes("matmul", a, b, a.shape[-1] == b.shape[0])
    return a @ b


def matmul_backward(dout, a, b):
    return dout @ b.T, a.T @ dout


def add_bias(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_shapes("add_bias", x, b, x.shape[-1] == b.shape[-1])
    return x + b


def add_bias_backward(dout):
    axes = tuple(range(dout.ndim - 1))
    return dout, dout.sum(axis=axes)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_shapes("hadamard", a, b, a.shape == b.shape)
    return a * b


def hadamard_backward(dout, a, b):
    return dout * b, dout * a


# --- activations ---------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_backward(dout, y):
    """Backward given the forward output y = sigmoid(x)."""
    return dout * y * (1.0 - y)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(dout, y):
    return dout * (1.0 - y * y)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0.0)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-stable softmax along the last axis; rows sum to 1."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(dout, y):
    return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


# --- shape plumbing ------------------------------------------------------

def concat(parts: list[np.ndarray], axis: int) -> np.ndarray:
    return np.concatenate(parts, axis=axis)


def concat_backward(dout, parts, axis: int):
    sizes = [p.shape[axis] for p in parts]
    return np.split(dout, np.cumsum(sizes)[:-1], axis=axis)


def reshape(x: np.ndarray, shape) -> np.ndarray:
    return x.reshape(shape)


def reshape_backward(dout, original_shape):
    return dout.reshape(original_shape)


def flatten(x: np.ndarray) -> np.ndarray:
    """Collapse everything after the leading (batch) axis."""
    return x.reshape(x.shape[0], -1)


# --- dropout -------------------------------------------------------------

def dropout(x: np.ndarray, rate: float, training: bool,
            rng: np.random.Generator | None = None):
    """Inverted dropout.  Returns (output, mask); mask is None when inactive.

    Training mode zeroes entries with probability ``rate`` and scales
    survivors by 1/(1-rate) so inference is a plain identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask
