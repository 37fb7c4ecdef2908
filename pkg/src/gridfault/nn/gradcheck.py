"""Central-finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def grad_check(
    f: Callable[[Sequence[np.ndarray]], tuple[float, list[np.ndarray]]],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-6,
) -> float:
    """Max relative error between analytic and numeric gradients.

    ``f`` maps the list of input arrays to ``(scalar, grads)`` where
    ``grads[k]`` is the analytic gradient of the scalar with respect to
    ``inputs[k]``.  Each entry is perturbed by +/- eps and compared
    against (f(x+eps) - f(x-eps)) / (2 eps); the relative error uses a
    max(|analytic|, |numeric|, 1e-8) denominator.  ``f`` must be pure.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    out, analytic = f(inputs)
    if not np.isfinite(out):
        raise ValueError(f"non-finite output {out!r} from checked function")
    if len(analytic) != len(inputs):
        raise ValueError("f returned a gradient list of the wrong length")

    worst = 0.0
    for k, x in enumerate(inputs):
        a = np.asarray(analytic[k], dtype=np.float64)
        if a.shape != x.shape:
            raise ValueError(
                f"gradient {k} has shape {a.shape}, input has {x.shape}"
            )
        flat = x.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = f(inputs)
            flat[i] = orig - eps
            down, _ = f(inputs)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError("non-finite output during perturbation")
            numeric = (up - down) / (2.0 * eps)
            ana = a.reshape(-1)[i]
            denom = max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, abs(ana - numeric) / denom)
    return worst
