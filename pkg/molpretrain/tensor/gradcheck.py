from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from molpretrain.tensor.tensor import Tensor, no_grad, precision


def grad_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    h: float = 1e-3,
    floor: float = 1e-8,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients with central finite differences.

    ``f(*inputs)`` must return a scalar tensor and be deterministic. Inputs are
    switched to 64 bit before checking.

    Parameters
    ----------
    f : Callable[..., Tensor]
        Scalar function of the inputs
    inputs : Tensor | Sequence[Tensor]
        Tensors to differentiate with respect to (modified in place while probing)
    h : float
        Finite-difference step
    floor : float
        Lower bound of the relative-error denominator
    max_coords : int | None
        Probe at most this many randomly chosen coordinates per input
    seed : int
        Seed for the coordinate sample

    Returns
    -------
    float
        Largest ``|a - n| / max(|a|, |n|, floor)`` over the probed coordinates
    """
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        for t in tensors:
            t.data = t.data.astype(np.float64)
            t.requires_grad = True
            t.zero_grad()
        f(*tensors).backward()
        worst = 0.0
        for t in tensors:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for c in coords:
                original = flat[c]
                with no_grad():
                    flat[c] = original + h
                    plus = f(*tensors).item()
                    flat[c] = original - h
                    minus = f(*tensors).item()
                flat[c] = original
                numeric = (plus - minus) / (2.0 * h)
                a = analytic.reshape(-1)[c]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
    return worst
