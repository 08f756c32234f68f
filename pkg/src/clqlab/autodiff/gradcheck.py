from __future__ import annotations

import numpy as np

from clqlab.autodiff.tensor import Tensor


class NonFiniteError(ArithmeticError):
    pass


def _evaluate(f, inputs) -> float:
    out = f(*inputs)
    val = float(out.data)
    if not np.isfinite(val):
        raise NonFiniteError(f"non-finite function value {val}")
    return val


def grad_check(f, inputs, h: float = 1e-4, coords=None, rng=None) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps the input tensors to a scalar tensor. The error per coordinate
    is ``|a - n| / max(1e-8, |a| + |n|)``. By default every coordinate of
    every input is checked; ``coords`` caps the number per input, sampled
    with ``rng``.
    """
    inputs = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = f(*inputs)
    if out.shape != ():
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data):
        raise NonFiniteError("non-finite function value at the base point")
    out.backward()
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]
    for a in analytic:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite analytic gradient")

    worst = 0.0
    for x, a in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and flat.size > coords:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = rng.choice(flat.size, size=coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = _evaluate(f, inputs)
            flat[i] = orig - h
            fm = _evaluate(f, inputs)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    for x in inputs:
        x.grad = None
    return worst
