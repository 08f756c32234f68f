from __future__ import annotations

import numpy as np

from clqlab.autodiff.tensor import Tensor


class Parameter(Tensor):
    """A named leaf tensor owned by a model, with an SGD momentum buffer."""

    __slots__ = ("momentum",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)
        self.momentum = np.zeros_like(self.data)


class ParameterSet:
    """Ordered, name-unique registry of parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(data, name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return sum(p.size for p in self)

    def zero_grad(self):
        for p in self:
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, arr in state.items():
            p = self._params[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = np.array(arr, dtype=np.float64)


def sgd_step(params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """``v <- momentum*v + grad + wd*w``; ``w <- w - lr*v``; grads are then cleared."""
    for p in params:
        g = p.grad if p.grad is not None else 0.0
        p.momentum = momentum * p.momentum + g + weight_decay * p.data
        p.data = p.data - lr * p.momentum
        p.grad = None
