"""Built-in potentials (drift is always minus the gradient) and observables.

Potentials and observables follow the same broadcasting contract as manifolds:
points arrive as arrays of shape ``(..., d)``, values come back as ``(...,)``
arrays and gradients as ``(..., d)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError

__all__ = [
    "Potential",
    "Observable",
    "POTENTIAL_NAMES",
    "OBSERVABLE_NAMES",
    "builtin_potential",
    "builtin_observable",
]


@dataclass(frozen=True)
class Potential:
    name: str
    V: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def drift(self, x: np.ndarray) -> np.ndarray:
        return -self.grad(x)

    def to_dict(self) -> dict:
        out = {"name": self.name}
        out.update(self.params)
        return out


@dataclass(frozen=True)
class Observable:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)

    def to_dict(self) -> dict:
        out = {"name": self.name}
        out.update(self.params)
        return out


def _sl_side(d: int) -> int:
    m = math.isqrt(d)
    if m * m != d:
        raise ConfigError(f"matrix observables need a square ambient dimension, got {d}")
    return m


def builtin_potential(name: str, a: float = 1.0, r: float = 1.0) -> Potential:
    """Return a built-in potential.

    zero          V = 0
    sphere-band   V = a (1 - x1^2 - x2^2); concentrates mass near the equator
                  band of the unit sphere when a > 0
    torus-height  V = a (x3 - r)^2 with tube radius r; pulls toward the top
                  circle of the torus
    sl-identity   V = a |X - I|_F^2 on flattened square matrices
    """
    if name == "zero":
        return Potential(
            name,
            V=lambda x: np.zeros(x.shape[:-1]),
            grad=lambda x: np.zeros_like(x),
        )
    if name == "sphere-band":

        def V(x):
            return a * (1.0 - x[..., 0] ** 2 - x[..., 1] ** 2)

        def grad(x):
            out = np.zeros_like(x)
            out[..., 0] = -2.0 * a * x[..., 0]
            out[..., 1] = -2.0 * a * x[..., 1]
            return out

        return Potential(name, V=V, grad=grad, params={"a": float(a)})
    if name == "torus-height":

        def V(x):
            return a * (x[..., 2] - r) ** 2

        def grad(x):
            out = np.zeros_like(x)
            out[..., 2] = 2.0 * a * (x[..., 2] - r)
            return out

        return Potential(name, V=V, grad=grad, params={"a": float(a), "r": float(r)})
    if name == "sl-identity":

        def V(x):
            m = _sl_side(x.shape[-1])
            ident = np.eye(m).reshape(-1)
            diff = x - ident
            return a * np.sum(diff * diff, axis=-1)

        def grad(x):
            m = _sl_side(x.shape[-1])
            ident = np.eye(m).reshape(-1)
            return 2.0 * a * (x - ident)

        return Potential(name, V=V, grad=grad, params={"a": float(a)})
    raise ConfigError(f"unknown potential {name!r}; choose from {POTENTIAL_NAMES}")


def builtin_observable(name: str, index: int | None = None) -> Observable:
    """Return a built-in observable.

    x3sq           x3^2
    trace          trace of the matrix obtained by un-flattening the point
    coordinate(i)  the i-th coordinate (requires ``index``)
    one            constant 1 (normalization checks)
    """
    if name == "x3sq":
        return Observable(name, fn=lambda x: x[..., 2] ** 2)
    if name == "trace":

        def fn(x):
            m = _sl_side(x.shape[-1])
            return sum(x[..., k * (m + 1)] for k in range(m))

        return Observable(name, fn=fn)
    if name == "coordinate":
        if index is None:
            raise ConfigError("coordinate observable needs an index")
        i = int(index)
        if i < 0:
            raise ConfigError("coordinate index must be non-negative")

        def fn(x):
            if i >= x.shape[-1]:
                raise ConfigError(f"coordinate index {i} out of range for dimension {x.shape[-1]}")
            return x[..., i].copy()

        return Observable(name, fn=fn, params={"index": i})
    if name == "one":
        return Observable(name, fn=lambda x: np.ones(x.shape[:-1]))
    raise ConfigError(f"unknown observable {name!r}; choose from {OBSERVABLE_NAMES}")


POTENTIAL_NAMES = ("zero", "sphere-band", "torus-height", "sl-identity")
OBSERVABLE_NAMES = ("x3sq", "trace", "coordinate", "one")
