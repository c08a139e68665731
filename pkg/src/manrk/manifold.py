"""Codimension-1 manifolds embedded in R^d, given by one scalar constraint.

A manifold is the zero set ``M = {x : zeta(x) = 0}`` of a smooth constraint
function with non-vanishing gradient on ``M``. Everything the integrator needs
is the triple ``(zeta, grad, hess_action)`` plus the ambient dimension:

* ``zeta(x)``            -> scalar constraint value,
* ``grad(x)``            -> constraint gradient (the projection direction),
* ``gram(x)``            -> squared gradient norm (1x1 Gram "matrix"),
* ``project_tangent``    -> orthogonal projection onto the tangent space,
* ``hess_action(x, v)``  -> action of the constraint Hessian, used to build
  exact Newton systems for implicit projection stages (optional).

All callables broadcast over leading axes: ``x`` may be a single point of
shape ``(d,)`` or a batch ``(..., d)``; scalars come back with shape
``(...,)``. The ensemble sampler relies on this contract.

There is no chart or atlas machinery; points live in the ambient space and
are kept on the manifold by the integrator's projection stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, SingularProjectionError

__all__ = [
    "Manifold",
    "make_sphere",
    "make_torus",
    "make_special_linear",
    "make_custom",
    "manifold_from_json",
    "default_start",
]

_EPS = np.finfo(float).eps
_FD_SCALE = _EPS ** (1.0 / 3.0)

# gram(x) at or below this threshold means the projection direction is lost
_GRAM_TINY = 1e-12


def _check_points(x, dim: int, who: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1:] != (dim,):
        raise DomainError(f"{who}: expected points with last axis {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{who}: non-finite input")
    return arr


def _fd_step(x: np.ndarray) -> np.ndarray:
    # one step size per point: eps^(1/3) * (1 + |x|)
    return _FD_SCALE * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))


@dataclass
class Manifold:
    """A constraint-defined manifold; build instances with the ``make_*`` helpers."""

    kind: str
    ambient_dim: int
    zeta_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    hess_action_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    hess_matrix_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)
    # largest chord a projected stage may legally travel; solutions farther
    # than this from the step's start are spurious far roots and are rejected
    # (None disables the guard, e.g. for unbounded manifolds)
    hop_bound: Optional[float] = None

    def zeta(self, x) -> np.ndarray:
        x = _check_points(x, self.ambient_dim, "zeta")
        return self.zeta_fn(x)

    def grad(self, x) -> np.ndarray:
        x = _check_points(x, self.ambient_dim, "grad")
        return self.grad_fn(x)

    def gram(self, x) -> np.ndarray:
        g = self.grad(x)
        return np.sum(g * g, axis=-1)

    def project_tangent(self, x, v) -> np.ndarray:
        """Project ambient vectors ``v`` onto the tangent space at ``x``."""
        x = _check_points(x, self.ambient_dim, "project_tangent")
        v = _check_points(v, self.ambient_dim, "project_tangent")
        g = self.grad_fn(x)
        gram = np.sum(g * g, axis=-1)
        tiny = _GRAM_TINY * (1.0 + np.sum(x * x, axis=-1))
        if np.any(gram <= tiny):
            raise SingularProjectionError(
                "constraint gradient vanishes: cannot project onto the tangent space"
            )
        coef = np.sum(g * v, axis=-1) / gram
        return v - coef[..., None] * g

    @property
    def has_hessian(self) -> bool:
        return self.hess_action_fn is not None or self.hess_matrix_fn is not None

    def hess_action(self, x, v) -> np.ndarray:
        """Apply the constraint Hessian at ``x`` to direction ``v``."""
        if not self.has_hessian:
            raise DomainError(f"manifold {self.kind!r} has no Hessian information")
        x = _check_points(x, self.ambient_dim, "hess_action")
        v = _check_points(v, self.ambient_dim, "hess_action")
        if self.hess_action_fn is not None:
            return self.hess_action_fn(x, v)
        hm = self.hess_matrix_fn(x)
        return np.einsum("...ij,...j->...i", hm, v)

    def hess_matrix(self, x) -> np.ndarray:
        """Full ``(..., d, d)`` constraint Hessian (assembled from the action if needed)."""
        if not self.has_hessian:
            raise DomainError(f"manifold {self.kind!r} has no Hessian information")
        x = _check_points(x, self.ambient_dim, "hess_matrix")
        if self.hess_matrix_fn is not None:
            return self.hess_matrix_fn(x)
        d = self.ambient_dim
        cols = []
        eye = np.eye(d)
        for k in range(d):
            e = np.broadcast_to(eye[k], x.shape)
            cols.append(self.hess_action_fn(x, e))
        return np.stack(cols, axis=-1)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        out.update(self.params)
        return out


# ---------------------------------------------------------------------------
# sphere
# ---------------------------------------------------------------------------


def make_sphere(dim: int = 3) -> Manifold:
    """Unit sphere in R^dim: zeta(x) = (|x|^2 - 1)/2, grad = x, Hessian = I."""
    if dim < 2:
        raise ConfigError("sphere needs ambient dimension >= 2")

    def zeta(x):
        return 0.5 * (np.sum(x * x, axis=-1) - 1.0)

    def grad(x):
        return x.copy()

    def hess_action(x, v):
        return v.copy()

    def hess_matrix(x):
        return np.broadcast_to(np.eye(dim), x.shape + (dim,)).copy()

    return Manifold(
        kind="sphere",
        ambient_dim=dim,
        zeta_fn=zeta,
        grad_fn=grad,
        hess_action_fn=hess_action,
        hess_matrix_fn=hess_matrix,
        params={"dim": dim},
        hop_bound=float(np.sqrt(2.0)),
    )


# ---------------------------------------------------------------------------
# torus of revolution about the x3-axis (quartic constraint)
# ---------------------------------------------------------------------------


def make_torus(R: float = 3.0, r: float = 1.0) -> Manifold:
    """Torus with centerline radius R and tube radius r, as a quartic zero set.

    zeta(x) = (|x|^2 + R^2 - r^2)^2 - 4 R^2 (x1^2 + x2^2)
    """
    if not (R > r > 0.0):
        raise ConfigError(f"torus needs R > r > 0, got R={R}, r={r}")
    R2 = R * R

    def _shifted(x):
        return np.sum(x * x, axis=-1) + R2 - r * r

    def zeta(x):
        S = _shifted(x)
        return S * S - 4.0 * R2 * (x[..., 0] ** 2 + x[..., 1] ** 2)

    def grad(x):
        S = _shifted(x)
        out = 4.0 * S[..., None] * x
        out[..., 0] -= 8.0 * R2 * x[..., 0]
        out[..., 1] -= 8.0 * R2 * x[..., 1]
        return out

    def hess_action(x, v):
        S = _shifted(x)
        xv = np.sum(x * v, axis=-1)
        out = 4.0 * S[..., None] * v + 8.0 * xv[..., None] * x
        out[..., 0] -= 8.0 * R2 * v[..., 0]
        out[..., 1] -= 8.0 * R2 * v[..., 1]
        return out

    def hess_matrix(x):
        S = _shifted(x)
        eye = np.eye(3)
        out = 4.0 * S[..., None, None] * eye + 8.0 * x[..., :, None] * x[..., None, :]
        out[..., 0, 0] -= 8.0 * R2
        out[..., 1, 1] -= 8.0 * R2
        return out

    return Manifold(
        kind="torus",
        ambient_dim=3,
        zeta_fn=zeta,
        grad_fn=grad,
        hess_action_fn=hess_action,
        hess_matrix_fn=hess_matrix,
        params={"R": float(R), "r": float(r)},
        # half the tube's antipodal chord, same role as sqrt(2) on the sphere
        hop_bound=float(r * np.sqrt(2.0)),
    )


# ---------------------------------------------------------------------------
# special linear group SL(m): matrices with unit determinant, flattened row-major
# ---------------------------------------------------------------------------


def _det_gradient(X: np.ndarray, m: int) -> np.ndarray:
    """Gradient of det at X, as a matrix: the cofactor matrix det(X) X^-T."""
    if m == 2:
        a = X[..., 0, 0]
        b = X[..., 0, 1]
        c = X[..., 1, 0]
        d = X[..., 1, 1]
        return np.stack(
            [np.stack([d, -c], axis=-1), np.stack([-b, a], axis=-1)], axis=-2
        )
    if m == 3:
        r0, r1, r2 = X[..., 0, :], X[..., 1, :], X[..., 2, :]
        return np.stack(
            [np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-2
        )
    det = np.linalg.det(X)
    if np.any(np.abs(det) < 1e-10) or not np.all(np.isfinite(det)):
        raise DomainError("determinant gradient: matrix is numerically singular")
    inv_t = np.swapaxes(np.linalg.inv(X), -1, -2)
    if not np.all(np.isfinite(inv_t)):
        raise DomainError("determinant gradient: inverse overflowed")
    return det[..., None, None] * inv_t


def make_special_linear(m: int) -> Manifold:
    """Matrices with det = 1, embedded in R^(m*m) by row-major flattening."""
    if m < 2:
        raise ConfigError("special linear group needs m >= 2")
    dim = m * m

    def _mat(x):
        return x.reshape(x.shape[:-1] + (m, m))

    def zeta(x):
        return np.linalg.det(_mat(x)) - 1.0

    def grad(x):
        G = _det_gradient(_mat(x), m)
        return G.reshape(x.shape)

    if m == 2:
        # det(x) = x0*x3 - x1*x2 is bilinear, so the Hessian is constant
        H2 = np.zeros((4, 4))
        H2[0, 3] = H2[3, 0] = 1.0
        H2[1, 2] = H2[2, 1] = -1.0

        def hess_action(x, v):
            return np.einsum("ij,...j->...i", H2, v)

        def hess_matrix(x):
            return np.broadcast_to(H2, x.shape + (4,)).copy()

        return Manifold(
            kind="sl",
            ambient_dim=dim,
            zeta_fn=zeta,
            grad_fn=grad,
            hess_action_fn=hess_action,
            hess_matrix_fn=hess_matrix,
            params={"m": 2},
        )

    # Hessian action by central differences of the analytic gradient
    return Manifold(
        kind="sl",
        ambient_dim=dim,
        zeta_fn=zeta,
        grad_fn=grad,
        hess_action_fn=_fd_hess_action(grad),
        params={"m": int(m)},
    )


def _fd_gradient(zeta_fn: Callable, dim: int) -> Callable:
    """Centered finite-difference gradient fallback for custom constraints."""

    def grad(x):
        h = _fd_step(x)[..., 0]
        out = np.empty_like(x)
        for k in range(dim):
            xp = x.copy()
            xm = x.copy()
            xp[..., k] += h
            xm[..., k] -= h
            out[..., k] = (zeta_fn(xp) - zeta_fn(xm)) / (2.0 * h)
        return out

    return grad


def _fd_hess_action(grad_fn: Callable) -> Callable:
    """Centered finite differences of a gradient, applied along a direction."""

    def hess_action(x, v):
        vnorm = np.linalg.norm(v, axis=-1, keepdims=True)
        h = _fd_step(x)
        # scale the probe so the displacement has magnitude h, guarding v = 0
        scale = np.where(vnorm > 0.0, h / np.where(vnorm > 0.0, vnorm, 1.0), 0.0)
        xp = x + scale * v
        xm = x - scale * v
        diff = grad_fn(xp) - grad_fn(xm)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = diff / (2.0 * scale)
        return np.where(vnorm > 0.0, out, 0.0)

    return hess_action


def make_custom(
    zeta: Callable,
    dim: int,
    grad: Optional[Callable] = None,
    hess_action: Optional[Callable] = None,
    name: str = "custom",
) -> Manifold:
    """Wrap user callables into a Manifold.

    Callables must broadcast over leading axes (points come in as ``(..., d)``
    arrays) and are never mutated or re-wrapped. When ``grad`` is omitted a
    centered finite-difference gradient with step ``eps^(1/3) (1 + |x|)`` is
    installed; ``hess_action`` stays absent unless provided, in which case the
    stage solver will use exact Newton systems.
    """
    if dim < 1:
        raise ConfigError("ambient dimension must be positive")
    grad_fn = grad if grad is not None else _fd_gradient(zeta, dim)
    return Manifold(
        kind=name,
        ambient_dim=dim,
        zeta_fn=zeta,
        grad_fn=grad_fn,
        hess_action_fn=hess_action,
        params={"dim": dim},
    )


def manifold_from_json(data: dict) -> Manifold:
    """Build a manifold from its JSON description (see the CLI config schema)."""
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError(f"manifold description must be an object with 'kind', got {data!r}")
    kind = data["kind"]
    if kind == "sphere":
        return make_sphere(int(data.get("dim", 3)))
    if kind == "torus":
        return make_torus(float(data.get("R", 3.0)), float(data.get("r", 1.0)))
    if kind == "sl":
        if "m" not in data:
            raise ConfigError("sl manifold needs 'm'")
        return make_special_linear(int(data["m"]))
    raise ConfigError(f"unknown manifold kind {kind!r}")


def default_start(manifold: Manifold) -> np.ndarray:
    """Canonical on-manifold start point used when a run omits x0."""
    d = manifold.ambient_dim
    if manifold.kind == "sphere":
        x = np.zeros(d)
        x[-1] = 1.0
        return x
    if manifold.kind == "torus":
        return np.array([manifold.params["R"] + manifold.params["r"], 0.0, 0.0])
    if manifold.kind == "sl":
        m = manifold.params["m"]
        return np.eye(m).reshape(-1)
    raise ConfigError(f"no default start point for manifold kind {manifold.kind!r}")
