"""Extended Butcher tableaux for projected stochastic Runge-Kutta methods.

A scheme with ``s`` stages is described by two ``(s, s)`` coefficient arrays
and two ``s``-vectors:

* ``A``     -- drift coefficients (weights of ``h * f(Y_j)`` in each stage),
* ``Ahat``  -- projection-direction coefficients (weights of ``g(Y_j)`` in the
  direction along which stage ``i`` is pulled back onto the constraint set),
* ``d``     -- per-stage noise amplitudes (weights of ``sigma * sqrt(h) * xi``),
* ``delta`` -- constraint flags: ``delta[i] = 1`` when stage ``i`` is required
  to satisfy ``zeta(Y_i) = 0`` (and then ``delta[i]`` equals the row sum of
  ``Ahat[i]``), ``delta[i] = 0`` when the stage is unconstrained (and then row
  ``i`` of ``Ahat`` vanishes).

The update weights are not free parameters: ``b = A[s-1]``, ``bhat =
Ahat[s-1]`` and the abscissae are ``c = A @ ones``, because the last stage is
the step output.

The componentwise ("diamond") product on stage vectors is the algebra in which
the order conditions of :mod:`manrk.order_conditions` are written; it is
provided here as :func:`diamond` and :func:`diamond_pow`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import TableauStructureError

__all__ = [
    "ButcherTableau",
    "ValidationReport",
    "BUILTIN_NAMES",
    "builtin",
    "diamond",
    "diamond_pow",
    "tableau_from_json",
    "tableau_to_json",
    "validate",
]

# delta entries must sit within this distance of {0, 1} and are then snapped.
DELTA_SNAP_TOL = 1e-12

# numeric tolerance for the row-sum and zero-row invariants in validate()
STRUCTURE_TOL = 1e-14


def diamond(*vectors: np.ndarray) -> np.ndarray:
    """Componentwise product of one or more stage vectors."""
    if not vectors:
        raise ValueError("diamond() needs at least one vector")
    out = np.asarray(vectors[0], dtype=float).copy()
    for v in vectors[1:]:
        out *= np.asarray(v, dtype=float)
    return out


def diamond_pow(vector: np.ndarray, m: int) -> np.ndarray:
    """Componentwise power; ``m = 0`` gives the all-ones vector."""
    v = np.asarray(vector, dtype=float)
    if m < 0:
        raise ValueError("diamond_pow() exponent must be non-negative")
    return np.ones_like(v) if m == 0 else v**m


def _as_matrix(a, name: str, s: int) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.shape != (s, s):
        raise TableauStructureError(f"{name} must have shape ({s}, {s}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TableauStructureError(f"{name} contains non-finite entries")
    return arr


def _as_vector(a, name: str, s: int) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.shape != (s,):
        raise TableauStructureError(f"{name} must have shape ({s},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TableauStructureError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate`: hard violations plus structural advisories."""

    violations: tuple[str, ...]
    advisories: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients of one projected stochastic Runge-Kutta scheme.

    Construction enforces shapes, finiteness and that ``delta`` entries are
    (numerically) 0 or 1; class invariants that depend on cross-array algebra
    are reported by :func:`validate` instead of raised, so that defective
    tableaux can be inspected.
    """

    s: int
    A: np.ndarray
    Ahat: np.ndarray
    d: np.ndarray
    delta: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.s < 1:
            raise TableauStructureError("tableau needs at least one stage")
        A = _as_matrix(self.A, "A", self.s)
        Ahat = _as_matrix(self.Ahat, "Ahat", self.s)
        d = _as_vector(self.d, "d", self.s)
        delta = _as_vector(self.delta, "delta", self.s)
        snapped = np.round(delta)
        if np.any(np.abs(delta - snapped) > DELTA_SNAP_TOL) or not np.all(
            (snapped == 0) | (snapped == 1)
        ):
            raise TableauStructureError(
                f"delta entries must be 0 or 1 within {DELTA_SNAP_TOL}, got {delta}"
            )
        for arr in (A, Ahat, d, snapped):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Ahat", Ahat)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "delta", snapped)

    # -- derived weight vectors (the last stage is the step output) --------

    @property
    def b(self) -> np.ndarray:
        return self.A[-1]

    @property
    def bhat(self) -> np.ndarray:
        return self.Ahat[-1]

    @property
    def c(self) -> np.ndarray:
        return self.A @ np.ones(self.s)

    # -- structural predicates used by the stage solver ---------------------

    @property
    def drift_strictly_lower(self) -> bool:
        return bool(np.all(self.A[np.triu_indices(self.s)] == 0.0))

    @property
    def direction_lower(self) -> bool:
        return self.s < 2 or bool(np.all(self.Ahat[np.triu_indices(self.s, k=1)] == 0.0))

    @property
    def sequential(self) -> bool:
        """True when stages can be resolved in one forward pass."""
        return self.drift_strictly_lower and self.direction_lower

    @property
    def drift_free(self) -> bool:
        return bool(np.all(self.A == 0.0))

    def to_dict(self) -> dict:
        out = {
            "s": self.s,
            "A": self.A.tolist(),
            "Ahat": self.Ahat.tolist(),
            "d": self.d.tolist(),
            "delta": self.delta.tolist(),
        }
        if self.name:
            out["name"] = self.name
        return out


def validate(t: ButcherTableau) -> ValidationReport:
    """Check class invariants and report violations and advisories.

    Violations (make the tableau unusable as a member of the method class):

    * ``delta[i]`` must equal the row sum of ``Ahat[i]``,
    * ``delta[s-1] = 1`` (the output stage is constrained),
    * ``delta[i] = 0`` forces row ``i`` of ``Ahat`` to vanish.

    Advisories (legal but worth flagging): non-triangular coefficient arrays,
    which force coupled-stage (Gauss-Seidel) solves instead of one forward
    sweep.
    """
    violations = []
    advisories = []
    row_sums = t.Ahat @ np.ones(t.s)
    for i in range(t.s):
        if abs(row_sums[i] - t.delta[i]) > STRUCTURE_TOL:
            violations.append(
                f"row sum of Ahat[{i}] is {row_sums[i]!r} but delta[{i}] is {t.delta[i]!r}"
            )
        if t.delta[i] == 0.0 and np.any(np.abs(t.Ahat[i]) > STRUCTURE_TOL):
            violations.append(
                f"delta[{i}] = 0 requires Ahat row {i} to vanish, got {t.Ahat[i].tolist()}"
            )
    if t.delta[-1] != 1.0:
        violations.append("delta_s = 1 is required: the output stage must satisfy the constraint")
    if not t.drift_strictly_lower:
        advisories.append("A is not strictly lower triangular: drift stages are coupled")
    if not t.direction_lower:
        advisories.append("Ahat is not lower triangular: projection stages are coupled")
    return ValidationReport(tuple(violations), tuple(advisories))


# ---------------------------------------------------------------------------
# built-in schemes
# ---------------------------------------------------------------------------

_SQ2 = np.sqrt(2.0)

# Four-stage scheme of invariant-measure order two on general codimension-1
# manifolds. The free coefficients below solve the order-condition system to
# machine precision (Gauss-Newton polish of an 18-digit seed solution; the
# polish moves no coefficient by more than 1.1e-5 and lands bhat.d exactly on
# the root 1 - sqrt(2)/2 of q(y) = y^2 - 2y + 1/2).
_RK2_C2 = 0.6217299251426793
_RK2_C3 = 0.10203239136930703
_RK2_D1 = -0.8989315620273073
_RK2_D2 = -1.6623309369385324
_RK2_D3 = 0.3189244476838561
_RK2_A21 = 0.5843833054731224
_RK2_A31 = 0.8877073293200586
_RK2_A32 = -0.3450185715912667
_RK2_A41 = 0.05474487658851526
_RK2_A42 = -0.020512321833543602


def _build_euler(implicit_direction: bool) -> ButcherTableau:
    A = [[0.0, 0.0], [1.0, 0.0]]
    Ahat = [[0.0, 0.0], [0.0, 1.0]] if implicit_direction else [[0.0, 0.0], [1.0, 0.0]]
    return ButcherTableau(
        s=2,
        A=A,
        Ahat=Ahat,
        d=[0.0, 1.0],
        delta=[0.0, 1.0],
        name="euler-ie" if implicit_direction else "euler-ee",
    )


def _build_rk2_invmeas() -> ButcherTableau:
    a22 = 1.0 - _RK2_A21
    a33 = 1.0 - _RK2_A31 - _RK2_A32
    a43 = 1.0 - _RK2_A41 - _RK2_A42
    A = [
        [0.0, 0.0, 0.0, 0.0],
        [_RK2_C2, 0.0, 0.0, 0.0],
        [0.0, _RK2_C3, 0.0, 0.0],
        [_RK2_A41, _RK2_A42, a43, 0.0],
    ]
    Ahat = [
        [1.0, 0.0, 0.0, 0.0],
        [_RK2_A21, a22, 0.0, 0.0],
        [_RK2_A31, _RK2_A32, a33, 0.0],
        [_RK2_A41, _RK2_A42, a43, 0.0],
    ]
    d = [_RK2_D1, _RK2_D2, _RK2_D3, 1.0]
    return ButcherTableau(s=4, A=A, Ahat=Ahat, d=d, delta=[1.0, 1.0, 1.0, 1.0], name="rk2-invmeas")


def _build_sphere_rk2() -> ButcherTableau:
    # Two fully coupled stages; invariant-measure order two on the unit sphere.
    return ButcherTableau(
        s=2,
        A=[[0.0, 1.5 - _SQ2], [1.0, 0.0]],
        Ahat=[[2.0, -1.0], [1.0, 0.0]],
        d=[1.0 - _SQ2 / 2.0, 1.0],
        delta=[1.0, 1.0],
        name="sphere-rk2",
    )


def _build_bm_sphere_weak2() -> ButcherTableau:
    # Weak order two for pure Brownian motion on the unit sphere (no drift).
    # Stage 1 carries the start point, stage 2 the free Gaussian increment and
    # the output stage projects along (2 g(Y1) + g(Y2) + g(Y3))/4.
    return ButcherTableau(
        s=3,
        A=np.zeros((3, 3)),
        Ahat=[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.25, 0.25]],
        d=[0.0, 1.0, 1.0],
        delta=[0.0, 0.0, 1.0],
        name="bm-sphere-weak2",
    )


def _build_dae_trap() -> ButcherTableau:
    # Implicit trapezoidal rule for the index-2 constrained ODE (sigma = 0);
    # the noise column is inert in that regime and chosen so the tableau still
    # passes the generic consistency conditions.
    return ButcherTableau(
        s=2,
        A=[[0.0, 0.0], [0.5, 0.5]],
        Ahat=[[0.0, 0.0], [0.5, 0.5]],
        d=[0.0, 1.0],
        delta=[0.0, 1.0],
        name="dae-trap",
    )


_BUILDERS = {
    "euler-ee": lambda: _build_euler(False),
    "euler-ie": lambda: _build_euler(True),
    "rk2-invmeas": _build_rk2_invmeas,
    "sphere-rk2": _build_sphere_rk2,
    "bm-sphere-weak2": _build_bm_sphere_weak2,
    "dae-trap": _build_dae_trap,
}

BUILTIN_NAMES = tuple(sorted(_BUILDERS))


def builtin(name: str) -> ButcherTableau:
    """Return a built-in scheme by name. See ``BUILTIN_NAMES``."""
    try:
        build = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown builtin scheme {name!r}; choose from {BUILTIN_NAMES}") from None
    return build()


def tableau_to_json(t: ButcherTableau) -> str:
    return json.dumps(t.to_dict(), indent=2)


def tableau_from_json(text: str | dict) -> ButcherTableau:
    """Build a tableau from its JSON form ``{"s", "A", "Ahat", "d", "delta"}``."""
    data = json.loads(text) if isinstance(text, str) else dict(text)
    try:
        s = int(data["s"])
        A = data["A"]
        Ahat = data["Ahat"]
        d = data["d"]
        delta = data["delta"]
    except KeyError as exc:
        raise TableauStructureError(f"tableau JSON is missing key {exc}") from None
    return ButcherTableau(
        s=s, A=A, Ahat=Ahat, d=d, delta=delta, name=str(data.get("name", ""))
    )
