"""Algebraic certification of projected stochastic Runge-Kutta tableaux.

Every check evaluates a list of scalar residuals |lhs - rhs| of polynomial
identities in the tableau coefficients. Condition strings use a compact ASCII
notation:

* ``b'v``, ``bhat'v`` -- dot products of the update weight rows with a stage
  vector,
* ``u*v``             -- componentwise (diamond) product of stage vectors,
* ``v^k``             -- componentwise power,
* ``A v``, ``Ahat v`` -- matrix action on a stage vector,
* ``1``               -- the all-ones stage vector.

Chained equalities ``e1 = e2 = ... = rhs`` are expanded by comparing every
member against the common right-hand side, so a chain of k members yields k
residuals. The shared scalar ``bhat'd`` is evaluated once per report.

Condition sets:

* consistency (3 residuals),
* invariant-measure order two, general manifolds (12 groups, 23 residuals),
* the same reduced under ``delta = 1`` (6 groups),
* weak order two (12 groups, 25 residuals),
* reductions on the unit sphere for both senses,
* reductions for drift-free (pure Brownian) schemes on the sphere, where
  consistency alone already gives invariant-measure order two, so that mode
  has an empty residual list.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidTableauError, PreconditionError
from .tableau import ButcherTableau, validate

__all__ = [
    "Residual",
    "ResidualGroup",
    "ConditionReport",
    "DEFAULT_TOL",
    "consistency_residuals",
    "invmeas2_residuals",
    "invmeas2_residuals_delta_one",
    "weak2_residuals",
    "sphere_residuals",
    "bm_sphere_residuals",
    "classify",
    "max_residual",
]

DEFAULT_TOL = 1e-10

VERDICT_KEYS = (
    "consistent",
    "weak2",
    "invmeas2",
    "sphere_invmeas2",
    "sphere_weak2",
    "bm_sphere_weak2",
)


@dataclass(frozen=True)
class Residual:
    """One scalar condition, stored as both sides plus their gap."""

    condition: str
    lhs: float
    rhs: float

    @property
    def abs_residual(self) -> float:
        return abs(self.lhs - self.rhs)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "abs_residual": self.abs_residual,
        }


@dataclass(frozen=True)
class ResidualGroup:
    """One displayed condition line, expanded into scalar residuals."""

    group_id: str
    description: str
    residuals: tuple[Residual, ...]

    @property
    def max_residual(self) -> float:
        return max((r.abs_residual for r in self.residuals), default=0.0)

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "description": self.description,
            "max_residual": self.max_residual,
            "residuals": [r.to_dict() for r in self.residuals],
        }


def max_residual(groups: Iterable[ResidualGroup]) -> float:
    return max((g.max_residual for g in groups), default=0.0)


class _Algebra:
    """Precomputed tableau vectors shared by all condition evaluations."""

    def __init__(self, t: ButcherTableau):
        self.t = t
        self.one = np.ones(t.s)
        self.A = t.A
        self.Ah = t.Ahat
        self.b = t.b
        self.bh = t.bhat
        self.c = t.c
        self.d = t.d
        self.delta = t.delta
        self.bd = float(self.bh @ self.d)  # bhat'd, evaluated once

    def chain(self, group_id: str, description: str, members, rhs_label: str, rhs: float) -> ResidualGroup:
        res = tuple(
            Residual(f"{label} = {rhs_label}", float(value), float(rhs))
            for label, value in members
        )
        return ResidualGroup(group_id, description, res)


def _dia(*vs: np.ndarray) -> np.ndarray:
    out = vs[0].copy()
    for v in vs[1:]:
        out = out * v
    return out


def consistency_residuals(t: ButcherTableau) -> list[ResidualGroup]:
    """The three consistency conditions every usable scheme must satisfy."""
    al = _Algebra(t)
    g = al.chain(
        "consistency",
        "consistency: unit drift weights, unit output noise, balanced projection weights",
        [
            ("b'1", al.b @ al.one),
            ("d_s", al.d[-1]),
        ],
        "1",
        1.0,
    )
    extra = Residual(
        "bhat'd = bhat'(delta*d)", float(al.bd), float(al.bh @ _dia(al.delta, al.d))
    )
    return [ResidualGroup(g.group_id, g.description, g.residuals + (extra,))]


def _invmeas2_groups(al: _Algebra) -> list[ResidualGroup]:
    one, A, Ah, b, bh, c, d, delta = (
        al.one,
        al.A,
        al.Ah,
        al.b,
        al.bh,
        al.c,
        al.d,
        al.delta,
    )
    bd = al.bd
    q = bd * bd - 2.0 * bd + 0.5
    rhs_chain = 2.0 * bd - 0.5
    w = float(bh @ _dia(d, Ah @ d))
    d2 = _dia(d, d)
    d3 = _dia(d, d, d)
    groups = []
    groups.append(
        ResidualGroup(
            "invmeas2/1",
            "noise weights agree between update rows",
            (Residual("bhat'd = b'd", bd, float(b @ d)),),
        )
    )
    groups.append(
        al.chain(
            "invmeas2/2",
            "drift-row quadratic moments",
            [
                ("b'c", b @ c),
                ("b'(delta*c)", b @ _dia(delta, c)),
                ("b'd^2", b @ d2),
                ("b'(delta*d^2)", b @ _dia(delta, d2)),
            ],
            "2 bhat'd - 1/2",
            rhs_chain,
        )
    )
    groups.append(
        al.chain(
            "invmeas2/3",
            "projection-row quadratic and cubic moments",
            [
                ("bhat'c", bh @ c),
                ("bhat'(delta*c)", bh @ _dia(delta, c)),
                ("bhat'd^2", bh @ d2),
                ("bhat'(delta*d^2)", bh @ _dia(delta, d2)),
                ("bhat'd^3", bh @ d3),
                ("bhat'(delta*d^3)", bh @ _dia(delta, d3)),
            ],
            "2 bhat'd - 1/2",
            rhs_chain,
        )
    )
    groups.append(
        ResidualGroup(
            "invmeas2/4",
            "mixed abscissa-noise moment is constraint-flag blind",
            (
                Residual(
                    "bhat'(c*d) = bhat'(delta*c*d)",
                    float(bh @ _dia(c, d)),
                    float(bh @ _dia(delta, c, d)),
                ),
            ),
        )
    )
    groups.append(
        ResidualGroup(
            "invmeas2/5",
            "unconstrained stages decouple from the drift row",
            (
                Residual(
                    "b'(d*Ahat((1-delta)*d)) = 0",
                    float(b @ _dia(d, Ah @ _dia(one - delta, d))),
                    0.0,
                ),
            ),
        )
    )
    v6 = A @ _dia(delta - one, d)
    groups.append(
        al.chain(
            "invmeas2/6",
            "drift couplings to unconstrained noise",
            [
                ("bhat'A((delta-1)*d)", bh @ v6),
                ("bhat'(delta*A((delta-1)*d))", bh @ _dia(delta, v6)),
            ],
            "(bhat'd)^2 - 2 bhat'd + 1/2",
            q,
        )
    )
    groups.append(
        al.chain(
            "invmeas2/7",
            "projection couplings to abscissae and squared noise",
            [
                ("bhat'(d*Ahat c)", bh @ _dia(d, Ah @ c)),
                ("bhat'(d*Ahat d^2)", bh @ _dia(d, Ah @ d2)),
                ("bhat'(d*Ahat(delta*d^2))", bh @ _dia(d, Ah @ _dia(delta, d2))),
            ],
            "2 bhat'(d*Ahat d) + (bhat'd)^2 - 2 bhat'd + 1/2",
            2.0 * w + q,
        )
    )
    groups.append(
        ResidualGroup(
            "invmeas2/8",
            "squared-noise projection coupling",
            (
                Residual(
                    "bhat'(d^2*Ahat d) = bhat'(d*Ahat d) + (bhat'd)^2/2",
                    float(bh @ _dia(d2, Ah @ d)),
                    w + 0.5 * bd * bd,
                ),
            ),
        )
    )
    lhs9 = (
        float(bh @ _dia(c, Ah @ _dia(delta - one, d)))
        + float(bh @ _dia(d, Ah @ _dia(delta - 3.0 * one, d)))
        + float(bh @ _dia(d, Ah @ _dia(delta, c)))
    )
    groups.append(
        ResidualGroup(
            "invmeas2/9",
            "three-term projection coupling (single scalar equality)",
            (
                Residual(
                    "bhat'(c*Ahat((delta-1)*d)) + bhat'(d*Ahat((delta-3)*d)) "
                    "+ bhat'(d*Ahat(delta*c)) = 2(bhat'd)^2 - 4 bhat'd + 1",
                    lhs9,
                    2.0 * bd * bd - 4.0 * bd + 1.0,
                ),
            ),
        )
    )
    groups.append(
        ResidualGroup(
            "invmeas2/10",
            "constrained-noise projection couplings",
            (
                Residual(
                    "bhat'(d^2*Ahat(delta*d)) + bhat'(d*Ahat(delta*d)) "
                    "= 2 bhat'(d*Ahat d) + 3(bhat'd)^2/2 - 2 bhat'd + 1/2",
                    float(bh @ _dia(d2, Ah @ _dia(delta, d)))
                    + float(bh @ _dia(d, Ah @ _dia(delta, d))),
                    2.0 * w + 1.5 * bd * bd - 2.0 * bd + 0.5,
                ),
            ),
        )
    )
    v11 = Ah @ _dia(one - delta, d)
    groups.append(
        ResidualGroup(
            "invmeas2/11",
            "squared unconstrained coupling vanishes",
            (
                Residual(
                    "bhat'(d*(Ahat((1-delta)*d))^2) = 0",
                    float(bh @ _dia(d, v11, v11)),
                    0.0,
                ),
            ),
        )
    )
    Ad = Ah @ d
    groups.append(
        ResidualGroup(
            "invmeas2/12",
            "cubic projection couplings",
            (
                Residual(
                    "bhat'(d*(Ahat d)^2) + 3 bhat'(d*Ahat(d*Ahat((1-delta)*d))) "
                    "= (4 - 2 bhat'd) bhat'(d*Ahat d) + 3(bhat'd)^2 - 4 bhat'd + 1",
                    float(bh @ _dia(d, Ad, Ad))
                    + 3.0 * float(bh @ _dia(d, Ah @ _dia(d, Ah @ _dia(one - delta, d)))),
                    (4.0 - 2.0 * bd) * w + 3.0 * bd * bd - 4.0 * bd + 1.0,
                ),
            ),
        )
    )
    return groups


def invmeas2_residuals(t: ButcherTableau) -> list[ResidualGroup]:
    """Invariant-measure order-2 conditions on general codimension-1 manifolds.

    Consistency is part of the certified set: the first group repeats the
    consistency residuals so a passing report implies a consistent scheme.
    """
    al = _Algebra(t)
    return consistency_residuals(t) + _invmeas2_groups(al)


def invmeas2_residuals_delta_one(t: ButcherTableau) -> list[ResidualGroup]:
    """Reduced invariant-measure conditions for fully constrained schemes.

    Requires ``delta = 1`` exactly (every stage constrained); other tableaux
    must use :func:`invmeas2_residuals`.
    """
    if not np.all(t.delta == 1.0):
        raise PreconditionError("reduced condition set requires delta = 1 for every stage")
    al = _Algebra(t)
    Ah, b, bh, c, d = al.Ah, al.b, al.bh, al.c, al.d
    bd = al.bd
    w = float(bh @ _dia(d, Ah @ d))
    d2 = _dia(d, d)
    rhs_chain = 2.0 * bd - 0.5
    groups = [
        ResidualGroup(
            "invmeas2-delta1/1",
            "the noise weight solves its quadratic",
            (Residual("(bhat'd)^2 - 2 bhat'd + 1/2 = 0", bd * bd - 2.0 * bd + 0.5, 0.0),),
        ),
        ResidualGroup(
            "invmeas2-delta1/2",
            "noise weights agree between update rows",
            (Residual("bhat'd = b'd", bd, float(b @ d)),),
        ),
        al.chain(
            "invmeas2-delta1/3",
            "quadratic and cubic moments",
            [
                ("b'c", b @ c),
                ("b'd^2", b @ d2),
                ("bhat'c", bh @ c),
                ("bhat'd^2", bh @ d2),
                ("bhat'd^3", bh @ _dia(d, d, d)),
            ],
            "2 bhat'd - 1/2",
            rhs_chain,
        ),
        al.chain(
            "invmeas2-delta1/4",
            "projection couplings",
            [
                ("bhat'(d*Ahat c)", bh @ _dia(d, Ah @ c)),
                ("bhat'(d*Ahat d^2)", bh @ _dia(d, Ah @ d2)),
            ],
            "2 bhat'(d*Ahat d)",
            2.0 * w,
        ),
        ResidualGroup(
            "invmeas2-delta1/5",
            "squared-noise projection coupling",
            (
                Residual(
                    "bhat'(d^2*Ahat d) = bhat'(d*Ahat d) + bhat'd - 1/4",
                    float(bh @ _dia(d2, Ah @ d)),
                    w + bd - 0.25,
                ),
            ),
        ),
        ResidualGroup(
            "invmeas2-delta1/6",
            "cubic projection coupling",
            (
                Residual(
                    "bhat'(d*(Ahat d)^2) = (4 - 2 bhat'd) bhat'(d*Ahat d) + 2 bhat'd - 1/2",
                    float(bh @ _dia(d, Ah @ d, Ah @ d)),
                    (4.0 - 2.0 * bd) * w + 2.0 * bd - 0.5,
                ),
            ),
        ),
    ]
    return groups


def weak2_residuals(t: ButcherTableau) -> list[ResidualGroup]:
    """Weak order-2 conditions (finite-time law accuracy), with consistency."""
    al = _Algebra(t)
    one, A, Ah, b, bh, c, d, delta = (
        al.one,
        al.A,
        al.Ah,
        al.b,
        al.bh,
        al.c,
        al.d,
        al.delta,
    )
    bd = al.bd
    d2 = _dia(d, d)
    d3 = _dia(d, d, d)
    groups = consistency_residuals(t)
    groups.append(
        al.chain(
            "weak2/1",
            "drift-row moments",
            [
                ("b'd", b @ d),
                ("b'c", b @ c),
                ("b'(delta*c)", b @ _dia(delta, c)),
                ("b'd^2", b @ d2),
                ("b'(delta*d^2)", b @ _dia(delta, d2)),
            ],
            "1/2",
            0.5,
        )
    )
    groups.append(
        al.chain(
            "weak2/2",
            "projection-row moments",
            [
                ("bhat'd", bd),
                ("bhat'c", bh @ c),
                ("bhat'(delta*c)", bh @ _dia(delta, c)),
                ("bhat'd^2", bh @ d2),
                ("bhat'(delta*d^2)", bh @ _dia(delta, d2)),
                ("bhat'd^3", bh @ d3),
                ("bhat'(delta*d^3)", bh @ _dia(delta, d3)),
            ],
            "1/2",
            0.5,
        )
    )
    groups.append(
        ResidualGroup(
            "weak2/3",
            "mixed abscissa-noise moment is constraint-flag blind",
            (
                Residual(
                    "bhat'(c*d) = bhat'(delta*c*d)",
                    float(bh @ _dia(c, d)),
                    float(bh @ _dia(delta, c, d)),
                ),
            ),
        )
    )
    groups.append(
        ResidualGroup(
            "weak2/4",
            "leading projection coupling",
            (Residual("bhat'(d*Ahat d) = 1/8", float(bh @ _dia(d, Ah @ d)), 0.125),),
        )
    )
    groups.append(
        ResidualGroup(
            "weak2/5",
            "unconstrained stages decouple from the drift row",
            (
                Residual(
                    "b'(d*Ahat((1-delta)*d)) = 0",
                    float(b @ _dia(d, Ah @ _dia(one - delta, d))),
                    0.0,
                ),
            ),
        )
    )
    v6 = A @ _dia(one - delta, d)
    groups.append(
        al.chain(
            "weak2/6",
            "drift couplings to unconstrained noise",
            [
                ("bhat'A((1-delta)*d)", bh @ v6),
                ("bhat'(delta*A((1-delta)*d))", bh @ _dia(delta, v6)),
            ],
            "1/4",
            0.25,
        )
    )
    groups.append(
        al.chain(
            "weak2/7",
            "projection couplings to abscissae and squared noise vanish",
            [
                ("bhat'(d*Ahat c)", bh @ _dia(d, Ah @ c)),
                ("bhat'(d*Ahat d^2)", bh @ _dia(d, Ah @ d2)),
                ("bhat'(d*Ahat(delta*d^2))", bh @ _dia(d, Ah @ _dia(delta, d2))),
            ],
            "0",
            0.0,
        )
    )
    groups.append(
        ResidualGroup(
            "weak2/8",
            "squared-noise projection coupling",
            (Residual("bhat'(d^2*Ahat d) = 1/4", float(bh @ _dia(d2, Ah @ d)), 0.25),),
        )
    )
    lhs9 = (
        float(bh @ _dia(c, Ah @ _dia(one - delta, d)))
        - float(bh @ _dia(d, Ah @ _dia(delta, d)))
        - float(bh @ _dia(d, Ah @ _dia(delta, c)))
    )
    groups.append(
        ResidualGroup(
            "weak2/9",
            "signed three-term projection coupling",
            (
                Residual(
                    "bhat'(c*Ahat((1-delta)*d)) - bhat'(d*Ahat(delta*d)) "
                    "- bhat'(d*Ahat(delta*c)) = 1/8",
                    lhs9,
                    0.125,
                ),
            ),
        )
    )
    groups.append(
        ResidualGroup(
            "weak2/10",
            "constrained-noise projection couplings",
            (
                Residual(
                    "bhat'(d^2*Ahat(delta*d)) + bhat'(d*Ahat(delta*d)) = 1/8",
                    float(bh @ _dia(d2, Ah @ _dia(delta, d)))
                    + float(bh @ _dia(d, Ah @ _dia(delta, d))),
                    0.125,
                ),
            ),
        )
    )
    v11 = Ah @ _dia(one - delta, d)
    groups.append(
        ResidualGroup(
            "weak2/11",
            "squared unconstrained coupling vanishes",
            (Residual("bhat'(d*(Ahat((1-delta)*d))^2) = 0", float(bh @ _dia(d, v11, v11)), 0.0),),
        )
    )
    Ad = Ah @ d
    groups.append(
        ResidualGroup(
            "weak2/12",
            "cubic projection couplings",
            (
                Residual(
                    "bhat'(d*(Ahat d)^2) + 3 bhat'(d*Ahat(d*Ahat((1-delta)*d))) = 1/8",
                    float(bh @ _dia(d, Ad, Ad))
                    + 3.0 * float(bh @ _dia(d, Ah @ _dia(d, Ah @ _dia(one - delta, d)))),
                    0.125,
                ),
            ),
        )
    )
    return groups


def sphere_consistency_residuals(t: ButcherTableau) -> list[ResidualGroup]:
    """Consistency as it reduces on the unit sphere: b'1 = d_s = 1."""
    al = _Algebra(t)
    return [
        al.chain(
            "sphere-consistency",
            "consistency on the unit sphere",
            [("b'1", al.b @ al.one), ("d_s", al.d[-1])],
            "1",
            1.0,
        )
    ]


def sphere_residuals(t: ButcherTableau, mode: str = "invmeas2") -> list[ResidualGroup]:
    """Reduced condition lists on the unit sphere (constraint (|x|^2 - 1)/2).

    ``mode`` selects the sense: ``"invmeas2"`` (4 groups) or ``"weak2"``
    (4 groups, 10 scalar conditions).
    """
    al = _Algebra(t)
    one, A, Ah, b, bh, c, d, delta = (
        al.one,
        al.A,
        al.Ah,
        al.b,
        al.bh,
        al.c,
        al.d,
        al.delta,
    )
    bd = al.bd
    d2 = _dia(d, d)
    if mode == "invmeas2":
        q = bd * bd - 2.0 * bd + 0.5
        w = float(bh @ _dia(d, Ah @ d))
        return [
            ResidualGroup(
                "sphere-invmeas2/1",
                "noise weights agree between update rows",
                (Residual("bhat'd = b'd", bd, float(b @ d)),),
            ),
            al.chain(
                "sphere-invmeas2/2",
                "quadratic moments",
                [
                    ("b'c", b @ c),
                    ("b'(delta*c)", b @ _dia(delta, c)),
                    ("b'd^2", b @ d2),
                    ("b'(delta*d^2)", b @ _dia(delta, d2)),
                    ("bhat'c", bh @ c),
                ],
                "2 bhat'd - 1/2",
                2.0 * bd - 0.5,
            ),
            ResidualGroup(
                "sphere-invmeas2/3",
                "projection coupling to abscissae",
                (
                    Residual(
                        "bhat'(d*Ahat c) = 2 bhat'(d*Ahat d) + (bhat'd)^2 - 2 bhat'd + 1/2",
                        float(bh @ _dia(d, Ah @ c)),
                        2.0 * w + q,
                    ),
                ),
            ),
            ResidualGroup(
                "sphere-invmeas2/4",
                "drift coupling to unconstrained noise",
                (
                    Residual(
                        "bhat'A((delta-1)*d) = (bhat'd)^2 - 2 bhat'd + 1/2",
                        float(bh @ (A @ _dia(delta - one, d))),
                        q,
                    ),
                ),
            ),
        ]
    if mode == "weak2":
        return [
            al.chain(
                "sphere-weak2/1",
                "first and second moments",
                [
                    ("b'd", b @ d),
                    ("b'c", b @ c),
                    ("b'(delta*c)", b @ _dia(delta, c)),
                    ("b'd^2", b @ d2),
                    ("b'(delta*d^2)", b @ _dia(delta, d2)),
                    ("bhat'd", bd),
                    ("bhat'c", bh @ c),
                ],
                "1/2",
                0.5,
            ),
            ResidualGroup(
                "sphere-weak2/2",
                "leading projection coupling",
                (Residual("bhat'(d*Ahat d) = 1/8", float(bh @ _dia(d, Ah @ d)), 0.125),),
            ),
            ResidualGroup(
                "sphere-weak2/3",
                "drift coupling to unconstrained noise",
                (
                    Residual(
                        "bhat'A((1-delta)*d) = 1/4",
                        float(bh @ (A @ _dia(one - delta, d))),
                        0.25,
                    ),
                ),
            ),
            ResidualGroup(
                "sphere-weak2/4",
                "projection coupling to abscissae vanishes",
                (Residual("bhat'(d*Ahat c) = 0", float(bh @ _dia(d, Ah @ c)), 0.0),),
            ),
        ]
    raise PreconditionError(f"unknown sphere condition mode {mode!r}")


def bm_sphere_residuals(t: ButcherTableau, mode: str = "weak2") -> list[ResidualGroup]:
    """Conditions for drift-free schemes (pure Brownian motion) on the sphere.

    Requires a tableau with all drift coefficients zero. For ``mode="weak2"``
    the surviving conditions are ``bhat'd = 1/2`` and ``bhat'(d*Ahat d) = 1/8``.
    For ``mode="invmeas2"`` consistency alone suffices on the sphere, so the
    residual list is empty.
    """
    if not t.drift_free:
        raise PreconditionError("drift-free condition set requires a tableau with A = 0")
    al = _Algebra(t)
    if mode == "invmeas2":
        return []
    if mode == "weak2":
        return [
            ResidualGroup(
                "bm-sphere-weak2/1",
                "output noise second moment",
                (Residual("bhat'd = 1/2", al.bd, 0.5),),
            ),
            ResidualGroup(
                "bm-sphere-weak2/2",
                "leading projection coupling",
                (
                    Residual(
                        "bhat'(d*Ahat d) = 1/8",
                        float(al.bh @ _dia(al.d, al.Ah @ al.d)),
                        0.125,
                    ),
                ),
            ),
        ]
    raise PreconditionError(f"unknown drift-free condition mode {mode!r}")


@dataclass(frozen=True)
class ConditionReport:
    """Everything :func:`classify` knows about one tableau."""

    tableau_name: str
    tol: float
    bhat_dot_d: float
    groups: tuple[ResidualGroup, ...]
    verdicts: dict

    def group(self, group_id: str) -> ResidualGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(group_id)

    def to_dict(self) -> dict:
        return {
            "tableau": self.tableau_name,
            "tol": self.tol,
            "bhat_dot_d": self.bhat_dot_d,
            "verdicts": dict(self.verdicts),
            "groups": [g.to_dict() for g in self.groups],
        }


def classify(t: ButcherTableau, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Evaluate every applicable condition set and aggregate verdicts.

    Structural violations (see :func:`manrk.tableau.validate`) are raised, not
    reported: a tableau outside the method class has no meaningful residuals.
    The delta=1 reduced set is included only for fully constrained tableaux,
    and the drift-free sets only when A = 0.
    """
    report = validate(t)
    if not report.ok:
        raise InvalidTableauError("; ".join(report.violations))
    cons = consistency_residuals(t)
    im = invmeas2_residuals(t)[1:]  # consistency group already held separately
    weak = weak2_residuals(t)[1:]
    sph_cons = sphere_consistency_residuals(t)
    sph_im = sphere_residuals(t, "invmeas2")
    sph_weak = sphere_residuals(t, "weak2")
    groups = cons + im + weak + sph_cons + sph_im + sph_weak
    if bool(np.all(t.delta == 1.0)):
        groups += invmeas2_residuals_delta_one(t)
    drift_free = t.drift_free
    if drift_free:
        groups += bm_sphere_residuals(t, "weak2")

    def _ok(gs: Sequence[ResidualGroup]) -> bool:
        return max_residual(gs) <= tol

    consistent = _ok(cons)
    verdicts = {
        "consistent": consistent,
        "weak2": consistent and _ok(weak),
        "invmeas2": consistent and _ok(im),
        "sphere_invmeas2": _ok(sph_cons) and _ok(sph_im),
        "sphere_weak2": _ok(sph_cons) and _ok(sph_weak),
        "bm_sphere_weak2": bool(
            drift_free
            and abs(t.d[-1] - 1.0) <= tol
            and _ok(bm_sphere_residuals(t, "weak2"))
        ),
    }
    al = _Algebra(t)
    return ConditionReport(
        tableau_name=t.name or "<unnamed>",
        tol=tol,
        bhat_dot_d=al.bd,
        groups=tuple(groups),
        verdicts=verdicts,
    )
