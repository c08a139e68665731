"""One-step projected stochastic Runge-Kutta integrator.

A step advances a batch of points on a codimension-1 manifold by solving, for
each stage ``i``::

    Y_i = x + h * sum_j A[i,j] f(Y_j) + sigma*sqrt(h) d_i xi
            + lam_i * sum_j Ahat[i,j] grad_zeta(Y_j)

with ``zeta(Y_i) = 0`` enforced exactly when ``delta_i = 1`` (then ``lam_i``
is the stage multiplier; unconstrained stages have ``lam_i = 0``). The step
output is the last stage point.

Batching contract: all operations are row-wise, and rows that have converged
or failed are frozen (never updated again), so each trajectory's arithmetic
is bitwise identical whether it runs alone or inside any batch.

Stage resolution:

* if the drift matrix is strictly lower triangular and the projection matrix
  is lower triangular, stages are solved one at a time (only the diagonal
  projection entry is implicit, handled by Newton iteration);
* otherwise stages are relaxed by Gauss-Seidel sweeps, each sweep re-solving
  every stage with the other stages (and its own drift evaluation) frozen.

Newton solves use the exact bordered Jacobian when the manifold exposes a
Hessian and the stage is self-implicit, and otherwise a closed-form update
that is exact whenever the projection direction does not depend on the
unknown stage point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    NewtonFailureError,
    PreconditionError,
    SweepConvergenceError,
)
from .manifold import Manifold
from .tableau import ButcherTableau

__all__ = [
    "NOISE_KINDS",
    "ROOT3",
    "NoiseSpec",
    "sample_noise",
    "draw_noise_block",
    "NewtonControls",
    "StepOutcome",
    "solve_stage",
    "step",
]

NOISE_KINDS = ("discrete3", "gaussian")

ROOT3 = float(np.sqrt(3.0))

# Loose on-manifold guard for step inputs; trajectories hold the constraint
# to Newton tolerance, so this only catches gross misuse.
_PRECONDITION_SCALE = float(np.sqrt(np.finfo(float).eps))


@dataclass(frozen=True)
class NoiseSpec:
    """Distribution of the per-step noise vector: i.i.d. components of the
    given kind, one vector of length ``dim`` per step."""

    kind: str = "discrete3"
    dim: int = 3

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.dim < 1:
            raise ConfigError("noise dim must be at least 1")


def draw_noise_block(rng: np.random.Generator, kind: str, n_steps: int, dim: int) -> np.ndarray:
    """Draw the full noise block for one trajectory, shape (n_steps, dim).

    ``discrete3`` is the three-point law P(0) = 2/3, P(+-sqrt(3)) = 1/6, whose
    first five moments (0, 1, 0, 3, 0) match the standard Gaussian. Exactly
    one uniform draw on {0..5} is consumed per component, so the stream layout
    is identical for both kinds.
    """
    if kind == "discrete3":
        u = rng.integers(0, 6, size=(n_steps, dim))
        out = np.zeros((n_steps, dim))
        out[u == 0] = -ROOT3
        out[u == 1] = ROOT3
        return out
    if kind == "gaussian":
        return rng.standard_normal((n_steps, dim))
    raise ConfigError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


def sample_noise(spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw one noise vector of shape (spec.dim,)."""
    return draw_noise_block(rng, spec.kind, 1, spec.dim)[0]


@dataclass(frozen=True)
class NewtonControls:
    """Tolerances and iteration ceilings for the stage solves.

    ``tol_constraint`` bounds |zeta| at accepted stage points; the stage
    equation residual is bounded by the same tolerance relative to the step's
    start point. ``damping`` scales every Newton update (1 = full steps).
    """

    tol_constraint: float = 1e-12
    max_iter: int = 25
    coupled_sweeps: int = 50
    damping: float = 1.0

    def __post_init__(self):
        if not (0 < self.tol_constraint < 1):
            raise ConfigError("tol_constraint must lie in (0, 1)")
        if self.max_iter < 1 or self.coupled_sweeps < 1:
            raise ConfigError("iteration ceilings must be at least 1")
        if not (0 < self.damping <= 1):
            raise ConfigError("damping must lie in (0, 1]")


@dataclass
class StepOutcome:
    """Result of one integrator step over a batch.

    ``newton_iters`` counts Newton iterations per stage (shape (s,) for a
    single input, (s, B) for a batch). ``failed`` marks rows whose stage
    solves did not converge; their ``x_next`` entries are NaN under the
    report policy. ``failed_stage`` is the first offending stage (-1 where
    none; -2 marks Gauss-Seidel sweep exhaustion).
    """

    x_next: np.ndarray
    stage_points: np.ndarray
    multipliers: np.ndarray
    newton_iters: np.ndarray
    sweeps: int
    failed: np.ndarray
    failed_stage: np.ndarray

    @property
    def any_failed(self) -> bool:
        return bool(np.any(self.failed))

    @property
    def status(self) -> str:
        return "newton_failed" if self.any_failed else "ok"


def _minv_apply(c, H, v1, v2):
    """Apply (I - c*H)^{-1} to two stacked vectors. c is (B,), H is (B,d,d).

    Small dimensions use explicit adjugate inverses (fully vectorized, no
    per-matrix LAPACK calls); larger ones fall back to a batched solve.
    Returns (u1, u2, bad) where ``bad`` flags near-singular rows.
    """
    B, d = v1.shape
    M = -c[:, None, None] * H
    M[:, np.arange(d), np.arange(d)] += 1.0
    if d == 2:
        det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
        bad = np.abs(det) <= 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.empty_like(M)
            inv[:, 0, 0] = M[:, 1, 1]
            inv[:, 0, 1] = -M[:, 0, 1]
            inv[:, 1, 0] = -M[:, 1, 0]
            inv[:, 1, 1] = M[:, 0, 0]
            inv /= det[:, None, None]
        return np.einsum("bij,bj->bi", inv, v1), np.einsum("bij,bj->bi", inv, v2), bad
    if d == 3:
        a, b_, c_ = M[:, 0, 0], M[:, 0, 1], M[:, 0, 2]
        e, f, g_ = M[:, 1, 0], M[:, 1, 1], M[:, 1, 2]
        p, q, r_ = M[:, 2, 0], M[:, 2, 1], M[:, 2, 2]
        A00 = f * r_ - g_ * q
        A01 = c_ * q - b_ * r_
        A02 = b_ * g_ - c_ * f
        A10 = g_ * p - e * r_
        A11 = a * r_ - c_ * p
        A12 = c_ * e - a * g_
        A20 = e * q - f * p
        A21 = b_ * p - a * q
        A22 = a * f - b_ * e
        det = a * A00 + b_ * A01 + c_ * A02
        bad = np.abs(det) <= 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det

            def apply(v):
                u = np.empty_like(v)
                u[:, 0] = (A00 * v[:, 0] + A01 * v[:, 1] + A02 * v[:, 2]) * inv_det
                u[:, 1] = (A10 * v[:, 0] + A11 * v[:, 1] + A12 * v[:, 2]) * inv_det
                u[:, 2] = (A20 * v[:, 0] + A21 * v[:, 1] + A22 * v[:, 2]) * inv_det
                return u

            return apply(v1), apply(v2), bad
    rhs = np.stack([v1, v2], axis=2)
    try:
        sol = np.linalg.solve(M, rhs)
        bad = np.zeros(B, dtype=bool)
    except np.linalg.LinAlgError:
        sol = np.empty_like(rhs)
        bad = np.zeros(B, dtype=bool)
        for k in range(B):
            try:
                sol[k] = np.linalg.solve(M[k], rhs[k])
            except np.linalg.LinAlgError:
                sol[k] = 0.0
                bad[k] = True
    return sol[:, :, 0], sol[:, :, 1], bad


def _solve_stage_masked(manifold, base, Dfix, ahat_ii, Y, lam, active, ref_norm, controls, x_start=None):
    """Newton-solve Y = base + lam*(Dfix + ahat_ii*g(Y)), zeta(Y) = 0.

    Operates on the full batch but updates only ``active`` rows; frozen rows
    pass through bitwise unchanged, and the working set is compacted as rows
    converge (all arithmetic is row-wise, so results do not depend on batch
    composition). Returns (Y, lam, ok, iters) with ``ok`` true on active rows
    that converged. When the manifold carries a hop bound and ``x_start`` is
    given, converged solutions farther than the bound from ``x_start`` are
    rejected as spurious far roots.

    The bordered Newton system [[I - lam*ahat*H, -D], [g', 0]] is reduced by
    block elimination: u = M^{-1} r1, w = M^{-1} D, then
    dlam = (g'u - r2)/(g'w) and dY = -u + dlam*w. Without a Hessian the
    direction matrix is frozen (M = I), which is exact when ahat_ii = 0.
    """
    Yout = Y.copy()
    lamout = lam.copy()
    B = Y.shape[0]
    tol_c = controls.tol_constraint
    ok = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=np.int64)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return Yout, lamout, ok, iters
    Yw = Yout[idx].copy()
    lw = lamout[idx].copy()
    bw = base[idx]
    Dfw = Dfix[idx]
    tol_r = tol_c * (1.0 + ref_norm[idx])
    xs = x_start[idx] if x_start is not None else None
    hop_bound = manifold.hop_bound
    use_full = bool(ahat_ii != 0.0) and manifold.has_hessian

    # Rows leave the working set (converged, far root, or singular) by being
    # written back and flagged in ``gone``; the arrays are only physically
    # compacted once at least half the rows have left, since the gathers cost
    # more than letting a few finished rows idle. All arithmetic is row-wise,
    # so garbage produced on finished rows never touches live ones.
    gone = np.zeros(idx.size, dtype=bool)
    for it in range(controls.max_iter + 1):
        g = manifold.grad(Yw)
        D = Dfw + ahat_ii * g
        r1 = Yw - bw - lw[:, None] * D
        r2 = manifold.zeta(Yw)
        conv = (np.abs(r2) <= tol_c) & (np.max(np.abs(r1), axis=1) <= tol_r) & ~gone
        if hop_bound is not None and xs is not None and conv.any():
            cidx = np.flatnonzero(conv)
            diff = Yw[cidx] - xs[cidx]
            farc = np.einsum("bd,bd->b", diff, diff) >= hop_bound * hop_bound
            if farc.any():
                fidx = cidx[farc]
                conv[fidx] = False
                Yout[idx[fidx]] = Yw[fidx]
                lamout[idx[fidx]] = lw[fidx]
                gone[fidx] = True
        if conv.any():
            cidx = np.flatnonzero(conv)
            Yout[idx[cidx]] = Yw[cidx]
            lamout[idx[cidx]] = lw[cidx]
            ok[idx[cidx]] = True
            gone[cidx] = True
        if it == controls.max_iter or gone.all():
            break
        if gone.mean() >= 0.5:
            keep = ~gone
            idx, Yw, lw, bw, Dfw, tol_r = (
                idx[keep], Yw[keep], lw[keep], bw[keep], Dfw[keep], tol_r[keep])
            if xs is not None:
                xs = xs[keep]
            g, D, r1, r2 = g[keep], D[keep], r1[keep], r2[keep]
            gone = np.zeros(idx.size, dtype=bool)
        if use_full:
            H = manifold.hess_matrix(Yw)
            u, w, bad = _minv_apply(lw * ahat_ii, H, r1, D)
        else:
            u, w = r1, D
            bad = np.zeros(idx.shape, dtype=bool)
        gw = np.einsum("bd,bd->b", g, w)
        gu = np.einsum("bd,bd->b", g, u)
        gnorm2 = np.einsum("bd,bd->b", g, g)
        bad |= np.abs(gw) <= 1e-13 * (1.0 + gnorm2)
        bad &= ~gone
        if bad.any():
            bidx = np.flatnonzero(bad)
            Yout[idx[bidx]] = Yw[bidx]
            lamout[idx[bidx]] = lw[bidx]
            gone[bidx] = True
            if gone.all():
                break
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dlam = (gu - r2) / gw
            Yw += controls.damping * (-u + dlam[:, None] * w)
            lw += controls.damping * dlam
        iters[idx[~gone]] += 1
    live = idx[~gone] if idx.size else idx
    if live.size:
        # max_iter exhausted: write back the unconverged rows as-is
        Yout[live] = Yw[~gone]
        lamout[live] = lw[~gone]
    return Yout, lamout, ok, iters


def solve_stage(manifold, base, direction_fixed=None, ahat_ii=0.0, x0=None, controls=None):
    """Solve one constrained stage equation; convenience wrapper over the
    batched core. Returns (Y, lam, iters); raises on non-convergence.

    ``base`` is the explicit part of the stage, ``direction_fixed`` the part
    of the projection direction independent of the unknown point, ``ahat_ii``
    the self-coupling weight, ``x0`` the initial guess (default ``base``).
    """
    controls = controls or NewtonControls()
    base = np.asarray(base, dtype=float)
    single = base.ndim == 1
    base2 = base[None, :] if single else base
    B, dim = base2.shape
    if direction_fixed is None:
        Dfix = np.zeros_like(base2)
    else:
        Dfix = np.broadcast_to(np.asarray(direction_fixed, dtype=float), base2.shape).copy()
    Y0 = base2.copy() if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), base2.shape).copy()
    lam0 = np.zeros(B)
    ref = np.linalg.norm(Y0, axis=1)
    active = np.ones(B, dtype=bool)
    Y, lam, ok, iters = _solve_stage_masked(
        manifold, base2, Dfix, float(ahat_ii), Y0, lam0, active, ref, controls,
        x_start=None if x0 is None else Y0,
    )
    if not ok.all():
        raise NewtonFailureError(f"stage solve failed on {int((~ok).sum())} of {B} rows")
    if single:
        return Y[0], float(lam[0]), int(iters[0])
    return Y, lam, iters


def _check_step_inputs(x, manifold, sigma, h, xi):
    if x.ndim != 2 or x.shape[1] != manifold.ambient_dim:
        raise PreconditionError(
            f"points must have trailing dimension {manifold.ambient_dim}, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise PreconditionError("non-finite start point")
    if not (np.isfinite(h) and h > 0):
        raise PreconditionError("step size must be positive and finite")
    if not (np.isfinite(sigma) and sigma >= 0):
        raise PreconditionError("noise scale must be nonnegative and finite")
    if xi is not None:
        if xi.shape != x.shape:
            raise PreconditionError(f"noise shape {xi.shape} does not match points {x.shape}")
        if not np.all(np.isfinite(xi)):
            raise PreconditionError("non-finite noise")
    scale = 1.0 + np.einsum("bd,bd->b", x, x)
    z = manifold.zeta(x)
    if np.any(np.abs(z) > _PRECONDITION_SCALE * scale):
        worst = float(np.max(np.abs(z)))
        raise PreconditionError(f"start point is off the manifold (|zeta| up to {worst:.3e})")


def step(
    x,
    tableau: ButcherTableau,
    manifold: Manifold,
    potential=None,
    sigma: float = 1.0,
    h: float = 0.1,
    xi=None,
    controls: NewtonControls | None = None,
    policy: str = "raise",
) -> StepOutcome:
    """Advance one step from ``x`` using shared noise ``xi`` (one vector per
    row per step, scaled by each stage's ``d_i``).

    ``x`` may be a single point (dim,) or a batch (B, dim); ``xi`` must match
    and may be None for noise-free stepping. ``policy`` is ``"raise"`` (any
    unconverged row raises) or ``"report"`` (rows are marked failed and their
    outputs set to NaN).
    """
    if policy not in ("raise", "report"):
        raise ConfigError(f"unknown policy {policy!r}")
    controls = controls or NewtonControls()
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        if xi is not None:
            xi = np.asarray(xi, dtype=float)[None, :]
    elif xi is not None:
        xi = np.asarray(xi, dtype=float)
    _check_step_inputs(x, manifold, sigma, h, xi)
    B, dim = x.shape
    s = tableau.s
    A, Ah, dvec, delta = tableau.A, tableau.Ahat, tableau.d, tableau.delta
    if potential is not None:
        drift = potential.drift
    else:
        def drift(pts):
            return np.zeros_like(pts)
    noise = None
    if xi is not None and sigma > 0:
        noise = (sigma * np.sqrt(h)) * xi
    ref_norm = np.linalg.norm(x, axis=1)

    Y = np.empty((s, B, dim))
    lam = np.zeros((s, B))
    iters = np.zeros((s, B), dtype=np.int64)
    failed = np.zeros(B, dtype=bool)
    failed_stage = np.full(B, -1, dtype=np.int64)
    sweeps_used = 0

    def note_failures(ok, alive, stage_tag):
        bad = alive & ~ok
        if bad.any():
            failed[bad] = True
            failed_stage[bad] = stage_tag
            # keep failed rows on a valid manifold point so later full-batch
            # manifold evaluations stay finite; outputs are poisoned at exit
            for k in range(s):
                Y[k][bad] = x[bad]

    if tableau.sequential:
        f_cache: dict[int, np.ndarray] = {}
        g_cache: dict[int, np.ndarray] = {}

        def f_of(j):
            if j not in f_cache:
                f_cache[j] = drift(Y[j])
            return f_cache[j]

        def g_of(j):
            if j not in g_cache:
                g_cache[j] = manifold.grad(Y[j])
            return g_cache[j]

        for i in range(s):
            base = x.copy()
            if noise is not None and dvec[i] != 0.0:
                base += dvec[i] * noise
            for j in range(i):
                if A[i, j] != 0.0:
                    base += (h * A[i, j]) * f_of(j)
            alive = ~failed
            if delta[i] == 0.0:
                Y[i] = np.where(alive[:, None], base, x)
                continue
            Dfix = np.zeros((B, dim))
            for j in range(i):
                if Ah[i, j] != 0.0:
                    Dfix += Ah[i, j] * g_of(j)
            Yi, li, ok, it = _solve_stage_masked(
                manifold, base, Dfix, float(Ah[i, i]), x, lam[i], alive, ref_norm, controls, x_start=x
            )
            Y[i] = Yi
            lam[i] = li
            iters[i][alive] += it[alive]
            note_failures(ok, alive, i)
    else:
        for k in range(s):
            Y[k] = x
        need_f = [bool(np.any(A[:, j] != 0.0)) for j in range(s)]
        f_vals = [None] * s
        g_vals = [None] * s
        f0 = drift(x) if any(need_f) else None
        g0 = manifold.grad(x)
        for j in range(s):
            f_vals[j] = f0.copy() if need_f[j] else None
            g_vals[j] = g0.copy()
        sweep_active = np.ones(B, dtype=bool)
        tol_move = controls.tol_constraint * (1.0 + ref_norm)
        for sweep in range(controls.coupled_sweeps):
            sweeps_used = sweep + 1
            act = sweep_active & ~failed
            if not act.any():
                break
            moved = np.zeros(B)
            for i in range(s):
                base = x.copy()
                if noise is not None and dvec[i] != 0.0:
                    base += dvec[i] * noise
                for j in range(s):
                    if A[i, j] != 0.0:
                        base += (h * A[i, j]) * f_vals[j]
                act = sweep_active & ~failed
                if delta[i] == 0.0:
                    shift = np.max(np.abs(base - Y[i]), axis=1)
                    moved = np.maximum(moved, np.where(act, shift, 0.0))
                    Y[i][act] = base[act]
                else:
                    Dfix = np.zeros((B, dim))
                    for j in range(s):
                        if j != i and Ah[i, j] != 0.0:
                            Dfix += Ah[i, j] * g_vals[j]
                    Yi, li, ok, it = _solve_stage_masked(
                        manifold, base, Dfix, float(Ah[i, i]), Y[i], lam[i], act, ref_norm, controls, x_start=x
                    )
                    shift = np.max(np.abs(Yi - Y[i]), axis=1)
                    moved = np.maximum(moved, np.where(act, shift, 0.0))
                    Y[i][act] = Yi[act]
                    lam[i][act] = li[act]
                    iters[i][act] += it[act]
                    note_failures(ok, act, i)
                act = sweep_active & ~failed
                if need_f[i]:
                    f_vals[i][act] = drift(Y[i])[act]
                g_vals[i][act] = manifold.grad(Y[i])[act]
            done = moved <= tol_move
            sweep_active &= ~done
        leftover = sweep_active & ~failed
        if leftover.any():
            failed[leftover] = True
            failed_stage[leftover] = -2

    x_next = Y[-1].copy()
    if failed.any():
        if policy == "raise":
            n_bad = int(failed.sum())
            stage = int(failed_stage[failed][0])
            if stage == -2:
                raise SweepConvergenceError(
                    f"stage relaxation did not converge on {n_bad} of {B} rows"
                )
            raise NewtonFailureError(
                f"stage {stage} Newton solve failed on {n_bad} of {B} rows", stage=stage
            )
        x_next[failed] = np.nan

    if single:
        return StepOutcome(
            x_next=x_next[0],
            stage_points=Y[:, 0, :],
            multipliers=lam[:, 0],
            newton_iters=iters[:, 0],
            sweeps=sweeps_used,
            failed=failed[0],
            failed_stage=failed_stage[0],
        )
    return StepOutcome(
        x_next=x_next,
        stage_points=Y,
        multipliers=lam,
        newton_iters=iters,
        sweeps=sweeps_used,
        failed=failed,
        failed_stage=failed_stage,
    )
