"""Monte-Carlo harness: trajectory ensembles, invariant-measure estimates
with standard errors, and convergence-slope studies across step sizes.

Reproducibility model: trajectory ``m`` of a run with master seed ``s`` owns
the counter-based stream ``Philox(key = s + (m << 64))``. Noise is drawn from
that stream in fixed chunks of ``NOISE_CHUNK`` steps, so a trajectory's path
is bitwise identical whether it is integrated alone, inside any batch, or
under any thread count. Ensemble reductions always run over the per-trajectory
value array in index order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NewtonFailureError, QualityError
from .integrator import NOISE_KINDS, NewtonControls, NoiseSpec, draw_noise_block, step
from .manifold import Manifold, default_start, manifold_from_json
from .potentials import Observable, Potential, builtin_observable, builtin_potential
from .quadrature import ReferenceValue
from .tableau import BUILTIN_NAMES, ButcherTableau, builtin, tableau_from_json

__all__ = [
    "SimConfig",
    "EstimateResult",
    "TrajectoryResult",
    "ConvergenceRow",
    "ConvergenceReport",
    "trajectory_rng",
    "run_trajectory",
    "estimate",
    "estimate_time_average",
    "convergence_study",
    "simconfig_to_dict",
    "simconfig_from_dict",
]

_MASK64 = (1 << 64) - 1

# Steps of noise drawn per stream refill. Part of the determinism contract:
# changing it would regroup each stream's draws, so it is a constant, not a
# config knob.
NOISE_CHUNK = 256

# Trajectories integrated per vectorized batch. Results are independent of
# this value (all reductions are indexed), it only sets the memory/speed
# trade-off.
BLOCK_ROWS = 8192


@dataclass
class SimConfig:
    """Fully-resolved description of one ensemble run."""

    manifold: Manifold
    scheme: ButcherTableau
    potential: Potential | None
    sigma: float
    T: float
    h: float
    M: int
    seed: int
    noise: str | NoiseSpec = "discrete3"
    newton: NewtonControls = field(default_factory=NewtonControls)
    x0: np.ndarray | None = None
    discard_ceiling: float = 0.01

    def __post_init__(self):
        if isinstance(self.noise, NoiseSpec):
            self.noise = self.noise.kind
        if self.noise not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.noise!r}; expected one of {NOISE_KINDS}")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        if self.T <= 0 or self.h <= 0:
            raise ConfigError("T and h must be positive")
        ratio = self.T / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(f"T/h = {ratio!r} is not an integer number of steps")
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if not (0 < self.discard_ceiling <= 1):
            raise ConfigError("discard_ceiling must lie in (0, 1]")
        self.seed = int(self.seed)
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.x0 is None:
            self.x0 = default_start(self.manifold)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (self.manifold.ambient_dim,):
            raise ConfigError(
                f"x0 has shape {self.x0.shape}, expected ({self.manifold.ambient_dim},)")
        z0 = abs(float(self.manifold.zeta(self.x0)))
        if z0 > 1e-10:
            raise ConfigError(f"x0 is off the manifold: |zeta(x0)| = {z0:.3e} > 1e-10")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.h))

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(kind=self.noise, dim=self.manifold.ambient_dim)


@dataclass(frozen=True)
class EstimateResult:
    mean: float
    stderr: float
    M_effective: int
    discard_fraction: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "M_effective": self.M_effective,
            "discard_fraction": self.discard_fraction,
        }


@dataclass(frozen=True)
class TrajectoryResult:
    x_final: np.ndarray | None
    discarded: bool
    fail_step: int  # -1 when the trajectory completed


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    N: int
    M: int
    estimate: float
    stderr: float
    error: float
    discard_fraction: float
    usable: bool

    def to_dict(self) -> dict:
        return {
            "h": self.h, "N": self.N, "M": self.M,
            "estimate": self.estimate, "stderr": self.stderr,
            "error": self.error, "discard_fraction": self.discard_fraction,
            "usable": self.usable,
        }


@dataclass(frozen=True)
class ConvergenceReport:
    rows: list
    fitted_slope: float
    fit_window: list
    reference_value: float
    reference_provenance: str
    fit_ok: bool
    fit_message: str

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "fitted_slope": self.fitted_slope,
            "fit_window": list(self.fit_window),
            "reference_value": self.reference_value,
            "reference_provenance": self.reference_provenance,
            "fit_ok": self.fit_ok,
            "fit_message": self.fit_message,
        }


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """The private stream of trajectory ``index`` under master ``seed``."""
    key = (int(seed) & _MASK64) | ((int(index) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _integrate_rows(cfg: SimConfig, indices: np.ndarray, policy: str = "report"):
    """Integrate the trajectories named by ``indices`` to time T.

    Returns (x_final (B, d), alive (B,), fail_step (B,)). Failed rows keep
    their last on-manifold state in x_final and record the failing step.
    """
    man, pot, t = cfg.manifold, cfg.potential, cfg.scheme
    dim = man.ambient_dim
    N = cfg.n_steps
    B = indices.size
    rngs = [trajectory_rng(cfg.seed, int(m)) for m in indices]
    X = np.tile(cfg.x0, (B, 1))
    alive = np.ones(B, dtype=bool)
    fail_step = np.full(B, -1, dtype=np.int64)
    for start in range(0, N, NOISE_CHUNK):
        k = min(NOISE_CHUNK, N - start)
        xi = np.empty((B, k, dim))
        for row, rng in enumerate(rngs):
            xi[row] = draw_noise_block(rng, cfg.noise, k, dim)
        if not alive.any():
            continue  # keep consuming streams so layout never depends on outcomes
        for j in range(k):
            idx = np.flatnonzero(alive)
            out = step(X[idx], t, man, pot, cfg.sigma, cfg.h, xi[idx, j],
                       controls=cfg.newton, policy="report")
            bad = out.failed
            if bad.any():
                if policy == "raise":
                    raise NewtonFailureError(
                        f"trajectory {int(indices[idx[np.flatnonzero(bad)[0]]])} failed at "
                        f"step {start + j} (stage {int(out.failed_stage[bad][0])})",
                        stage=int(out.failed_stage[bad][0]),
                    )
                fail_step[idx[bad]] = start + j
                alive[idx[bad]] = False
                good = ~bad
                X[idx[good]] = out.x_next[good]
            else:
                X[idx] = out.x_next
            if not alive.any():
                break
    return X, alive, fail_step


def run_trajectory(cfg: SimConfig, trajectory_index: int, policy: str = "report") -> TrajectoryResult:
    """Run one trajectory to final time; deterministic in (cfg, index)."""
    if not (0 <= trajectory_index):
        raise ConfigError("trajectory_index must be nonnegative")
    X, alive, fs = _integrate_rows(cfg, np.array([trajectory_index]), policy=policy)
    if alive[0]:
        return TrajectoryResult(x_final=X[0], discarded=False, fail_step=-1)
    return TrajectoryResult(x_final=None, discarded=True, fail_step=int(fs[0]))


def _ensemble_values(cfg: SimConfig, observable: Observable, threads: int | None):
    """Per-trajectory observable values at time T (NaN on discards)."""
    phis = np.full(cfg.M, np.nan)
    alive_all = np.zeros(cfg.M, dtype=bool)
    blocks = [(lo, min(lo + BLOCK_ROWS, cfg.M)) for lo in range(0, cfg.M, BLOCK_ROWS)]

    def work(block):
        lo, hi = block
        X, alive, _ = _integrate_rows(cfg, np.arange(lo, hi))
        vals = np.full(hi - lo, np.nan)
        if alive.any():
            vals[alive] = np.asarray(observable(X[alive]), dtype=float)
        return lo, hi, vals, alive

    threads = 1 if threads is None else max(1, int(threads))
    if threads == 1 or len(blocks) == 1:
        results = map(work, blocks)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        try:
            results = list(pool.map(work, blocks))
        finally:
            pool.shutdown()
    for lo, hi, vals, alive in results:
        phis[lo:hi] = vals
        alive_all[lo:hi] = alive
    return phis, alive_all


def _estimate_from_values(phis: np.ndarray, alive: np.ndarray, M: int) -> EstimateResult:
    M_eff = int(alive.sum())
    discard_fraction = 1.0 - M_eff / M
    if M_eff == 0:
        return EstimateResult(mean=float("nan"), stderr=float("nan"),
                              M_effective=0, discard_fraction=discard_fraction)
    vals = phis[alive]
    mean = float(np.sum(vals) / M_eff)
    if M_eff == 1:
        stderr = float("inf")
    else:
        stderr = float(math.sqrt(np.sum((vals - mean) ** 2) / (M_eff * (M_eff - 1))))
    return EstimateResult(mean=mean, stderr=stderr, M_effective=M_eff,
                          discard_fraction=discard_fraction)


def estimate(cfg: SimConfig, observable: Observable, threads: int | None = None) -> EstimateResult:
    """Ensemble estimator: mean of the observable at final time over the
    non-discarded trajectories, with its standard error.

    Raises QualityError when the discard fraction reaches the configured
    ceiling (the estimate would no longer sample the intended ensemble).
    """
    phis, alive = _ensemble_values(cfg, observable, threads)
    res = _estimate_from_values(phis, alive, cfg.M)
    if res.discard_fraction >= cfg.discard_ceiling and res.discard_fraction > 0:
        raise QualityError(
            f"discard fraction {res.discard_fraction:.4f} reached the ceiling "
            f"{cfg.discard_ceiling:.4f} (M_effective = {res.M_effective} of {cfg.M})")
    return res


def estimate_time_average(cfg: SimConfig, observable: Observable,
                          burn_fraction: float = 0.5, n_batches: int = 32) -> EstimateResult:
    """Cross-check estimator: time average of the observable along a single
    trajectory (index 0) after a burn-in window.

    The standard error comes from batch means over the averaging window, a
    heuristic for correlated samples; this mode makes no claim of agreeing
    with the ensemble estimator at finite T beyond shared stationarity.
    """
    if not (0 <= burn_fraction < 1):
        raise ConfigError("burn_fraction must lie in [0, 1)")
    man, pot, t = cfg.manifold, cfg.potential, cfg.scheme
    dim = man.ambient_dim
    N = cfg.n_steps
    n_burn = int(round(N * burn_fraction))
    if N - n_burn < n_batches:
        raise ConfigError("averaging window shorter than the batch count")
    rng = trajectory_rng(cfg.seed, 0)
    x = cfg.x0.copy()
    vals = np.empty(N - n_burn)
    pos = 0
    for start in range(0, N, NOISE_CHUNK):
        k = min(NOISE_CHUNK, N - start)
        xi = draw_noise_block(rng, cfg.noise, k, dim)
        for j in range(k):
            out = step(x, t, man, pot, cfg.sigma, cfg.h, xi[j],
                       controls=cfg.newton, policy="report")
            if out.any_failed:
                raise QualityError(f"time-average trajectory failed at step {start + j}")
            x = out.x_next
            if start + j >= n_burn:
                vals[pos] = float(observable(x))
                pos += 1
    mean = float(vals.mean())
    batches = np.array_split(vals, n_batches)
    bm = np.array([b.mean() for b in batches])
    stderr = float(bm.std(ddof=1) / math.sqrt(n_batches))
    return EstimateResult(mean=mean, stderr=stderr, M_effective=1, discard_fraction=0.0)


def convergence_study(cfg: SimConfig, h_list, reference, observable: Observable,
                      threads: int | None = None) -> ConvergenceReport:
    """Estimate at every step size in descending ``h_list`` and fit the
    least-squares slope of log(error) against log(h).

    The fit uses only usable rows: discard fraction below the ceiling and
    error above 3 stderr (rows dominated by Monte-Carlo noise carry no slope
    information). With fewer than 2 usable rows the report is still returned,
    with ``fit_ok`` false and a NaN slope.
    """
    h_arr = [float(h) for h in h_list]
    if len(h_arr) < 1:
        raise ConfigError("h_list must not be empty")
    if any(b >= a for a, b in zip(h_arr, h_arr[1:])):
        raise ConfigError("h_list must be strictly descending")
    if isinstance(reference, ReferenceValue):
        ref_value = float(reference.value)
        ref_prov = f"{reference.method}(resolution={reference.resolution}, est_error={reference.est_error:.3e})"
    else:
        ref_value = float(reference)
        ref_prov = "caller-supplied"

    rows = []
    for h in h_arr:
        cfg_h = replace(cfg, h=h, x0=cfg.x0.copy())
        phis, alive = _ensemble_values(cfg_h, observable, threads)
        res = _estimate_from_values(phis, alive, cfg_h.M)
        error = abs(res.mean - ref_value) if res.M_effective > 0 else float("nan")
        quality_ok = res.discard_fraction < cfg.discard_ceiling or res.discard_fraction == 0
        usable = bool(quality_ok and res.M_effective >= 2
                      and np.isfinite(error) and error > 3.0 * res.stderr)
        rows.append(ConvergenceRow(
            h=h, N=cfg_h.n_steps, M=cfg_h.M, estimate=res.mean, stderr=res.stderr,
            error=error, discard_fraction=res.discard_fraction, usable=usable))

    window = [i for i, r in enumerate(rows) if r.usable]
    if len(window) >= 2:
        logh = np.log([rows[i].h for i in window])
        loge = np.log([rows[i].error for i in window])
        slope = float(np.polyfit(logh, loge, 1)[0])
        fit_ok, msg = True, ""
    else:
        slope = float("nan")
        fit_ok = False
        msg = (f"only {len(window)} usable row(s): a slope fit needs at least 2 "
               "(rows are unusable when discards reach the ceiling or the error "
               "is within 3 stderr of zero)")
    return ConvergenceReport(rows=rows, fitted_slope=slope, fit_window=window,
                             reference_value=ref_value, reference_provenance=ref_prov,
                             fit_ok=fit_ok, fit_message=msg)


def simconfig_to_dict(cfg: SimConfig) -> dict:
    scheme = cfg.scheme.name if cfg.scheme.name in BUILTIN_NAMES else cfg.scheme.to_dict()
    return {
        "manifold": cfg.manifold.to_dict(),
        "scheme": scheme,
        "potential": None if cfg.potential is None else cfg.potential.to_dict(),
        "sigma": cfg.sigma,
        "T": cfg.T,
        "h": cfg.h,
        "M": cfg.M,
        "seed": cfg.seed,
        "noise": cfg.noise,
        "newton": {
            "tol_constraint": cfg.newton.tol_constraint,
            "max_iter": cfg.newton.max_iter,
            "coupled_sweeps": cfg.newton.coupled_sweeps,
            "damping": cfg.newton.damping,
        },
        "x0": [float(v) for v in cfg.x0],
        "discard_ceiling": cfg.discard_ceiling,
    }


def simconfig_from_dict(data: dict) -> SimConfig:
    try:
        manifold = manifold_from_json(data["manifold"])
        scheme = data["scheme"]
        if isinstance(scheme, str):
            scheme = builtin(scheme)
        else:
            scheme = tableau_from_json(scheme)
        pot_spec = data.get("potential")
        if pot_spec is None:
            potential = None
        else:
            kwargs = {k: v for k, v in pot_spec.items() if k != "name"}
            potential = builtin_potential(pot_spec["name"], **kwargs)
        newton = NewtonControls(**data["newton"]) if "newton" in data else NewtonControls()
        return SimConfig(
            manifold=manifold,
            scheme=scheme,
            potential=potential,
            sigma=float(data["sigma"]),
            T=float(data["T"]),
            h=float(data["h"]),
            M=int(data["M"]),
            seed=int(data["seed"]),
            noise=data.get("noise", "discrete3"),
            newton=newton,
            x0=data.get("x0"),
            discard_ceiling=float(data.get("discard_ceiling", 0.01)),
        )
    except KeyError as exc:
        raise ConfigError(f"config is missing required field {exc.args[0]!r}") from None
