"""Deterministic reference values for weighted surface averages.

Computes ratios of the form

    ref = integral_M phi(x) w(x) dsigma(x) / integral_M w(x) dsigma(x),
    w(x) = exp(-2 V(x) / sigma^2),

on the built-in sphere and torus, where dsigma is the Euclidean surface
measure. Numerator and denominator share one grid, so common quadrature
error cancels in the ratio and phi = 1 returns exactly 1. Resolutions are
doubled until two successive values agree to the requested tolerance; the
final difference is reported as ``est_error``.

The torus is evaluated in the angle parametrization

    x = ((R + r cos psi) cos theta, (R + r cos psi) sin theta, r sin psi)

with surface element r (R + r cos psi) dtheta dpsi, which traces the same
point set as the quartic constraint used by the dynamics and carries the
identical induced measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import QuadratureError
from .potentials import Observable, Potential

__all__ = ["ReferenceValue", "sphere_reference", "torus_reference"]


@dataclass(frozen=True)
class ReferenceValue:
    """A converged quadrature value with its last-doubling error estimate."""

    value: float
    resolution: int
    est_error: float
    method: str

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "resolution": self.resolution,
            "est_error": self.est_error,
            "method": self.method,
        }


def _weighted_ratio(points: np.ndarray, weights: np.ndarray, potential: Potential | None,
                    observable: Observable, sigma: float) -> float:
    if potential is not None:
        V = np.asarray(potential.V(points), dtype=float)
        logw = (-2.0 / (sigma * sigma)) * V
        logw -= logw.max()  # shift cancels in the ratio, avoids underflow to 0/0
        w = weights * np.exp(logw)
    else:
        w = weights
    phi = np.asarray(observable(points), dtype=float)
    den = float(np.sum(w))
    if den == 0.0 or not np.isfinite(den):
        raise QuadratureError("quadrature weights degenerate (all underflowed or non-finite)")
    return float(np.sum(phi * w) / den)


def _sphere_value(potential, observable, sigma, n):
    # Gauss-Legendre in u = x3, trapezoid in azimuth; GL weight already
    # includes the sin(theta) surface factor after the u substitution.
    u, gw = leggauss(n)
    m = 2 * n
    az = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
    rho = np.sqrt(np.maximum(0.0, 1.0 - u * u))
    pts = np.empty((n, m, 3))
    pts[:, :, 0] = rho[:, None] * np.cos(az)[None, :]
    pts[:, :, 1] = rho[:, None] * np.sin(az)[None, :]
    pts[:, :, 2] = u[:, None]
    wts = np.broadcast_to(gw[:, None], (n, m)).ravel()
    return _weighted_ratio(pts.reshape(-1, 3), wts, potential, observable, sigma)


def _torus_value(potential, observable, sigma, R, r, n):
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    ps = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    TH, PS = np.meshgrid(th, ps, indexing="ij")
    tube = R + r * np.cos(PS)
    pts = np.stack([tube * np.cos(TH), tube * np.sin(TH), r * np.sin(PS)], axis=-1)
    wts = (r * tube).ravel()
    return _weighted_ratio(pts.reshape(-1, 3), wts, potential, observable, sigma)


def _converge(evaluate, n0: int, n_max: int, tol: float, method: str) -> ReferenceValue:
    prev = evaluate(n0)
    n = n0
    while n < n_max:
        n *= 2
        cur = evaluate(n)
        est = abs(cur - prev)
        if est <= tol:
            return ReferenceValue(value=cur, resolution=n, est_error=est, method=method)
        prev = cur
    raise QuadratureError(
        f"{method}: no convergence to {tol:g} at resolution {n_max} (last delta {abs(cur - prev):g})"
    )


def sphere_reference(potential: Potential | None, observable: Observable, sigma: float,
                     n: int = 32, tol: float = 1e-12, n_max: int = 4096) -> ReferenceValue:
    """Weighted average of ``observable`` on the unit sphere.

    ``n`` is the starting number of Gauss-Legendre nodes in the polar
    direction (azimuth uses 2n trapezoid points); it is doubled until two
    successive values differ by at most ``tol``.
    """
    if n < 8:
        raise QuadratureError("sphere_reference needs n >= 8")
    if sigma <= 0:
        raise QuadratureError("sigma must be positive")
    return _converge(
        lambda k: _sphere_value(potential, observable, sigma, k),
        n, n_max, tol, "sphere-gl-x-trapezoid",
    )


def torus_reference(potential: Potential | None, observable: Observable, sigma: float,
                    R: float = 3.0, r: float = 1.0,
                    n: int = 32, tol: float = 1e-12, n_max: int = 8192) -> ReferenceValue:
    """Weighted average of ``observable`` on the torus with radii (R, r).

    Doubly-periodic trapezoid rule in the two angles; spectrally accurate
    for smooth inputs. ``n`` points per angle, doubled until converged.
    """
    if not (R > r > 0):
        raise QuadratureError("torus radii must satisfy R > r > 0")
    if n < 8:
        raise QuadratureError("torus_reference needs n >= 8")
    if sigma <= 0:
        raise QuadratureError("sigma must be positive")
    return _converge(
        lambda k: _torus_value(potential, observable, sigma, R, r, k),
        n, n_max, tol, "torus-double-trapezoid",
    )
