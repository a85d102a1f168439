"""Averaging along closed streamlines of one cell.

For a level ``0 < h < 1`` of the streamfunction in the cell ``(0, 1)^2`` the
trajectory of ``d gamma/dt = perp_grad H(gamma)`` runs around the closed
curve ``{H = h}`` with period

    T(h) = ∮ |dl| / |grad H|.

Averages of a function ``f`` along the curve are time averages over one
period. The two coefficients of the averaged (level) diffusion are

    D1(h) = (1/T) ∮ |d1 H|^2 / |grad H| |dl|,
    D2(h) = (1/T) ∮ d11 H / |grad H| |dl|,

and Gauss-Green gives ``T D1 = -∫_{H >= h} d11 H dx`` and
``d(T D1)/dh = T D2``.

Contours are traced in two vectorised passes over all requested levels:

1. an adaptive RK4 march with arc step ``min(0.01, 0.1 R)`` (``R`` the local
   radius of curvature of the level set) and time step at most
   ``0.05 / |D^2 H|``, each step followed by Newton projection back onto
   the level, until the orbit returns to its start; this fixes the period;
2. a second march with the uniform time step ``T / M``, which samples the
   orbit at equal time spacing. Time averages are then periodic trapezoid
   sums, which converge spectrally in ``M``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .flow import HamiltonianSpec, derivatives

LEVEL_TOL = 1e-10
_MAX_REFINE = 3
CLOSURE_TOL = 1e-6
_MAX_STEPS = 2_000_000
_STRAIN_STEP = 0.05


class ContourError(RuntimeError):
    """A level set could not be traced or did not close."""


@dataclass
class LevelSetContour:
    """Closed level set ``{H = h}`` sampled at equal time spacing.

    ``points[k]`` is the orbit at time ``k * period / M``; ``arc_weights``
    are the matching arc-length quadrature weights, so that
    ``∮ f |dl| ≈ sum(f(points) * arc_weights)``.
    """

    h: float
    points: np.ndarray
    arc_weights: np.ndarray
    period: float
    closure_error: float
    spec: HamiltonianSpec

    @property
    def dt(self) -> float:
        return self.period / self.points.shape[0]

    def derivatives(self):
        return derivatives(self.spec, self.points[:, 0], self.points[:, 1])

    def time_average(self, values) -> float:
        """Average of samples taken at ``points`` over one period."""
        return float(np.mean(values))

    def resample(self, n: int) -> np.ndarray:
        """``n`` points equally spaced in travel time (``n`` must divide ``M``
        for exact spacing; otherwise the nearest samples are used)."""
        m = self.points.shape[0]
        idx = np.round(np.arange(n) * m / n).astype(int) % m
        return self.points[idx].copy()


@dataclass
class AveragedCoefficients:
    h_grid: np.ndarray
    T_of_h: np.ndarray
    D1_of_h: np.ndarray
    D2_of_h: np.ndarray

    def __post_init__(self):
        for name in ("T_of_h", "D1_of_h", "D2_of_h"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def flux(self) -> np.ndarray:
        """``T * D1``."""
        return self.T_of_h * self.D1_of_h

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "T", "D1", "D2", "T_D1"])
            for row in zip(self.h_grid, self.T_of_h, self.D1_of_h, self.D2_of_h, self.flux):
                w.writerow([repr(float(x)) for x in row])


# --------------------------------------------------------------------------
# tracing

def _field(spec, z):
    d = derivatives(spec, z[:, 0], z[:, 1])
    return [np.asarray(c, dtype=float) for c in d]


def _rhs(spec, z):
    d = _field(spec, z)
    return np.stack([d[2], -d[1]], axis=1)


def _rk4(spec, z, dt):
    dt = dt[:, None]
    k1 = _rhs(spec, z)
    k2 = _rhs(spec, z + 0.5 * dt * k1)
    k3 = _rhs(spec, z + 0.5 * dt * k2)
    k4 = _rhs(spec, z + dt * k3)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _project(spec, z, h, iters: int = 3):
    for _ in range(iters):
        d = _field(spec, z)
        g2 = d[1] ** 2 + d[2] ** 2
        corr = (h - d[0]) / g2
        z = z + corr[:, None] * np.stack([d[1], d[2]], axis=1)
    return z


def _start_points(spec, levels):
    """Intersections of ``{H = h}`` with the ray ``x2 = 1/2, 1/2 < x1 < 1``."""
    out = np.empty((levels.size, 2))
    f0 = float(derivatives(spec, 0.5, 0.5)[0])
    for i, h in enumerate(levels):
        if not 0.0 < h < f0:
            raise ContourError(f"level {h} is not a closed orbit of this cell")
        x1 = optimize.brentq(lambda x: float(derivatives(spec, x, 0.5)[0]) - h, 0.5, 1.0,
                             xtol=1e-15, rtol=4 * np.finfo(float).eps)
        out[i] = (x1, 0.5)
    return out


def _time_step(spec, z):
    """Time step giving arc step ``min(0.01, 0.1 R)`` and ``|D^2 H| dt <= 0.05``.

    The second bound matters near the saddles, where the level sets are
    nearly straight but the flow is slow and strongly strained. Returns the
    step and ``1 / step`` scaled to unit time (the sampling density needed).
    """
    d = _field(spec, z)
    g = np.hypot(d[1], d[2])
    tx, ty = d[2] / g, -d[1] / g
    curv = np.abs(tx * tx * d[3] + 2 * tx * ty * d[4] + ty * ty * d[5]) / g
    with np.errstate(divide="ignore"):
        radius = np.where(curv > 0, 1.0 / curv, np.inf)
    ds = np.minimum(0.01, 0.1 * radius)
    hess = np.sqrt(d[3] ** 2 + 2 * d[4] ** 2 + d[5] ** 2)
    dt = np.minimum(ds / g, _STRAIN_STEP / hess)
    return dt


def _periods(spec, levels, starts):
    """Pass 1: adaptive march until each orbit crosses its start ray again."""
    z = starts.copy()
    t = np.zeros(levels.size)
    period = np.full(levels.size, np.nan)
    density = np.zeros(levels.size)  # largest 1/dt met along the orbit
    active = np.arange(levels.size)
    for _ in range(_MAX_STEPS):
        if active.size == 0:
            break
        za = z[active]
        dt = _time_step(spec, za)
        density[active] = np.maximum(density[active], 1.0 / dt)
        zn = _project(spec, _rk4(spec, za, dt), levels[active])
        closed = (za[:, 1] < 0.5) & (zn[:, 1] >= 0.5) & (zn[:, 0] > 0.5) & (t[active] > 0)
        if closed.any():
            ids = active[closed]
            zp, dtc = za[closed], dt[closed]
            s = dtc * (0.5 - zp[:, 1]) / (zn[closed, 1] - zp[:, 1])
            for _ in range(6):
                zs = _rk4(spec, zp, s)
                vy = -_field(spec, zs)[1]
                s = s - (zs[:, 1] - 0.5) / vy
            period[ids] = t[ids] + s
        z[active] = zn
        t[active] += dt
        active = active[~closed]
    else:
        raise ContourError("contour tracing exceeded the step budget")
    return period, density


def trace_contours(spec: HamiltonianSpec, levels, n_points: int | None = None):
    """Trace the closed level sets ``{H = h}`` of the cell ``(0,1)^2`` for all ``levels``."""
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    starts = _project(spec, _start_points(spec, levels), levels)
    period, density = _periods(spec, levels, starts)
    need = int(np.ceil(np.max(period * density)))
    m = max(need, n_points or 0, 64)
    m = 64 * int(math.ceil(m / 64))
    d0 = derivatives(spec, starts[:, 0], starts[:, 1])
    v0 = np.stack([d0[2], -d0[1]], axis=-1)
    for _ in range(_MAX_REFINE + 1):
        dt = period / m
        pts = np.empty((levels.size, m, 2))
        z = starts.copy()
        for k in range(m):
            pts[:, k] = z
            z = _project(spec, _rk4(spec, z, dt), levels)
        closure = np.hypot(*(z - starts).T)
        if np.all(closure <= CLOSURE_TOL):
            break
        # shooting step: the end point over- or undershoots along the orbit
        period = period - np.sum((z - starts) * v0, axis=1) / np.sum(v0 * v0, axis=1)
    out = []
    for i, h in enumerate(levels):
        if closure[i] > CLOSURE_TOL:
            raise ContourError(f"level {h}: orbit failed to close (gap {closure[i]:.2e})")
        d = derivatives(spec, pts[i, :, 0], pts[i, :, 1])
        w = np.hypot(d[1], d[2]) * dt[i]
        out.append(LevelSetContour(h=float(h), points=pts[i], arc_weights=w,
                                   period=float(period[i]), closure_error=float(closure[i]),
                                   spec=spec))
    return out


def trace_contour(spec: HamiltonianSpec, h: float, n_points: int | None = None) -> LevelSetContour:
    """Closed level set ``{H = h}`` inside the cell ``(0, 1)^2``."""
    return trace_contours(spec, [h], n_points)[0]


# --------------------------------------------------------------------------
# contour integrals

def period(contour: LevelSetContour) -> float:
    """``∮ |dl| / |grad H|`` by the arc-length quadrature of the contour."""
    d = contour.derivatives()
    return float(np.sum(contour.arc_weights / np.hypot(d[1], d[2])))


def coefficients(contour: LevelSetContour) -> tuple[float, float]:
    """``(D1, D2)`` at the contour's level."""
    d = contour.derivatives()
    g = np.hypot(d[1], d[2])
    T = period(contour)
    D1 = float(np.sum(d[1] ** 2 / g * contour.arc_weights)) / T
    D2 = float(np.sum(d[3] / g * contour.arc_weights)) / T
    return D1, D2


def averaged_coefficients(spec: HamiltonianSpec, h_grid, n_points: int | None = None
                          ) -> AveragedCoefficients:
    contours = trace_contours(spec, h_grid, n_points)
    T = np.array([period(c) for c in contours])
    D = np.array([coefficients(c) for c in contours])
    return AveragedCoefficients(np.asarray(h_grid, float), T, D[:, 0], D[:, 1])


def chebyshev_levels(n: int, lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    """``n`` Chebyshev-Gauss-Lobatto levels on ``[lo, hi]``, increasing."""
    x = -np.cos(np.pi * np.arange(n) / (n - 1))
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * x


def verify_flux_identity(coeffs: AveragedCoefficients) -> float:
    """Largest relative mismatch ``|d(T D1)/dh - T D2| / |T D2|`` over the
    interior levels, with the derivative taken by second-order differences
    on the (possibly non-uniform) level grid."""
    h = coeffs.h_grid
    if h.size < 3:
        raise ValueError("need at least three levels")
    lhs = np.gradient(coeffs.flux, h, edge_order=2)
    rhs = coeffs.T_of_h * coeffs.D2_of_h
    return float(np.max(np.abs(lhs[1:-1] - rhs[1:-1]) / np.abs(rhs[1:-1])))


@dataclass
class ReducedSolution:
    h: np.ndarray
    dU: np.ndarray
    U: np.ndarray

    @property
    def w1inf(self) -> float:
        return float(max(np.max(np.abs(self.U)), np.max(np.abs(self.dU))))


def reduced_solution(coeffs: AveragedCoefficients, source: float = 4.0) -> ReducedSolution:
    """Level-variable solution of ``-D1 U'' - D2 U' = source`` through the
    explicit quadrature ``U'(h) = source/(T D1) ∫_h^1 T``, ``U(h) = ∫_0^h U'``.

    The levels should cover ``(0, 1)`` closely; the end intervals are
    closed with the limits ``T(1) = T`` at the top level and a flat
    extension at the bottom one.
    """
    h, T = coeffs.h_grid, coeffs.T_of_h
    order = np.argsort(h)
    h, T, flux = h[order], T[order], coeffs.flux[order]
    tail = np.concatenate([integrate.cumulative_trapezoid(T[::-1], -h[::-1], initial=0.0)[::-1]])
    tail = tail + T[-1] * (1.0 - h[-1])
    dU = source * tail / flux
    U = integrate.cumulative_trapezoid(dU, h, initial=0.0) + dU[0] * h[0]
    return ReducedSolution(h=h, dU=dU, U=U)


def export_csv(coeffs: AveragedCoefficients, path) -> None:
    coeffs.to_csv(path)
