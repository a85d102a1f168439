"""Streamfunctions, cut-offs and velocity fields for convection rolls.

Three streamfunctions are provided:

``STANDARD``
    ``H(x) = sin(pi x1) sin(pi x2)``. Cells of side 1, alternating in sign,
    2-periodic in ``x1``.
``CORNER_PATCHED``
    The standard field blended (C^2, quintic in the distance to the nearest
    lattice point) into the exact saddle quadratics
    ``(-1)^(j+k) (x1 - j)(x2 - k)`` near every lattice point ``(j, k)``.
``CUTOFF``
    ``G(H)`` where ``G`` is the identity below level ``N/sqrt(A)`` and flat
    above ``2N/sqrt(A)``, so all of the stirring lives in a thin layer around
    the cell boundaries.

Velocities are always taken as the perpendicular gradient of the
streamfunction, ``v = (dH/dx2, -dH/dx1)``, so they are divergence free by
construction and tangent to every line where ``H`` is constant (in
particular the walls ``x2 = 0`` and ``x2 = 1``).

All evaluators are vectorised: points are array-likes whose last axis has
length 2.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

PI = math.pi
#: Period of every built-in streamfunction in the horizontal cell variable.
PERIOD_X1 = 2.0


class HamiltonianKind(str, enum.Enum):
    STANDARD = "standard"
    CORNER_PATCHED = "corner_patched"
    CUTOFF = "cutoff"


class Ramp(str, enum.Enum):
    SMOOTHSTEP = "smoothstep"


@dataclass(frozen=True)
class HamiltonianSpec:
    """Which streamfunction to use, and its parameters.

    ``N`` and ``A`` only matter for ``CUTOFF`` (the plateau starts at level
    ``N/sqrt(A)``); ``c0`` only matters when the corner patch is in play.
    ``base`` selects the field that ``CUTOFF`` truncates.
    """

    kind: HamiltonianKind = HamiltonianKind.STANDARD
    N: float = 1.0
    A: float = 1.0
    c0: float = 0.05
    ramp: Ramp = Ramp.SMOOTHSTEP
    base: HamiltonianKind = HamiltonianKind.STANDARD

    def __post_init__(self):
        object.__setattr__(self, "kind", HamiltonianKind(self.kind))
        object.__setattr__(self, "ramp", Ramp(self.ramp))
        object.__setattr__(self, "base", HamiltonianKind(self.base))
        if not 0.0 < self.c0 < 0.1:
            raise ValueError(f"c0 must lie in (0, 1/10), got {self.c0}")
        if self.kind is HamiltonianKind.CUTOFF:
            if not (self.N > 0 and self.A > 0):
                raise ValueError("cut-off needs N > 0 and A > 0")
            if self.base is HamiltonianKind.CUTOFF:
                raise ValueError("cut-off base must be standard or corner_patched")

    @property
    def plateau_start(self) -> float:
        """Level ``N/sqrt(A)`` above which the cut-off starts bending."""
        return self.N / math.sqrt(self.A)

    @property
    def uses_patch(self) -> bool:
        if self.kind is HamiltonianKind.CUTOFF:
            return self.base is HamiltonianKind.CORNER_PATCHED
        return self.kind is HamiltonianKind.CORNER_PATCHED


@dataclass(frozen=True)
class VelocityFieldHandle:
    """A streamfunction together with the roll geometry and amplitude.

    In cell coordinates ``y = (x1/eps, x2/eps**alpha)`` the field is
    ``A * perp_grad(H)``; in physical coordinates it is
    ``A / eps**(1 - alpha) * perp_grad(H(x1/eps, x2/eps**alpha))``.
    """

    spec: HamiltonianSpec
    epsilon: float = 1.0
    alpha: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.spec.kind is HamiltonianKind.CUTOFF and self.amplitude > 0:
            if not math.isclose(self.spec.A, self.amplitude, rel_tol=1e-12):
                raise ValueError(
                    f"cut-off built for A={self.spec.A} but handle amplitude is {self.amplitude}"
                )

    @property
    def height(self) -> float:
        """Strip height in cell units (number of stacked rolls)."""
        return self.epsilon ** (-self.alpha)

    @property
    def vertical_noise(self) -> float:
        """Vertical noise scale in cell coordinates, ``eps**(1 - alpha)``."""
        return self.epsilon ** (1.0 - self.alpha)


def make_handle(kind="cutoff", epsilon=0.1, amplitude=100.0, N=1.0, c0=0.05, alpha=0.0,
                base="standard") -> VelocityFieldHandle:
    """Build a handle whose cut-off level is consistent with its amplitude."""
    spec = HamiltonianSpec(kind=kind, N=N, A=amplitude if amplitude > 0 else 1.0, c0=c0, base=base)
    return VelocityFieldHandle(spec=spec, epsilon=epsilon, alpha=alpha, amplitude=amplitude)


# --------------------------------------------------------------------------
# cut-off profile

def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def cutoff_G(h, N: float, A: float, derivative: int = 0):
    """Cut-off profile ``G`` (or its first/second derivative) at level ``h``.

    ``G'`` is 1 up to ``a = N/sqrt(A)``, falls to 0 along a cubic smoothstep
    on ``[a, 2a]`` and stays 0 after, so ``G`` saturates at ``1.5 a``.
    ``G`` is odd.
    """
    if N <= 0 or A <= 0:
        raise ValueError("N and A must be positive")
    a = N / math.sqrt(A)
    h = np.asarray(h, dtype=float)
    s = np.sign(h)
    x = np.abs(h)
    t = np.clip((x - a) / a, 0.0, 1.0)
    if derivative == 0:
        ramp = a + a * (t - t**3 + 0.5 * t**4)
        out = s * np.where(x <= a, x, ramp)
    elif derivative == 1:
        out = 1.0 - _smoothstep(t)
    elif derivative == 2:
        out = s * np.where((x > a) & (x < 2 * a), -6.0 * t * (1.0 - t) / a, 0.0)
    else:
        raise ValueError("derivative must be 0, 1 or 2")
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# streamfunction derivatives

def _standard(x1, x2):
    s1, c1 = np.sin(PI * x1), np.cos(PI * x1)
    s2, c2 = np.sin(PI * x2), np.cos(PI * x2)
    H = s1 * s2
    return (H, PI * c1 * s2, PI * s1 * c2,
            -PI * PI * H, PI * PI * c1 * c2, -PI * PI * H)


def _quintic_blend(rho, r_in, r_out):
    """Weight 1 inside ``r_in``, 0 outside ``r_out``; returns (w, w', w'')."""
    width = r_out - r_in
    t = np.clip((rho - r_in) / width, 0.0, 1.0)
    w = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    dw = -30.0 * t * t * (1.0 - t) ** 2 / width
    d2w = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / width**2
    return w, dw, d2w


def _patched(x1, x2, c0):
    H, H1, H2, H11, H12, H22 = _standard(x1, x2)
    j = np.round(x1)
    k = np.round(x2)
    dx, dy = x1 - j, x2 - k
    sgn = np.where((j + k) % 2 == 0, 1.0, -1.0)
    q, q1, q2, q12 = sgn * dx * dy, sgn * dy, sgn * dx, sgn
    rho = np.hypot(dx, dy)
    w, dw, d2w = _quintic_blend(rho, math.sqrt(2.0) * c0, 2.0 * c0)
    with np.errstate(invalid="ignore", divide="ignore"):
        safe = np.where(rho > 0, rho, 1.0)
        rx, ry = dx / safe, dy / safe
        tang = np.where(rho > 0, dw / safe, 0.0)
    w1, w2 = dw * rx, dw * ry
    w11 = d2w * rx * rx + tang * (1.0 - rx * rx)
    w22 = d2w * ry * ry + tang * (1.0 - ry * ry)
    w12 = d2w * rx * ry - tang * rx * ry
    D, D1, D2 = q - H, q1 - H1, q2 - H2
    D11, D12, D22 = -H11, q12 - H12, -H22
    return (H + w * D,
            H1 + w * D1 + D * w1,
            H2 + w * D2 + D * w2,
            H11 + w * D11 + 2.0 * w1 * D1 + D * w11,
            H12 + w * D12 + w1 * D2 + w2 * D1 + D * w12,
            H22 + w * D22 + 2.0 * w2 * D2 + D * w22)


def _base_derivs(kind: HamiltonianKind, c0: float, x1, x2):
    if kind is HamiltonianKind.CORNER_PATCHED:
        return _patched(x1, x2, c0)
    return _standard(x1, x2)


def derivatives(spec: HamiltonianSpec, x1, x2):
    """Return ``(H, H_1, H_2, H_11, H_12, H_22)`` of the chosen streamfunction."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if spec.kind is not HamiltonianKind.CUTOFF:
        return _base_derivs(spec.kind, spec.c0, x1, x2)
    H, H1, H2, H11, H12, H22 = _base_derivs(spec.base, spec.c0, x1, x2)
    g0 = cutoff_G(H, spec.N, spec.A)
    g1 = cutoff_G(H, spec.N, spec.A, 1)
    g2 = cutoff_G(H, spec.N, spec.A, 2)
    return (g0, g1 * H1, g1 * H2,
            g2 * H1 * H1 + g1 * H11, g2 * H1 * H2 + g1 * H12, g2 * H2 * H2 + g1 * H22)


def base_derivatives(spec: HamiltonianSpec, x1, x2):
    """Derivatives of the untruncated streamfunction underlying ``spec``."""
    kind = spec.base if spec.kind is HamiltonianKind.CUTOFF else spec.kind
    return _base_derivs(kind, spec.c0, np.asarray(x1, float), np.asarray(x2, float))


def _split(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("points must have a trailing axis of length 2")
    return x[..., 0], x[..., 1]


def _scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def eval_H(spec: HamiltonianSpec, x):
    """Streamfunction value at ``x``."""
    return _scalar(derivatives(spec, *_split(x))[0])


def eval_grad_H(spec: HamiltonianSpec, x) -> np.ndarray:
    """Analytic gradient, shape ``x.shape``."""
    d = derivatives(spec, *_split(x))
    return np.stack([d[1], d[2]], axis=-1)


def eval_hessian_H(spec: HamiltonianSpec, x) -> np.ndarray:
    """Analytic Hessian, shape ``x.shape + (2,)``."""
    _, _, _, h11, h12, h22 = derivatives(spec, *_split(x))
    return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)


def velocity(handle: VelocityFieldHandle, x, coords: str = "cell") -> np.ndarray:
    """Velocity at ``x``.

    ``coords="cell"`` returns the unit-amplitude field ``perp_grad(H)(y)``
    (multiply by ``handle.amplitude`` for the drift of the cell problem).
    ``coords="physical"`` maps ``x`` to cell coordinates and returns the
    full physical field including the ``A / eps**(1-alpha)`` prefactor and
    the chain-rule factors.
    """
    x1, x2 = _split(x)
    if coords == "cell":
        d = derivatives(handle.spec, x1, x2)
        return np.stack([d[2], -d[1]], axis=-1)
    if coords != "physical":
        raise ValueError(f"unknown coordinate system {coords!r}")
    eps, alpha = handle.epsilon, handle.alpha
    d = derivatives(handle.spec, x1 / eps, x2 / eps**alpha)
    pref = handle.amplitude / eps ** (1.0 - alpha)
    return np.stack([pref * d[2] / eps**alpha, -pref * d[1] / eps], axis=-1)


# --------------------------------------------------------------------------
# assumption diagnostics

@dataclass
class AssumptionReport:
    kind: str
    c2_norm: float
    c2_ok: bool
    h0: float
    a4_violations: int
    a4_probe_level: float
    a5_residual: float
    a5_ok: bool
    quadratic_residual: float
    max_grad_H: float
    max_velocity_gradient: float
    extra_critical_points: int
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _quadratic_forms(x1, x2):
    j, k = np.round(x1), np.round(x2)
    sgn = np.where((j + k) % 2 == 0, 1.0, -1.0)
    return sgn * (x1 - j) * (x2 - k)


def check_assumptions(spec: HamiltonianSpec, n: int = 801, a4_probe: float = 0.1,
                      tol: float = 1e-12) -> AssumptionReport:
    """Sample the streamfunction on an ``n x n`` grid per unit cell and report
    how well it meets the structural requirements placed on roll fields.

    * ``c2_norm``: max over the grid of ``|H|``, ``|grad H|`` entries and
      Hessian entries (target ``<= 100``).
    * ``h0``: largest level below which ``sign d_ii H = -sign H`` holds at
      every sample (zeros of ``d_ii H`` are not counted as violations).
    * ``a4_violations``: number of samples in ``{0 < |H| < a4_probe}`` where
      the sign condition fails.
    * ``a5_residual``: ``max |d_11 H|`` within ``c0`` of the vertical cell
      sides and below level ``a4_probe``; 0 means exactly linear there.
    * ``quadratic_residual``: ``max |H - q|`` on the squares of half-side
      ``c0`` around lattice points, ``q`` the saddle quadratic.
    """
    g = np.linspace(0.0, PERIOD_X1, 2 * (n - 1) + 1)
    g2 = np.linspace(0.0, 1.0, n)
    X1, X2 = np.meshgrid(g, g2, indexing="ij")
    H, H1, H2, H11, H12, H22 = derivatives(spec, X1, X2)
    c2 = float(max(np.max(np.abs(a)) for a in (H, H1, H2, H11, H12, H22)))
    hess_norm = np.sqrt(H11**2 + 2 * H12**2 + H22**2)

    absH = np.abs(H)
    sH = np.sign(np.where(absH > tol, H, 0.0))
    bad = ((np.sign(np.where(np.abs(H11) > tol, H11, 0.0)) * sH > 0)
           | (np.sign(np.where(np.abs(H22) > tol, H22, 0.0)) * sH > 0))
    h0 = float(absH[bad].min()) if bad.any() else 1.0
    a4_viol = int(np.count_nonzero(bad & (absH < a4_probe)))

    near_side = np.abs(X1 - np.round(X1)) < spec.c0
    a5_region = near_side & (absH <= a4_probe)
    a5 = float(np.max(np.abs(H11[a5_region]))) if a5_region.any() else 0.0

    near_pt = (np.abs(X1 - np.round(X1)) < spec.c0) & (np.abs(X2 - np.round(X2)) < spec.c0)
    quad = float(np.max(np.abs(H[near_pt] - _quadratic_forms(X1, X2)[near_pt])))

    # critical points away from the lattice and the two cell centres
    gradn = np.hypot(H1, H2)
    inner = gradn[1:-1, 1:-1]
    is_min = np.ones_like(inner, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_min &= inner <= gradn[1 + di:gradn.shape[0] - 1 + di,
                                         1 + dj:gradn.shape[1] - 1 + dj]
    h = g[1] - g[0]
    is_min &= inner < 2.0 * c2 * h
    xi, xj = X1[1:-1, 1:-1][is_min], X2[1:-1, 1:-1][is_min]
    on_lattice = (np.abs(xi - np.round(xi)) < 2 * h) & (np.abs(xj - np.round(xj)) < 2 * h)
    at_centre = (np.abs(xi - np.floor(xi) - 0.5) < 2 * h) & (np.abs(xj - 0.5) < 2 * h)
    plateau = np.zeros_like(xi, dtype=bool)
    if spec.kind is HamiltonianKind.CUTOFF:
        plateau = np.abs(base_derivatives(spec, xi, xj)[0]) >= 2 * spec.plateau_start - 2 * c2 * h
    extra = int(np.count_nonzero(~(on_lattice | at_centre | plateau)))

    notes = []
    if spec.kind is HamiltonianKind.STANDARD:
        notes.append("d_11 H = -pi^2 H, so H is not linear near the vertical sides (a5_ok is False); "
                     "exit-time bounds then need A >= 1/eps^2")
    if spec.uses_patch:
        notes.append("corner patch matches the saddle quadratics exactly on |x - lattice| <= sqrt(2) c0")
    return AssumptionReport(
        kind=spec.kind.value, c2_norm=c2, c2_ok=c2 <= 100.0, h0=h0,
        a4_violations=a4_viol, a4_probe_level=a4_probe, a5_residual=a5,
        a5_ok=a5 <= 1e-9, quadratic_residual=quad,
        max_grad_H=float(gradn.max()), max_velocity_gradient=float(hess_norm.max()),
        extra_critical_points=extra, notes=notes,
    )
