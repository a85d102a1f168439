"""Steady advection-diffusion cell problem on a periodic strip.

Solves, in cell coordinates ``y`` on ``[0, 2) x [0, L]``::

    A v . grad T - 1/2 d_11 T - 1/2 e^2 d_22 T = s

with ``v = perp_grad(H)``, periodic in ``y1``, ``T = 0`` on the top wall and
either ``d_2 T = 0`` (insulated) or ``T = 0`` on the bottom wall.
``e = eps**(1 - alpha)`` and ``L = eps**(-alpha)`` (``e = eps``, ``L = 1``
for the standard rolls); the default source is ``eps**2``.

Discretisation is vertex-centred finite volumes on a tensor grid.  Face
volume fluxes are differences of the streamfunction at control-volume
corners, so the discrete velocity is exactly divergence free, and the face
fluxes are Scharfetter-Gummel (exponentially fitted).  Together these give
an M-matrix: the discrete maximum principle holds for every cell Peclet
number.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator
from scipy.special import exprel

from .flow import PERIOD_X1, VelocityFieldHandle, derivatives


class BC(str, enum.Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"


class SolverError(RuntimeError):
    """Raised when the linear solve misses its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class CellProblem:
    """Discretisation and physical parameters of one cell problem.

    ``nx`` and ``ny`` are node counts in ``y1`` (periodic) and ``y2``
    (both walls included).  With ``stretch`` the nodes cluster in the
    exponential wall layer (width ``e/sqrt(A)``) and around the cell
    boundaries (width ``1/sqrt(A)``).
    """

    handle: VelocityFieldHandle
    nx: int = 256
    ny: int = 256
    bc_bottom: BC = BC.NEUMANN
    source: float | None = None
    stretch: bool = True
    wall_fraction: float = 0.2
    layer_fraction: float = 0.3

    def __post_init__(self):
        self.bc_bottom = BC(self.bc_bottom)
        if self.nx < 8 or self.ny < 8:
            raise ValueError("nx and ny must be at least 8")
        if self.source is None:
            self.source = self.handle.epsilon ** 2
        n_cells = self.height
        if abs(n_cells - round(n_cells)) > 1e-9:
            raise ValueError(f"strip height eps**-alpha = {n_cells} is not a whole number of rolls")

    @property
    def epsilon(self) -> float:
        return self.handle.epsilon

    @property
    def A(self) -> float:
        return self.handle.amplitude

    @property
    def height(self) -> float:
        return float(round(self.handle.height, 9))

    @property
    def vertical_diffusion(self) -> float:
        """Coefficient of ``d_22`` (the factor 1/2 included)."""
        return 0.5 * self.handle.vertical_noise ** 2

    @property
    def layer_width(self) -> float:
        """Width ``e/sqrt(A)`` of the exit layer at a cold wall."""
        if self.A <= 0:
            return math.inf
        return self.handle.vertical_noise / math.sqrt(self.A)


# --------------------------------------------------------------------------
# grids

def _exp_cdf(y, c, w):
    """Integral over [0, y] of exp(-|s - c| / w)."""
    y = np.asarray(y, float)
    left = np.minimum(y, c)
    part1 = w * (np.exp(-(c - np.minimum(left, c)) / w) - math.exp(-c / w))
    right = np.maximum(y - c, 0.0)
    part2 = w * (1.0 - np.exp(-right / w))
    return part1 + part2


def cluster_nodes(n: int, length: float, centres, widths, fractions, closed: bool) -> np.ndarray:
    """Nodes on ``[0, length]`` whose density is a constant plus exponential
    bumps ``exp(-|y - c|/w)`` at each centre.

    ``fractions[k]`` is roughly the share of nodes pulled into bump ``k``.
    With ``closed`` the result has ``n`` nodes including both ends;
    otherwise ``n`` nodes on ``[0, length)`` (periodic).
    """
    centres = np.asarray(centres, float)
    widths = np.asarray(widths, float)
    fractions = np.asarray(fractions, float)
    uniform = 1.0 - fractions.sum()
    if uniform <= 0:
        raise ValueError("cluster fractions must sum to less than 1")
    # one-sided bumps at the ends only carry half their mass
    mass = np.array([w * (2.0 - (c <= 0 or c >= length)) for c, w in zip(centres, widths)])
    Z = length / uniform
    beta = fractions * Z / mass

    def cdf(y):
        out = np.asarray(y, float).copy()
        for b, c, w in zip(beta, centres, widths):
            out = out + b * _exp_cdf(y, c, w)
        return out

    total = float(cdf(length))
    m = n - 1 if closed else n
    targets = np.arange(m + 1 if closed else m) / m * total
    lo = np.zeros_like(targets)
    hi = np.full_like(targets, length)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    y = 0.5 * (lo + hi)
    y[0] = 0.0
    if closed:
        y[-1] = length
    return y


@dataclass
class Grid:
    y1: np.ndarray
    y2: np.ndarray
    period: float = PERIOD_X1

    @property
    def nx(self) -> int:
        return self.y1.size

    @property
    def ny(self) -> int:
        return self.y2.size

    def spacing1(self) -> np.ndarray:
        """Distance from node i to node i+1 (periodic)."""
        return np.diff(np.append(self.y1, self.y1[0] + self.period))

    def faces1(self) -> np.ndarray:
        """Control-volume edges in y1: face i+1/2 for i = 0..nx-1."""
        return self.y1 + 0.5 * self.spacing1()

    def faces2(self) -> np.ndarray:
        """Control-volume edges in y2, clipped to the walls (ny + 1 values)."""
        mid = 0.5 * (self.y2[1:] + self.y2[:-1])
        return np.concatenate([[self.y2[0]], mid, [self.y2[-1]]])

    def widths1(self) -> np.ndarray:
        f = self.faces1()
        return f - np.roll(f, 1) + np.where(np.arange(self.nx) == 0, self.period, 0.0)

    def widths2(self) -> np.ndarray:
        return np.diff(self.faces2())

    def weights(self) -> np.ndarray:
        """Trapezoid (control-volume) weights, shape (nx, ny)."""
        return np.outer(self.widths1(), self.widths2())


def make_grid(problem: CellProblem) -> Grid:
    L = problem.height
    if not problem.stretch or problem.A <= 0:
        y1 = np.arange(problem.nx) * PERIOD_X1 / problem.nx
        y2 = np.linspace(0.0, L, problem.ny)
        return Grid(y1, y2)
    sqA = math.sqrt(problem.A)
    w_layer = min(1.0 / sqA, 0.2)
    lines = np.arange(0, int(round(L)) + 1, dtype=float)
    cold = [L] + ([0.0] if problem.bc_bottom is BC.DIRICHLET else [])
    centres = list(lines) + cold
    widths = [w_layer] * len(lines) + [min(problem.layer_width, 0.2)] * len(cold)
    n_int = max(len(lines) - 1, 1)
    fr_lines = problem.layer_fraction / n_int
    fractions = [fr_lines * (0.5 if c in (0.0, L) else 1.0) for c in lines]
    fractions += [problem.wall_fraction / len(cold)] * len(cold)
    y2 = cluster_nodes(problem.ny, L, centres, widths, fractions, closed=True)
    y1 = cluster_nodes(problem.nx, PERIOD_X1, [0.0, 1.0, 2.0], [w_layer] * 3,
                       [0.25 * 2 * problem.layer_fraction, 0.5 * 2 * problem.layer_fraction,
                        0.25 * 2 * problem.layer_fraction], closed=False)
    return Grid(y1, y2)


def resolution_report(problem: CellProblem, grid: Grid) -> dict:
    """Cells across the wall layer and across the roll-boundary layer."""
    delta = problem.layer_width
    L = problem.height
    top = int(np.count_nonzero(grid.y2 > L - delta)) if math.isfinite(delta) else grid.ny
    cells = top
    if problem.bc_bottom is BC.DIRICHLET and math.isfinite(delta):
        cells = min(top, int(np.count_nonzero(grid.y2 < delta)))
    if problem.A > 0:
        w = 1.0 / math.sqrt(problem.A)
        d = np.abs(grid.y1 - np.round(grid.y1))
        side = int(np.count_nonzero(d < w)) // 4  # two roll sides per period, both flanks
    else:
        side = grid.nx
    return {"wall_layer_cells": cells, "side_layer_cells": side,
            "underresolved": bool(cells < 4 or side < 4)}


# --------------------------------------------------------------------------
# assembly

def bernoulli(x):
    """``x / (exp(x) - 1)``, stable for all real ``x``."""
    x = np.asarray(x, float)
    with np.errstate(over="ignore"):
        return 1.0 / exprel(x)


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: Grid
    unknown_rows: np.ndarray  # y2 indices carrying unknowns
    underresolved: bool
    resolution: dict = field(default_factory=dict)


def _face_fluxes(problem: CellProblem, grid: Grid):
    """Volume fluxes ``A * int v.n`` through the y1-faces and y2-faces."""
    f1 = grid.faces1()
    f2 = grid.faces2()
    X1, X2 = np.meshgrid(f1, f2, indexing="ij")  # corners (i+1/2, j-1/2 .. j+1/2)
    Hc = derivatives(problem.handle.spec, X1, X2)[0] * problem.A
    # Hc[i, j] = H at (face1[i], faces2[j]); faces2 has ny+1 entries
    U1 = Hc[:, 1:] - Hc[:, :-1]                     # through face i+1/2 at row j, +y1 direction
    U2 = -(Hc - np.roll(Hc, 1, axis=0))             # through face j-1/2 (index j) at column i, +y2
    return U1, U2


def assemble(problem: CellProblem, grid: Grid | None = None) -> LinearSystem:
    """Build the sparse operator and right-hand side.

    Rows are ordered ``i * n_rows + (j - j0)`` over unknown nodes.  Dirichlet
    nodes are eliminated (their value is zero); the insulated bottom uses the
    half control volume, which is the mirror-ghost condition in flux form.
    """
    if grid is None:
        grid = make_grid(problem)
    nx, ny = grid.nx, grid.ny
    D1 = 0.5
    D2 = problem.vertical_diffusion
    h1 = grid.spacing1()
    h2 = np.diff(grid.y2)
    w1 = grid.widths1()
    w2 = grid.widths2()
    if problem.A > 0:
        U1, U2 = _face_fluxes(problem, grid)
    else:
        U1 = np.zeros((nx, ny))
        U2 = np.zeros((nx, ny + 1))

    j0 = 1 if problem.bc_bottom is BC.DIRICHLET else 0
    j1 = ny - 1  # top row is Dirichlet
    rows_j = np.arange(j0, j1)
    nr = rows_j.size
    idx = np.full((nx, ny), -1, dtype=np.int64)
    idx[:, j0:j1] = np.arange(nx)[:, None] * nr + np.arange(nr)[None, :]

    I_list, J_list, V_list = [], [], []
    diag = np.zeros((nx, ny))

    # y1 faces: between (i, j) and (i+1, j)
    coef1 = D1 * w2[None, :] / h1[:, None]          # (nx, ny)
    P1 = U1 / coef1
    Bp, Bm = bernoulli(P1), bernoulli(-P1)
    # outward flux from (i,j): coef*(B(-P) T_i - B(P) T_{i+1}); from (i+1,j): coef*(B(P) T_{i+1} - B(-P) T_i)
    ip = np.roll(np.arange(nx), -1)
    diag += coef1 * Bm
    diag[ip, :] += coef1 * Bp
    for (src, dst, val) in ((np.arange(nx), ip, -coef1 * Bp), (ip, np.arange(nx), -coef1 * Bm)):
        S = np.broadcast_to(src[:, None], (nx, ny))
        Dd = np.broadcast_to(dst[:, None], (nx, ny))
        jj = np.broadcast_to(np.arange(ny)[None, :], (nx, ny))
        I_list.append(idx[S, jj].ravel())
        J_list.append(idx[Dd, jj].ravel())
        V_list.append(val.ravel())

    # y2 faces: between (i, j) and (i, j+1), j = 0..ny-2; flux U2[:, j+1]
    coef2 = D2 * w1[:, None] / h2[None, :]          # (nx, ny-1)
    P2 = U2[:, 1:ny] / coef2
    Bp2, Bm2 = bernoulli(P2), bernoulli(-P2)
    diag[:, :-1] += coef2 * Bm2
    diag[:, 1:] += coef2 * Bp2
    ii = np.broadcast_to(np.arange(nx)[:, None], (nx, ny - 1))
    jl = np.broadcast_to(np.arange(ny - 1)[None, :], (nx, ny - 1))
    I_list += [idx[ii, jl].ravel(), idx[ii, jl + 1].ravel()]
    J_list += [idx[ii, jl + 1].ravel(), idx[ii, jl].ravel()]
    V_list += [(-coef2 * Bp2).ravel(), (-coef2 * Bm2).ravel()]

    I = np.concatenate(I_list)
    J = np.concatenate(J_list)
    V = np.concatenate(V_list)
    keep = (I >= 0) & (J >= 0)
    ud = idx[:, j0:j1].ravel()
    I = np.concatenate([I[keep], ud])
    J = np.concatenate([J[keep], ud])
    V = np.concatenate([V[keep], diag[:, j0:j1].ravel()])
    n = nx * nr
    M = sp.csr_matrix((V, (I, J)), shape=(n, n))
    vol = np.outer(w1, w2)[:, j0:j1].ravel()
    rhs = problem.source * vol
    res = resolution_report(problem, grid)
    return LinearSystem(M, rhs, grid, rows_j, res["underresolved"], res)


# --------------------------------------------------------------------------
# solve

@dataclass
class SolveResult:
    field: np.ndarray      # (nx, ny) nodal values, Dirichlet nodes included
    grid: Grid
    norm_inf: float
    norm_1: float
    norm_2: float
    iterations: int
    residual: float
    underresolved: bool
    problem: CellProblem | None = None
    resolution: dict = field(default_factory=dict)
    tolerance: float = 0.0

    def interpolator(self):
        """Bilinear interpolant of T, periodic in y1."""
        g = self.grid
        y1 = np.concatenate([[g.y1[-1] - g.period], g.y1, [g.y1[0] + g.period]])
        T = np.concatenate([self.field[-1:], self.field, self.field[:1]], axis=0)
        return RegularGridInterpolator((y1, g.y2), T, method="linear")

    def at(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, float)).copy()
        p[:, 0] = np.mod(p[:, 0], self.grid.period)
        return self.interpolator()(p)


def norms(result_or_field, q, grid: Grid | None = None) -> float:
    """Area-normalised L^q norm by trapezoid (control-volume) quadrature.

    ``q = np.inf`` gives the maximum of ``|T|``.
    """
    if isinstance(result_or_field, SolveResult):
        T, grid = result_or_field.field, result_or_field.grid
    else:
        T = np.asarray(result_or_field, float)
    if q == np.inf or q == "inf":
        return float(np.max(np.abs(T)))
    if grid is None:
        raise ValueError("a grid is needed for finite q")
    w = grid.weights()
    q = float(q)
    return float((np.sum(np.abs(T) ** q * w) / np.sum(w)) ** (1.0 / q))


def residual_floor(M, x, b) -> float:
    """Relative size of the rounding error committed when forming ``b - M x``.

    Relative residuals below this are not measurable in double precision.
    """
    absMx = abs(M) @ np.abs(x)
    return float(8.0 * np.finfo(float).eps * np.linalg.norm(absMx + np.abs(b)) / np.linalg.norm(b))


def _krylov(M, b, rtol, maxiter, drop_tol, x0=None):
    ilu = spla.spilu(M.tocsc(), drop_tol=drop_tol, fill_factor=30)
    prec = spla.LinearOperator(M.shape, ilu.solve)
    bnorm = np.linalg.norm(b)
    x = ilu.solve(b) if x0 is None else x0
    its = 0
    restart = 30
    while its < maxiter:
        res = np.linalg.norm(b - M @ x) / bnorm
        if res <= max(rtol, residual_floor(M, x, b)):
            return x, its, True
        count = [0]
        x, _ = spla.gmres(M, b, x0=x, M=prec, rtol=rtol, atol=0.0, restart=restart, maxiter=1,
                          callback=lambda _: count.__setitem__(0, count[0] + 1),
                          callback_type="pr_norm")
        its += max(count[0], 1)
        if count[0] == 0:
            break
    res = np.linalg.norm(b - M @ x) / bnorm
    return x, its, res <= max(rtol, residual_floor(M, x, b))


def solve(problem: CellProblem, grid: Grid | None = None, rtol: float = 1e-10,
          maxiter: int = 100_000, method: str = "ilu-gmres") -> SolveResult:
    """Solve the cell problem.

    ``method="ilu-gmres"`` runs restarted GMRES preconditioned by an
    incomplete LU factorisation; the drop tolerance is tightened (down to a
    complete factorisation) if the iteration stalls.  ``method="direct"``
    uses a sparse LU.  Convergence means a relative residual below ``rtol``,
    or below the rounding floor of the residual itself when that is larger
    (fine grids with tiny sources); :class:`SolverError` otherwise.
    """
    system = assemble(problem, grid)
    M, b = system.matrix, system.rhs
    bnorm = np.linalg.norm(b)
    iters = 0
    if method == "direct":
        x = spla.splu(M.tocsc()).solve(b)
    elif method == "ilu-gmres":
        x = None
        for drop_tol in (1e-4, 1e-6, 0.0):
            x, it, ok = _krylov(M, b, rtol, min(maxiter - iters, 300), drop_tol, x)
            iters += it
            if ok:
                break
    else:
        raise ValueError(f"unknown method {method!r}")
    residual = float(np.linalg.norm(b - M @ x) / bnorm) if bnorm > 0 else 0.0
    tol = max(rtol, residual_floor(M, x, b))
    if residual > tol:
        raise SolverError("cell problem did not converge", residual, iters)

    g = system.grid
    T = np.zeros((g.nx, g.ny))
    T[:, system.unknown_rows] = x.reshape(g.nx, system.unknown_rows.size)
    return SolveResult(
        field=T, grid=g, norm_inf=norms(T, np.inf), norm_1=norms(T, 1, g), norm_2=norms(T, 2, g),
        iterations=iters, residual=residual, underresolved=system.underresolved,
        problem=problem, resolution=system.resolution, tolerance=tol,
    )


# --------------------------------------------------------------------------
# export

_MAGIC = b"RSGRID1\x00"


def write_binary(result: SolveResult, path) -> None:
    """Self-describing binary dump.

    Layout (little endian): 8-byte magic ``RSGRID1\\0``; int64 ``nx, ny``;
    float64 ``epsilon, A, alpha``; int64 flags (bit 0: bottom Dirichlet);
    float64 ``y1[nx]``, ``y2[ny]``; float64 ``T`` row-major ``(nx, ny)``.
    """
    pr = result.problem
    eps = pr.epsilon if pr else float("nan")
    A = pr.A if pr else float("nan")
    alpha = pr.handle.alpha if pr else float("nan")
    flags = int(pr is not None and pr.bc_bottom is BC.DIRICHLET)
    g = result.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqdddq", g.nx, g.ny, eps, A, alpha, flags))
        fh.write(np.ascontiguousarray(g.y1, "<f8").tobytes())
        fh.write(np.ascontiguousarray(g.y2, "<f8").tobytes())
        fh.write(np.ascontiguousarray(result.field, "<f8").tobytes())


def read_binary(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a grid file")
        nx, ny, eps, A, alpha, flags = struct.unpack("<qqdddq", fh.read(48))
        y1 = np.frombuffer(fh.read(8 * nx), "<f8")
        y2 = np.frombuffer(fh.read(8 * ny), "<f8")
        T = np.frombuffer(fh.read(8 * nx * ny), "<f8").reshape(nx, ny)
    return {"nx": nx, "ny": ny, "epsilon": eps, "A": A, "alpha": alpha,
            "bc_bottom": BC.DIRICHLET if flags & 1 else BC.NEUMANN, "y1": y1, "y2": y2, "T": T}


def write_csv(result: SolveResult, path) -> None:
    g = result.grid
    Y1, Y2 = np.meshgrid(g.y1, g.y2, indexing="ij")
    data = np.column_stack([Y1.ravel(), Y2.ravel(), result.field.ravel()])
    np.savetxt(path, data, delimiter=",", header="y1,y2,T", comments="", fmt="%.10e")
