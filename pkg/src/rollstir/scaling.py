"""Peclet numbers, amplitude sweeps and power-law fits.

Physical setting: rolls of width ``eps`` and height ``eps**alpha`` fill the
strip ``(0, 2) x (0, 1)`` (one horizontal period of the cell problem when
``eps = 1``). The physical velocity is

    v = A / eps**(1 - alpha) * perp_grad(H(x1 / eps, x2 / eps**alpha)),

and the Peclet number is its L^p norm over that strip,

    Pe^p = eps**alpha * integral over (0, 2) x (0, L) of |v|^p dy,

written in cell coordinates ``y`` (``L = eps**-alpha``). The temperature is
not rescaled by the change of variables, so the physical ``||T||`` equals
the cell-problem norm.
"""
from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import pde, sde
from .flow import VelocityFieldHandle, derivatives, make_handle


class FitModel(str, enum.Enum):
    PURE_POWER = "pure_power"
    POWER_WITH_LOG = "power_with_log"


#: Power of ``|ln Pe|`` divided out by :attr:`FitModel.POWER_WITH_LOG`.
LOG_POWER = 13


class FitError(ValueError):
    """Raised when a sweep table cannot support a slope fit."""


def theory_exponent(p: float) -> float:
    """Slope ``-2p / (4p - 1)`` of ``log ||T||_inf`` against ``log Pe``."""
    if math.isinf(p):
        return -0.5
    return -2.0 * p / (4.0 * p - 1.0)


def predicted_alpha_exponent(alpha: float) -> float:
    """Predicted slope for rolls of height ``eps**alpha`` at ``A = eps**-2``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha < 1:
        return -0.5 + 3.0 * alpha / (8.0 - 2.0 * alpha)
    return -0.5 + (4.0 * alpha - 1.0) / 6.0


# --------------------------------------------------------------------------
# Peclet number

def peclet(handle: VelocityFieldHandle, p: float, resolution: int = 1024) -> float:
    """L^p norm of the physical velocity over the strip ``(0, 2) x (0, 1)``.

    Midpoint rule on the quarter cell ``(0, 1/2)^2``; every built-in
    streamfunction has ``|v|`` even about the cell mid-lines, so the quarter
    cell times ``8 L`` covers the period. ``p = inf`` returns ``max |v|``
    (sampled on the same grid, plus the edge midpoints where the maximum of
    the sin-product sits).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if handle.amplitude == 0:
        return 0.0
    eps, alpha = handle.epsilon, handle.alpha
    s = (np.arange(resolution) + 0.5) / (2 * resolution)
    x1, x2 = np.meshgrid(s, s, indexing="ij")
    if math.isinf(p):
        x1 = np.append(x1.ravel(), [0.0, 0.5])
        x2 = np.append(x2.ravel(), [0.5, 0.0])
    d = derivatives(handle.spec, x1, x2)
    pref = handle.amplitude / eps ** (1.0 - alpha)
    speed = np.hypot(pref * d[2] / eps**alpha, pref * d[1] / eps)
    if math.isinf(p):
        return float(speed.max())
    cells = 8.0 * handle.height
    integral = cells * float(np.mean(speed**p)) * 0.25
    return float((eps**alpha * integral) ** (1.0 / p))


def amplitude_for_pe(epsilon: float, p: float, pe_target: float) -> float:
    """Amplitude with ``A^(1 - 1/(2p)) / eps^2 = Pe``."""
    if epsilon <= 0 or p < 1 or pe_target <= 0:
        raise ValueError("epsilon, p and pe_target must be positive (p >= 1)")
    base = pe_target * epsilon**2
    if math.isinf(p):
        return base
    return base ** (2.0 * p / (2.0 * p - 1.0))


# --------------------------------------------------------------------------
# sweeps

@dataclass
class SweepConfig:
    """Parameters of an amplitude sweep ``A = eps^-gamma``.

    ``nx`` is the horizontal node count; a strip of ``n`` stacked rolls gets
    ``max(ny, ny_per_roll * n)`` vertical nodes. ``pe_resolution`` is the per-axis point count of
    the Peclet quadrature on a quarter cell.
    """

    p: float = 2.0
    gamma: float = 2.0
    alpha: float = 0.0
    epsilons: tuple = (1 / 8, 1 / 12, 1 / 16, 1 / 24, 1 / 32, 1 / 48, 1 / 64)
    N: float = 1.0
    kind: str = "cutoff"
    base: str = "standard"
    c0: float = 0.05
    bc_bottom: str = "neumann"
    nx: int = 512
    ny: int = 512
    ny_per_roll: int = 96
    rtol: float = 1e-10
    solver: str = "ilu-gmres"
    pe_resolution: int = 1024
    sde_check: bool = False
    sde_paths: int = 2000
    sde_seed: int = 20240607
    dt_safety: float = 0.1
    workers: int = 1
    run_label: str = "sweep"

    def __post_init__(self):
        self.epsilons = tuple(float(e) for e in self.epsilons)
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.epsilons:
            raise ValueError("at least one epsilon is needed")
        if any(not 0.0 < e <= 1.0 for e in self.epsilons):
            raise ValueError("every epsilon must lie in (0, 1]")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def handle(self, epsilon: float) -> VelocityFieldHandle:
        return make_handle(self.kind, epsilon, epsilon ** (-self.gamma), N=self.N, c0=self.c0,
                           alpha=self.alpha, base=self.base)

    def problem(self, epsilon: float) -> pde.CellProblem:
        h = self.handle(epsilon)
        rolls = max(int(round(h.height)), 1)
        return pde.CellProblem(h, nx=self.nx, ny=max(self.ny, self.ny_per_roll * rolls), bc_bottom=self.bc_bottom)


CSV_FIELDS = ("epsilon", "A", "pe", "norm_inf", "norm_1", "layer_width", "underresolved",
              "sde_check")


@dataclass
class SweepRow:
    """One solved cell problem of a sweep.

    ``sde_check`` is the relative deviation ``(MC - PDE) / PDE`` of the
    temperature at the cell centre, NaN when no Monte Carlo run was made;
    ``sde_ok`` says whether it is within three standard errors plus 2%.
    """

    epsilon: float
    A: float
    pe: float
    norm_inf: float
    norm_1: float
    layer_width: float
    underresolved: bool = False
    sde_check: float = math.nan
    sde_ok: bool | None = None
    seconds: float = 0.0
    iterations: int = 0
    min_value: float = 0.0

    def __post_init__(self):
        if not self.pe > 0:
            raise ValueError("pe must be positive")
        if self.norm_inf < 0 or self.norm_1 < 0:
            raise ValueError("norms are non-negative")

    def csv_line(self) -> str:
        vals = [repr(float(getattr(self, k))) if k != "underresolved" else str(int(self.underresolved))
                for k in CSV_FIELDS]
        return ",".join(vals)


def _solve_row(config: SweepConfig, epsilon: float, check: bool) -> SweepRow:
    start = time.perf_counter()
    prob = config.problem(epsilon)
    handle = prob.handle
    res = pde.solve(prob, rtol=config.rtol, method=config.solver)
    row = SweepRow(
        epsilon=epsilon, A=handle.amplitude, pe=peclet(handle, config.p, config.pe_resolution),
        norm_inf=res.norm_inf, norm_1=res.norm_1, layer_width=epsilon / math.sqrt(handle.amplitude),
        underresolved=res.underresolved, iterations=res.iterations,
        min_value=float(res.field.min()),
    )
    if check:
        centre = (0.5, 0.5 * prob.height)
        cfg = sde.SdeConfig(handle, dt_safety=config.dt_safety, n_samples=config.sde_paths,
                            rng_seed=config.sde_seed, bc_bottom=config.bc_bottom)
        mc, se, _ = sde.temperature(centre, cfg)
        ref = float(res.at([centre])[0])
        row.sde_check = (mc - ref) / ref
        row.sde_ok = bool(abs(mc - ref) <= 3 * se + 0.02 * ref)
    row.seconds = time.perf_counter() - start
    return row


def run_sweep(config: SweepConfig) -> list[SweepRow]:
    """Solve the cell problem for every epsilon; rows sorted by decreasing eps.

    With ``sde_check`` the coarsest row is also estimated by Monte Carlo at
    the cell centre. Rows run on ``config.workers`` threads; results do not
    depend on the worker count.
    """
    jobs = [(e, config.sde_check and i == 0) for i, e in enumerate(config.epsilons)]
    if config.workers == 1:
        rows = [_solve_row(config, e, c) for e, c in jobs]
    else:
        with ThreadPoolExecutor(config.workers) as pool:
            rows = list(pool.map(lambda job: _solve_row(config, *job), jobs))
    return sorted(rows, key=lambda r: -r.epsilon)


def width_ratio(row: SweepRow, p: float) -> float:
    """``eps Pe^(p/(4p-1)) / |ln Pe|^(1/p)``, bounded along an optimal sweep."""
    q = 0.25 if math.isinf(p) else p / (4.0 * p - 1.0)
    r = 0.0 if math.isinf(p) else 1.0 / p
    return row.epsilon * row.pe**q / abs(math.log(row.pe)) ** r


@dataclass(frozen=True)
class Fit:
    slope: float
    stderr: float
    residual: float
    intercept: float
    model: FitModel
    n: int
    decades: float

    def predict(self, pe) -> np.ndarray:
        """Fitted ``||T||_inf`` at ``pe`` (log factor restored)."""
        lp = np.log(np.asarray(pe, float))
        out = self.intercept + self.slope * lp
        if self.model is FitModel.POWER_WITH_LOG:
            out = out + LOG_POWER * np.log(np.abs(lp))
        return np.exp(out)


def fit_exponent(table, model=FitModel.PURE_POWER, min_decades: float = 1.0) -> Fit:
    """Least-squares slope of ``log ||T||_inf`` against ``log Pe``.

    ``table`` is a sequence of :class:`SweepRow` (under-resolved rows are
    skipped) or of ``(pe, norm_inf)`` pairs. ``POWER_WITH_LOG`` divides
    ``||T||_inf`` by ``|ln Pe|^13`` before fitting. ``residual`` is the RMS
    of the log-residuals.

    Raises
    ------
    FitError
        Fewer than four usable rows, or Pe spanning less than
        ``min_decades`` decades.
    """
    model = FitModel(model)
    pts = []
    for row in table:
        if isinstance(row, SweepRow):
            if row.underresolved:
                continue
            pts.append((row.pe, row.norm_inf))
        else:
            pts.append(tuple(row))
    if len(pts) < 4:
        raise FitError(f"need at least 4 valid rows, got {len(pts)}")
    pe, T = np.array(pts, float).T
    if np.any(pe <= 1.0) or np.any(T <= 0):
        raise FitError("Pe must exceed 1 and norms must be positive")
    decades = float(np.log10(pe.max() / pe.min()))
    if decades < min_decades:
        raise FitError(f"Pe spans {decades:.2f} decades, need {min_decades}")
    x = np.log(pe)
    y = np.log(T)
    if model is FitModel.POWER_WITH_LOG:
        y = y - LOG_POWER * np.log(np.abs(x))
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    dof = len(x) - 2
    s2 = float(r @ r) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return Fit(slope=float(coef[1]), stderr=float(math.sqrt(cov[1, 1])),
               residual=float(math.sqrt(np.mean(r * r))), intercept=float(coef[0]),
               model=model, n=len(x), decades=decades)


# --------------------------------------------------------------------------
# rolls of height eps**alpha

def alpha_epsilons(alpha: float, count: int = 4, start: int = 2) -> tuple:
    """Widths ``eps = 1/k^2`` (``k = start, ...``) if alpha is 0, 1/2 or 1.

    These make the roll count ``eps**-alpha`` a whole number for all three
    heights, so every alpha is run on the same widths.
    """
    eps = tuple(1.0 / k**2 for k in range(start, start + count))
    for e in eps:
        n = e ** (-alpha)
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"eps = {e} gives a non-integer roll count for alpha = {alpha}")
    return eps


@dataclass
class AlphaStudy:
    """Per-alpha sweeps, fits and the comparison at a common Peclet number."""

    alphas: tuple
    rows: dict
    fits: dict
    predicted: dict
    pe_match: float
    at_match: dict

    @property
    def best_alpha(self) -> float:
        return min(self.at_match, key=self.at_match.get)

    def table(self) -> list[dict]:
        return [{"alpha": a, "predicted": self.predicted[a], "fitted": self.fits[a].slope,
                 "stderr": self.fits[a].stderr, "norm_inf_at_match": self.at_match[a]}
                for a in self.alphas]


def alternate_scaling_study(alphas, config: SweepConfig | None = None, kind: str = "standard",
                            epsilons=None) -> AlphaStudy:
    """Compare rolls of width ``eps`` and height ``eps**alpha`` at ``A = eps^-2``.

    Each alpha is swept over ``epsilons`` (default :func:`alpha_epsilons`)
    with cold walls top and bottom and the untruncated streamfunction
    ``kind``; Pe is the L^2 norm (``config.p`` is overridden). The fitted
    power laws are compared at the geometric centre of the Pe range shared
    by all alphas.
    """
    alphas = tuple(float(a) for a in alphas)
    if 0.0 not in alphas:
        raise ValueError("the alpha list must include 0")
    base = config or SweepConfig(ny=384, nx=384)
    rows, fits = {}, {}
    for a in alphas:
        eps = tuple(epsilons) if epsilons is not None else alpha_epsilons(a)
        cfg = SweepConfig(**{**{f.name: getattr(base, f.name) for f in fields(SweepConfig)},
                             "alpha": a, "gamma": 2.0, "p": 2.0, "kind": kind,
                             "bc_bottom": "dirichlet", "epsilons": eps, "sde_check": False})
        rows[a] = run_sweep(cfg)
        fits[a] = fit_exponent(rows[a])
    lo = max(min(r.pe for r in rows[a]) for a in alphas)
    hi = min(max(r.pe for r in rows[a]) for a in alphas)
    if lo > hi:
        raise FitError("the Pe ranges of the alphas do not overlap")
    pe_match = math.sqrt(lo * hi)
    at_match = {a: float(fits[a].predict(pe_match)) for a in alphas}
    return AlphaStudy(alphas=alphas, rows=rows, fits=fits,
                      predicted={a: predicted_alpha_exponent(a) for a in alphas},
                      pe_match=pe_match, at_match=at_match)


# --------------------------------------------------------------------------
# output

def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_FIELDS) + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")


def read_results_csv(path) -> list[SweepRow]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != CSV_FIELDS:
            raise ValueError(f"unexpected header {header}")
        out = []
        for line in fh:
            vals = dict(zip(header, line.strip().split(",")))
            kw = {k: float(v) for k, v in vals.items() if k != "underresolved"}
            out.append(SweepRow(underresolved=bool(int(vals["underresolved"])), **kw))
    return out


def fit_summary(fit: Fit, p: float, prefix: str = "") -> dict:
    return {f"{prefix}slope": fit.slope, f"{prefix}stderr": fit.stderr,
            f"{prefix}residual": fit.residual, f"{prefix}intercept": fit.intercept,
            f"{prefix}model": fit.model.value, f"{prefix}rows": fit.n,
            f"{prefix}pe_decades": fit.decades, f"{prefix}reference_slope": theory_exponent(p)}


def gnuplot_script(csv_name: str, fit: Fit | None, p: float) -> str:
    """Plot log ||T||_inf against log Pe with the reference slope."""
    ref = theory_exponent(p)
    lines = [
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'Pe'",
        "set ylabel '||T||_inf'",
        "set key left bottom",
        "set terminal pngcairo size 800,600",
        "set output 'scaling.png'",
    ]
    c = fit.intercept if fit is not None else 0.0
    lines.append(f"ref(x) = exp({c!r}) * x**({ref!r})")
    plot = f"plot '{csv_name}' using 3:4 skip 1 with linespoints title 'measured', " \
           f"ref(x) title 'slope {ref:.4f}'"
    if fit is not None:
        lines.append(f"fit_(x) = exp({fit.intercept!r}) * x**({fit.slope!r})")
        plot += f", fit_(x) title 'fit {fit.slope:.4f}'"
    lines.append(plot)
    return "\n".join(lines) + "\n"


def row_dict(row: SweepRow) -> dict:
    return asdict(row)
