"""Monte Carlo exit and hitting times for the stirred diffusion.

The process lives in cell coordinates,

    dZ = A v(Z) dt + diag(1, e) dB,    v = perp_grad H,

on the strip ``[0, 2) x [0, L]`` (periodic in ``x1``), with ``e`` and ``L``
taken from the velocity handle. By Dynkin's formula the cell temperature is
``T(z) = eps^2 E^z[tau]`` where ``tau`` is the exit time through the cold
wall(s).

Layers ``B_c = {|H| < c / sqrt(A)}`` are measured with the untruncated
streamfunction, so they keep their meaning for cut-off fields whose
plateau sits below ``c / sqrt(A)``.

Every path ``i`` draws its random numbers from a Philox stream keyed by
``(rng_seed, i)``; statistics are therefore identical for any number of
workers and any chunking.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from . import kernels
from .flow import HamiltonianKind, VelocityFieldHandle, base_derivatives
from .pde import BC

_CHUNK = 512


@dataclass(frozen=True)
class SdeConfig:
    """Numerical settings for path simulation.

    ``max_time=None`` caps every path at 50 times the diffusion-only bound
    ``L^2 / e^2`` on the mean exit time; stirring can only shorten the mean,
    so the cap sits far in the tail.
    """

    handle: VelocityFieldHandle
    dt_safety: float = 0.1
    max_time: float | None = None
    rng_seed: int = 20240607
    n_samples: int = 10_000
    bc_bottom: BC = BC.NEUMANN
    dt_max: float = 0.05
    kappa: float = 4.0
    project: bool = True
    workers: int = 1
    max_steps: int = 2**62

    def __post_init__(self):
        object.__setattr__(self, "bc_bottom", BC(self.bc_bottom))
        if not 0.0 < self.dt_safety <= 1.0:
            raise ValueError("dt_safety must lie in (0, 1]")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def epsilon(self) -> float:
        return self.handle.epsilon

    @property
    def A(self) -> float:
        return self.handle.amplitude

    @property
    def delta(self) -> float:
        """Boundary-layer width ``eps / sqrt(A)``."""
        return self.epsilon / math.sqrt(self.A) if self.A > 0 else math.inf

    @property
    def cap(self) -> float:
        if self.max_time is not None:
            return float(self.max_time)
        e = self.handle.vertical_noise
        return 50.0 * self.handle.height**2 / e**2

    def layer_level(self, c: float) -> float:
        """Streamfunction level ``c / sqrt(A)`` bounding ``B_c``."""
        if self.A <= 0:
            raise ValueError("boundary layers need A > 0")
        return c / math.sqrt(self.A)


class StopKind(enum.IntEnum):
    EXIT_TOP = kernels.STOP_TOP
    EXIT_BOTTOM = kernels.STOP_BOTTOM
    HIT_INNER = kernels.STOP_IN
    HIT_OUTER = kernels.STOP_OUT
    CENSORED = kernels.STOP_CENSORED


@dataclass
class ExitStats:
    """Summary of a sample of stopping times.

    ``std_error`` is the sample standard deviation over ``sqrt(n)``.
    Censored paths enter the mean at the cap, so a large ``censored`` count
    biases the mean low; ``flagged`` is set when more than 1% were censored.
    """

    mean: float
    std_error: float
    n: int
    censored: int
    histogram: tuple | None = None
    kinds: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def flagged(self) -> bool:
        return self.censored > 0.01 * self.n

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.mean - z * self.std_error, self.mean + z * self.std_error

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n": self.n,
                "censored": self.censored, "flagged": self.flagged,
                **{f"stop_{k}": v for k, v in self.kinds.items()}}


@dataclass(frozen=True)
class LayerEvent:
    """One stopping event along a path; ``layer`` is set for layer hits."""

    kind: str
    time: float
    layer: float | None = None

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("event times are non-negative")


@dataclass
class PassProbability:
    """Per-pass exit probability with its Wilson interval."""

    p_hat: float
    ci_low: float
    ci_high: float
    trials: int
    successes: int
    per_point: np.ndarray
    epsilon: float

    @property
    def scaled(self) -> float:
        """``p_hat / eps``."""
        return self.p_hat / self.epsilon


# --------------------------------------------------------------------------
# kernel plumbing

@lru_cache(maxsize=32)
def _field_bounds(spec) -> tuple[float, float]:
    """Upper bounds of ``|grad H|`` and of the Hessian norm of the untruncated field."""
    if not spec.uses_patch:
        return math.pi, math.sqrt(2.0) * math.pi**2
    x1, x2 = np.meshgrid(np.linspace(0, 2, 1601), np.linspace(0, 1, 801), indexing="ij")
    d = base_derivatives(spec, x1, x2)
    hess = np.sqrt(d[3] ** 2 + 2 * d[4] ** 2 + d[5] ** 2)
    return 1.05 * float(np.hypot(d[1], d[2]).max()), float(hess.max())


def kernel_params(config: SdeConfig, level_in: float = -1.0, level_out: float = 0.0) -> dict:
    """Flatten ``config`` into the plain dictionary the kernels consume."""
    h = config.handle
    spec = h.spec
    return {
        "kind": 1 if spec.uses_patch else 0,
        "cutoff": int(spec.kind is HamiltonianKind.CUTOFF),
        "a": spec.plateau_start if spec.kind is HamiltonianKind.CUTOFF else math.inf,
        "c0": spec.c0,
        "amp": float(h.amplitude),
        "e": float(h.vertical_noise),
        "height": float(h.height),
        "absorb_bottom": int(config.bc_bottom is BC.DIRICHLET),
        "dt_safety": float(config.dt_safety),
        "dt_max": float(config.dt_max),
        "kappa": float(config.kappa),
        "grad_max": _field_bounds(spec)[0],
        "lip_floor": _field_bounds(spec)[1],
        "level_in": float(level_in),
        "level_out": float(level_out),
        "max_time": float(config.cap),
        "max_steps": int(config.max_steps),
        "project": int(config.project),
    }


def _run(params: dict, z, t, steps, ids, seed: int, workers: int):
    """Advance all paths to their next stop, chunked over a thread pool."""
    n = z.shape[0]
    kinds = np.empty(n, dtype=np.int32)
    bounds = [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]

    def job(b):
        s, e = b
        zz, tt, ss = z[s:e].copy(), t[s:e].copy(), steps[s:e].copy()
        k = kernels.simulate(params, zz, tt, ss, np.ascontiguousarray(ids[s:e]), seed)
        return zz, tt, ss, k

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, bounds))
    else:
        results = [job(b) for b in bounds]
    for (s, e), (zz, tt, ss, k) in zip(bounds, results):
        z[s:e], t[s:e], steps[s:e], kinds[s:e] = zz, tt, ss, k
    return kinds


def _start(z0, n):
    z0 = np.asarray(z0, dtype=float)
    if z0.shape == (2,):
        z0 = np.broadcast_to(z0, (n, 2))
    if z0.shape != (n, 2):
        raise ValueError("z0 must be a point or an (n, 2) array")
    return np.ascontiguousarray(z0, dtype=float).copy()


def simulate_paths(z0, config: SdeConfig, level_in: float = -1.0, level_out: float = 0.0,
                   first_sample: int = 0, n: int | None = None):
    """Run ``n`` paths (default ``config.n_samples``) from ``z0`` to their first stop.

    Returns ``(times, kinds, end_points, steps)``. Paths are labelled
    ``first_sample, first_sample + 1, ...`` for the random streams.
    """
    n = config.n_samples if n is None else n
    z = _start(z0, n)
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    ids = np.arange(first_sample, first_sample + n, dtype=np.uint64)
    kinds = _run(kernel_params(config, level_in, level_out), z, t, steps, ids,
                 config.rng_seed, config.workers)
    return t, kinds, z, steps


def summarize(times, kinds, bins: int | None = None, keep_samples: bool = False) -> ExitStats:
    times = np.asarray(times, dtype=float)
    n = times.size
    mean = float(np.mean(times))
    se = float(np.std(times, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    counts = {StopKind(k).name.lower(): int(np.count_nonzero(kinds == k))
              for k in np.unique(kinds)}
    hist = None
    if bins:
        c, edges = np.histogram(times, bins=bins)
        hist = (c, edges)
    return ExitStats(mean=mean, std_error=se, n=n,
                     censored=int(np.count_nonzero(kinds == StopKind.CENSORED)),
                     histogram=hist, kinds=counts, samples=times if keep_samples else None)


# --------------------------------------------------------------------------
# public estimators

def step(state, config: SdeConfig, dt: float, noise=(0.0, 0.0)) -> np.ndarray:
    """One plain Euler-Maruyama step with given standard normals ``noise``.

    Applies the periodic wrap and the bottom reflection; returns the new
    point, with ``x2`` clipped to the wall when it would leave through an
    absorbing boundary. Intended for inspection and tests; the estimators
    use the compiled simulator.
    """
    h = config.handle
    y = np.asarray(state, dtype=float)
    d = _field(h, y)
    A = h.amplitude
    drift = np.array([A * d[2], -A * d[1]])
    out = y + drift * dt + np.sqrt(dt) * np.array([1.0, h.vertical_noise]) * np.asarray(noise)
    out[0] = out[0] - 2.0 * math.floor(out[0] / 2.0)
    if out[1] < 0.0:
        out[1] = 0.0 if config.bc_bottom is BC.DIRICHLET else -out[1]
    out[1] = min(out[1], h.height)
    return out


def _field(handle, y):
    from .flow import derivatives
    return [float(v) for v in derivatives(handle.spec, y[0], y[1])]


def estimate_exit_time(z0, config: SdeConfig, bins: int | None = None,
                       keep_samples: bool = False) -> ExitStats:
    """Statistics of the exit time from ``z0``; ``eps**2 * mean`` estimates ``T(z0)``."""
    t, kinds, _, _ = simulate_paths(z0, config)
    return summarize(t, kinds, bins, keep_samples)


def temperature(z0, config: SdeConfig) -> tuple[float, float, ExitStats]:
    """Monte Carlo estimate of the cell-problem temperature at ``z0``.

    The steady equation ``A v.grad T - 1/2 Lap_e T = eps^2`` is the backward
    equation of the diffusion with drift ``-A v``, not ``+A v``. Every
    built-in field flips sign under a one-cell shift, ``v(y + e1) = -v(y)``,
    so that process started at ``z0`` is the shift of the simulated
    (``+A v``) process started at ``z0 + e1``. Hence
    ``T(z0) = eps^2 E^{z0 + e1}[tau]``; the two coincide at cell centres.

    Returns ``(T, standard error, exit statistics from z0 + e1)``.
    """
    z = np.array(z0, dtype=float)
    z[..., 0] = np.mod(z[..., 0] + 1.0, 2.0)
    st = estimate_exit_time(z, config)
    e2 = config.epsilon**2
    return e2 * st.mean, e2 * st.std_error, st


def estimate_hitting_time(z0, target_layer: float, config: SdeConfig,
                          outward: bool = False) -> ExitStats:
    """Statistics of the first time ``|H|`` reaches ``target_layer / sqrt(A)``.

    By default the layer is approached from outside: a start already inside
    ``B_alpha`` gives 0. With ``outward=True`` the start must lie inside and
    the time to escape through ``∂B_alpha`` is measured. A path that leaves
    the strip first is stopped there, so the statistic is the hitting time
    capped by the exit time.
    """
    level = config.layer_level(target_layer)
    h0 = abs(float(base_derivatives(config.handle.spec, *np.asarray(z0, float).T)[0]))
    if outward:
        if h0 >= level:
            raise ValueError("outward hitting time needs a start inside the layer")
        t, kinds, _, _ = simulate_paths(z0, config, level_out=level)
    else:
        if h0 <= level:
            n = config.n_samples
            return summarize(np.zeros(n), np.full(n, StopKind.HIT_INNER))
        t, kinds, _, _ = simulate_paths(z0, config, level_in=level)
    return summarize(t, kinds)


def layer_start_points(config: SdeConfig, c: float, n: int = 32) -> np.ndarray:
    """``n`` points on ``∂B_c`` inside the cell ``(0,1)^2``, equally spaced in travel time."""
    from .averaging import trace_contour
    level = config.layer_level(c)
    contour = trace_contour(config.handle.spec, level)
    return contour.resample(n)


def per_pass_exit_probability(config: SdeConfig, inner: float = 1.0, outer: float = 5.0,
                              n_points: int = 32, confidence: float = 0.95) -> PassProbability:
    """Fraction of trials started on ``∂B_inner`` that leave the strip before
    reaching ``∂B_outer``.

    ``config.n_samples`` trials are spread evenly over ``n_points`` start
    points; the pooled fraction is reported with its Wilson interval.
    """
    if config.n_samples < 100:
        raise ValueError("need at least 100 trials for a pass probability")
    pts = layer_start_points(config, inner, n_points)
    per = config.n_samples // n_points
    z0 = np.repeat(pts, per, axis=0)
    _, kinds, _, _ = simulate_paths(z0, config, level_out=config.layer_level(outer), n=z0.shape[0])
    exited = (kinds == StopKind.EXIT_TOP) | (kinds == StopKind.EXIT_BOTTOM)
    k, m = int(exited.sum()), int(exited.size)
    ci = stats.binomtest(k, m).proportion_ci(confidence_level=confidence, method="wilson")
    return PassProbability(p_hat=k / m, ci_low=float(ci.low), ci_high=float(ci.high),
                           trials=m, successes=k,
                           per_point=exited.reshape(n_points, per).mean(axis=1),
                           epsilon=config.epsilon)


@dataclass
class CycleRecord:
    events: list
    truncated: bool

    @property
    def passes(self) -> int:
        """Number of visits to ``∂B_inner`` (counting the start) before the exit."""
        return 1 + sum(1 for e in self.events if e.kind == "hit_layer" and e.layer == self._inner)

    _inner: float = 1.0


def _cycles(z0, config: SdeConfig, inner: float, outer: float, max_cycles: int,
            first_sample: int, n: int):
    z = _start(z0, n)
    lin, lout = config.layer_level(inner), config.layer_level(outer)
    h0 = np.abs(base_derivatives(config.handle.spec, z[:, 0], z[:, 1])[0])
    if np.any(h0 >= lout):
        raise ValueError("cycle decomposition starts inside the outer layer")
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    ids = np.arange(first_sample, first_sample + n, dtype=np.uint64)
    events = [[] for _ in range(n)]
    done = np.zeros(n, dtype=bool)
    truncated = np.zeros(n, dtype=bool)
    escape = kernel_params(config, level_out=lout)
    back = kernel_params(config, level_in=lin)
    outward = True
    cycles = 0
    while not done.all():
        idx = np.flatnonzero(~done)
        if cycles >= max_cycles:
            truncated[idx] = True
            break
        zz, tt, ss = z[idx].copy(), t[idx].copy(), steps[idx].copy()
        k = _run(escape if outward else back, zz, tt, ss, ids[idx], config.rng_seed, config.workers)
        z[idx], t[idx], steps[idx] = zz, tt, ss
        for j, i in enumerate(idx):
            kind = StopKind(k[j])
            if kind in (StopKind.EXIT_TOP, StopKind.EXIT_BOTTOM):
                events[i].append(LayerEvent(kind.name.lower(), float(t[i])))
                done[i] = True
            elif kind is StopKind.CENSORED:
                events[i].append(LayerEvent("censored", float(t[i])))
                done[i] = True
                truncated[i] = True
            else:
                events[i].append(LayerEvent("hit_layer", float(t[i]), outer if outward else inner))
        if not outward:
            cycles += 1
        outward = not outward
    return [CycleRecord(ev, bool(tr), inner) for ev, tr in zip(events, truncated)]


def cycle_decomposition(z0, config: SdeConfig, inner: float = 1.0, outer: float = 5.0,
                        max_cycles: int = 10_000, sample: int = 0) -> CycleRecord:
    """Alternating ``∂B_outer`` / ``∂B_inner`` crossings of one path from ``z0`` in ``B_inner``.

    The path is the one labelled ``sample`` in the random streams. Recording
    stops at the exit, at the time cap (``censored`` event), or after
    ``max_cycles`` returns (``truncated``).
    """
    return _cycles(z0, config, inner, outer, max_cycles, sample, 1)[0]


def cycle_statistics(z0, config: SdeConfig, inner: float = 1.0, outer: float = 5.0,
                     max_cycles: int = 10_000) -> dict:
    """Pass counts over ``config.n_samples`` paths; ``1 / mean_passes`` is the
    pass-level exit probability seen by the renewal argument."""
    recs = _cycles(z0, config, inner, outer, max_cycles, 0, config.n_samples)
    passes = np.array([r.passes for r in recs], dtype=float)
    return {"mean_passes": float(passes.mean()),
            "std_error": float(passes.std(ddof=1) / math.sqrt(passes.size)),
            "truncated": int(sum(r.truncated for r in recs)),
            "records": recs}
