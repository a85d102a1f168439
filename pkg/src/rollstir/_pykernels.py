"""Pure numpy path simulator (fallback for the compiled kernel).

Scheme, per step of a path sitting at ``z``:

* Step size. In the stirred region ``dt = dt_safety / (A L)`` where ``L`` is
  the local Frobenius norm of the Hessian of the (cut-off) streamfunction,
  floored at the global maximum of that norm for the untruncated field
  (the Hessian vanishes at the edge midpoints, where the flow is fastest),
  so only the steep cut-off ramp gets extra refinement. Halved where
  ``|grad H| < 0.1`` (near saddles). In the stagnant interior of a cut-off
  field the path is a free Brownian motion, and the step is only limited by
  the distance to the ramp: ``dt = (dist / kappa)^2``, floored at the
  typical stirred step ``dt_safety / (A max|grad H|^2)``. Everything is capped
  by ``dt_max`` and the remaining time budget.
* Drift. Euler step along ``A G'(H) perp_grad H``, followed by one Newton
  projection back onto the level of the untruncated ``H`` the step started
  on. Level sets of the cut-off field coincide with those of ``H``, so the
  projection removes the spurious cross-streamline drift plain Euler picks
  up on curved streamlines; the correction is skipped if it would be longer
  than the drift step itself.
* Noise ``(sqrt(dt) n1, e sqrt(dt) n2)``; periodic wrap in ``x1``; specular
  reflection or absorption at the bottom; absorption at the top, with a
  linearly interpolated crossing time and a Brownian-bridge test for walls
  touched between the two samples.

Every path draws one Philox4x32-10 block per step, keyed by the run seed
with counter ``(step, sample)``; two words feed Box-Muller, the other two
the bridge tests.
"""
from __future__ import annotations

import math

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_TWO_M32 = 2.0**-32

STOP_TOP, STOP_BOTTOM, STOP_IN, STOP_OUT, STOP_CENSORED = 1, 2, 3, 4, 5


def philox_block(counters, seed: int):
    """Philox4x32-10 of each row of ``counters`` (shape ``(n, 4)``, uint32)."""
    c = np.asarray(counters, dtype=np.uint32).astype(np.uint64)
    x0, x1, x2, x3 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    k0, k1 = seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF
    for _ in range(10):
        p0 = _M0 * x0
        p1 = _M1 * x2
        x0, x1, x2, x3 = ((p1 >> np.uint64(32)) ^ x1 ^ np.uint64(k0), p1 & _MASK,
                          (p0 >> np.uint64(32)) ^ x3 ^ np.uint64(k1), p0 & _MASK)
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return np.stack([x0, x1, x2, x3], axis=1).astype(np.uint32)


def _standard(x1, x2):
    s1, c1 = np.sin(math.pi * x1), np.cos(math.pi * x1)
    s2, c2 = np.sin(math.pi * x2), np.cos(math.pi * x2)
    H = s1 * s2
    pp = math.pi * math.pi
    return [H, math.pi * c1 * s2, math.pi * s1 * c2, -pp * H, pp * c1 * c2, -pp * H]


def _base(p, x1, x2):
    if p["kind"] == 1:
        from .flow import _patched
        return list(_patched(x1, x2, p["c0"]))
    return _standard(x1, x2)


def _ramp(p, h):
    x = np.abs(h)
    if not p["cutoff"]:
        return np.ones_like(h), np.zeros_like(h)
    a = p["a"]
    t = np.clip((x - a) / a, 0.0, 1.0)
    g1 = 1.0 - t * t * (3.0 - 2.0 * t)
    g2 = np.where((x > a) & (x < 2 * a), -6.0 * t * (1.0 - t) / a, 0.0) * np.sign(h)
    return g1, g2


def _level_stop(p, h):
    x = np.abs(h)
    out = np.zeros(h.shape, dtype=np.int32)
    if p["level_out"] > 0.0:
        out[x >= p["level_out"]] = STOP_OUT
    if p["level_in"] >= 0.0:
        out[x <= p["level_in"]] = STOP_IN
    return out


def simulate(params: dict, z, t, steps, sample_ids, seed: int):
    """Vectorised twin of the compiled ``simulate``; same in-place contract."""
    p = params
    n = z.shape[0]
    kinds = _level_stop(p, _base(p, z[:, 0], z[:, 1])[0])
    taken = np.zeros(n, dtype=np.int64)
    ids = np.asarray(sample_ids, dtype=np.uint64)
    active = np.flatnonzero(kinds == 0)
    amp, e, height = p["amp"], p["e"], p["height"]
    while active.size:
        y1, y2, tt = z[active, 0], z[active, 1], t[active]
        over = (tt >= p["max_time"]) | (taken[active] >= p["max_steps"])
        if over.any():
            kinds[active[over]] = STOP_CENSORED
            active = active[~over]
            continue
        d = _base(p, y1, y2)
        h0 = d[0]
        g1, g2 = _ramp(p, h0)
        gnorm = np.hypot(d[1], d[2])
        dt = np.full(active.size, p["dt_max"])
        stirred = (g1 > 0.0) & (amp > 0.0)
        if amp > 0.0:
            h11 = g2 * d[1] * d[1] + g1 * d[3]
            h12 = g2 * d[1] * d[2] + g1 * d[4]
            h22 = g2 * d[2] * d[2] + g1 * d[5]
            lip = np.maximum(np.sqrt(h11 * h11 + 2.0 * h12 * h12 + h22 * h22), p["lip_floor"])
            local = p["dt_safety"] / (amp * lip)
            local = np.where(gnorm < 0.1, 0.5 * local, local)
            dt = np.where(stirred, local, dt)
            if p["cutoff"]:
                dist = (np.abs(h0) - 2.0 * p["a"]) / p["grad_max"]
                floor = p["dt_safety"] / (amp * p["grad_max"] ** 2)
                free = np.maximum(np.minimum(dt, (dist / p["kappa"]) ** 2), floor)
                dt = np.where(stirred, dt, free)
        dt = np.minimum(dt, p["dt_max"])
        dt = np.where(tt + dt > p["max_time"], p["max_time"] - tt, dt)
        spent = dt <= 0.0
        if spent.any():
            kinds[active[spent]] = STOP_CENSORED
            keep = ~spent
            active, y1, y2, tt, dt, h0, g1, d, stirred = (
                active[keep], y1[keep], y2[keep], tt[keep], dt[keep], h0[keep], g1[keep],
                [c[keep] for c in d], stirred[keep])

        st = steps[active].astype(np.uint64)
        ctr = np.stack([st & _MASK, st >> np.uint64(32), ids[active] & _MASK,
                        ids[active] >> np.uint64(32)], axis=1).astype(np.uint32)
        rnd = philox_block(ctr, seed).astype(np.float64)
        steps[active] += 1
        taken[active] += 1

        v1 = np.where(stirred, amp * g1 * d[2], 0.0)
        v2 = np.where(stirred, -amp * g1 * d[1], 0.0)
        z1 = y1 + v1 * dt
        z2 = y2 + v2 * dt
        if p["project"]:
            dz = _base(p, z1, z2)
            sq = dz[1] * dz[1] + dz[2] * dz[2]
            with np.errstate(divide="ignore", invalid="ignore"):
                corr = np.where(sq > 0.0, (h0 - dz[0]) / sq, 0.0)
            c1, c2 = corr * dz[1], corr * dz[2]
            ok = stirred & (sq > 0.0) & (c1 * c1 + c2 * c2 <= (v1 * v1 + v2 * v2) * dt * dt)
            z1 = np.where(ok, z1 + c1, z1)
            z2 = np.where(ok, z2 + c2, z2)
        y2d = z2

        r = np.sqrt(-2.0 * np.log((rnd[:, 0] + 0.5) * _TWO_M32))
        u = 2.0 * math.pi * (rnd[:, 1] + 0.5) * _TWO_M32
        sq = np.sqrt(dt)
        y1n = z1 + sq * (r * np.cos(u))
        y1n = y1n - 2.0 * np.floor(0.5 * y1n)
        y2n = z2 + e * sq * (r * np.sin(u))

        stop = np.zeros(active.size, dtype=np.int32)
        tn = tt + dt
        top = y2n >= height
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(y2n > y2d, (height - y2d) / (y2n - y2d), 1.0)
        tn = np.where(top, tt + np.maximum(frac, 0.0) * dt, tn)
        stop[top] = STOP_TOP
        y2n = np.where(top, height, y2n)
        low = (y2n <= 0.0) & ~top
        if p["absorb_bottom"]:
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(y2n < y2d, y2d / (y2d - y2n), 1.0)
            tn = np.where(low, tt + np.maximum(frac, 0.0) * dt, tn)
            stop[low] = STOP_BOTTOM
            y2n = np.where(low, 0.0, y2n)
        else:
            y2n = np.where(low, -y2n, y2n)
        if p.get("bridge", 1) and e > 0.0:
            inside = stop == 0
            gap = height - y2d
            with np.errstate(over="ignore", invalid="ignore"):
                ptop = np.exp(-2.0 * gap * (height - y2n) / (e * e * dt))
            hit = inside & (gap > 0.0) & (ptop > (rnd[:, 2] + 0.5) * _TWO_M32)
            tn = np.where(hit, tt + 0.5 * dt, tn)
            y2n = np.where(hit, height, y2n)
            stop[hit] = STOP_TOP
            if p["absorb_bottom"]:
                inside = stop == 0
                with np.errstate(over="ignore", invalid="ignore"):
                    pbot = np.exp(-2.0 * y2d * y2n / (e * e * dt))
                hit = inside & (y2d > 0.0) & (pbot > (rnd[:, 3] + 0.5) * _TWO_M32)
                tn = np.where(hit, tt + 0.5 * dt, tn)
                y2n = np.where(hit, 0.0, y2n)
                stop[hit] = STOP_BOTTOM
        inside = stop == 0
        if inside.any():
            hb = _base(p, y1n[inside], y2n[inside])[0]
            stop[inside] = _level_stop(p, hb)
        z[active, 0] = y1n
        z[active, 1] = y2n
        t[active] = tn
        kinds[active] = stop
        active = active[stop == 0]
    return kinds
