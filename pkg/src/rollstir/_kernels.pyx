# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path simulator for the stirred diffusion.

Mirrors :mod:`rollstir._pykernels` step for step; see that module for the
description of the scheme.  Random numbers come from Philox4x32-10 keyed by
the run seed with counter ``(step lo, step hi, sample lo, sample hi)``, so
every path is reproducible on its own.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, log, exp, floor, round, fabs, M_PI
from libc.stdint cimport uint32_t, uint64_t, int64_t, int32_t

cnp.import_array()

cdef uint32_t PH_M0 = 0xD2511F53u
cdef uint32_t PH_M1 = 0xCD9E8D57u
cdef uint32_t PH_W0 = 0x9E3779B9u
cdef uint32_t PH_W1 = 0xBB67AE85u
cdef double TWO_M32 = 2.3283064365386963e-10


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1, uint32_t* out) noexcept nogil:
    cdef uint32_t x0 = c[0], x1 = c[1], x2 = c[2], x3 = c[3]
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        p0 = <uint64_t>PH_M0 * x0
        p1 = <uint64_t>PH_M1 * x2
        x0, x1, x2, x3 = (<uint32_t>(p1 >> 32)) ^ x1 ^ k0, <uint32_t>p1, \
                         (<uint32_t>(p0 >> 32)) ^ x3 ^ k1, <uint32_t>p0
        k0 = k0 + PH_W0
        k1 = k1 + PH_W1
    out[0] = x0
    out[1] = x1
    out[2] = x2
    out[3] = x3


def philox_block(cnp.uint32_t[:, ::1] counters, uint64_t seed):
    """Philox4x32-10 of each counter row under the 64-bit ``seed``."""
    cdef Py_ssize_t i, n = counters.shape[0]
    out = np.empty((n, 4), dtype=np.uint32)
    cdef cnp.uint32_t[:, ::1] o = out
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFu), k1 = <uint32_t>(seed >> 32)
    for i in range(n):
        _philox(&counters[i, 0], k0, k1, &o[i, 0])
    return out


cdef struct Params:
    int kind          # 0 standard, 1 patched
    int cutoff        # 1 if the field is G(H)
    double a          # cut-off plateau start
    double c0
    double amp
    double e          # vertical noise
    double height
    int absorb_bottom
    double dt_safety
    double dt_max
    double kappa
    double grad_max
    double lip_floor
    double level_in
    double level_out
    double max_time
    int64_t max_steps
    int project
    int bridge


cdef inline void _standard(double x1, double x2, double* d) noexcept nogil:
    cdef double s1 = sin(M_PI * x1), c1 = cos(M_PI * x1)
    cdef double s2 = sin(M_PI * x2), c2 = cos(M_PI * x2)
    cdef double pp = M_PI * M_PI
    d[0] = s1 * s2
    d[1] = M_PI * c1 * s2
    d[2] = M_PI * s1 * c2
    d[3] = -pp * d[0]
    d[4] = pp * c1 * c2
    d[5] = -pp * d[0]


cdef inline void _patched(double x1, double x2, double c0, double* d) noexcept nogil:
    _standard(x1, x2, d)
    cdef double j = round(x1), k = round(x2)
    cdef double dx = x1 - j, dy = x2 - k
    cdef double rho = sqrt(dx * dx + dy * dy)
    cdef double r_in = sqrt(2.0) * c0, r_out = 2.0 * c0
    if rho >= r_out:
        return
    cdef double sgn = 1.0 if ((<int64_t>j + <int64_t>k) & 1) == 0 else -1.0
    cdef double q = sgn * dx * dy, q1 = sgn * dy, q2 = sgn * dx, q12 = sgn
    cdef double width = r_out - r_in
    cdef double t = (rho - r_in) / width
    if t < 0.0:
        t = 0.0
    cdef double w = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    cdef double dw = -30.0 * t * t * (1.0 - t) * (1.0 - t) / width
    cdef double d2w = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (width * width)
    cdef double rx = 0.0, ry = 0.0, tang = 0.0
    if rho > 0.0:
        rx = dx / rho
        ry = dy / rho
        tang = dw / rho
    cdef double w1 = dw * rx, w2 = dw * ry
    cdef double w11 = d2w * rx * rx + tang * (1.0 - rx * rx)
    cdef double w22 = d2w * ry * ry + tang * (1.0 - ry * ry)
    cdef double w12 = d2w * rx * ry - tang * rx * ry
    cdef double H = d[0], H1 = d[1], H2 = d[2], H11 = d[3], H12 = d[4], H22 = d[5]
    cdef double D = q - H, D1 = q1 - H1, D2 = q2 - H2
    d[0] = H + w * D
    d[1] = H1 + w * D1 + D * w1
    d[2] = H2 + w * D2 + D * w2
    d[3] = H11 - w * H11 + 2.0 * w1 * D1 + D * w11
    d[4] = H12 + w * (q12 - H12) + w1 * D2 + w2 * D1 + D * w12
    d[5] = H22 - w * H22 + 2.0 * w2 * D2 + D * w22


cdef inline void _base(Params* p, double x1, double x2, double* d) noexcept nogil:
    if p.kind == 1:
        _patched(x1, x2, p.c0, d)
    else:
        _standard(x1, x2, d)


cdef inline void _ramp(Params* p, double h, double* g1, double* g2) noexcept nogil:
    # G'(h) and G''(h) of the cut-off profile.
    cdef double x = fabs(h), t
    if not p.cutoff or x <= p.a:
        g1[0] = 1.0
        g2[0] = 0.0
        return
    if x >= 2.0 * p.a:
        g1[0] = 0.0
        g2[0] = 0.0
        return
    t = (x - p.a) / p.a
    g1[0] = 1.0 - t * t * (3.0 - 2.0 * t)
    g2[0] = -6.0 * t * (1.0 - t) / p.a
    if h < 0:
        g2[0] = -g2[0]


cdef inline double _wrap(double x1) noexcept nogil:
    return x1 - 2.0 * floor(0.5 * x1)


cdef inline int _level_stop(Params* p, double h) noexcept nogil:
    cdef double x = fabs(h)
    if p.level_in >= 0.0 and x <= p.level_in:
        return 3
    if p.level_out > 0.0 and x >= p.level_out:
        return 4
    return 0


cdef int _path(Params* p, uint32_t k0, uint32_t k1, uint64_t sample,
               double* y1p, double* y2p, double* tp, int64_t* stepp) noexcept nogil:
    cdef double y1 = y1p[0], y2 = y2p[0], t = tp[0]
    cdef int64_t step = stepp[0], taken = 0
    cdef double d[6]
    cdef double dz[6]
    cdef uint32_t ctr[4]
    cdef uint32_t rnd[4]
    cdef double g1, g2, h11, h12, h22, lip, dt, gnorm, dist, sq, r, n1, n2
    cdef double h0, v1, v2, z1, z2, c1, c2, corr, y2d, u, top, bot, frac
    cdef int stop
    ctr[2] = <uint32_t>(sample & 0xFFFFFFFFu)
    ctr[3] = <uint32_t>(sample >> 32)

    _base(p, y1, y2, d)
    stop = _level_stop(p, d[0])
    while stop == 0:
        if t >= p.max_time or taken >= p.max_steps:
            stop = 5
            break
        h0 = d[0]
        _ramp(p, h0, &g1, &g2)
        gnorm = sqrt(d[1] * d[1] + d[2] * d[2])
        dt = p.dt_max
        if g1 > 0.0 and p.amp > 0.0:
            h11 = g2 * d[1] * d[1] + g1 * d[3]
            h12 = g2 * d[1] * d[2] + g1 * d[4]
            h22 = g2 * d[2] * d[2] + g1 * d[5]
            lip = sqrt(h11 * h11 + 2.0 * h12 * h12 + h22 * h22)
            if lip < p.lip_floor:
                lip = p.lip_floor
            dt = p.dt_safety / (p.amp * lip)
            if gnorm < 0.1:
                dt *= 0.5
        elif p.cutoff and p.amp > 0.0:
            # stagnant interior: free diffusion until the ramp comes within reach
            dist = (fabs(h0) - 2.0 * p.a) / p.grad_max
            sq = (dist / p.kappa) ** 2
            if sq < dt:
                dt = sq
            if dt < p.dt_safety / (p.amp * p.grad_max * p.grad_max):
                dt = p.dt_safety / (p.amp * p.grad_max * p.grad_max)
        if dt > p.dt_max:
            dt = p.dt_max
        if t + dt > p.max_time:
            dt = p.max_time - t
            if dt <= 0.0:
                stop = 5
                break

        ctr[0] = <uint32_t>(<uint64_t>step)
        ctr[1] = <uint32_t>(<uint64_t>step >> 32)
        _philox(ctr, k0, k1, rnd)
        step += 1
        taken += 1

        # drift, then one Newton step back onto the level of the untruncated field
        z1 = y1
        z2 = y2
        if g1 > 0.0 and p.amp > 0.0:
            v1 = p.amp * g1 * d[2]
            v2 = -p.amp * g1 * d[1]
            z1 = y1 + v1 * dt
            z2 = y2 + v2 * dt
            if p.project:
                _base(p, z1, z2, dz)
                sq = dz[1] * dz[1] + dz[2] * dz[2]
                if sq > 0.0:
                    corr = (h0 - dz[0]) / sq
                    c1 = corr * dz[1]
                    c2 = corr * dz[2]
                    if c1 * c1 + c2 * c2 <= (v1 * v1 + v2 * v2) * dt * dt:
                        z1 += c1
                        z2 += c2
        y2d = z2

        r = sqrt(-2.0 * log((<double>rnd[0] + 0.5) * TWO_M32))
        u = 2.0 * M_PI * (<double>rnd[1] + 0.5) * TWO_M32
        n1 = r * cos(u)
        n2 = r * sin(u)
        sq = sqrt(dt)
        y1 = _wrap(z1 + sq * n1)
        y2 = z2 + p.e * sq * n2

        if y2 >= p.height:
            frac = 1.0
            if y2 > y2d:
                frac = (p.height - y2d) / (y2 - y2d)
            if frac < 0.0:
                frac = 0.0
            t += frac * dt
            y2 = p.height
            stop = 1
            break
        if y2 <= 0.0:
            if p.absorb_bottom:
                frac = 1.0
                if y2 < y2d:
                    frac = y2d / (y2d - y2)
                if frac < 0.0:
                    frac = 0.0
                t += frac * dt
                y2 = 0.0
                stop = 2
                break
            y2 = -y2
        # Brownian-bridge check for a wall touched between the two samples
        if p.bridge and p.e > 0.0:
            top = p.height - y2d
            if top > 0.0 and exp(-2.0 * top * (p.height - y2) / (p.e * p.e * dt)) > (<double>rnd[2] + 0.5) * TWO_M32:
                t += 0.5 * dt
                y2 = p.height
                stop = 1
                break
            if p.absorb_bottom and y2d > 0.0:
                if exp(-2.0 * y2d * y2 / (p.e * p.e * dt)) > (<double>rnd[3] + 0.5) * TWO_M32:
                    t += 0.5 * dt
                    y2 = 0.0
                    stop = 2
                    break
        t += dt
        _base(p, y1, y2, d)
        stop = _level_stop(p, d[0])

    y1p[0] = y1
    y2p[0] = y2
    tp[0] = t
    stepp[0] = step
    return stop


def simulate(dict params, double[:, ::1] z, double[::1] t, cnp.int64_t[::1] steps,
             cnp.uint64_t[::1] sample_ids, uint64_t seed):
    """Advance every path in place until it stops; returns the stop codes.

    ``z`` (positions), ``t`` (clocks) and ``steps`` (RNG counters) are
    updated in place so that calls can be chained.
    """
    cdef Params p
    p.kind = params["kind"]
    p.cutoff = params["cutoff"]
    p.a = params["a"]
    p.c0 = params["c0"]
    p.amp = params["amp"]
    p.e = params["e"]
    p.height = params["height"]
    p.absorb_bottom = params["absorb_bottom"]
    p.dt_safety = params["dt_safety"]
    p.dt_max = params["dt_max"]
    p.kappa = params["kappa"]
    p.grad_max = params["grad_max"]
    p.lip_floor = params["lip_floor"]
    p.level_in = params["level_in"]
    p.level_out = params["level_out"]
    p.max_time = params["max_time"]
    p.max_steps = params["max_steps"]
    p.project = params["project"]
    p.bridge = params.get("bridge", 1)
    cdef Py_ssize_t i, n = z.shape[0]
    out = np.zeros(n, dtype=np.int32)
    cdef cnp.int32_t[::1] kinds = out
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFu), k1 = <uint32_t>(seed >> 32)
    with nogil:
        for i in range(n):
            kinds[i] = _path(&p, k0, k1, sample_ids[i], &z[i, 0], &z[i, 1], &t[i], &steps[i])
    return out
