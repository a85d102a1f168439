import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import ellipk

from rollstir import averaging as av
from rollstir.flow import HamiltonianKind, HamiltonianSpec, eval_H

STANDARD = HamiltonianSpec()


def period_oracle(h):
    """Period of the unit-speed orbit of sin(pi x) sin(pi y) at level h."""
    return 4.0 / math.pi**2 * ellipk(1.0 - np.asarray(h) ** 2)


def flux_oracle(h):
    """``-∫_{H >= h} d11 H`` for the sin-product, by 1-D quadrature.

    ``d11 H = -pi^2 H``; integrating ``pi^2 H`` over ``x2`` in closed form
    leaves ``4 pi ∫ sqrt(sin^2(pi x) - h^2) dx`` over ``sin(pi x) >= h``.
    """
    a = math.asin(h) / math.pi
    f = lambda x: math.sqrt(max(math.sin(math.pi * x) ** 2 - h * h, 0.0))
    val, _ = integrate.quad(f, a, 0.5, epsabs=0.0, epsrel=1e-13, limit=200)
    return 4.0 * math.pi * val


def test_flux_oracle_total():
    # h -> 0: -∫ d11 H over the cell = pi^2 ∫ H = 4
    assert flux_oracle(1e-12) == pytest.approx(4.0, rel=1e-9)


@pytest.mark.parametrize("h", [0.01, 0.1, 0.5, 0.9, 0.99])
def test_period_matches_elliptic_oracle(h):
    c = av.trace_contour(STANDARD, h)
    assert av.period(c) == pytest.approx(float(period_oracle(h)), rel=1e-7)
    assert c.period == pytest.approx(av.period(c), rel=1e-7)


def test_contour_points_stay_on_level():
    c = av.trace_contour(STANDARD, 0.3)
    np.testing.assert_allclose(eval_H(STANDARD, c.points), 0.3, atol=av.LEVEL_TOL)
    assert c.closure_error < av.CLOSURE_TOL
    assert c.points.shape[0] % 64 == 0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.02, 0.98))
def test_coefficients_against_oracles(h):
    c = av.trace_contour(STANDARD, h)
    D1, D2 = av.coefficients(c)
    T = av.period(c)
    assert D2 == pytest.approx(-math.pi**2 * h, rel=1e-7)
    assert T * D1 == pytest.approx(flux_oracle(h), rel=1e-6)


def test_flux_identity_halves_under_refinement():
    r = []
    for n in (50, 100, 200):
        coeffs = av.averaged_coefficients(STANDARD, av.chebyshev_levels(n))
        r.append(av.verify_flux_identity(coeffs))
    assert r[2] <= 1e-3
    assert r[1] <= 0.5 * r[0] and r[2] <= 0.5 * r[1]


def test_period_near_centre():
    assert av.period(av.trace_contour(STANDARD, 1 - 1e-6)) == pytest.approx(2 / math.pi, rel=1e-3)


def test_patched_field_traces():
    spec = HamiltonianSpec(HamiltonianKind.CORNER_PATCHED, c0=0.05)
    c = av.trace_contour(spec, 0.02)
    np.testing.assert_allclose(eval_H(spec, c.points), 0.02, atol=av.LEVEL_TOL)


def test_levels_outside_cell_rejected():
    with pytest.raises(av.ContourError):
        av.trace_contour(STANDARD, 1.5)
    with pytest.raises(av.ContourError):
        av.trace_contour(STANDARD, -0.2)


def test_chebyshev_levels():
    lv = av.chebyshev_levels(5, 0.1, 0.9)
    assert lv[0] == pytest.approx(0.1) and lv[-1] == pytest.approx(0.9)
    assert np.all(np.diff(lv) > 0)


def test_resample_spacing():
    c = av.trace_contour(STANDARD, 0.5)
    pts = c.resample(16)
    assert pts.shape == (16, 2)
    np.testing.assert_array_equal(pts[0], c.points[0])


def test_reduced_solution_and_csv(tmp_path):
    lv = np.linspace(0.01, 0.99, 60)
    coeffs = av.averaged_coefficients(STANDARD, lv)
    sol = av.reduced_solution(coeffs)
    assert np.all(sol.dU > 0)
    assert np.all(np.diff(sol.U) > 0)
    assert sol.w1inf >= sol.U.max()
    av.export_csv(coeffs, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "h,T,D1,D2,T_D1" and len(lines) == 61
