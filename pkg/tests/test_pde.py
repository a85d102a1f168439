import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rollstir import pde
from rollstir.flow import make_handle


def _problem(eps=0.1, A=100.0, kind="cutoff", n=64, bc="neumann", alpha=0.0, **kw):
    return pde.CellProblem(make_handle(kind, eps, A, alpha=alpha), nx=n, ny=n, bc_bottom=bc, **kw)


def test_bernoulli_identities():
    x = np.linspace(-50, 50, 101)
    B = pde.bernoulli(x)
    assert pde.bernoulli(0.0) == pytest.approx(1.0)
    np.testing.assert_allclose(B - pde.bernoulli(-x), -x, atol=1e-12)
    assert np.all(B > 0)
    assert pde.bernoulli(800.0) == pytest.approx(0.0, abs=1e-300)
    assert pde.bernoulli(-800.0) == pytest.approx(800.0)


@pytest.mark.parametrize("bc,exact", [("neumann", lambda y: 1 - y**2),
                                      ("dirichlet", lambda y: y * (1 - y))])
def test_diffusion_only_profiles(bc, exact):
    res = pde.solve(_problem(A=0.0, n=64, bc=bc))
    y2 = res.grid.y2
    np.testing.assert_allclose(res.field, np.broadcast_to(exact(y2), res.field.shape), atol=1e-8)


def test_cluster_nodes_monotone_and_dense_at_centres():
    y = pde.cluster_nodes(200, 1.0, [1.0], [0.01], [0.3], closed=True)
    assert y[0] == 0.0 and y[-1] == 1.0
    assert np.all(np.diff(y) > 0)
    assert np.count_nonzero(y > 0.97) > 0.2 * 200
    with pytest.raises(ValueError):
        pde.cluster_nodes(50, 1.0, [0.5], [0.1], [1.2], closed=True)


def test_stretched_grid_resolves_layers():
    prob = _problem(eps=0.05, A=400.0, n=128)
    grid = pde.make_grid(prob)
    rep = pde.resolution_report(prob, grid)
    assert rep["wall_layer_cells"] >= 4
    assert rep["side_layer_cells"] >= 4
    assert not rep["underresolved"]


def test_coarse_uniform_grid_is_flagged():
    prob = _problem(eps=0.02, A=2500.0, n=16, stretch=False)
    res = pde.solve(prob)
    assert res.underresolved


def test_face_fluxes_are_divergence_free():
    prob = _problem(kind="standard", n=48)
    grid = pde.make_grid(prob)
    U1, U2 = pde._face_fluxes(prob, grid)
    net = U1 - np.roll(U1, 1, axis=0) + U2[:, 1:] - U2[:, :-1]
    assert np.max(np.abs(net)) <= 1e-12 * np.max(np.abs(U1))
    # no flow through the walls
    assert np.max(np.abs(U2[:, 0])) < 1e-12 * np.max(np.abs(U1))
    assert np.max(np.abs(U2[:, -1])) < 1e-12 * np.max(np.abs(U1))


@settings(max_examples=25, deadline=None)
@given(eps=st.floats(0.02, 0.5), logA=st.floats(-1.0, 4.0),
       kind=st.sampled_from(["standard", "cutoff", "corner_patched"]),
       bc=st.sampled_from(["neumann", "dirichlet"]))
def test_operator_is_an_m_matrix(eps, logA, kind, bc):
    sys = pde.assemble(_problem(eps=eps, A=10**logA, kind=kind, n=16, bc=bc))
    M = sys.matrix.tocoo()
    off = M.row != M.col
    assert np.all(M.data[off] <= 1e-14 * np.abs(M.data).max())
    assert np.all(M.diagonal() > 0)
    # column sums vanish away from Dirichlet rows (conservation), never negative
    colsum = np.asarray(sys.matrix.sum(axis=0)).ravel()
    assert np.all(colsum >= -1e-10 * np.abs(M.data).max())


@settings(max_examples=10, deadline=None)
@given(eps=st.floats(0.05, 0.5), logA=st.floats(0.0, 3.0),
       bc=st.sampled_from(["neumann", "dirichlet"]))
def test_maximum_principle(eps, logA, bc):
    res = pde.solve(_problem(eps=eps, A=10**logA, kind="cutoff", n=32, bc=bc))
    bound = 1.0 if bc == "neumann" else 0.25
    assert res.field.min() >= 0.0
    assert res.norm_inf <= bound * (1 + 1e-9)


def test_direct_and_iterative_agree():
    prob = _problem(n=96)
    a = pde.solve(prob)
    b = pde.solve(prob, method="direct")
    np.testing.assert_allclose(a.field, b.field, rtol=1e-7, atol=1e-12)
    assert a.residual <= max(1e-10, a.tolerance)


def test_unknown_method():
    with pytest.raises(ValueError):
        pde.solve(_problem(n=16), method="jacobi")


def test_cutoff_solution_converges_under_refinement():
    vals = [pde.solve(_problem(eps=0.1, A=100.0, n=n)).at([(0.5, 0.5)])[0] for n in (64, 128, 256)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])
    assert abs(vals[2] - vals[1]) < 1e-2 * vals[2]


def test_stacked_rolls_need_integer_height():
    with pytest.raises(ValueError, match="whole number"):
        _problem(eps=0.5, alpha=0.5, kind="standard")
    prob = _problem(eps=0.25, A=16.0, alpha=0.5, kind="standard", bc="dirichlet")
    assert prob.height == 2.0
    res = pde.solve(prob)
    assert res.grid.y2[-1] == pytest.approx(2.0)
    assert 0 < res.norm_inf < 0.25


def test_norms():
    res = pde.solve(_problem(A=0.0, n=64))
    assert res.norm_inf == pytest.approx(1.0, abs=1e-8)
    assert res.norm_1 == pytest.approx(2.0 / 3.0, abs=1e-3)
    assert pde.norms(res, 2) == pytest.approx(math.sqrt(8.0 / 15.0), abs=1e-3)
    with pytest.raises(ValueError):
        pde.norms(res.field, 1)


def test_interpolation_is_periodic():
    res = pde.solve(_problem(n=48))
    a = res.at([(0.3, 0.4), (2.3, 0.4), (-1.7, 0.4)])
    assert a[0] == pytest.approx(a[1]) and a[0] == pytest.approx(a[2])


def test_binary_and_csv_round_trip(tmp_path):
    res = pde.solve(_problem(n=24, bc="dirichlet"))
    pde.write_binary(res, tmp_path / "t.bin")
    back = pde.read_binary(tmp_path / "t.bin")
    np.testing.assert_array_equal(back["T"], res.field)
    np.testing.assert_array_equal(back["y2"], res.grid.y2)
    assert back["bc_bottom"] is pde.BC.DIRICHLET
    assert back["epsilon"] == 0.1
    pde.write_csv(res, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "y1,y2,T"
    assert len(lines) == 1 + 24 * 24
    (tmp_path / "bad.bin").write_bytes(b"nonsense" * 10)
    with pytest.raises(ValueError):
        pde.read_binary(tmp_path / "bad.bin")


def test_solver_error_reports_residual():
    err = pde.SolverError("stalled", 1e-3, 42)
    assert "1.000e-03" in str(err) and err.iterations == 42
