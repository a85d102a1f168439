import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rollstir import pde, sde
from rollstir.flow import make_handle, velocity


def _cfg(kind="cutoff", eps=0.2, A=25.0, **kw):
    return sde.SdeConfig(make_handle(kind, eps, A), **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(dt_safety=0.0)
    with pytest.raises(ValueError):
        _cfg(n_samples=0)
    with pytest.raises(ValueError):
        _cfg(rng_seed=-1)
    cfg = _cfg()
    assert cfg.delta == pytest.approx(0.2 / 5.0)
    assert cfg.layer_level(5) == pytest.approx(1.0)
    assert cfg.cap == pytest.approx(50.0 / 0.04)


@pytest.mark.parametrize("bc,exact", [("neumann", lambda y: 1 - y * y),
                                      ("dirichlet", lambda y: y * (1 - y))])
def test_diffusion_only_exit_time(bc, exact):
    # with A = 0 the scheme is exact in law, so only sampling error remains
    cfg = _cfg("standard", eps=0.5, A=0.0, n_samples=4000, bc_bottom=bc)
    T, se, stats = sde.temperature((0.7, 0.4), cfg)
    assert abs(T - exact(0.4)) < 4 * se
    assert stats.censored == 0


def test_statistics_do_not_depend_on_workers():
    a = sde.simulate_paths((0.3, 0.6), _cfg(n_samples=1200, workers=1))
    b = sde.simulate_paths((0.3, 0.6), _cfg(n_samples=1200, workers=3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_paths_are_labelled_by_sample_index():
    cfg = _cfg(n_samples=40)
    t_all = sde.simulate_paths((0.3, 0.6), cfg)[0]
    t_tail = sde.simulate_paths((0.3, 0.6), cfg, first_sample=25, n=15)[0]
    np.testing.assert_array_equal(t_all[25:], t_tail)


def test_seed_changes_sample():
    a = sde.simulate_paths((0.3, 0.6), _cfg(n_samples=50, rng_seed=1))[0]
    b = sde.simulate_paths((0.3, 0.6), _cfg(n_samples=50, rng_seed=2))[0]
    assert not np.array_equal(a, b)


def test_censoring_is_flagged():
    cfg = _cfg("standard", eps=0.2, A=0.0, n_samples=200, max_time=0.01)
    st_ = sde.estimate_exit_time((0.5, 0.2), cfg)
    assert st_.censored == 200 and st_.flagged
    assert st_.mean == pytest.approx(0.01)


def test_plain_euler_step():
    cfg = _cfg("standard", eps=0.5, A=2.0)
    z = np.array([0.3, 0.4])
    out = sde.step(z, cfg, 1e-3, noise=(0.0, 0.0))
    np.testing.assert_allclose(out, z + 2.0 * 1e-3 * velocity(cfg.handle, z), rtol=1e-12)
    out = sde.step(z, cfg, 1e-2, noise=(1.0, 1.0))
    drift = z + 2.0 * 1e-2 * velocity(cfg.handle, z)
    np.testing.assert_allclose(out, drift + math.sqrt(1e-2) * np.array([1.0, 0.5]), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2), st.floats(0, 1), st.sampled_from(["standard", "cutoff", "corner_patched"]))
def test_one_cell_shift_reverses_the_flow(x1, x2, kind):
    h = make_handle(kind, 0.1, 100.0)
    np.testing.assert_allclose(velocity(h, [x1 + 1.0, x2]), -velocity(h, [x1, x2]), atol=1e-9)


def test_temperature_matches_pde_off_centre():
    h = make_handle("cutoff", 0.2, 25.0)
    ref = pde.solve(pde.CellProblem(h, nx=192, ny=192))
    cfg = sde.SdeConfig(h, n_samples=3000)
    for p in [(1.0, 0.5), (0.3, 0.8)]:
        T, se, _ = sde.temperature(p, cfg)
        exact = float(ref.at([p])[0])
        assert abs(T - exact) <= 4 * se + 0.02 * exact


def test_hitting_time_from_inside_is_zero():
    cfg = _cfg(n_samples=10)
    st_ = sde.estimate_hitting_time((0.0, 0.5), 1.0, cfg)
    assert st_.mean == 0.0 and st_.n == 10
    with pytest.raises(ValueError):
        sde.estimate_hitting_time((0.5, 0.5), 1.0, cfg, outward=True)


def test_hitting_time_reaches_the_layer():
    cfg = _cfg("standard", eps=0.2, A=25.0, n_samples=200)
    st_ = sde.estimate_hitting_time((0.5, 0.5), 1.0, cfg)
    assert st_.mean > 0
    assert st_.kinds.get("hit_inner", 0) == 200


def test_layer_start_points_lie_on_level():
    cfg = _cfg("standard", eps=0.1, A=100.0)
    pts = sde.layer_start_points(cfg, 1.0, n=32)
    from rollstir.flow import eval_H
    np.testing.assert_allclose(np.abs(eval_H(cfg.handle.spec, pts)), 0.1, atol=1e-9)
    assert pts.shape == (32, 2)


def test_pass_probability_interval():
    cfg = _cfg("standard", eps=0.1, A=100.0, n_samples=320)
    pp = sde.per_pass_exit_probability(cfg)
    assert pp.trials == 320
    assert pp.ci_low <= pp.p_hat <= pp.ci_high
    assert pp.scaled == pytest.approx(pp.p_hat / 0.1)
    with pytest.raises(ValueError):
        sde.per_pass_exit_probability(_cfg(n_samples=50))


def test_cycle_decomposition_alternates_and_ends_in_exit():
    cfg = _cfg("standard", eps=0.2, A=25.0)
    z0 = sde.layer_start_points(cfg, 1.0, n=4)[0]
    rec = sde.cycle_decomposition(z0, cfg, sample=3)
    assert not rec.truncated
    assert rec.events[-1].kind.startswith("exit")
    layers = [e.layer for e in rec.events if e.kind == "hit_layer"]
    assert all(a != b for a, b in zip(layers, layers[1:]))
    assert rec.passes >= 1
    stats = sde.cycle_statistics(z0, sde.SdeConfig(cfg.handle, n_samples=50))
    assert stats["mean_passes"] >= 1 and stats["truncated"] == 0
