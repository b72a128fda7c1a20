import math

import numpy as np
import pytest

import otg.integrator as itg
from otg.density import DensityField, GaussianSpec, UniformSpec, realize
from otg.dynamics import PhaseState
from otg.errors import TrajectoryBlowUp
from otg.grid import Boundary, LatticeGrid, build_spanning_path
from otg.integrator import (
    IntegratorConfig,
    Scheme,
    integrate_states,
    integrate_subinterval,
    step,
)


def make_state(dim=1, n=12, seed=0, scale=0.2, boundary=Boundary.NO_FLUX):
    g = LatticeGrid(dim=dim, n=n, lower=0.0, upper=2.0, boundary=boundary)
    rng = np.random.default_rng(seed)
    raw = rng.random(g.num_nodes) + 0.3
    rho = DensityField(g, raw / (raw.sum() * g.cell_volume))
    vhat = scale * rng.standard_normal(g.num_nodes - 1)
    return PhaseState(rho, vhat)


def test_stationary_state_unchanged():
    st = make_state(scale=0.0)
    for scheme in Scheme:
        end, diag = integrate_subinterval(st, 0.0, 1.0, IntegratorConfig(scheme=scheme, steps=25))
        np.testing.assert_allclose(end.rho.values, st.rho.values, atol=1e-15)
        np.testing.assert_allclose(end.vhat, st.vhat, atol=1e-15)
        assert diag.mass_drift <= 1e-15


@pytest.mark.parametrize("scheme", list(Scheme))
@pytest.mark.parametrize("dim,n,boundary", [
    (1, 12, Boundary.NO_FLUX),
    (2, 5, Boundary.NO_FLUX),
    (2, 5, Boundary.PERIODIC),
])
def test_mass_preserved(scheme, dim, n, boundary):
    st = make_state(dim=dim, n=n, seed=3, boundary=boundary)
    _, diag = integrate_subinterval(st, 0.0, 0.3, IntegratorConfig(scheme=scheme, steps=30))
    assert diag.mass_drift <= 1e-12 * st.grid.num_nodes


def test_single_step_matches_subinterval():
    st = make_state(seed=5)
    out = step(st, 0.01, Scheme.SYMPLECTIC_EULER)
    end, _ = integrate_subinterval(st, 0.0, 0.01, IntegratorConfig(steps=1))
    np.testing.assert_allclose(out.rho.values, end.rho.values)
    np.testing.assert_allclose(out.vhat, end.vhat)


def test_symplectic_energy_drift_halves_with_dt():
    # a smooth uniform-to-bump style trajectory
    g = LatticeGrid(dim=1, n=40, lower=0.0, upper=2.0)
    mu = realize(UniformSpec(), g)
    path = build_spanning_path(g)
    x = g.axis_coords()
    s = -0.05 * np.cos(np.pi * x / 2.0)
    st = PhaseState(mu, path.restrict(s))
    _, d1 = integrate_subinterval(st, 0.0, 0.5, IntegratorConfig(steps=50))
    _, d2 = integrate_subinterval(st, 0.0, 0.5, IntegratorConfig(steps=100))
    ratio = d1.energy_drift / d2.energy_drift
    assert 2.0 / 1.5 <= ratio <= 2.0 * 1.5


def test_rk4_observed_order_at_least_3p5():
    st = make_state(seed=7, n=10)
    ref, _ = integrate_subinterval(
        st, 0.0, 0.2, IntegratorConfig(scheme=Scheme.EXPLICIT_RK4, steps=1000)
    )
    errs = []
    for steps in (5, 10):
        end, _ = integrate_subinterval(
            st, 0.0, 0.2, IntegratorConfig(scheme=Scheme.EXPLICIT_RK4, steps=steps)
        )
        errs.append(np.abs(end.rho.values - ref.rho.values).max())
    order = math.log2(errs[0] / errs[1])
    assert order >= 3.5


def test_time_reversal_round_trip_first_order():
    st = make_state(seed=11, n=20, scale=0.1)
    errs = []
    for steps in (40, 80):
        cfg = IntegratorConfig(steps=steps)
        fwd, _ = integrate_subinterval(st, 0.0, 0.3, cfg)
        back_state = PhaseState(fwd.rho, -fwd.vhat)
        back, _ = integrate_subinterval(back_state, 0.0, 0.3, cfg)
        errs.append(np.abs(back.rho.values - st.rho.values).max())
    # error must vanish and contract roughly like dt
    assert errs[1] < errs[0]
    assert errs[0] / errs[1] >= 1.4


def test_blowup_detected_and_tagged():
    st = make_state(seed=13)
    big = PhaseState(st.rho, 1e7 * np.ones_like(st.vhat))
    with pytest.raises(TrajectoryBlowUp) as err:
        integrate_subinterval(big, 0.0, 1.0, IntegratorConfig(steps=100))
    assert 0.0 < err.value.t_fail <= 1.0


def test_kernel_and_numpy_paths_agree():
    if not itg._HAVE_NUMBA:
        pytest.skip("numba unavailable; only one path exists")
    st = make_state(dim=2, n=4, seed=17)
    g = st.grid
    path = build_spanning_path(g)
    pot = path.reconstruct(np.stack([st.vhat, -0.3 * st.vhat]))
    rho = np.stack([st.rho.values, st.rho.values])
    fast = itg._propagate_sympl(g, rho, pot, 0.01, 30, 1e8)
    itg._HAVE_NUMBA = False
    try:
        ref = itg._propagate_sympl(g, rho, pot, 0.01, 30, 1e8)
    finally:
        itg._HAVE_NUMBA = True
    np.testing.assert_allclose(fast[0], ref[0], atol=1e-13)
    np.testing.assert_allclose(fast[1], ref[1], atol=1e-13)
    np.testing.assert_array_equal(fast[2], ref[2])


def test_batched_matches_individual_trajectories():
    st1 = make_state(seed=1, n=9)
    st2 = make_state(seed=2, n=9)
    g = st1.grid
    cfg = IntegratorConfig(steps=25)
    rho = np.stack([st1.rho.values, st2.rho.values])
    vhat = np.stack([st1.vhat, st2.vhat])
    r, v, status, _, _ = integrate_states(g, rho, vhat, 0.0, 0.4, cfg)
    assert np.all(status == 0)
    for i, st in enumerate((st1, st2)):
        end, _ = integrate_subinterval(st, 0.0, 0.4, cfg)
        np.testing.assert_allclose(r[i], end.rho.values, atol=1e-14)
        np.testing.assert_allclose(v[i], end.vhat, atol=1e-14)


def test_min_density_diagnostic_positive_on_gentle_flow():
    g = LatticeGrid(dim=1, n=15, lower=0.0, upper=2.0)
    mu = realize(GaussianSpec(rates=(3.0,), centers=(1.0,), shift=0.05), g)
    path = build_spanning_path(g)
    s = 0.02 * g.axis_coords()
    st = PhaseState(mu, path.restrict(s))
    _, diag = integrate_subinterval(st, 0.0, 0.2, IntegratorConfig(steps=20))
    assert diag.min_density > 0


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(steps=0)
    with pytest.raises(ValueError):
        IntegratorConfig(blowup_norm_threshold=0.5)
