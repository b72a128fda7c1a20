import numpy as np
import pytest

from otg.continuation import (
    ContinuationSchedule,
    GeodesicProblem,
    HomotopyKind,
    homotopy,
    initial_guess,
    run,
)
from otg.density import (
    GaussianBump,
    GaussianSpec,
    TwoBumpGaussianSpec,
    UniformSpec,
    linear_blend,
    realize,
)
from otg.errors import ContinuationStalled, KindMismatch
from otg.grid import LatticeGrid
from otg.integrator import IntegratorConfig
from otg.shooting import ShootingConfig, residual


GRID_1D = LatticeGrid(dim=1, n=24, lower=-0.5, upper=2.5)
MU_SPEC = GaussianSpec(rates=(15.0,), centers=(0.4,), shift=1e-4)
NU_SPEC = GaussianSpec(rates=(15.0,), centers=(1.4,), shift=1e-4)


def test_homotopy_endpoints_both_kinds():
    for kind in HomotopyKind:
        f0 = homotopy(MU_SPEC, NU_SPEC, 0.0, kind, GRID_1D)
        f1 = homotopy(MU_SPEC, NU_SPEC, 1.0, kind, GRID_1D)
        np.testing.assert_allclose(f0.values, realize(MU_SPEC, GRID_1D).values, atol=1e-15)
        np.testing.assert_allclose(f1.values, realize(NU_SPEC, GRID_1D).values, atol=1e-15)


def test_gaussian_path_midpoint_center():
    mid = homotopy(MU_SPEC, NU_SPEC, 0.5, HomotopyKind.GAUSSIAN_PATH, GRID_1D)
    expected = realize(GaussianSpec(rates=(15.0,), centers=(0.9,), shift=1e-4), GRID_1D)
    np.testing.assert_allclose(mid.values, expected.values, atol=1e-15)


def test_linear_path_is_a_blend():
    lam = 0.3
    f = homotopy(MU_SPEC, NU_SPEC, lam, HomotopyKind.LINEAR_PATH, GRID_1D)
    mu = realize(MU_SPEC, GRID_1D)
    nu = realize(NU_SPEC, GRID_1D)
    np.testing.assert_allclose(f.values, linear_blend(mu, nu, lam).values, atol=1e-15)


def test_two_bump_path_moves_both_centers():
    """Single bump splitting into two: centers track (1.5 -+ 0.95 lam,
    0.5 + 1.95 lam)."""
    from otg.continuation import _gaussian_path_spec

    grid = LatticeGrid(dim=2, n=25, lower=-1.0, upper=4.0)
    mu = GaussianSpec(rates=(5.0, 5.0), centers=(1.5, 0.5), shift=0.01)
    nu = TwoBumpGaussianSpec(
        bumps=(
            GaussianBump((5.0, 5.0), (2.45, 2.45)),
            GaussianBump((5.0, 5.0), (0.55, 2.45)),
        ),
        shift=0.01,
    )
    for lam in (0.1, 0.55, 1.0):
        spec = _gaussian_path_spec(mu, nu, lam)
        c1, c2 = spec.bumps[0].centers, spec.bumps[1].centers
        assert c1 == pytest.approx((1.5 + 0.95 * lam, 0.5 + 1.95 * lam))
        assert c2 == pytest.approx((1.5 - 0.95 * lam, 0.5 + 1.95 * lam))
    # terminal target is exactly nu
    end = homotopy(mu, nu, 1.0, HomotopyKind.GAUSSIAN_PATH, grid)
    np.testing.assert_allclose(end.values, realize(nu, grid).values, atol=1e-15)


def test_gaussian_path_rejects_non_gaussians():
    with pytest.raises(KindMismatch):
        homotopy(UniformSpec(), NU_SPEC, 0.5, HomotopyKind.GAUSSIAN_PATH, GRID_1D)


def test_initial_guess_is_stationary_for_identity():
    mu = realize(MU_SPEC, GRID_1D)
    Z = initial_guess(mu, mu, K=4)
    cfg = IntegratorConfig(steps=10)
    f = residual(Z, mu, mu, cfg)
    assert np.abs(f).max() == 0.0


def test_initial_guess_blocks_are_blends_and_valid():
    mu = realize(MU_SPEC, GRID_1D)
    nu = realize(NU_SPEC, GRID_1D)
    K = 4
    Z = initial_guess(mu, nu, K)
    from otg.density import close_interior_batch

    for k in range(1, K):
        full = close_interior_batch(Z.rho_interior(k), GRID_1D)
        expect = linear_blend(mu, nu, k / K)
        np.testing.assert_allclose(full, expect.values, atol=1e-13)
        assert full.min() >= 0
        assert abs(full.sum() * GRID_1D.cell_volume - 1.0) < 1e-12
        assert np.abs(Z.vhat(k)).max(initial=0.0) == 0.0


def small_problem(kind=HomotopyKind.GAUSSIAN_PATH, K=6):
    return GeodesicProblem(GRID_1D, MU_SPEC, NU_SPEC, kind, K)


def test_identity_problem_direct_no_continuation():
    prob = GeodesicProblem(GRID_1D, MU_SPEC, MU_SPEC, HomotopyKind.LINEAR_PATH, K=3)
    sol = run(prob, ContinuationSchedule(), IntegratorConfig(steps=10), ShootingConfig())
    assert [r.lam for r in sol.continuation_log] == [1.0]
    assert sol.distance == 0.0
    assert sol.success


def test_continuation_ladder_monotone_and_complete():
    sched = ContinuationSchedule(lambda0=0.1, L=10, try_direct_first=False)
    sol = run(small_problem(), sched, IntegratorConfig(steps=24), ShootingConfig())
    lams = [r.lam for r in sol.continuation_log]
    assert lams[0] == pytest.approx(0.1)
    assert all(b > a for a, b in zip(lams, lams[1:]))
    assert lams[-1] == 1.0
    assert sol.boundary_residual_inf <= 1e-5
    # translation of equal-variance bumps: distance close to |b1 - b0| = 1
    assert abs(sol.distance - 1.0) < 0.05


def test_warm_start_beats_cold_restart():
    """After solving at lambda0, the warm start is closer to the next rung's
    solution (and Newton needs no more iterations) than a fresh
    interpolation guess.

    Note the raw residual norm would not show this: the cold guess carries
    zero velocities, whose continuity mismatch is only O(1/K) per block, yet
    it sits far from the solution manifold.  Proximity is what warm starting
    buys, so that is what is asserted.
    """
    cfg_int = IntegratorConfig(steps=24)
    prob = small_problem()
    mu = realize(prob.mu_spec, prob.grid)
    from otg.continuation import _stage_configs
    from otg.shooting import newton_solve

    coarse_int, loose = _stage_configs(cfg_int, ShootingConfig())
    target0 = homotopy(prob.mu_spec, prob.nu_spec, 0.1, prob.kind, prob.grid)
    Z0, _ = newton_solve(
        initial_guess(mu, target0, prob.K), mu, target0, coarse_int, loose
    )
    lam_next = 0.1 + 0.9 / 10
    target1 = homotopy(prob.mu_spec, prob.nu_spec, lam_next, prob.kind, prob.grid)
    cold_guess = initial_guess(mu, target1, prob.K)
    Z_warm, log_warm = newton_solve(Z0.copy(), mu, target1, coarse_int, loose)
    _, log_cold = newton_solve(cold_guess.copy(), mu, target1, coarse_int, loose)
    assert log_warm[-1].iteration <= log_cold[-1].iteration
    # the warm start already carries the transport structure: its velocity
    # blocks sit closer to the converged ones than the cold zeros do
    def vhat_distance(state):
        return sum(
            float(np.linalg.norm(state.vhat(k) - Z_warm.vhat(k)))
            for k in range(state.K)
        )

    assert vhat_distance(Z0) < vhat_distance(cold_guess)


def test_snapshots_cover_requested_times():
    sched = ContinuationSchedule(try_direct_first=False, L=10)
    sol = run(
        small_problem(K=5),
        sched,
        IntegratorConfig(steps=20),
        ShootingConfig(),
        snapshot_times=(0.0, 0.4, 1.0),
    )
    times = [t for t, _ in sol.snapshots]
    assert times == [0.0, 0.4, 1.0]
    mu = realize(MU_SPEC, GRID_1D)
    nu = realize(NU_SPEC, GRID_1D)
    np.testing.assert_allclose(sol.snapshots[0][1].values, mu.values, atol=1e-14)
    assert np.abs(sol.snapshots[-1][1].values - nu.values).max() <= 1e-5
    for _, field in sol.snapshots:
        assert abs(field.mass() - 1.0) <= 1e-10


def test_stall_raises_with_last_lambda():
    # an impossible tolerance forces every stage to fail
    sched = ContinuationSchedule(lambda0=0.1, L=4, max_shrinks=1, try_direct_first=False)
    tight = ShootingConfig(newton_max_iters=1, abs_stop=1e-300, rel_stop=1e-300)
    with pytest.raises(ContinuationStalled) as err:
        run(small_problem(K=3), sched, IntegratorConfig(steps=10), tight)
    assert err.value.last_lambda == 0.0


def test_determinism_bitwise():
    sched = ContinuationSchedule(try_direct_first=False, L=10)
    kwargs = dict(
        sched=sched, cfg_int=IntegratorConfig(steps=16), cfg_shoot=ShootingConfig()
    )
    a = run(small_problem(K=4), **kwargs)
    b = run(small_problem(K=4), **kwargs)
    assert a.distance == b.distance
    assert [r.lam for r in a.continuation_log] == [r.lam for r in b.continuation_log]
    assert [r.final_f_inf for r in a.continuation_log] == [
        r.final_f_inf for r in b.continuation_log
    ]
    np.testing.assert_array_equal(a.Z_star.data, b.Z_star.data)
