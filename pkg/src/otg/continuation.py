"""Homotopy continuation driver around the multiple-shooting Newton solver.

The two-point problem with target ``nu`` is embedded in a family of problems
with target ``f(mu, nu, lambda)``, ``f(.,.,0) = mu`` and ``f(.,.,1) = nu``.
The trivial problem at ``lambda = 0`` is the identity map; marching lambda
upward and warm-starting each solve with the previous solution keeps Newton
inside its convergence basin.  A direct attempt at ``lambda = 1`` is made
first, so easy problems pay no continuation overhead.

Two interpolant families are provided: a Gaussian path that moves centers,
rates and shifts affinely through parameter space (for Gaussian-type
endpoint densities, including multi-bump targets, where bumps are paired up
and single bumps are replicated), and the plain linear blend for everything
else.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .density import (
    DensityField,
    GaussianBump,
    GaussianSpec,
    TwoBumpGaussianSpec,
    linear_blend,
    realize,
)
from .dynamics import wasserstein_distance
from .errors import (
    ContinuationStalled,
    JacobianIncomplete,
    JacobianSingular,
    KindMismatch,
    LinearSolveSingular,
    MaxIterationsExceeded,
    NonFiniteState,
    TrajectoryBlowUp,
)
from .grid import LatticeGrid, build_spanning_path
from .integrator import IntegratorConfig, integrate_states
from .shooting import (
    SUCCESS_RESIDUAL_TOL,
    NewtonLogRow,
    ShootingConfig,
    ShootingState,
    newton_solve,
    residual,
)

_SOLVE_FAILURES = (
    TrajectoryBlowUp,
    JacobianSingular,
    JacobianIncomplete,
    LinearSolveSingular,
    MaxIterationsExceeded,
    NonFiniteState,
)

_MAX_LAMBDA_STEPS = 500


class HomotopyKind(str, Enum):
    GAUSSIAN_PATH = "gaussian_path"
    LINEAR_PATH = "linear_path"


@dataclass(frozen=True)
class ContinuationSchedule:
    lambda0: float = 0.1
    L: int = 20
    max_shrinks: int = 6
    try_direct_first: bool = True

    def __post_init__(self):
        if not 0.0 < self.lambda0 <= 1.0:
            raise ValueError("lambda0 must be in (0, 1]")
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if self.max_shrinks < 0:
            raise ValueError("max_shrinks must be >= 0")


@dataclass(frozen=True)
class GeodesicProblem:
    grid: LatticeGrid
    mu_spec: object
    nu_spec: object
    kind: HomotopyKind
    K: int

    def __post_init__(self):
        object.__setattr__(self, "kind", HomotopyKind(self.kind))
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass(frozen=True)
class ContinuationLogRow:
    lam: float
    newton_iterations: int
    final_f_inf: float
    shrink_count: int


@dataclass
class GeodesicSolution:
    Z_star: ShootingState
    distance: float
    S0: np.ndarray
    snapshots: list[tuple[float, DensityField]]
    newton_logs: list[tuple[float, list[NewtonLogRow]]]
    continuation_log: list[ContinuationLogRow]
    boundary_residual_inf: float
    min_breakpoint_density: float
    success: bool
    wall_time: float


def _bumps_of(spec) -> tuple[tuple[GaussianBump, ...], float]:
    if isinstance(spec, GaussianSpec):
        return (GaussianBump(spec.rates, spec.centers),), spec.shift
    if isinstance(spec, TwoBumpGaussianSpec):
        return spec.bumps, spec.shift
    raise KindMismatch(
        f"Gaussian homotopy path needs Gaussian-type specs, got {type(spec).__name__}"
    )


def _gaussian_path_spec(mu_spec, nu_spec, lam: float):
    bumps0, shift0 = _bumps_of(mu_spec)
    bumps1, shift1 = _bumps_of(nu_spec)
    if len(bumps0) != len(bumps1):
        if len(bumps0) == 1:
            bumps0 = bumps0 * len(bumps1)
        elif len(bumps1) == 1:
            bumps1 = bumps1 * len(bumps0)
        else:
            raise KindMismatch("cannot pair Gaussian bumps of unequal counts")
    blended = tuple(
        GaussianBump(
            rates=tuple(
                r0 + lam * (r1 - r0) for r0, r1 in zip(b0.rates, b1.rates)
            ),
            centers=tuple(
                c0 + lam * (c1 - c0) for c0, c1 in zip(b0.centers, b1.centers)
            ),
        )
        for b0, b1 in zip(bumps0, bumps1)
    )
    shift = shift0 + lam * (shift1 - shift0)
    if len(blended) == 1:
        return GaussianSpec(blended[0].rates, blended[0].centers, shift)
    return TwoBumpGaussianSpec(blended, shift)


def homotopy(
    mu_spec, nu_spec, lam: float, kind: HomotopyKind, grid: LatticeGrid
) -> DensityField:
    """Intermediate target density f(mu, nu, lambda) realized on the grid."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    kind = HomotopyKind(kind)
    if kind is HomotopyKind.GAUSSIAN_PATH:
        return realize(_gaussian_path_spec(mu_spec, nu_spec, lam), grid)
    mu = realize(mu_spec, grid)
    nu = realize(nu_spec, grid)
    return linear_blend(mu, nu, lam)


def initial_guess(mu: DensityField, target: DensityField, K: int) -> ShootingState:
    """Zero velocities; densities linearly interpolated from mu to the target."""
    Z = ShootingState(mu.grid, K)
    for k in range(1, K):
        t_k = k / K
        Z.rho_interior(k)[:] = linear_blend(mu, target, t_k).interior_values()
    return Z


def _last_inf(log: list[NewtonLogRow]) -> float:
    return log[-1].f_inf


# Intermediate continuation stages are scaffolding: they only have to hand a
# warm start to the next stage, so they run on a coarser time grid and a
# looser residual stop.  The final stage at lambda = 1 always runs the exact
# requested integrator configuration and tolerances.
_STAGE_MIN_STEPS = 8
_STAGE_STEP_DIVISOR = 4
_STAGE_ABS_STOP = 3e-6


def _stage_configs(cfg_int: IntegratorConfig, cfg_shoot: ShootingConfig):
    steps = max(_STAGE_MIN_STEPS, cfg_int.steps // _STAGE_STEP_DIVISOR)
    coarse_int = (
        cfg_int if steps >= cfg_int.steps else replace(cfg_int, steps=steps)
    )
    loose_shoot = (
        cfg_shoot
        if cfg_shoot.abs_stop >= _STAGE_ABS_STOP
        else replace(cfg_shoot, abs_stop=_STAGE_ABS_STOP)
    )
    return coarse_int, loose_shoot


def _solve_stage(Z0, mu, target, cfg_int, cfg_shoot):
    """One shooting solve; returns (Z, log) or raises a solver failure.

    A Newton run that exhausts its budget while its best iterate already
    meets the stage success tolerance (barrier projections can hold the
    residual on a plateau above abs_stop) is accepted at that iterate.
    """
    try:
        Z, log = newton_solve(Z0, mu, target, cfg_int, cfg_shoot)
    except MaxIterationsExceeded as exc:
        if getattr(exc, "best_finf", np.inf) <= SUCCESS_RESIDUAL_TOL:
            return exc.best_Z, exc.log
        raise
    if _last_inf(log) > SUCCESS_RESIDUAL_TOL:
        exc = MaxIterationsExceeded(
            f"final residual {_last_inf(log):.3g} above success tolerance"
        )
        exc.log = log
        raise exc
    return Z, log


def _breakpoint_states(Z: ShootingState, mu: DensityField):
    from .density import close_interior_batch

    rho = [mu.values]
    vhat = [Z.vhat(0)]
    for k in range(1, Z.K):
        rho.append(close_interior_batch(Z.rho_interior(k), Z.grid))
        vhat.append(Z.vhat(k))
    return np.array(rho), np.array(vhat)


def _snapshot_densities(
    Z: ShootingState, mu: DensityField, cfg_int: IntegratorConfig, times
) -> list[tuple[float, DensityField]]:
    """Densities along the converged trajectory, quantized to the step grid."""
    grid, K = Z.grid, Z.K
    rho_bp, vhat_bp = _breakpoint_states(Z, mu)
    dt = (1.0 / K) / cfg_int.steps
    out = []
    for t in times:
        t = float(min(max(t, 0.0), 1.0))
        k = min(int(t * K), K - 1)
        local_steps = int(round((t - k / K) / dt))
        if local_steps == 0:
            out.append((t, DensityField(grid, rho_bp[k].copy())))
            continue
        sub = IntegratorConfig(
            scheme=cfg_int.scheme,
            steps=local_steps,
            blowup_norm_threshold=cfg_int.blowup_norm_threshold,
        )
        r, _v, status, _tf, _ = integrate_states(
            grid,
            rho_bp[k][None],
            vhat_bp[k][None],
            0.0,
            local_steps * dt,
            sub,
        )
        if status[0] != 0:
            raise TrajectoryBlowUp(t, subinterval=k)
        out.append((t, DensityField(grid, r[0])))
    return out


def _finalize(
    problem, mu, nu, Z, newton_logs, cont_log, cfg_int, snapshot_times, t_start
) -> GeodesicSolution:
    grid = problem.grid
    path = build_spanning_path(grid)
    s0 = path.reconstruct(Z.vhat(0))
    distance = wasserstein_distance(mu, Z.vhat(0))
    f = residual(Z, mu, nu, cfg_int)
    m = Z.block_size
    boundary = float(np.abs(f[-m:]).max())
    rho_bp, _ = _breakpoint_states(Z, mu)
    min_bp = float(rho_bp.min())
    snapshots = _snapshot_densities(Z, mu, cfg_int, snapshot_times)
    success = boundary <= SUCCESS_RESIDUAL_TOL and min_bp >= 0.0
    return GeodesicSolution(
        Z_star=Z,
        distance=distance,
        S0=s0,
        snapshots=snapshots,
        newton_logs=newton_logs,
        continuation_log=cont_log,
        boundary_residual_inf=boundary,
        min_breakpoint_density=min_bp,
        success=success,
        wall_time=time.perf_counter() - t_start,
    )


_DEFAULT_SNAPSHOT_TIMES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def run(
    problem: GeodesicProblem,
    sched: ContinuationSchedule,
    cfg_int: IntegratorConfig,
    cfg_shoot: ShootingConfig,
    snapshot_times=_DEFAULT_SNAPSHOT_TIMES,
) -> GeodesicSolution:
    """Solve the geodesic boundary value problem, with continuation on demand.

    Raises ContinuationStalled when the shrink budget is exhausted before
    the homotopy parameter reaches one.
    """
    t_start = time.perf_counter()
    grid, K = problem.grid, problem.K
    mu = realize(problem.mu_spec, grid)
    nu = realize(problem.nu_spec, grid)
    newton_logs: list[tuple[float, list[NewtonLogRow]]] = []
    cont_log: list[ContinuationLogRow] = []

    if sched.try_direct_first:
        try:
            Z, log = _solve_stage(
                initial_guess(mu, nu, K), mu, nu, cfg_int, cfg_shoot
            )
            newton_logs.append((1.0, log))
            cont_log.append(
                ContinuationLogRow(1.0, log[-1].iteration, _last_inf(log), 0)
            )
            return _finalize(
                problem, mu, nu, Z, newton_logs, cont_log, cfg_int,
                snapshot_times, t_start,
            )
        except _SOLVE_FAILURES as exc:
            if getattr(exc, "log", None):
                newton_logs.append((1.0, exc.log))

    lam_prev = 0.0
    Z_prev: ShootingState | None = None
    L_cur = sched.L
    delta = (1.0 - sched.lambda0) / sched.L
    shrinks = 0
    lam = sched.lambda0
    last_failure: Exception | str = "no solve attempted"
    coarse_int, loose_shoot = _stage_configs(cfg_int, cfg_shoot)
    for _ in range(_MAX_LAMBDA_STEPS):
        final = lam >= 1.0
        target = homotopy(problem.mu_spec, problem.nu_spec, lam, problem.kind, grid)
        Z0 = Z_prev.copy() if Z_prev is not None else initial_guess(mu, target, K)
        try:
            Z, log = _solve_stage(
                Z0,
                mu,
                target,
                cfg_int if final else coarse_int,
                cfg_shoot if final else loose_shoot,
            )
        except _SOLVE_FAILURES as exc:
            last_failure = exc
            if getattr(exc, "log", None):
                newton_logs.append((lam, exc.log))
            shrinks += 1
            if shrinks > sched.max_shrinks:
                raise ContinuationStalled(lam_prev, exc) from exc
            delta = (1.0 - lam_prev) / L_cur
            L_cur *= 2
            lam = min(lam_prev + delta, 1.0)
            continue
        newton_logs.append((lam, log))
        cont_log.append(
            ContinuationLogRow(lam, log[-1].iteration, _last_inf(log), shrinks)
        )
        Z_prev, lam_prev = Z, lam
        if lam >= 1.0:
            return _finalize(
                problem, mu, nu, Z_prev, newton_logs, cont_log, cfg_int,
                snapshot_times, t_start,
            )
        lam = min(lam_prev + delta, 1.0)
        if 1.0 - lam < 1e-12:
            lam = 1.0
    raise ContinuationStalled(lam_prev, last_failure)
