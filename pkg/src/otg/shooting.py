"""Multiple-shooting residual, finite-difference Jacobian, and Newton driver.

The unknown is the stacked vector

    Z = (vhat^0, rho^1, vhat^1, ..., rho^{K-1}, vhat^{K-1}),

where each block has N-1 entries: reduced velocities on the spanning path,
and interior densities (the lexicographically last node is recovered from
mass conservation).  The residual stacks, per subinterval, the density
continuity mismatch and the reduced-velocity continuity mismatch, ending
with the terminal boundary mismatch against the target density.

The Jacobian is assembled from first-order forward differences of the
subinterval flows; the identity coupling of the continuity subtractions is
placed analytically, never differenced.  Because the flow is autonomous and
the breakpoints are uniform, all subintervals (base trajectories and every
perturbed column) integrate as one batch.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import integrator
from .density import DensityField, close_interior_batch
from .errors import (
    JacobianIncomplete,
    JacobianSingular,
    LinearSolveSingular,
    MaxIterationsExceeded,
    TrajectoryBlowUp,
)
from .grid import LatticeGrid
from .integrator import STATUS_BLOWUP, STATUS_OK, IntegratorConfig

#: residual sup-norm at (or below) which a shooting solve counts as successful
SUCCESS_RESIDUAL_TOL = 1e-5


def _apply_thread_cap() -> None:
    """Honor OTG_THREADS (0 or unset = automatic) for the batched kernels."""
    raw = os.environ.get("OTG_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap > 0 and integrator._HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))


@dataclass(frozen=True)
class ShootingConfig:
    newton_max_iters: int = 30
    rel_stop: float = 1e-5
    abs_stop: float = 1e-9
    fd_step: float = 1e-6
    fd_floor: float = 1e-8
    barrier: float | None = None
    frozen_jacobian: bool = False

    def __post_init__(self):
        for name in ("rel_stop", "abs_stop", "fd_step", "fd_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.barrier is not None and not self.barrier > 0:
            raise ValueError("barrier must be positive when set")


@dataclass(frozen=True)
class NewtonLogRow:
    iteration: int
    f_norm2: float
    f_inf: float
    step_norm: float
    barrier_activations: int


class ShootingState:
    """Stacked multiple-shooting unknown over K uniform subintervals."""

    def __init__(self, grid: LatticeGrid, K: int, data: np.ndarray | None = None):
        if K < 1:
            raise ValueError("K must be >= 1")
        self.grid = grid
        self.K = int(K)
        m = grid.num_nodes - 1
        size = (2 * K - 1) * m
        if data is None:
            data = np.zeros(size)
        else:
            data = np.asarray(data, dtype=float)
            if data.shape != (size,):
                raise ValueError(f"expected state vector of length {size}")
        self.data = data

    @property
    def block_size(self) -> int:
        return self.grid.num_nodes - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    def vhat(self, k: int) -> np.ndarray:
        """Reduced velocity block at breakpoint k (view)."""
        m = self.block_size
        if not 0 <= k <= self.K - 1:
            raise IndexError(f"vhat block {k} out of range")
        start = 0 if k == 0 else m + (k - 1) * 2 * m + m
        return self.data[start : start + m]

    def rho_interior(self, k: int) -> np.ndarray:
        """Interior density block at breakpoint k = 1..K-1 (view)."""
        m = self.block_size
        if not 1 <= k <= self.K - 1:
            raise IndexError(f"rho block {k} out of range")
        start = m + (k - 1) * 2 * m
        return self.data[start : start + m]

    def column_block_slice(self, cb: int) -> slice:
        """Flat slice of column block cb (0 = vhat^0, 2k-1 = rho^k, 2k = vhat^k)."""
        m = self.block_size
        if not 0 <= cb <= 2 * self.K - 2:
            raise IndexError(f"column block {cb} out of range")
        return slice(cb * m, (cb + 1) * m) if cb == 0 else slice(
            m + (cb - 1) * m, m + cb * m
        )

    def copy(self) -> "ShootingState":
        return ShootingState(self.grid, self.K, self.data.copy())


def _start_states(Z: ShootingState, mu: DensityField):
    """Full start densities (K, N) and velocities (K, m) for every subinterval."""
    K, m = Z.K, Z.block_size
    n_nodes = Z.grid.num_nodes
    rho = np.empty((K, n_nodes))
    vhat = np.empty((K, m))
    rho[0] = mu.values
    vhat[0] = Z.vhat(0)
    for k in range(1, K):
        rho[k] = close_interior_batch(Z.rho_interior(k), Z.grid)
        vhat[k] = Z.vhat(k)
    return rho, vhat


def residual(
    Z: ShootingState, mu: DensityField, nu: DensityField, cfg: IntegratorConfig
) -> np.ndarray:
    """Stacked continuity and boundary mismatches; length (2K-1)*(N-1)."""
    grid, K, m = Z.grid, Z.K, Z.block_size
    rho0, vhat0 = _start_states(Z, mu)
    # the flow is autonomous and breakpoints are uniform: one shared span
    rho1, vhat1, status, t_fail, _ = integrator.integrate_states(
        grid, rho0, vhat0, 0.0, 1.0 / K, cfg
    )
    if np.any(status != STATUS_OK):
        k = int(np.flatnonzero(status != STATUS_OK)[0])
        t_abs = k / K + float(t_fail[k])
        if status[k] == STATUS_BLOWUP:
            raise TrajectoryBlowUp(t_abs, subinterval=k)
        raise LinearSolveSingular(
            f"implicit update failed at t={t_abs:.6g} in subinterval {k}"
        )
    f = np.empty((2 * K - 1) * m)
    pos = 0
    for k in range(K):
        target = Z.rho_interior(k + 1) if k < K - 1 else nu.interior_values()
        f[pos : pos + m] = rho1[k, :-1] - target
        pos += m
        if k < K - 1:
            f[pos : pos + m] = vhat1[k] - Z.vhat(k + 1)
            pos += m
    return f


def _fd_columns(Z: ShootingState):
    """(col_block, local_index, subinterval) for every Jacobian column."""
    cols = []
    for k in range(Z.K):
        if k >= 1:
            for i in range(Z.block_size):
                cols.append((2 * k - 1, i, k))
        for i in range(Z.block_size):
            cols.append((2 * k if k >= 1 else 0, i, k))
    return cols


def jacobian_fd(
    Z: ShootingState,
    mu: DensityField,
    nu: DensityField,
    cfg_int: IntegratorConfig,
    cfg_shoot: ShootingConfig,
) -> sp.csc_matrix:
    """Forward-difference Jacobian with analytically placed identity couplings."""
    _apply_thread_cap()
    grid, K, m = Z.grid, Z.K, Z.block_size
    n_nodes = grid.num_nodes
    base_rho, base_vhat = _start_states(Z, mu)
    cols = _fd_columns(Z)

    # batch layout: K base trajectories, then one perturbed copy per column
    B = K + len(cols)
    rho = np.empty((B, n_nodes))
    vhat = np.empty((B, m))
    rho[:K] = base_rho
    vhat[:K] = base_vhat
    steps_h = np.empty(len(cols))
    for c, (cb, i, k) in enumerate(cols):
        b = K + c
        rho[b] = base_rho[k]
        vhat[b] = base_vhat[k]
        z_val = Z.data[Z.column_block_slice(cb)][i]
        h = max(cfg_shoot.fd_step * max(1.0, abs(z_val)), cfg_shoot.fd_floor)
        steps_h[c] = h
        if cb % 2 == 1:  # interior density block: closure moves the last node too
            rho[b, i] += h
            rho[b, -1] -= h
        else:
            vhat[b, i] += h

    rho1, vhat1, status, t_fail, _ = integrator.integrate_states(
        grid, rho, vhat, 0.0, 1.0 / K, cfg_int
    )
    if np.any(status != STATUS_OK):
        bad = np.flatnonzero(status != STATUS_OK)
        raise JacobianIncomplete(
            f"{bad.size} finite-difference trajectories failed "
            f"(first at batch index {int(bad[0])})"
        )

    # assemble dense blocks per (row_block, col_block)
    data_rows: list[np.ndarray] = []
    data_cols: list[np.ndarray] = []
    data_vals: list[np.ndarray] = []

    def put_block(rb: int, cb: int, block: np.ndarray) -> None:
        r = np.repeat(np.arange(m, dtype=np.int32), m) + np.int32(rb * m)
        c = np.tile(np.arange(m, dtype=np.int32), m) + np.int32(cb * m)
        data_rows.append(r)
        data_cols.append(c)
        data_vals.append(block.ravel())

    # group columns by (subinterval, col_block)
    by_block: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for c, (cb, i, k) in enumerate(cols):
        by_block.setdefault((k, cb), []).append((c, i))
    for (k, cb), entries in by_block.items():
        idx = np.array([K + c for c, _ in entries])
        h = steps_h[[c for c, _ in entries]]
        d_rho = (rho1[idx, :-1] - rho1[k, :-1]) / h[:, None]
        put_block(2 * k, cb, d_rho.T)
        if k < K - 1:
            d_v = (vhat1[idx] - vhat1[k]) / h[:, None]
            put_block(2 * k + 1, cb, d_v.T)

    # analytic -I couplings from the continuity subtractions
    eye_r = np.arange(m, dtype=np.int32)
    neg = np.full(m, -1.0)
    for k in range(K - 1):
        for rb, cb in ((2 * k, 2 * k + 1), (2 * k + 1, 2 * k + 2)):
            data_rows.append(eye_r + np.int32(rb * m))
            data_cols.append(eye_r + np.int32(cb * m))
            data_vals.append(neg)

    size = (2 * K - 1) * m
    jac = sp.coo_matrix(
        (
            np.concatenate(data_vals),
            (np.concatenate(data_rows), np.concatenate(data_cols)),
        ),
        shape=(size, size),
    )
    return jac.tocsc()


class _Factorization:
    def __init__(self, mat: sp.csc_matrix):
        scale = np.abs(mat.data).max(initial=0.0)
        try:
            self._lu = spla.splu(mat)
        except RuntimeError as exc:
            raise JacobianSingular(str(exc)) from exc
        diag = np.abs(self._lu.U.diagonal())
        if diag.size == 0 or diag.min() <= 1e-13 * max(scale, 1.0):
            raise JacobianSingular("pivot underflow in LU factorization")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(rhs)


def solve_linear(A, rhs: np.ndarray) -> np.ndarray:
    """Direct sparse LU solve with a pivot-underflow singularity check."""
    mat = sp.csc_matrix(A)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix must be square")
    return _Factorization(mat).solve(np.asarray(rhs, dtype=float))


def _apply_barrier(Z: ShootingState, barrier: float | None) -> int:
    if barrier is None or Z.K == 1:
        return 0
    count = 0
    for k in range(1, Z.K):
        block = Z.rho_interior(k)
        low = block < barrier
        count += int(low.sum())
        block[low] = barrier
    return count


def newton_solve(
    Z0: ShootingState,
    mu: DensityField,
    nu: DensityField,
    cfg_int: IntegratorConfig,
    cfg_shoot: ShootingConfig,
) -> tuple[ShootingState, list[NewtonLogRow]]:
    """Newton iteration on the shooting residual.

    Stops when the residual change stalls in relative Euclidean norm
    (rel_stop) or the residual sup norm falls below abs_stop.  With
    frozen_jacobian the first factorization is reused for every step.
    """
    Z = Z0.copy()
    f = residual(Z, mu, nu, cfg_int)
    f2, finf = float(np.linalg.norm(f)), float(np.abs(f).max(initial=0.0))
    log = [NewtonLogRow(0, f2, finf, 0.0, 0)]
    if finf <= cfg_shoot.abs_stop:
        return Z, log
    f0_inf = finf
    best_Z, best_finf = Z.copy(), finf
    frozen: _Factorization | None = None
    growth_streak = 0

    def fail(message: str) -> MaxIterationsExceeded:
        exc = MaxIterationsExceeded(message)
        exc.log = log
        exc.best_Z = best_Z
        exc.best_finf = best_finf
        return exc

    for it in range(1, cfg_shoot.newton_max_iters + 1):
        if frozen is not None:
            fact = frozen
        else:
            fact = _Factorization(jacobian_fd(Z, mu, nu, cfg_int, cfg_shoot))
            if cfg_shoot.frozen_jacobian:
                frozen = fact
        d = fact.solve(-f)
        Z.data += d
        activations = _apply_barrier(Z, cfg_shoot.barrier)
        f_new = residual(Z, mu, nu, cfg_int)
        f2_new = float(np.linalg.norm(f_new))
        finf_new = float(np.abs(f_new).max(initial=0.0))
        log.append(
            NewtonLogRow(it, f2_new, finf_new, float(np.linalg.norm(d)), activations)
        )
        if finf_new < best_finf:
            best_Z, best_finf = Z.copy(), finf_new
        if finf_new <= cfg_shoot.abs_stop:
            return Z, log
        if f2 > 0 and np.linalg.norm(f_new - f) / f2 < cfg_shoot.rel_stop:
            return Z, log
        # early abort on genuine divergence only: sustained doubling or a
        # blowout; plateau wiggle near the noise floor must keep iterating
        growth_streak = growth_streak + 1 if f2_new > 2.0 * f2 else 0
        if finf_new > max(1e3, 50.0 * f0_inf) or growth_streak >= 3:
            raise fail(
                f"Newton diverging after {it} iterations (|F|_inf={finf_new:.3g})"
            )
        f, f2, finf = f_new, f2_new, finf_new
    raise fail(f"no convergence in {cfg_shoot.newton_max_iters} iterations")
