"""Independent desk-scale references used by the test suite.

Everything here is deliberately naive: explicit neighbor loops in the
(rho, S) variables, a slow reference integrator, dense central-difference
Jacobians, and a closed-form one-dimensional Gaussian transport distance.
These implementations share no code with the production dynamics, integrator
or shooting modules (they only consume the grid and density data types), so
agreement is meaningful.

Inputs are capped at desk scale; these routines are not for production runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .density import DensityField
from .dynamics import PhaseState
from .errors import TrajectoryBlowUp
from .grid import LatticeGrid, build_spanning_path

MAX_NODES = 81
MAX_SUBINTERVALS = 4


@dataclass(frozen=True)
class OracleReport:
    quantity: str
    oracle_value: float
    production_value: float

    @property
    def abs_deviation(self) -> float:
        return abs(self.oracle_value - self.production_value)

    @property
    def rel_deviation(self) -> float:
        scale = max(abs(self.oracle_value), abs(self.production_value), 1e-300)
        return self.abs_deviation / scale


def _desk_guard(grid: LatticeGrid, K: int | None = None) -> None:
    if grid.num_nodes > MAX_NODES:
        raise ValueError(
            f"oracle capped at {MAX_NODES} nodes, got {grid.num_nodes}"
        )
    if K is not None and K > MAX_SUBINTERVALS:
        raise ValueError(f"oracle capped at K={MAX_SUBINTERVALS}, got {K}")


def _rhs_loops(grid: LatticeGrid, rho: np.ndarray, vhat: np.ndarray):
    """Node-by-node evaluation of the flow in (rho, S) variables."""
    path = build_spanning_path(grid)
    potential = path.reconstruct(vhat)
    inv_dx2 = 1.0 / grid.spacing**2
    n_nodes = grid.num_nodes
    drho = np.zeros(n_nodes)
    dpot = np.zeros(n_nodes)
    for flat in range(n_nodes):
        node = grid.multi_index(flat)
        acc_rho = 0.0
        acc_kin = 0.0
        for nb in grid.neighbors(node):
            j = grid.flat_index(nb)
            ds = potential[flat] - potential[j]
            acc_rho += ds * 0.5 * (rho[flat] + rho[j]) * inv_dx2
            acc_kin += ds * ds * 0.25 * inv_dx2
        drho[flat] = acc_rho
        dpot[flat] = -acc_kin
    edges = path.edges
    dvhat = dpot[edges[:, 1]] - dpot[edges[:, 0]]
    return drho, dvhat


def rhs_reference(state: PhaseState) -> tuple[np.ndarray, np.ndarray]:
    """Reference time derivatives (d rho/dt, d vhat/dt)."""
    _desk_guard(state.grid)
    return _rhs_loops(state.grid, state.rho.values, state.vhat)


def integrate_reference(
    state0: PhaseState, t0: float, t1: float, steps: int
) -> PhaseState:
    """Slow classical RK4 endpoint; callers pass a large step count
    (around 100x the production count) to treat the result as exact."""
    _desk_guard(state0.grid)
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    grid = state0.grid
    rho = state0.rho.values.copy()
    vhat = state0.vhat.copy()
    dt = (t1 - t0) / steps
    for s in range(steps):
        k1r, k1v = _rhs_loops(grid, rho, vhat)
        k2r, k2v = _rhs_loops(grid, rho + 0.5 * dt * k1r, vhat + 0.5 * dt * k1v)
        k3r, k3v = _rhs_loops(grid, rho + 0.5 * dt * k2r, vhat + 0.5 * dt * k2v)
        k4r, k4v = _rhs_loops(grid, rho + dt * k3r, vhat + dt * k3v)
        rho = rho + (dt / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
        vhat = vhat + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(vhat))):
            raise TrajectoryBlowUp(t0 + (s + 1) * dt)
        if max(np.abs(rho).max(), np.abs(vhat).max()) > 1e8:
            raise TrajectoryBlowUp(t0 + (s + 1) * dt)
    return PhaseState(DensityField(grid, rho), vhat, time=t1)


def jacobian_reference(
    residual_fn: Callable[[np.ndarray], np.ndarray], z: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Dense central-difference Jacobian of an arbitrary residual callable.

    The callable is injected so this module never imports the production
    shooting code; tests wire production residuals in from outside.
    """
    z = np.asarray(z, dtype=float)
    f0 = residual_fn(z)
    jac = np.empty((f0.size, z.size))
    for c in range(z.size):
        dz = np.zeros_like(z)
        dz[c] = h
        jac[:, c] = (residual_fn(z + dz) - residual_fn(z - dz)) / (2.0 * h)
    return jac


def _flow_block(jac: np.ndarray, m: int, row_block: int, col_block: int) -> np.ndarray:
    return jac[row_block * m : (row_block + 1) * m, col_block * m : (col_block + 1) * m]


def block_elimination_product(jac: np.ndarray, K: int, m: int) -> np.ndarray:
    """Chain the per-subinterval flow derivatives out of a shooting Jacobian.

    Block-eliminating the continuity identities of the assembled Jacobian
    leaves the end-to-end sensitivity of the final density with respect to
    the initial reduced velocity; it is nonsingular exactly when the full
    matrix is.
    """
    if jac.shape != ((2 * K - 1) * m, (2 * K - 1) * m):
        raise ValueError("jacobian shape does not match K and block size")
    if K == 1:
        return jac.copy()
    # subinterval 0: d(rho^1_end, vhat^1_end)/d vhat^0, stacked (2m, m)
    product = np.vstack(
        [_flow_block(jac, m, 0, 0), _flow_block(jac, m, 1, 0)]
    )
    for k in range(1, K - 1):
        rho_col, vhat_col = 2 * k - 1, 2 * k
        step = np.block(
            [
                [
                    _flow_block(jac, m, 2 * k, rho_col),
                    _flow_block(jac, m, 2 * k, vhat_col),
                ],
                [
                    _flow_block(jac, m, 2 * k + 1, rho_col),
                    _flow_block(jac, m, 2 * k + 1, vhat_col),
                ],
            ]
        )
        product = step @ product
    last = np.hstack(
        [
            _flow_block(jac, m, 2 * K - 2, 2 * K - 3),
            _flow_block(jac, m, 2 * K - 2, 2 * K - 2),
        ]
    )
    return last @ product


def is_numerically_nonsingular(mat: np.ndarray, cond_cap: float = 1e12) -> bool:
    sv = np.linalg.svd(np.asarray(mat, dtype=float), compute_uv=False)
    return sv.min() > 0 and sv.max() / sv.min() < cond_cap


def analytic_w2_gaussian_1d(
    b0: float, b1: float, sigma0: float, sigma1: float
) -> float:
    """Closed-form transport distance between untruncated 1D normals."""
    if sigma0 <= 0 or sigma1 <= 0:
        raise ValueError("standard deviations must be positive")
    return float(np.hypot(b0 - b1, sigma0 - sigma1))
