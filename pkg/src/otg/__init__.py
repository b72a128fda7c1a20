"""Wasserstein geodesics between discrete densities on uniform lattices.

Solves the two-point boundary value problem of the lattice transport system
with a continuation multiple-shooting Newton method, returning the transport
distance, the optimal initial velocity/potential, and the density evolution.
"""

from .continuation import (
    ContinuationSchedule,
    GeodesicProblem,
    GeodesicSolution,
    HomotopyKind,
    homotopy,
    initial_guess,
    run,
)
from .density import (
    CustomSpec,
    DensityField,
    GaussianBump,
    GaussianSpec,
    LaplaceSpec,
    MongeAmpereSpec,
    PolynomialSpec,
    TwoBumpGaussianSpec,
    UniformSpec,
    exact_initial_velocity_ex1,
    linear_blend,
    mass_closure,
    realize,
)
from .dynamics import PhaseState, hamiltonian, rhs, theta, wasserstein_distance
from .errors import OTGError
from .grid import (
    Boundary,
    LatticeGrid,
    SpanningPath,
    build_spanning_path,
    expand_velocity,
    neighbors,
    reconstruct_potential,
)
from .integrator import (
    IntegratorConfig,
    Scheme,
    TrajectoryDiagnostics,
    integrate_subinterval,
    step,
)
from .shooting import (
    ShootingConfig,
    ShootingState,
    jacobian_fd,
    newton_solve,
    residual,
    solve_linear,
)

__version__ = "0.1.0"
