"""Discrete probability densities on a lattice and the analytic families
used by the bundled experiments.

A density is a nonnegative node field whose plain-sum quadrature is one:
``sum(values) * spacing**dim == 1``.  Analytic specs are evaluated at the
nodes, shifted by a small nonnegative constant (to keep truncated tails
strictly positive), and then normalized; the shift is applied *before*
normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DimensionMismatch, GridMismatch, NonFiniteValue
from .grid import LatticeGrid


@dataclass(frozen=True)
class DensityField:
    """Node density values on a grid.

    Values are stored as-is; realized densities are nonnegative with unit
    mass, but transient fields (Newton iterates, mass-closure output) may
    carry small negative entries, so only finiteness is enforced here.
    """

    grid: LatticeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.shape != (self.grid.num_nodes,):
            raise ValueError(
                f"expected {self.grid.num_nodes} node values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise NonFiniteValue("density values contain NaN or infinity")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def min_value(self) -> float:
        return float(self.values.min())

    def interior_values(self) -> np.ndarray:
        """All node values except the lexicographically last one."""
        return self.values[:-1]


# --- analytic density specs -------------------------------------------------


@dataclass(frozen=True)
class GaussianBump:
    rates: tuple[float, ...]
    centers: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        if len(self.rates) != len(self.centers):
            raise ValueError("rates and centers must have equal length")
        if any(r <= 0 for r in self.rates):
            raise ValueError("Gaussian rates must be positive")


@dataclass(frozen=True)
class GaussianSpec:
    """exp(-sum_a rates[a] * (x_a - centers[a])**2), one rate/center per axis."""

    rates: tuple[float, ...]
    centers: tuple[float, ...]
    shift: float = 0.0

    kind = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        _check_shift(self.shift)
        if len(self.rates) != len(self.centers):
            raise ValueError("rates and centers must have equal length")
        if any(r <= 0 for r in self.rates):
            raise ValueError("Gaussian rates must be positive")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        _check_dim(points, len(self.rates))
        q = np.zeros(points.shape[0])
        for a, (r, c) in enumerate(zip(self.rates, self.centers)):
            q += r * (points[:, a] - c) ** 2
        return np.exp(-q)


@dataclass(frozen=True)
class TwoBumpGaussianSpec:
    """Sum of Gaussian bumps sharing one shift; used for split targets."""

    bumps: tuple[GaussianBump, ...]
    shift: float = 0.0

    kind = "two_bump_gaussian"

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        _check_shift(self.shift)
        if not self.bumps:
            raise ValueError("need at least one bump")
        dims = {len(b.rates) for b in self.bumps}
        if len(dims) != 1:
            raise ValueError("all bumps must share the same dimension")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        _check_dim(points, len(self.bumps[0].rates))
        out = np.zeros(points.shape[0])
        for b in self.bumps:
            q = np.zeros(points.shape[0])
            for a, (r, c) in enumerate(zip(b.rates, b.centers)):
                q += r * (points[:, a] - c) ** 2
            out += np.exp(-q)
        return out


@dataclass(frozen=True)
class LaplaceSpec:
    """exp(-sum_a rates[a] * |x_a - centers[a]|), one rate/center per axis."""

    rates: tuple[float, ...]
    centers: tuple[float, ...]
    shift: float = 0.0

    kind = "laplace"

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        _check_shift(self.shift)
        if len(self.rates) != len(self.centers):
            raise ValueError("rates and centers must have equal length")
        if any(r <= 0 for r in self.rates):
            raise ValueError("Laplace rates must be positive")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        _check_dim(points, len(self.rates))
        q = np.zeros(points.shape[0])
        for a, (r, c) in enumerate(zip(self.rates, self.centers)):
            q += r * np.abs(points[:, a] - c)
        return np.exp(-q)


@dataclass(frozen=True)
class UniformSpec:
    shift: float = 0.0

    kind = "uniform"

    def __post_init__(self):
        _check_shift(self.shift)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return np.ones(points.shape[0])


@dataclass(frozen=True)
class PolynomialSpec:
    """sum_a (x_a + 1)**2 * (x_a - 3)**2; vanishes at the corners of [-1, 3]^d."""

    shift: float = 0.0

    kind = "polynomial"

    def __post_init__(self):
        _check_shift(self.shift)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return ((points + 1.0) ** 2 * (points - 3.0) ** 2).sum(axis=1)


@dataclass(frozen=True)
class MongeAmpereSpec:
    """2D torus test density det(I + D2 phi) with phi = beta sin(2 pi x1) sin(2 pi x2).

    This is the Jacobian determinant of the gradient map x + grad(phi), so the
    optimal velocity transporting it to the uniform density is exactly
    grad(phi) (see :func:`exact_initial_velocity_ex1`).
    """

    beta: float
    shift: float = 0.0

    kind = "monge_ampere"

    def __post_init__(self):
        _check_shift(self.shift)
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ValueError("beta must be positive")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        _check_dim(points, 2)
        eps = 4.0 * np.pi**2 * self.beta
        s1 = np.sin(2 * np.pi * points[:, 0])
        s2 = np.sin(2 * np.pi * points[:, 1])
        c1 = np.cos(2 * np.pi * points[:, 0])
        c2 = np.cos(2 * np.pi * points[:, 1])
        return (1.0 - eps * s1 * s2) ** 2 - (eps * c1 * c2) ** 2


class CustomSpec:
    """User-supplied node values, still shifted and normalized by realize().

    Plain class rather than a frozen dataclass because the payload is an array.
    """

    kind = "custom"

    def __init__(self, values, shift: float = 0.0):
        self.values = np.ascontiguousarray(values, dtype=float)
        self.shift = float(shift)
        _check_shift(self.shift)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.values.shape != (points.shape[0],):
            raise DimensionMismatch(
                f"custom values have shape {self.values.shape}, grid has "
                f"{points.shape[0]} nodes"
            )
        return self.values.copy()

    def __eq__(self, other):
        return (
            isinstance(other, CustomSpec)
            and self.shift == other.shift
            and np.array_equal(self.values, other.values)
        )


DensitySpec = Any  # any of the spec classes above


def _check_shift(shift: float) -> None:
    if not np.isfinite(shift) or shift < 0:
        raise ValueError(f"shift must be finite and >= 0, got {shift}")


def _check_dim(points: np.ndarray, expected: int) -> None:
    if points.shape[1] != expected:
        raise DimensionMismatch(
            f"spec is {expected}-dimensional, grid is {points.shape[1]}-dimensional"
        )


def realize(spec: DensitySpec, grid: LatticeGrid) -> DensityField:
    """Evaluate a spec at the nodes, add its shift, and normalize to unit mass."""
    raw = spec.evaluate(grid.coordinates())
    if not np.all(np.isfinite(raw)):
        raise NonFiniteValue("density formula produced non-finite values")
    raw = raw + spec.shift
    if np.any(raw < 0):
        raise ValueError("density formula produced negative values after shift")
    total = raw.sum() * grid.cell_volume
    if total <= 0:
        raise ValueError("density has zero total mass; cannot normalize")
    return DensityField(grid, raw / total)


def linear_blend(mu: DensityField, nu: DensityField, t: float) -> DensityField:
    """(1-t) mu + t nu; normalized automatically since both inputs are."""
    if mu.grid != nu.grid:
        raise GridMismatch("blend endpoints live on different grids")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"blend parameter must be in [0, 1], got {t}")
    return DensityField(mu.grid, (1.0 - t) * mu.values + t * nu.values)


def mass_closure(interior: np.ndarray, grid: LatticeGrid) -> DensityField:
    """Complete an interior density with the mass-conservation value at the last node.

    The returned last entry may be negative; callers enforcing positivity
    (the Newton barrier) check it themselves.
    """
    interior = np.asarray(interior, dtype=float)
    if interior.shape != (grid.num_nodes - 1,):
        raise ValueError(
            f"expected {grid.num_nodes - 1} interior values, got {interior.shape}"
        )
    vol = grid.cell_volume
    last = (1.0 - vol * interior.sum()) / vol
    return DensityField(grid, np.concatenate([interior, [last]]))


def close_interior_batch(interior: np.ndarray, grid: LatticeGrid) -> np.ndarray:
    """Batched mass closure on raw arrays: (..., N-1) -> (..., N)."""
    vol = grid.cell_volume
    last = (1.0 - vol * interior.sum(axis=-1, keepdims=True)) / vol
    return np.concatenate([interior, last], axis=-1)


def exact_initial_velocity_ex1(grid: LatticeGrid, beta: float) -> np.ndarray:
    """Optimal initial velocity for the torus test case, per node and axis.

    For mu = det(I + D2 phi) transported to the uniform density, the optimal
    map is x + grad(phi), hence the initial velocity field is

        grad(phi) = 2 pi beta (cos(2 pi x1) sin(2 pi x2),
                               sin(2 pi x1) cos(2 pi x2)).
    """
    if grid.dim != 2:
        raise DimensionMismatch("the torus test velocity is two-dimensional")
    pts = grid.coordinates()
    amp = 2 * np.pi * beta
    v1 = amp * np.cos(2 * np.pi * pts[:, 0]) * np.sin(2 * np.pi * pts[:, 1])
    v2 = amp * np.sin(2 * np.pi * pts[:, 0]) * np.cos(2 * np.pi * pts[:, 1])
    return np.stack([v1, v2], axis=1)


# --- JSON (de)serialization ---------------------------------------------------

_SPEC_KINDS = {
    "gaussian": GaussianSpec,
    "two_bump_gaussian": TwoBumpGaussianSpec,
    "laplace": LaplaceSpec,
    "uniform": UniformSpec,
    "polynomial": PolynomialSpec,
    "monge_ampere": MongeAmpereSpec,
    "custom": CustomSpec,
}


def spec_from_dict(data: dict) -> DensitySpec:
    """Build a density spec from a JSON-style dict with a ``kind`` tag."""
    from .errors import ConfigError

    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError("density spec must be an object with a 'kind' field")
    data = dict(data)
    kind = data.pop("kind")
    if kind not in _SPEC_KINDS:
        raise ConfigError(f"unknown density kind {kind!r}")
    try:
        if kind == "gaussian":
            spec = GaussianSpec(
                rates=tuple(data.pop("rates")),
                centers=tuple(data.pop("centers")),
                shift=float(data.pop("shift", 0.0)),
            )
        elif kind == "two_bump_gaussian":
            bumps = tuple(
                GaussianBump(rates=tuple(b["rates"]), centers=tuple(b["centers"]))
                for b in data.pop("bumps")
            )
            spec = TwoBumpGaussianSpec(bumps=bumps, shift=float(data.pop("shift", 0.0)))
        elif kind == "laplace":
            spec = LaplaceSpec(
                rates=tuple(data.pop("rates")),
                centers=tuple(data.pop("centers")),
                shift=float(data.pop("shift", 0.0)),
            )
        elif kind == "uniform":
            spec = UniformSpec(shift=float(data.pop("shift", 0.0)))
        elif kind == "polynomial":
            spec = PolynomialSpec(shift=float(data.pop("shift", 0.0)))
        elif kind == "monge_ampere":
            spec = MongeAmpereSpec(
                beta=float(data.pop("beta")), shift=float(data.pop("shift", 0.0))
            )
        else:
            spec = CustomSpec(values=data.pop("values"), shift=float(data.pop("shift", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} density spec: {exc}") from exc
    if data:
        raise ConfigError(f"unknown density spec keys: {sorted(data)}")
    return spec


def spec_to_dict(spec: DensitySpec) -> dict:
    if isinstance(spec, GaussianSpec):
        return {
            "kind": spec.kind,
            "rates": list(spec.rates),
            "centers": list(spec.centers),
            "shift": spec.shift,
        }
    if isinstance(spec, TwoBumpGaussianSpec):
        return {
            "kind": spec.kind,
            "bumps": [
                {"rates": list(b.rates), "centers": list(b.centers)} for b in spec.bumps
            ],
            "shift": spec.shift,
        }
    if isinstance(spec, LaplaceSpec):
        return {
            "kind": spec.kind,
            "rates": list(spec.rates),
            "centers": list(spec.centers),
            "shift": spec.shift,
        }
    if isinstance(spec, (UniformSpec, PolynomialSpec)):
        return {"kind": spec.kind, "shift": spec.shift}
    if isinstance(spec, MongeAmpereSpec):
        return {"kind": spec.kind, "beta": spec.beta, "shift": spec.shift}
    if isinstance(spec, CustomSpec):
        return {"kind": spec.kind, "values": spec.values.tolist(), "shift": spec.shift}
    raise TypeError(f"not a density spec: {spec!r}")
