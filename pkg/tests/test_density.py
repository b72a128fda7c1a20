import math

import numpy as np
import pytest

from otg.density import (
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
    spec_from_dict,
    spec_to_dict,
)
from otg.errors import ConfigError, DimensionMismatch, GridMismatch
from otg.grid import Boundary, LatticeGrid

TORUS_BETA = 1.0 / (256.0 * math.pi**2)


def test_uniform_five_nodes():
    g = LatticeGrid(dim=1, n=4, lower=0.0, upper=2.0)
    field = realize(UniformSpec(), g)
    np.testing.assert_allclose(field.values, 0.4)
    assert field.mass() == pytest.approx(1.0, abs=1e-14)


def test_monge_ampere_origin_value():
    # determinant at the origin: off-diagonal curvature 4 pi^2 beta = 1/64
    spec = MongeAmpereSpec(beta=TORUS_BETA)
    val = spec.evaluate(np.array([[0.0, 0.0]]))[0]
    assert val == pytest.approx(1.0 - (1.0 / 64.0) ** 2, abs=1e-12)


def test_gaussian_positive_unit_mass():
    g = LatticeGrid(dim=1, n=75, lower=-0.5, upper=2.5)
    field = realize(GaussianSpec(rates=(15.0,), centers=(0.4,), shift=1e-4), g)
    assert field.min_value() > 0
    assert abs(field.mass() - 1.0) <= 1e-12 * g.num_nodes


def test_realize_idempotent_under_renormalization():
    g = LatticeGrid(dim=1, n=30, lower=0.0, upper=2.0)
    field = realize(GaussianSpec(rates=(5.0,), centers=(1.0,), shift=0.01), g)
    again = realize(CustomSpec(field.values), g)
    np.testing.assert_allclose(again.values, field.values, rtol=1e-14)


def test_shift_keeps_density_strictly_positive():
    g = LatticeGrid(dim=1, n=50, lower=-0.5, upper=2.5)
    for shift in (1e-4, 1e-2):
        field = realize(GaussianSpec(rates=(50.0,), centers=(0.4,), shift=shift), g)
        assert field.min_value() > 0


def test_mass_closure_examples():
    g = LatticeGrid(dim=1, n=2, lower=0.0, upper=2.0)  # spacing 1
    full = mass_closure(np.array([0.3, 0.4]), g)
    np.testing.assert_allclose(full.values, [0.3, 0.4, 0.3])
    # interior already carrying all the mass: last node exactly zero
    full = mass_closure(np.array([0.5, 0.5]), g)
    assert full.values[-1] == pytest.approx(0.0, abs=1e-15)


def test_mass_closure_inverts_truncation():
    g = LatticeGrid(dim=2, n=3, lower=0.0, upper=1.0)
    field = realize(GaussianSpec(rates=(2.0, 3.0), centers=(0.4, 0.6), shift=0.05), g)
    rebuilt = mass_closure(field.interior_values(), g)
    np.testing.assert_allclose(rebuilt.values, field.values, atol=1e-14)


def test_mass_closure_allows_negative_last_node():
    g = LatticeGrid(dim=1, n=2, lower=0.0, upper=2.0)
    full = mass_closure(np.array([0.7, 0.7]), g)
    assert full.values[-1] < 0


def test_linear_blend_endpoints_and_midpoint():
    g = LatticeGrid(dim=1, n=10, lower=0.0, upper=1.0)
    mu = realize(GaussianSpec(rates=(3.0,), centers=(0.3,), shift=0.1), g)
    nu = realize(GaussianSpec(rates=(3.0,), centers=(0.7,), shift=0.1), g)
    np.testing.assert_allclose(linear_blend(mu, nu, 0.0).values, mu.values)
    np.testing.assert_allclose(linear_blend(mu, nu, 1.0).values, nu.values)
    mid = linear_blend(mu, nu, 0.5)
    np.testing.assert_allclose(mid.values, 0.5 * (mu.values + nu.values))
    assert mid.mass() == pytest.approx(1.0, abs=1e-13)


def test_linear_blend_grid_mismatch():
    g1 = LatticeGrid(dim=1, n=10, lower=0.0, upper=1.0)
    g2 = LatticeGrid(dim=1, n=12, lower=0.0, upper=1.0)
    mu = realize(UniformSpec(), g1)
    nu = realize(UniformSpec(), g2)
    with pytest.raises(GridMismatch):
        linear_blend(mu, nu, 0.5)


def test_exact_velocity_values():
    g = LatticeGrid(dim=2, n=4, lower=0.0, upper=1.0, boundary=Boundary.PERIODIC)
    vel = exact_initial_velocity_ex1(g, TORUS_BETA)
    pts = g.coordinates()
    amp = 2 * math.pi * TORUS_BETA

    def at(x1, x2):
        idx = np.flatnonzero((pts[:, 0] == x1) & (pts[:, 1] == x2))[0]
        return vel[idx]

    np.testing.assert_allclose(at(0.25, 0.25), [0.0, 0.0], atol=1e-18)
    np.testing.assert_allclose(at(0.0, 0.0), [0.0, 0.0], atol=1e-18)
    np.testing.assert_allclose(at(0.25, 0.0), [0.0, amp], atol=1e-18)
    assert amp == pytest.approx(1.0 / (128.0 * math.pi), rel=1e-12)


def test_exact_velocity_dimension_check():
    g = LatticeGrid(dim=1, n=4, lower=0.0, upper=1.0)
    with pytest.raises(DimensionMismatch):
        exact_initial_velocity_ex1(g, TORUS_BETA)


def test_polynomial_vanishes_at_corners():
    g = LatticeGrid(dim=2, n=4, lower=-1.0, upper=3.0)
    field = realize(PolynomialSpec(), g)
    corner = g.flat_index((0, 0))
    assert field.values[corner] == 0.0
    assert field.min_value() >= 0.0


def test_laplace_kink_at_center():
    g = LatticeGrid(dim=2, n=20, lower=-1.0, upper=3.0)
    field = realize(LaplaceSpec(rates=(10.0, 10.0), centers=(1.6, 1.5), shift=0.01), g)
    assert field.min_value() > 0
    assert abs(field.mass() - 1.0) <= 1e-12 * g.num_nodes


def test_two_bump_normalizes_the_sum():
    g = LatticeGrid(dim=2, n=25, lower=-1.0, upper=4.0)
    spec = TwoBumpGaussianSpec(
        bumps=(
            GaussianBump(rates=(5.0, 5.0), centers=(2.45, 2.45)),
            GaussianBump(rates=(5.0, 5.0), centers=(0.55, 2.45)),
        ),
        shift=0.01,
    )
    field = realize(spec, g)
    assert abs(field.mass() - 1.0) <= 1e-12 * g.num_nodes
    assert field.min_value() > 0


def test_spec_dict_round_trip():
    specs = [
        GaussianSpec(rates=(15.0,), centers=(0.4,), shift=1e-4),
        TwoBumpGaussianSpec(
            bumps=(GaussianBump((5.0, 5.0), (2.45, 2.45)),), shift=0.01
        ),
        LaplaceSpec(rates=(10.0, 10.0), centers=(1.6, 1.5), shift=0.01),
        UniformSpec(shift=0.0),
        PolynomialSpec(),
        MongeAmpereSpec(beta=TORUS_BETA),
    ]
    for spec in specs:
        assert spec_from_dict(spec_to_dict(spec)) == spec


def test_spec_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        spec_from_dict({"kind": "uniform", "bogus": 1})
    with pytest.raises(ConfigError):
        spec_from_dict({"kind": "nope"})


def test_density_rejects_wrong_length():
    g = LatticeGrid(dim=1, n=4, lower=0.0, upper=1.0)
    with pytest.raises(ValueError):
        DensityField(g, np.ones(3))
