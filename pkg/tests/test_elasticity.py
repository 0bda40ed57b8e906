import math

import numpy as np
import pytest

from conftest import nearest_design_element
from rotoropt.elasticity import (ElasticParams, ElasticSolver, PsiTable, phi, phi_prime, precompute_psi_table,
                                 principal_stresses, psi_value, von_mises_voigt)
from rotoropt.errors import TableError
from rotoropt.mesh import AIR, IRON, MAGNET_1, MaterialConfig, build_pole_mesh


def test_penalty_at_the_limit():
    assert phi(2.0, 2.0, 16) == pytest.approx(2.0 ** (1 / 16) - 1.0)
    assert phi(0.0, 2.0, 16) == 0.0
    assert phi(1e-3, 2.0, 16) == pytest.approx(0.0, abs=1e-30)


def test_penalty_derivative():
    s = np.array([0.5, 1.0, 1.7, 3.0])
    eps = 1e-6
    numeric = (phi(s + eps, 1.3, 16) - phi(s - eps, 1.3, 16)) / (2 * eps)
    np.testing.assert_allclose(phi_prime(s, 1.3, 16), numeric, rtol=1e-6)


def test_von_mises_is_frame_invariant(rng):
    for sxx, syy, sxy in rng.standard_normal((5, 3)):
        tensor = np.array([[sxx, sxy], [sxy, syy]])
        angle = rng.uniform(0.0, math.pi)
        turn = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        moved = turn @ tensor @ turn.T
        before = von_mises_voigt(np.array([sxx, syy, sxy]))
        after = von_mises_voigt(np.array([moved[0, 0], moved[1, 1], moved[0, 1]]))
        assert after == pytest.approx(before, rel=1e-12)
        s1, s2 = principal_stresses(np.array([sxx, syy, sxy]))
        assert s1 ** 2 + s2 ** 2 - s1 * s2 == pytest.approx(before, rel=1e-12)


def test_rotating_clamped_annulus(spec):
    """Plane-stress disk spinning about its clamped bore: radial growth of the rim."""
    mesh = build_pole_mesh(spec, 0.001)
    params = ElasticParams.reference()
    solver = ElasticSolver(mesh, params)
    field = solver.solve_elasticity(MaterialConfig.uniform(mesh, IRON))

    nu = 1.0 / 3.0
    a, b = mesh.spec.rotor_inner_radius, mesh.spec.rotor_outer_radius
    c = (1.0 - nu ** 2) * params.rho_f * params.omega ** 2 / (8.0 * params.e_f)
    system = np.array([[a, 1.0 / a], [1.0 + nu, -(1.0 - nu) / b ** 2]])
    A, B = np.linalg.solve(system, [c * a ** 3, (3.0 + nu) * c * b ** 2])
    expected = A * b + B / b - c * b ** 3

    rim = solver.mesh.node_set("gamma_r")
    points = solver.mesh.points[rim]
    radial = np.sum(field.values[rim] * points, axis=1) / np.hypot(*points.T)
    assert expected > 0.0
    np.testing.assert_allclose(radial, expected, rtol=1e-2)


@pytest.mark.parametrize("where, source, target", [
    ((0.06, 0.6), IRON, AIR),
    ((0.066, 0.2), MAGNET_1, IRON),
    ((0.05, 0.3), IRON, MAGNET_1),
])
def test_stress_sensitivity_matches_differences(coarse_mesh, magnet_config, where, source, target):
    solver = ElasticSolver(coarse_mesh, ElasticParams(stress_limit=100e6))
    element = nearest_design_element(coarse_mesh, *where)
    assert magnet_config.fractions[element, source] == 1.0
    field = solver.solve_elasticity(magnet_config)
    adjoint = solver.solve_stress_adjoint(magnet_config, field)
    exact = solver.fraction_sensitivity(magnet_config, field, adjoint, element, source, target)

    def penalty(config):
        return solver.stress_penalty(solver.solve_elasticity(config), config)

    eps = 1e-4
    numeric = (penalty(magnet_config.transfer(element, source, target, eps))
               - penalty(magnet_config.transfer(element, source, target, -eps))) / (2 * eps)
    assert exact == pytest.approx(numeric, rel=1e-2)


def test_max_von_mises_ignores_soft_material(coarse_mesh, magnet_config):
    solver = ElasticSolver(coarse_mesh)
    field = solver.solve_elasticity(magnet_config)
    vm = solver.von_mises_pa(field, magnet_config)
    iron = solver.constrained & (solver.element_weights(magnet_config) >= 0.5)
    assert solver.max_von_mises(field, magnet_config) == pytest.approx(vm[iron].max())
    assert solver.max_von_mises(field, magnet_config) > 0.0


class TestPsi:
    def test_vanishes_without_contrast_or_stress(self):
        assert psi_value(0.0, 1.0, 0.5, 16) == (0.0, True)
        assert psi_value(0.3, 0.0, 0.0, 16) == (0.0, True)

    def test_quadratic_in_small_contrast(self):
        small, _ = psi_value(1e-3, 1.0, 0.3, 16)
        double, _ = psi_value(2e-3, 1.0, 0.3, 16)
        assert small / double == pytest.approx(0.25, rel=5e-2)

    def test_table_is_symmetric_in_the_principal_stresses(self):
        table = precompute_psi_table(ElasticParams.reference(), r_count=2, stress_count=5, stress_range=1.5)
        assert table.values.shape == (2, 5, 5)
        np.testing.assert_allclose(table.values, np.swapaxes(table.values, 1, 2))
        r = table.r_values[0]
        assert table(r, 0.75, -0.75) == pytest.approx(table(r, -0.75, 0.75))

    def test_table_shape_is_checked(self):
        with pytest.raises(TableError):
            PsiTable(np.zeros(2), np.zeros(3), np.zeros((2, 3, 2)), 16)


def test_stress_derivative_needs_the_psi_table(coarse_mesh, magnet_config):
    solver = ElasticSolver(coarse_mesh)
    field = solver.solve_elasticity(magnet_config)
    adjoint = solver.solve_stress_adjoint(magnet_config, field)
    with pytest.raises(TableError):
        solver.td_vonmises(magnet_config, field, adjoint)
    table = precompute_psi_table(solver.params, r_count=2, stress_count=3, stress_range=3.0)
    td = solver.td_vonmises(magnet_config, field, adjoint, table)
    assert td.shape == (solver.mesh.n_elements, 4, 4)
    assert np.all(np.isfinite(td))
    np.testing.assert_array_equal(td[:, np.arange(4), np.arange(4)], 0.0)
