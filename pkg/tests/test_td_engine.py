import math

import numpy as np
import pytest

from rotoropt.errors import TableError
from rotoropt.exterior import disk_mesh, inclusion_mean, reference_magnet_laws, sample_f12, solve_exterior
from rotoropt.levelset import LevelSetField, simplex_vertices
from rotoropt.mesh import AIR, IRON, MAGNET_1, MAGNET_2
from rotoropt.optimizer import VolumeBudget, volume_td
from rotoropt.td_engine import (PointData, TDSampleTable, assemble_generalized_td, build_table, linear_f,
                                nodal_td, pair_f, rotation, td_linear_pair, td_quasistatic_field,
                                td_torque_field)


class TestExterior:
    def test_disk_mesh_inclusion_is_the_unit_disk(self):
        mesh = disk_mesh(1)
        inside = mesh.labels == 1
        assert mesh.areas[inside].sum() == pytest.approx(math.pi, rel=1e-2)
        assert np.hypot(*mesh.points.T).max() == pytest.approx(128.0)

    @pytest.mark.parametrize("source, target", [(AIR, MAGNET_1), (MAGNET_2, AIR)])
    def test_linear_inclusion_field(self, laws, source, target):
        U = np.array([0.7, -0.4])
        solution = solve_exterior(source, target, U, laws, min_level=2, max_level=3)
        nu_i, nu_j = laws.reluctivity(source), laws.reluctivity(target)
        jump = (nu_j * (U - laws.magnetization(target))) - (nu_i * (U - laws.magnetization(source)))
        np.testing.assert_allclose(inclusion_mean(solution), -jump / (nu_i + nu_j), rtol=1e-2)
        np.testing.assert_allclose(solution.f, linear_f(source, target, U, laws), rtol=1e-2)

    def test_same_material_gives_nothing(self, laws):
        np.testing.assert_allclose(sample_f12(MAGNET_1, MAGNET_1, np.array([1.0, 0.0]), laws, max_level=1), 0.0)

    def test_iron_samples_at_zero_field(self, laws):
        # no background field and no magnet: nothing to perturb
        np.testing.assert_allclose(sample_f12(IRON, AIR, np.zeros(2), laws, max_level=1), 0.0)


class TestSampleTable:
    def test_isotropic_table_rotates_with_the_field(self, synthetic_tables):
        table = synthetic_tables["f->a"]
        U = np.array([[1.2, 0.4], [-0.3, 2.1], [0.0, 0.0]])
        np.testing.assert_allclose(table(U), 0.5 * U, atol=1e-12)

    def test_directed_table_interpolates_exactly_linear_data(self, synthetic_tables):
        table = synthetic_tables["f->m0"]
        U = np.array([[1.2, 0.4], [-0.3, 2.1]])
        np.testing.assert_allclose(table(U)[:, 0], np.hypot(*U.T), rtol=1e-10)
        np.testing.assert_allclose(table(U)[:, 1], 0.0, atol=1e-12)

    def test_fields_beyond_the_table_are_clamped(self, synthetic_tables):
        table = synthetic_tables["f->a"]
        np.testing.assert_allclose(table(np.array([6.0, 0.0])), table(np.array([3.0, 0.0])))

    def test_sample_shape_is_checked(self):
        with pytest.raises(TableError):
            TDSampleTable("f->a", np.linspace(0.0, 1.0, 4), np.zeros(0), np.zeros((3, 2)))
        with pytest.raises(TableError):
            TDSampleTable("f->m2", np.linspace(0.0, 1.0, 4), np.zeros(0), np.zeros((4, 2)))

    def test_magnet_pairs_rotate_into_the_magnetization(self, synthetic_tables, laws):
        U = np.array([0.8, 0.6])
        for magnet in (MAGNET_1, MAGNET_2):
            angle = laws.angle(magnet)
            expected = np.hypot(*U) * np.array([math.cos(angle), math.sin(angle)])
            np.testing.assert_allclose(pair_f(IRON, magnet, U, synthetic_tables, laws), expected, rtol=1e-10)

    def test_missing_table(self, laws):
        with pytest.raises(TableError):
            pair_f(IRON, AIR, np.ones(2), {}, laws)

    def test_unknown_pair(self, laws):
        with pytest.raises(TableError):
            build_table("f->m2", laws)

    @pytest.mark.slow
    def test_built_table_reproduces_fresh_samples(self, laws):
        table = build_table("f->m0", laws, radial=8, angular=8, b_max=2.0, min_level=1, max_level=2)
        U = 1.1 * np.array([math.cos(0.3), math.sin(0.3)])
        fresh = sample_f12(IRON, MAGNET_1, U, reference_magnet_laws(laws), min_level=1, max_level=2)
        np.testing.assert_allclose(table(U), fresh, rtol=5e-2, atol=1e-2 * np.abs(fresh).max())


def test_linear_pair_closed_form(laws):
    U = np.array([[0.3, 0.1], [1.0, -1.0]])
    P = np.array([[2.0, 0.5], [0.0, 1.0]])
    f = linear_f(AIR, MAGNET_2, U, laws)
    np.testing.assert_allclose(td_linear_pair(AIR, MAGNET_2, U, P, laws), np.sum(f * P, axis=1))
    with pytest.raises(ValueError):
        linear_f(IRON, AIR, U, laws)


def test_rotation_matrix():
    np.testing.assert_allclose(rotation(math.pi / 2) @ [1.0, 0.0], [0.0, 1.0], atol=1e-15)


@pytest.fixture
def point_data(rng):
    elements = np.arange(3)
    return PointData(elements, rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 3, 2)),
                     rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))


def test_torque_field_sums_over_positions(point_data, synthetic_tables, laws):
    td = td_torque_field(point_data, synthetic_tables, laws)
    assert td.shape == (3, 4, 4)
    np.testing.assert_array_equal(td[:, np.arange(4), np.arange(4)], 0.0)
    expected = sum(np.sum(linear_f(AIR, MAGNET_1, point_data.U[n], laws) * point_data.P[n], axis=1)
                   for n in range(2))
    np.testing.assert_allclose(td[:, AIR, MAGNET_1], expected)
    np.testing.assert_allclose(td[:, IRON, AIR], np.sum(0.5 * point_data.U * point_data.P, axis=(0, 2)))


def test_quasistatic_field_adds_conductivity(point_data, synthetic_tables, laws):
    tau = 1e-4
    static = td_torque_field(point_data, synthetic_tables, laws)
    dynamic = td_quasistatic_field(point_data, synthetic_tables, laws, tau)
    rate = sum((point_data.u[n] - point_data.u[n - 1]) * point_data.p[n] for n in range(2)) / tau
    np.testing.assert_allclose(dynamic[:, AIR, MAGNET_1] - static[:, AIR, MAGNET_1], laws.sigma_m * rate)
    np.testing.assert_allclose(dynamic[:, MAGNET_2, IRON] - static[:, MAGNET_2, IRON], -laws.sigma_m * rate)
    np.testing.assert_allclose(dynamic[:, MAGNET_1, MAGNET_2], static[:, MAGNET_1, MAGNET_2])


def test_volume_derivative_of_an_iron_design(coarse_mesh):
    space = coarse_mesh.design_space
    basis = simplex_vertices(4)
    psi = LevelSetField(np.tile(basis.vertices[IRON], (space.n_nodes, 1)), space).normalized()
    pair = volume_td(VolumeBudget((MAGNET_1, MAGNET_2), 1.0))
    array = np.broadcast_to(pair, (len(space.elements), 4, 4))
    td = nodal_td(array, psi, space)
    np.testing.assert_array_equal(td.materials, IRON)
    np.testing.assert_allclose(td.values, np.tile([0.0, 1.0, 1.0], (space.n_nodes, 1)))
    g = assemble_generalized_td([(1.0, array)], psi, coarse_mesh)
    np.testing.assert_allclose(g, np.tile(g[0], (space.n_nodes, 1)), atol=1e-12)
    # iron already minimizes the magnet volume
    assert g[0] @ basis.vertices[IRON] > 0.0
    smoothed = assemble_generalized_td([(1.0, array)], psi, coarse_mesh, rho=1e-5)
    np.testing.assert_allclose(smoothed, g, atol=1e-10)
