import numpy as np
import pytest

from rotoropt.elasticity import precompute_psi_table
from rotoropt.errors import ConfigError, TableError
from rotoropt.mesh import IRON, MAGNET_1, MAGNET_2
from rotoropt.problem import RotorProblem, uniform_design


@pytest.fixture
def problem(coarse_run, coarse_mesh, synthetic_tables):
    return RotorProblem(coarse_run, synthetic_tables, mesh=coarse_mesh)


def test_two_bar_seed_meets_the_cap(problem):
    psi = problem.initial_design()
    config = problem.material_config(psi)
    design = config.design_fractions
    assert 0.0 < problem.volume(psi) <= problem.budget.cap
    assert design[:, MAGNET_1].sum() > 0.0 and design[:, MAGNET_2].sum() > 0.0
    assert psi.norm() == pytest.approx(1.0)


def test_iron_seed(problem, coarse_mesh):
    psi = problem.initial_design("iron")
    np.testing.assert_allclose(problem.material_config(psi).design_fractions[:, IRON], 1.0)
    assert problem.volume(psi) == 0.0
    with pytest.raises(ConfigError):
        problem.initial_design("three_bar")


def test_cap_is_a_fraction_of_the_rotor_iron(problem, coarse_run):
    assert problem.budget.cap == pytest.approx(coarse_run.volume_fraction * problem.rotor_iron_area)


def test_analyses_are_cached(problem):
    psi = problem.initial_design()
    first = problem.analyse(psi)
    assert problem.analyse(psi) is first
    assert problem.evaluate(psi) == pytest.approx(-first.average_torque)
    assert set(problem.constraint_values(psi)) == {"torque"}


def test_static_gradient(problem):
    psi = problem.initial_design()
    g = problem.gradient(psi)
    assert g.shape == (problem.space.n_nodes, 3)
    assert np.all(np.isfinite(g)) and np.abs(g).max() > 0.0


def test_volume_gradient_of_an_iron_design(problem, coarse_mesh):
    g = problem.volume_gradient(uniform_design(coarse_mesh, IRON))
    np.testing.assert_allclose(g, np.tile(g[0], (len(g), 1)), atol=1e-10)


def test_coupled_gradient(coarse_run, coarse_mesh, synthetic_tables):
    run = coarse_run.replace(thermal_weight=1e6, temperature_limit_degc=40.5)
    problem = RotorProblem(run, synthetic_tables, mesh=coarse_mesh)
    psi = problem.initial_design()
    analysis = problem.analyse(psi)
    assert analysis.state.quasistatic
    assert "temperature_penalty" in analysis.terms
    g = problem.gradient(psi)
    assert np.all(np.isfinite(g))
    assert set(problem.constraint_values(psi)) == {"torque", "max_temp"}


def test_stress_gradient_needs_the_psi_table(coarse_run, coarse_mesh, synthetic_tables):
    run = coarse_run.replace(stress_weight=1e7)
    psi_table = precompute_psi_table(run.elastic_params(), r_count=2, stress_count=3)
    problem = RotorProblem(run, synthetic_tables, mesh=coarse_mesh)
    psi = problem.initial_design()
    with pytest.raises(TableError):
        problem.gradient(psi)
    problem = RotorProblem(run, synthetic_tables, psi_table, mesh=coarse_mesh)
    assert np.all(np.isfinite(problem.gradient(psi)))
    assert "max_vm" in problem.constraint_values(psi)
