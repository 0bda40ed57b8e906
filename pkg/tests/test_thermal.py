import numpy as np
import pytest

from conftest import nearest_design_element
from rotoropt.magnetics import MagnetoState, RotorSchedule
from rotoropt.mesh import AIR, IRON, MAGNET_1, MAGNET_2, MaterialConfig
from rotoropt.thermal import (LossField, TemperatureField, ThermalParams, ThermalSolver, theta_penalty,
                              theta_penalty_prime)


@pytest.fixture(scope="module")
def thermal(magnetic):
    return ThermalSolver(magnetic)


def test_penalty_is_zero_below_the_limit():
    assert theta_penalty(85.0, 90.0) == 0.0
    assert theta_penalty(92.0, 90.0) == pytest.approx((2.0 / 90.0) ** 2)


def test_penalty_derivative():
    s, eps = np.array([95.0, 120.0]), 1e-5
    numeric = (theta_penalty(s + eps, 90.0) - theta_penalty(s - eps, 90.0)) / (2 * eps)
    np.testing.assert_allclose(theta_penalty_prime(s, 90.0), numeric, rtol=1e-7)
    assert theta_penalty_prime(80.0, 90.0) == 0.0


def test_limit_must_exceed_ambient():
    with pytest.raises(ValueError):
        ThermalParams(limit=30.0, ambient=40.0)


def test_no_losses_keep_the_rotor_at_ambient(thermal, magnet_config, coarse_mesh):
    loss = LossField(np.zeros(coarse_mesh.n_elements), np.zeros((coarse_mesh.n_elements, 2)))
    theta = thermal.solve_heat(magnet_config, loss)
    np.testing.assert_allclose(theta.values, thermal.params.ambient, rtol=1e-10)
    assert thermal.heat_flux_out(theta) == pytest.approx(0.0, abs=1e-8)


def test_heat_balance(thermal, magnet_config, coarse_mesh):
    density = 1e5 * magnet_config.fractions[:, MAGNET_1]
    loss = LossField(density, np.column_stack([density, np.zeros_like(density)]))
    theta = thermal.solve_heat(magnet_config, loss)
    produced = float(coarse_mesh.areas @ density)
    assert thermal.heat_flux_out(theta) == pytest.approx(produced, rel=1e-8)
    masters, slaves = thermal.domain.periodic_pairs()
    np.testing.assert_allclose(theta.values[slaves], theta.values[masters])


def test_corrected_eddy_currents_carry_no_net_current(thermal, magnet_config, coarse_mesh, schedule, rng):
    u = rng.standard_normal((2, coarse_mesh.n_nodes))
    state = MagnetoState(schedule.alphas, u, np.zeros((2, 4)), True, schedule.tau)
    currents = thermal.eddy_currents(state, magnet_config, schedule)
    chi = magnet_config.fractions[:, MAGNET_1]
    weights = coarse_mesh.areas * chi / 3.0
    for n in range(2):
        nodal = np.bincount(coarse_mesh.triangles.ravel(), weights=np.repeat(weights, 3),
                            minlength=coarse_mesh.n_nodes)
        total = nodal @ currents[0, n]
        scale = np.abs(currents[0, n]).max() * weights.sum()
        assert abs(total) <= 1e-10 * scale


def test_penalty_gradient_matches_differences(thermal, magnet_config, rng):
    values = 100.0 + rng.random(thermal.domain.n_nodes)
    gradient = thermal.temperature_penalty_gradient(TemperatureField(values), magnet_config)
    eps = 1e-4
    for node in rng.choice(thermal.domain.n_nodes, size=5, replace=False):
        bump = np.zeros_like(values)
        bump[node] = eps
        plus = thermal.temperature_penalty(TemperatureField(values + bump), magnet_config)
        minus = thermal.temperature_penalty(TemperatureField(values - bump), magnet_config)
        assert gradient[node] == pytest.approx((plus - minus) / (2 * eps), rel=1e-5, abs=1e-14)


def test_loss_coupling_matches_differences(thermal, magnet_config, coarse_mesh, schedule, rng):
    u = 1e-3 * rng.standard_normal((2, coarse_mesh.n_nodes))
    phi = rng.standard_normal(thermal.domain.n_nodes)
    state = MagnetoState(schedule.alphas, u, np.zeros((2, 4)), True, schedule.tau)
    coupling = thermal.loss_coupling(state, magnet_config, schedule, phi)

    def functional(potential):
        moved = MagnetoState(schedule.alphas, potential, np.zeros((2, 4)), True, schedule.tau)
        loss = thermal.eddy_loss_density(moved, magnet_config, schedule)
        return phi @ thermal.heat_source(loss)

    magnet_nodes = np.unique(coarse_mesh.triangles[magnet_config.fractions[:, MAGNET_1] > 0])
    eps = 1e-6
    for node in rng.choice(magnet_nodes, size=4, replace=False):
        for n in range(2):
            bump = np.zeros_like(u)
            bump[n, node] = eps
            numeric = (functional(u + bump) - functional(u - bump)) / (2 * eps)
            assert coupling[n, node] == pytest.approx(numeric, rel=1e-6, abs=1e-9 * abs(numeric) + 1e-12)


@pytest.mark.parametrize("where, source, target", [
    ((0.06, 0.6), IRON, MAGNET_1),
    ((0.066, 0.2), MAGNET_1, AIR),
    ((0.04, 0.6), IRON, AIR),
])
def test_coupled_sensitivity_matches_differences(magnetic, magnet_config, coarse_mesh, schedule,
                                                 where, source, target):
    params = ThermalParams(ambient=40.0, limit=40.0 + 1e-6)
    thermal = ThermalSolver(magnetic, params)

    def objective(config):
        state = magnetic.solve_quasistatic_periodic(config, schedule)
        theta = thermal.solve_heat(config, thermal.eddy_loss_density(state, config, schedule))
        return -magnetic.average_torque(state) + params.weight * thermal.temperature_penalty(theta, config)

    element = nearest_design_element(coarse_mesh, *where)
    assert magnet_config.fractions[element, source] == 1.0
    state = magnetic.solve_quasistatic_periodic(magnet_config, schedule)
    theta = thermal.solve_heat(magnet_config, thermal.eddy_loss_density(state, magnet_config, schedule))
    phi, adjoint = thermal.solve_coupled_adjoint(magnet_config, state, theta, schedule, torque_weight=1.0)
    exact = thermal.fraction_sensitivity(magnet_config, state, theta, phi, adjoint, schedule,
                                         element, source, target)
    eps = 1e-3
    plus = objective(magnet_config.transfer(element, source, target, eps))
    minus = objective(magnet_config.transfer(element, source, target, -eps))
    assert exact == pytest.approx((plus - minus) / (2 * eps), rel=1e-2)


@pytest.mark.parametrize("positions", [2, 5])
def test_eddy_losses_are_never_negative(thermal, magnet_config, coarse_mesh, spec, rng, positions):
    schedule = RotorSchedule(positions, spec.pole_pairs)
    fractions = rng.dirichlet(np.ones(4), len(coarse_mesh.design_space.elements))
    mixed = MaterialConfig.from_design(coarse_mesh, fractions)
    for config in (magnet_config, mixed):
        for _ in range(3):
            u = rng.standard_normal((positions, coarse_mesh.n_nodes))
            state = MagnetoState(schedule.alphas, u, np.zeros((positions, 4)), True, schedule.tau)
            loss = thermal.eddy_loss_density(state, config, schedule)
            assert np.all(loss.density >= 0.0)
            assert np.all(loss.magnet_density >= 0.0)
            assert thermal.total_eddy_loss(loss) >= 0.0
            outside = config.fractions[:, MAGNET_1] + config.fractions[:, MAGNET_2] == 0.0
            assert np.all(loss.density[outside] == 0.0)
