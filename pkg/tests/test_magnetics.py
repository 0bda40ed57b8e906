import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import nearest_design_element
from rotoropt.magnetics import MagneticSolver, RotorSchedule, phase_currents, source_current
from rotoropt.mesh import AIR, IRON, MAGNET_1, MaterialConfig


def test_phase_currents_are_balanced():
    for alpha in np.linspace(0.0, 0.5, 7):
        assert phase_currents(alpha).sum() == pytest.approx(0.0, abs=1e-12)
    assert source_current(0.0)["coil_a"] == pytest.approx(23.7e6 * math.sin(math.radians(6.0)))


def test_schedule_covers_one_electrical_period():
    schedule = RotorSchedule(11)
    assert schedule.period_angle == pytest.approx(math.pi / 12)
    assert schedule.alphas[-1] < schedule.period_angle
    assert schedule.tau == pytest.approx(60.0 / (4 * 16000.0 * 6 * 11))
    with pytest.raises(ValueError):
        RotorSchedule(0)


def test_static_solution_is_antiperiodic_and_grounded(magnetic, magnet_config, coarse_mesh):
    u, lam = magnetic.solve_magnetostatic(magnet_config, 0.1)
    masters, slaves = coarse_mesh.periodic_pairs()
    np.testing.assert_allclose(u[slaves], -u[masters], atol=1e-14)
    np.testing.assert_allclose(u[coarse_mesh.node_set("gamma_s")], 0.0)
    assert np.abs(u).max() > 0.0
    assert lam.shape == (4,)


def test_nonconducting_quasistatic_equals_static(coarse_mesh, laws, magnet_config, schedule):
    solver = MagneticSolver(coarse_mesh, replace(laws, sigma_m=0.0), harmonics=4, rtol=1e-10)
    static = solver.solve_static_positions(magnet_config, schedule)
    periodic = solver.solve_quasistatic_periodic(magnet_config, schedule)
    assert periodic.quasistatic
    np.testing.assert_allclose(periodic.u, static.u, atol=1e-9 * np.abs(static.u).max())
    np.testing.assert_allclose(solver.torques(periodic), solver.torques(static), rtol=1e-6)


def test_threads_do_not_change_the_result(coarse_mesh, laws, magnet_config, schedule, magnetic):
    threaded = MagneticSolver(coarse_mesh, laws, harmonics=4, rtol=1e-10, threads=2)
    np.testing.assert_allclose(threaded.solve_static_positions(magnet_config, schedule).u,
                               magnetic.solve_static_positions(magnet_config, schedule).u)


def _objective(solver, config, schedule, quasistatic):
    if quasistatic:
        state = solver.solve_quasistatic_periodic(config, schedule)
    else:
        state = solver.solve_static_positions(config, schedule)
    return -solver.average_torque(state)


@pytest.mark.parametrize("quasistatic, where, source, target", [
    (False, (0.06, 0.6), IRON, AIR),
    (False, (0.066, 0.2), MAGNET_1, IRON),
    (True, (0.06, 0.6), IRON, MAGNET_1),
    (True, (0.066, 0.2), MAGNET_1, AIR),
])
def test_adjoint_sensitivity_matches_differences(magnetic, magnet_config, coarse_mesh, schedule,
                                                 quasistatic, where, source, target):
    element = nearest_design_element(coarse_mesh, *where)
    assert magnet_config.fractions[element, source] == 1.0
    if quasistatic:
        state = magnetic.solve_quasistatic_periodic(magnet_config, schedule)
        adjoint = magnetic.solve_adjoint_quasistatic(magnet_config, state, schedule)
    else:
        state = magnetic.solve_static_positions(magnet_config, schedule)
        adjoint = magnetic.solve_adjoint_positions(magnet_config, state)
    exact = magnetic.fraction_sensitivity(magnet_config, state, adjoint, element, source, target)
    eps = 1e-3
    plus = _objective(magnetic, magnet_config.transfer(element, source, target, eps), schedule, quasistatic)
    minus = _objective(magnetic, magnet_config.transfer(element, source, target, -eps), schedule, quasistatic)
    assert exact == pytest.approx((plus - minus) / (2 * eps), rel=1e-2)


def test_mortar_jump_vanishes_after_a_solve(magnetic, magnet_config, schedule):
    state = magnetic.solve_static_positions(magnet_config, schedule)
    for n, alpha in enumerate(state.alphas):
        jump = magnetic.mortar.coupling(alpha) @ state.u[n]
        assert np.abs(jump).max() <= 1e-8
    u, _ = magnetic.solve_magnetostatic(magnet_config, 0.13)
    assert np.abs(magnetic.mortar.coupling(0.13) @ u).max() <= 1e-8


def test_symmetric_rotor_only_sees_the_currents(coarse_mesh, laws, spec):
    """An all-iron rotor turned by two angular mesh steps leaves the stator field unchanged."""
    iron = MaterialConfig.uniform(coarse_mesh, IRON)
    step = 2.0 * coarse_mesh.pole_angle / len(coarse_mesh.boundaries["gamma"])
    load_angle = math.radians(6.0)
    at_rest = MagneticSolver(coarse_mesh, laws, harmonics=4, load_angle=load_angle, rtol=1e-10)
    turned = MagneticSolver(coarse_mesh, laws, harmonics=4, load_angle=load_angle - spec.pole_pairs * step,
                            rtol=1e-10)
    u0, lam0 = at_rest.solve_magnetostatic(iron, 0.0)
    u1, lam1 = turned.solve_magnetostatic(iron, step)
    stator = coarse_mesh.node_side == 1
    scale = np.abs(u0[stator]).max()
    np.testing.assert_allclose(u1[stator], u0[stator], rtol=0.0, atol=1e-6 * scale)
    np.testing.assert_allclose(lam1, lam0, rtol=0.0, atol=1e-6 * np.abs(lam0).max())


def test_all_in_one_jacobian_is_block_cyclic(magnetic, magnet_config, spec):
    schedule = RotorSchedule(3, spec.pole_pairs)
    size, n_free = magnetic.size, magnetic.n_free
    _, matrix = magnetic.quasistatic_system(magnet_config, np.zeros((3, size)), schedule)
    coo = matrix.tocoo()
    nonzero = coo.data != 0.0
    blocks = set(zip(coo.row[nonzero] // size, coo.col[nonzero] // size))
    assert blocks == {(0, 0), (1, 1), (2, 2), (1, 0), (2, 1), (0, 2)}

    mass = magnetic.conductivity_mass(magnet_config, schedule.tau).toarray()
    assert np.abs(mass).max() > 0.0
    for row, col in ((1, 0), (2, 1), (0, 2)):
        block = matrix[row * size:(row + 1) * size, col * size:(col + 1) * size].toarray()
        np.testing.assert_allclose(block[:n_free, :n_free], -mass)
        assert not np.any(block[n_free:]) and not np.any(block[:, n_free:])
