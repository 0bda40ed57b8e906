"""
Composite rotor objective J = -T + w_th C_th + w_VM C_VM and its topological derivative.

T is the static average torque, or the quasistatic one (eddy currents in the
magnets) when the recipe asks for it or carries a temperature term. A
RotorProblem plugs into the descent loops of ``optimizer``: it evaluates
designs, returns generalized topological derivatives and the constrained
magnet volume, and keeps the last analyses keyed by the level-set digest.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .elasticity import ElasticSolver
from .errors import ConfigError
from .levelset import LevelSetField, simplex_vertices
from .magnetics import MagneticSolver, RotorSchedule
from .mesh import MAGNET_1, MAGNET_2, MATERIAL_NAMES, N_MATERIALS, IRON, build_pole_mesh, cut_ratios
from .optimizer import volume, volume_td
from .td_engine import (PointData, assemble_generalized_td, td_coupled_field, td_quasistatic_field,
                        td_torque_field)
from .thermal import ThermalSolver

logger = logging.getLogger(__name__)

CACHE_SIZE = 4
BAR_RADIUS = 0.068
BAR_THICKNESS = 0.0065
MAX_BAR_BISECTIONS = 40


@dataclass
class Analysis:
    """Forward solutions and objective terms of one design."""

    config: object
    state: object
    torques: np.ndarray
    objective: float
    terms: dict
    theta: object = None
    loss: object = None
    deformation: object = None

    @property
    def average_torque(self):
        return float(np.mean(self.torques))


class RotorProblem:
    """Objective, constraints and topological derivatives of the rotor design problem."""

    def __init__(self, run, tables=None, psi_table=None, mesh=None):
        self.run = run
        self.spec = run.machine()
        self.mesh = mesh or build_pole_mesh(self.spec, run.mesh_size_m)
        self.laws = run.laws()
        self.schedule = RotorSchedule(run.positions, self.spec.pole_pairs, run.rotor_speed_rpm)
        self.magnetic = MagneticSolver(self.mesh, self.laws, run.harmonics, run.current_density_a_m2,
                                       math.radians(run.load_angle_deg), threads=run.threads)
        self.thermal = ThermalSolver(self.magnetic, run.thermal_params())
        self.elastic = ElasticSolver(self.mesh, run.elastic_params())
        self.tables = tables or {}
        self.psi_table = psi_table
        self.space = self.mesh.design_space
        self.budget = run.volume_budget(run.volume_fraction * self.rotor_iron_area)
        self.rho = run.smoothing_rho_m2 or None
        self._configs = OrderedDict()
        self._analyses = OrderedDict()

    @property
    def rotor_iron_area(self):
        return float(self.mesh.areas[self.mesh.region_mask("rotor_iron")].sum())

    @property
    def quasistatic(self):
        return self.run.quasistatic

    # -- caching ------------------------------------------------------------------

    @staticmethod
    def _remember(cache, key, value):
        cache[key] = value
        cache.move_to_end(key)
        while len(cache) > CACHE_SIZE:
            cache.popitem(last=False)
        return value

    def material_config(self, psi):
        key = psi.digest()
        if key in self._configs:
            return self._configs[key]
        return self._remember(self._configs, key, cut_ratios(psi, self.mesh))

    def analyse(self, psi):
        key = psi.digest()
        if key in self._analyses:
            return self._analyses[key]
        return self._remember(self._analyses, key, self._forward(self.material_config(psi)))

    def _forward(self, config, quasistatic=None, thermal=None, stress=None):
        run = self.run
        quasistatic = self.quasistatic if quasistatic is None else quasistatic
        thermal = run.thermal_weight > 0.0 if thermal is None else thermal
        stress = run.stress_weight > 0.0 if stress is None else stress
        if quasistatic:
            state = self.magnetic.solve_quasistatic_periodic(config, self.schedule)
        else:
            state = self.magnetic.solve_static_positions(config, self.schedule)
        torques = self.magnetic.torques(state)
        terms = {"torque": float(np.mean(torques))}
        objective = -terms["torque"]
        theta = loss = deformation = None
        if thermal:
            loss = self.thermal.eddy_loss_density(state, config, self.schedule)
            theta = self.thermal.solve_heat(config, loss)
            terms["temperature_penalty"] = self.thermal.temperature_penalty(theta, config)
            objective += run.thermal_weight * terms["temperature_penalty"]
        if stress:
            deformation = self.elastic.solve_elasticity(config)
            terms["stress_penalty"] = self.elastic.stress_penalty(deformation, config)
            objective += run.stress_weight * terms["stress_penalty"]
        return Analysis(config, state, torques, float(objective), terms, theta, loss, deformation)

    # -- optimizer protocol -------------------------------------------------------

    def evaluate(self, psi):
        return self.analyse(psi).objective

    def gradient(self, psi):
        """Generalized topological derivative of J, smoothed when a smoothing length is set."""
        analysis = self.analyse(psi)
        fields = [(1.0, self.magnetic_td(analysis))]
        if self.run.stress_weight > 0.0:
            fields.append((self.run.stress_weight, self.stress_td(analysis)))
        return assemble_generalized_td(fields, psi, self.mesh, self.rho)

    def magnetic_td(self, analysis):
        """Element TD of -T (+ w_th C_th) on the design elements, shape (elements, M, M)."""
        config, state = analysis.config, analysis.state
        elements = self.space.elements
        if self.run.thermal_weight > 0.0:
            phi, adjoint = self.thermal.solve_coupled_adjoint(config, state, analysis.theta, self.schedule, 1.0)
            data = PointData.collect(self.magnetic, state, adjoint, elements, self.thermal,
                                     analysis.theta, phi, analysis.loss)
            return td_coupled_field(data, self.tables, self.laws, self.thermal.params, self.schedule.tau)
        if state.quasistatic:
            adjoint = self.magnetic.solve_adjoint_quasistatic(config, state, self.schedule, 1.0)
            data = PointData.collect(self.magnetic, state, adjoint, elements)
            return td_quasistatic_field(data, self.tables, self.laws, self.schedule.tau)
        adjoint = self.magnetic.solve_adjoint_positions(config, state, 1.0)
        data = PointData.collect(self.magnetic, state, adjoint, elements)
        return td_torque_field(data, self.tables, self.laws)

    def stress_td(self, analysis):
        """Element TD of C_VM on the design elements."""
        config, deformation = analysis.config, analysis.deformation
        adjoint = self.elastic.solve_stress_adjoint(config, deformation)
        td = self.elastic.td_vonmises(config, deformation, adjoint, self.psi_table)
        return td[self.elastic.local[self.space.elements]]

    def volume(self, psi):
        return volume(self.material_config(psi), self.budget)

    def volume_gradient(self, psi):
        pair = volume_td(self.budget)
        array = np.broadcast_to(pair, (len(self.space.elements), N_MATERIALS, N_MATERIALS))
        return assemble_generalized_td([(1.0, array)], psi, self.mesh, self.rho)

    def constraint_values(self, psi):
        analysis = self.analyse(psi)
        values = {"torque": analysis.terms["torque"]}
        if analysis.theta is not None:
            values["max_temp"] = self.thermal.max_magnet_temperature(analysis.theta, analysis.config)
        if analysis.deformation is not None:
            values["max_vm"] = self.elastic.max_von_mises(analysis.deformation, analysis.config)
        return values

    # -- evaluation ---------------------------------------------------------------

    def full_analysis(self, psi):
        """Quasistatic, thermal and elastic solutions of a design regardless of the recipe."""
        return self._forward(self.material_config(psi), quasistatic=True, thermal=True, stress=True)

    def report(self, psi, full=None):
        """Evaluation metrics of a design; ``full`` reuses a previous full analysis."""
        full = full or self.full_analysis(psi)
        config = full.config
        static = self.magnetic.solve_static_positions(config, self.schedule)
        design = config.design_fractions
        areas = self.space.areas
        fractions = {name: float(areas @ design[:, k] / areas.sum()) for k, name in enumerate(MATERIAL_NAMES)}
        loss_total = self.thermal.total_eddy_loss(full.loss)
        return {
            "objective": self.evaluate(psi),
            "avg_torque": full.average_torque,
            "avg_torque_static": float(np.mean(self.magnetic.torques(static))),
            "max_temp": self.thermal.max_magnet_temperature(full.theta, config),
            "max_vm": self.elastic.max_von_mises(full.deformation, config),
            "eddy_loss_total": loss_total,
            "magnet_volume": volume(config, self.budget),
            "volume_cap": self.budget.cap,
            "volume_fractions": fractions,
            "torques": full.torques.tolist(),
        }

    # -- initial designs ----------------------------------------------------------

    def initial_design(self, seed=None):
        seed = seed or self.run.seed_design
        if seed == "iron":
            return uniform_design(self.mesh, IRON)
        if seed == "two_bar":
            return two_bar_design(self.mesh, self.laws, self.budget)
        raise ConfigError(f"unknown seed design '{seed}'")


def uniform_design(mesh, material, n_materials=N_MATERIALS):
    space = mesh.design_space
    basis = simplex_vertices(n_materials)
    values = np.tile(basis.vertices[material], (space.n_nodes, 1))
    return LevelSetField(values, space).normalized()


def _bar_nodes(points, angle, length, radius=BAR_RADIUS, thickness=BAR_THICKNESS):
    """Nodes inside a bar centred at polar ``angle``, thin along the radial direction."""
    normal = np.array([math.cos(angle), math.sin(angle)])
    tangent = np.array([-normal[1], normal[0]])
    rel = points - radius * normal
    return (np.abs(rel @ normal) <= 0.5 * thickness) & (np.abs(rel @ tangent) <= 0.5 * length)


def two_bar_design(mesh, laws, budget):
    """Iron with one magnet bar per magnetization; the bar length is bisected to meet the volume cap."""
    space = mesh.design_space
    basis = simplex_vertices(N_MATERIALS)
    points = mesh.points[space.nodes]

    def design(length):
        material = np.full(space.n_nodes, IRON)
        material[_bar_nodes(points, laws.phi_2, length)] = MAGNET_2
        material[_bar_nodes(points, laws.phi_1, length)] = MAGNET_1
        return LevelSetField(basis.vertices[material], space).normalized()

    low, high = 0.0, mesh.spec.rotor_outer_radius
    best = design(low)
    for _ in range(MAX_BAR_BISECTIONS):
        middle = 0.5 * (low + high)
        candidate = design(middle)
        if volume(cut_ratios(candidate, mesh), budget) <= budget.cap:
            low, best = middle, candidate
        else:
            high = middle
        if high - low < 1e-5:
            break
    logger.info("two-bar seed: bar length %.2f mm", 1e3 * low)
    return best
