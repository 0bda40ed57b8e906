"""
Eddy-current losses in the magnets and the stationary rotor temperature.

Losses follow from the time-discrete eddy currents j^n = -sigma (u^n - u^{n-1})/tau
with the spatial mean of each magnet removed (the net current of an isolated
magnet is zero). The heat equation is solved on the rotor iron domain
(design domain plus ring) with Robin cooling on the shaft surface and on the
rotor surface facing the air gap, and pole periodicity on Gamma_1/Gamma_2.
Temperatures are in degC throughout.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .errors import SolverError
from .magnetics import prolongation
from .mesh import (AIR, IRON, MAGNET_1, MAGNET_2, edge_mass_matrix,
                   element_mean, load_vector, mass_matrix, stiffness_matrix)

logger = logging.getLogger(__name__)

MAGNETS = (MAGNET_1, MAGNET_2)


@dataclass(frozen=True)
class ThermalParams:
    lambda_f: float = 16.0
    lambda_m: float = 9.0
    lambda_a: float = 0.05
    beta_sh: float = 0.235
    beta_ag: float = 260.0
    ambient: float = 40.0
    limit: float = 90.0
    weight: float = 1e6

    def __post_init__(self):
        if min(self.lambda_f, self.lambda_m, self.lambda_a) <= 0.0:
            raise ValueError("thermal conductivities must be positive")
        if self.beta_sh < 0.0 or self.beta_ag < 0.0:
            raise ValueError("heat transfer coefficients must be nonnegative")
        if not self.limit > self.ambient:
            raise ValueError("temperature limit must exceed the ambient temperature")

    @classmethod
    def reference(cls):
        return cls()

    @property
    def conductivities(self):
        values = np.zeros(4)
        values[IRON], values[AIR] = self.lambda_f, self.lambda_a
        values[MAGNET_1] = values[MAGNET_2] = self.lambda_m
        return values

    @property
    def magnet_indicator(self):
        return np.array([0.0, 0.0, 1.0, 1.0])


@dataclass(frozen=True)
class LossField:
    """Time-averaged loss density per element (W/m^3) and the density each magnet would see."""

    density: np.ndarray  # (elements,)
    magnet_density: np.ndarray  # (elements, 2), without the fraction weight


@dataclass(frozen=True)
class TemperatureField:
    values: np.ndarray  # nodal on the rotor iron mesh, degC


def theta_penalty(s, limit):
    return (np.maximum(1.0, np.asarray(s) / limit) - 1.0) ** 2


def theta_penalty_prime(s, limit):
    return 2.0 / limit * (np.maximum(1.0, np.asarray(s) / limit) - 1.0)


def _midpoints(values, triangles):
    v = values[triangles]
    return 0.5 * (v + np.roll(v, -1, axis=1))


class ThermalSolver:
    """Loss model, heat problem and coupled adjoint on one pole mesh."""

    def __init__(self, magnetic, params=None):
        self.magnetic = magnetic
        self.mesh = magnetic.mesh
        self.laws = magnetic.laws
        self.params = params or ThermalParams.reference()
        self.domain = self.mesh.rotor_iron
        masters, slaves = self.domain.periodic_pairs()
        self.P, self.free = prolongation(self.domain.n_nodes, np.zeros(0, np.int64), masters, slaves, 1.0)
        self.robin_sh = edge_mass_matrix(self.domain, self.domain.edges("gamma_sh"))
        self.robin_ag = edge_mass_matrix(self.domain, self.domain.edges("gamma_r"))

    # -- losses -------------------------------------------------------------------

    def _differences(self, state):
        return state.u - np.roll(state.u, 1, axis=0)

    def _magnet_masks(self, config):
        mesh = self.mesh
        out = []
        for k in MAGNETS:
            chi = config.fractions[:, k]
            area = float(mesh.areas @ chi)
            weights = mass_matrix(mesh, chi) @ np.ones(mesh.n_nodes)
            out.append((chi, area, weights))
        return out

    def corrected_differences(self, state, config):
        """(u^n - u^{n-1}) minus its mean over each magnet, shape (2, N, nodes)."""
        diffs = self._differences(state)
        out = np.zeros((len(MAGNETS),) + diffs.shape)
        for k, (chi, area, weights) in enumerate(self._magnet_masks(config)):
            if area <= 0.0:
                logger.warning("magnet %d is empty; its loss density is zero", k + 1)
                out[k] = diffs
                continue
            means = diffs @ weights / area
            out[k] = diffs - means[:, None]
        return out

    def eddy_currents(self, state, config, schedule):
        """Mean-corrected eddy current densities (A/m^2) per magnet and position, nodal."""
        return -self.laws.sigma_m / schedule.tau * self.corrected_differences(state, config)

    def eddy_loss_density(self, state, config, schedule):
        mesh = self.mesh
        N, tau = schedule.positions, schedule.tau
        factor = self.laws.sigma_m / (N * tau ** 2)
        corrected = self.corrected_differences(state, config)
        magnet_density = np.zeros((mesh.n_elements, len(MAGNETS)))
        for k in range(len(MAGNETS)):
            w = corrected[k][:, mesh.triangles]  # (N, elements, 3)
            squares = (np.sum(w ** 2, axis=2) + np.sum(w * np.roll(w, 1, axis=2), axis=2)) / 6.0
            magnet_density[:, k] = factor * squares.sum(axis=0)
        chi = config.fractions[:, list(MAGNETS)]
        return LossField(np.sum(chi * magnet_density, axis=1), magnet_density)

    def total_eddy_loss(self, loss):
        spec = self.mesh.spec
        return float(self.mesh.areas @ loss.density) * spec.axial_length * 2 * spec.pole_pairs

    # -- heat -------------------------------------------------------------------

    def _operator(self, config):
        p = self.params
        conductivity = config.coefficient(p.conductivities)[self.domain.parent_elements]
        return stiffness_matrix(self.domain, conductivity) + p.beta_sh * self.robin_sh + p.beta_ag * self.robin_ag

    def _solve(self, config, rhs):
        p = self.params
        if p.beta_sh == 0.0 and p.beta_ag == 0.0:
            raise SolverError("heat problem without Robin cooling is singular")
        matrix = (self.P.T @ self._operator(config) @ self.P).tocsc()
        try:
            return self.P @ splu(matrix).solve(self.P.T @ rhs)
        except RuntimeError as exc:
            raise SolverError(f"singular heat system: {exc}") from exc

    def heat_source(self, loss):
        return load_vector(self.domain, loss.density[self.domain.parent_elements])

    def solve_heat(self, config, loss):
        p = self.params
        ones = np.ones(self.domain.n_nodes)
        ambient = p.ambient * (p.beta_sh * (self.robin_sh @ ones) + p.beta_ag * (self.robin_ag @ ones))
        return TemperatureField(self._solve(config, self.heat_source(loss) + ambient))

    def heat_flux_out(self, theta):
        """Total Robin heat flux per unit length leaving the pole, W/m."""
        p = self.params
        excess = theta.values - p.ambient
        ones = np.ones(self.domain.n_nodes)
        return float(p.beta_sh * ones @ (self.robin_sh @ excess) + p.beta_ag * ones @ (self.robin_ag @ excess))

    def magnet_weight(self, config):
        return config.coefficient(self.params.magnet_indicator)[self.domain.parent_elements]

    def temperature_penalty(self, theta, config, limit=None):
        limit = self.params.limit if limit is None else limit
        mid = _midpoints(theta.values, self.domain.triangles)
        element = theta_penalty(mid, limit).mean(axis=1)
        return float(np.sum(self.domain.areas * self.magnet_weight(config) * element))

    def temperature_penalty_gradient(self, theta, config, limit=None):
        limit = self.params.limit if limit is None else limit
        tri = self.domain.triangles
        mid = _midpoints(theta.values, tri)
        weight = (self.domain.areas * self.magnet_weight(config))[:, None] / 3.0 * theta_penalty_prime(mid, limit)
        # midpoint q joins vertices q and q+1, each with weight 1/2
        nodal = 0.5 * (weight + np.roll(weight, 1, axis=1))
        return np.bincount(tri.ravel(), weights=nodal.ravel(), minlength=self.domain.n_nodes)

    def max_magnet_temperature(self, theta, config):
        mask = self.magnet_weight(config) > 0.0
        if not np.any(mask):
            return float(theta.values.max())
        return float(theta.values[np.unique(self.domain.triangles[mask])].max())

    # -- coupled adjoint ----------------------------------------------------------

    def loss_coupling(self, state, config, schedule, phi):
        """d/du^n of phi^T F(u): the second-difference form with mean subtraction, full nodal (N, nodes)."""
        mesh = self.mesh
        N, tau = schedule.positions, schedule.tau
        factor = self.laws.sigma_m / (N * tau ** 2)
        phi_full = np.zeros(mesh.n_elements)
        phi_full[self.domain.parent_elements] = element_mean(self.domain, phi)
        diffs = self._differences(state)
        out = np.zeros_like(diffs)
        for chi, area, weights in self._magnet_masks(config):
            if area <= 0.0:
                continue
            weighted = mass_matrix(mesh, chi * phi_full)

            def project(v):
                return v - (weights @ v) / area

            def project_t(v):
                return v - weights * (v.sum() / area)

            s_d = np.array([project_t(weighted @ project(d)) for d in diffs])
            out += 2.0 * factor * (s_d - np.roll(s_d, -1, axis=0))
        return out

    def solve_thermal_adjoint(self, theta, config):
        gradient = self.temperature_penalty_gradient(theta, config)
        return self._solve(config, -self.params.weight * gradient)

    def solve_coupled_adjoint(self, config, state, theta, schedule, torque_weight=0.0):
        """Thermal adjoint phi, then the magnetic adjoint driven by the loss coupling (plus torque if weighted)."""
        phi = self.solve_thermal_adjoint(theta, config)
        extra = self.loss_coupling(state, config, schedule, phi) if np.any(phi) else None
        adjoint = self.magnetic.solve_adjoint_quasistatic(config, state, schedule, torque_weight, extra)
        return phi, adjoint

    def fraction_sensitivity(self, config, state, theta, phi, adjoint, schedule, element, source, target):
        """Exact derivative of -w_T*T_ed + w_th*C_th w.r.t. moving fraction source -> target in one element."""
        total = self.magnetic.fraction_sensitivity(config, state, adjoint, element, source, target)
        local = np.flatnonzero(self.domain.parent_elements == element)
        if len(local) == 0:
            return total
        e = int(local[0])
        p = self.params
        area = self.domain.areas[e]
        tri = self.domain.triangles[e]
        grad_theta = self.domain.grads[e].T @ theta.values[tri]
        grad_phi = self.domain.grads[e].T @ phi[tri]
        conductivity = p.conductivities
        total += (conductivity[target] - conductivity[source]) * area * grad_theta @ grad_phi
        indicator = p.magnet_indicator
        mean_penalty = theta_penalty(_midpoints(theta.values[tri], np.array([[0, 1, 2]]))[0], p.limit).mean()
        total += p.weight * (indicator[target] - indicator[source]) * area * mean_penalty
        total -= self._loss_fraction_derivative(state, config, schedule, phi, element, source, target)
        return float(total)

    def _loss_fraction_derivative(self, state, config, schedule, phi, element, source, target):
        """d/dt of phi^T F for the fraction transfer, through the magnet masks and their means."""
        mesh = self.mesh
        N, tau = schedule.positions, schedule.tau
        factor = self.laws.sigma_m / (N * tau ** 2)
        phi_full = np.zeros(mesh.n_elements)
        phi_full[self.domain.parent_elements] = element_mean(self.domain, phi)
        nodes = mesh.triangles[element]
        area_e = mesh.areas[element]
        local_mass = area_e * (np.ones((3, 3)) + np.eye(3)) / 12.0
        diffs = self._differences(state)
        corrected = self.corrected_differences(state, config)
        total = 0.0
        for k, (material, (chi, area, weights)) in enumerate(zip(MAGNETS, self._magnet_masks(config))):
            change = float(material == target) - float(material == source)
            if change == 0.0 or area <= 0.0:
                continue
            weighted = mass_matrix(mesh, chi * phi_full)
            for n in range(N):
                w = corrected[k, n]
                direct = phi_full[element] * w[nodes] @ local_mass @ w[nodes]
                d_q_d_mean = -2.0 * np.sum(weighted @ w)
                d_mean = (area_e * diffs[n][nodes].mean() - (weights @ diffs[n]) / area * area_e) / area
                total += change * factor * (direct + d_q_d_mean * d_mean)
        return total
