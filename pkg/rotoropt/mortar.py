"""
Harmonic mortar coupling of rotor and stator across the air-gap circle.

The multiplier lives in the span of cos(k phi), sin(k phi) for the harmonics
k = N_pp*(2m+1) that are anti-periodic over one pole. Rotating the rotor by
alpha multiplies each (cos, sin) coefficient pair by a 2x2 rotation, so the
rotor-side coupling at any angle is a phase map applied to one matrix
assembled at alpha = 0.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .errors import ConfigError

logger = logging.getLogger(__name__)

GAUSS_POINTS = 8


@dataclass(frozen=True)
class MortarSpace:
    harmonics: int
    radius: float
    pole_pairs: int

    def __post_init__(self):
        if self.harmonics < 2 or self.harmonics % 2:
            raise ConfigError("the harmonic count must be a positive even number (cos/sin pairs)")

    @property
    def orders(self):
        return self.pole_pairs * (2 * np.arange(self.harmonics // 2) + 1)

    def basis(self, phi):
        """Basis values at angles ``phi``, shape (K, len(phi)); rows alternate cos, sin."""
        kphi = np.outer(self.orders, np.atleast_1d(phi))
        out = np.empty((self.harmonics, kphi.shape[1]))
        out[0::2] = np.cos(kphi)
        out[1::2] = np.sin(kphi)
        return out

    def rotation(self, alpha):
        """Phase map R(alpha) with mu_k(phi + alpha) = sum_l R_kl mu_l(phi)."""
        out = np.zeros((self.harmonics, self.harmonics))
        for m, k in enumerate(self.orders):
            c, s = math.cos(k * alpha), math.sin(k * alpha)
            out[2 * m:2 * m + 2, 2 * m:2 * m + 2] = [[c, -s], [s, c]]
        return out


class MortarCoupling:
    """Coupling and torque matrices of a pole mesh, assembled once."""

    def __init__(self, mesh, harmonics):
        spec = mesh.spec
        self.space = MortarSpace(harmonics, spec.mortar_radius, spec.pole_pairs)
        rotor_edges = mesh.boundaries["gamma"]
        stator_edges = mesh.boundaries["gamma_stator"]
        if harmonics > len(rotor_edges) // 2:
            raise ConfigError(f"{harmonics} harmonics exceed what {len(rotor_edges)} mortar edges resolve")
        self.n_nodes = mesh.n_nodes
        self.stator = self._trace_matrix(mesh, stator_edges)
        self.rotor = self._trace_matrix(mesh, rotor_edges)
        self.rotor_flux = self._derivative_matrix(mesh, rotor_edges)

    def _angles(self, mesh, edges):
        p = mesh.points
        phi = np.arctan2(p[edges, 1], p[edges, 0])
        return np.clip(phi, 0.0, mesh.pole_angle)

    def _trace_matrix(self, mesh, edges):
        phi = self._angles(mesh, edges)
        nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
        half = 0.5 * (phi[:, 1] - phi[:, 0])
        mid = 0.5 * (phi[:, 1] + phi[:, 0])
        quad = mid[:, None] + half[:, None] * nodes[None]
        w = half[:, None] * weights[None] * self.space.radius
        hat_b = 0.5 * (1.0 + nodes)
        hat_a = 1.0 - hat_b
        mu = self.space.basis(quad.ravel()).reshape(self.space.harmonics, *quad.shape)
        entries_a = np.einsum("keq,eq,q->ke", mu, w, hat_a)
        entries_b = np.einsum("keq,eq,q->ke", mu, w, hat_b)
        rows = np.repeat(np.arange(self.space.harmonics)[:, None], len(edges), axis=1)
        data = np.concatenate([entries_a.ravel(), entries_b.ravel()])
        cols = np.concatenate([np.broadcast_to(edges[:, 0], rows.shape).ravel(),
                               np.broadcast_to(edges[:, 1], rows.shape).ravel()])
        return coo_matrix((data, (np.concatenate([rows.ravel(), rows.ravel()]), cols)),
                          shape=(self.space.harmonics, mesh.n_nodes)).tocsr()

    def _derivative_matrix(self, mesh, edges):
        """Rows: integral of mu_k times the angular derivative of the trace over Gamma."""
        phi = self._angles(mesh, edges)
        k = self.space.orders[:, None]
        integral = np.empty((self.space.harmonics, len(edges)))
        integral[0::2] = (np.sin(k * phi[:, 1]) - np.sin(k * phi[:, 0])) / k
        integral[1::2] = -(np.cos(k * phi[:, 1]) - np.cos(k * phi[:, 0])) / k
        slope = integral / (phi[:, 1] - phi[:, 0])[None]
        rows = np.repeat(np.arange(self.space.harmonics)[:, None], len(edges), axis=1)
        data = np.concatenate([-slope.ravel(), slope.ravel()])
        cols = np.concatenate([np.broadcast_to(edges[:, 0], rows.shape).ravel(),
                               np.broadcast_to(edges[:, 1], rows.shape).ravel()])
        return coo_matrix((data, (np.concatenate([rows.ravel(), rows.ravel()]), cols)),
                          shape=(self.space.harmonics, mesh.n_nodes)).tocsr()

    def coupling(self, alpha):
        """B_alpha: <mu, u_S - u_R o rho_{-alpha}>_Gamma on full nodal vectors."""
        return csr_matrix(self.stator - csr_matrix(self.space.rotation(alpha)) @ self.rotor)

    def flux(self, alpha):
        """G_alpha: <mu, (curl u . n) o rho_{-alpha}>_Gamma from the rotor trace."""
        return csr_matrix(csr_matrix(self.space.rotation(alpha)) @ self.rotor_flux)
