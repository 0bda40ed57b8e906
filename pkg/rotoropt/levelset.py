"""
Vector-valued multi-material level sets on simplex sectors.

M materials are encoded by an R^(M-1)-valued nodal field psi: a point belongs
to material i when psi lies in the cone around the i-th vertex of the regular
unit simplex, i.e. psi.V_i > psi.V_j for all j != i.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)

ANTIPODAL_TOL = 1e-12


@dataclass(frozen=True)
class SectorBasis:
    M: int
    vertices: np.ndarray  # (M, M-1)
    normals: np.ndarray  # (M, M-1, M-1), rows (V_i - V_j)/|V_i - V_j| for j != i
    inverses: np.ndarray  # (M, M-1, M-1)

    def others(self, i):
        return [j for j in range(self.M) if j != i]


@lru_cache(maxsize=None)
def simplex_vertices(M):
    if M < 2:
        raise ValueError("at least two materials are required")
    vertices = np.zeros((M, M - 1))
    for i in range(1, M + 1):
        for n in range(1, M):
            if n < i:
                vertices[i - 1, n - 1] = -math.sqrt(M / ((M - 1) * (M - n) * (M - n + 1)))
            elif n == i:
                vertices[i - 1, n - 1] = math.sqrt(M * (M - n) / ((M - 1) * (M - n + 1)))
    normals = np.zeros((M, M - 1, M - 1))
    for i in range(M):
        for row, j in enumerate(j for j in range(M) if j != i):
            diff = vertices[i] - vertices[j]
            normals[i, row] = diff / np.linalg.norm(diff)
    inverses = np.linalg.inv(normals)
    for array in (vertices, normals, inverses):
        array.setflags(write=False)
    return SectorBasis(M, vertices, normals, inverses)


@dataclass(frozen=True)
class LevelSetField:
    """Nodal level set on the design nodes; ``space.mass`` defines the L2(D) product."""

    values: np.ndarray  # (design nodes, M-1)
    space: object

    @property
    def M(self):
        return self.values.shape[1] + 1

    def inner(self, other):
        other = other.values if isinstance(other, LevelSetField) else np.asarray(other)
        return l2_inner(self.values, other, self.space.mass)

    def norm(self):
        return math.sqrt(max(self.inner(self.values), 0.0))

    def normalized(self):
        return LevelSetField(self.values / self.norm(), self.space)

    def materials(self, basis=None):
        basis = basis or simplex_vertices(self.M)
        return np.argmax(self.values @ basis.vertices.T, axis=1)

    def digest(self):
        return hashlib.sha1(np.ascontiguousarray(self.values).tobytes()).hexdigest()


@dataclass(frozen=True)
class TDField:
    """Per design node: the derivatives d^{i->j}J for j != i (ascending j) and i."""

    values: np.ndarray  # (design nodes, M-1)
    materials: np.ndarray  # (design nodes,)


def l2_inner(a, b, mass):
    a = np.asarray(a).reshape(mass.shape[0], -1)
    b = np.asarray(b).reshape(mass.shape[0], -1)
    return float(np.sum(a * (mass @ b)))


def material_at(psi_value, basis):
    return int(np.argmax(basis.vertices @ np.asarray(psi_value, dtype=float)))


def generalized_td(td, basis):
    """Map sector-wise derivatives through N_i^{-1}: g(z) = N_i^{-1} d^i J(z)."""
    return np.einsum("nkl,nl->nk", basis.inverses[td.materials], td.values)


def optimality_angle(psi, g):
    g_norm = math.sqrt(max(l2_inner(g, g, psi.space.mass), 0.0))
    if g_norm == 0.0:
        logger.warning("generalized topological derivative vanishes; treating as converged")
        return 0.0
    cosine = psi.inner(g) / (psi.norm() * g_norm)
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))


def slerp_update(psi, g, s):
    if not 0.0 < s <= 1.0:
        raise ValueError("step size must lie in (0, 1]")
    theta = optimality_angle(psi, g)
    if theta == 0.0:
        return psi
    if math.pi - theta < ANTIPODAL_TOL:
        raise ValueError("level set and descent direction are antipodal")
    g = np.asarray(g, dtype=float)
    g_unit = g / math.sqrt(l2_inner(g, g, psi.space.mass))
    values = (math.sin((1.0 - s) * theta) * psi.values + math.sin(s * theta) * g_unit) / math.sin(theta)
    return LevelSetField(values, psi.space).normalized()
