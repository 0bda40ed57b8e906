"""
Centrifugal loading of the rotor iron and the von Mises stress constraint.

Linear plane-stress elasticity on D + ring with a uniform Poisson ratio of
1/3, so every material stress is E times the unit-modulus stress
sigma(u) = 3/4 eps + 3/8 tr(eps) I. Air and magnets get a weak ersatz modulus.
Stresses are stored in Voigt order (xx, yy, xy) and strains with the
engineering shear gamma = 2 eps_xy.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import SolverError, TableError
from .mesh import AIR, IRON, MAGNET_1, MAGNET_2, N_MATERIALS

logger = logging.getLogger(__name__)

# unit-modulus plane-stress law for nu = 1/3
ELASTIC_D = np.array([[9 / 8, 3 / 8, 0.0], [3 / 8, 9 / 8, 0.0], [0.0, 0.0, 3 / 8]])
PSI_TOL = 1e-4
PSI_MAX_ORDER = 256


@dataclass(frozen=True)
class ElasticParams:
    e_f: float = 200e9
    ersatz_ratio: float = 1e-3
    rho_f: float = 7650.0
    rho_a: float = 0.0
    rho_m: float = 8400.0
    speed_rpm: float = 16000.0
    stress_limit: float = 500e6
    exponent: int = 16
    weight: float = 3e7
    exclusion: float = 0.003

    def __post_init__(self):
        if self.e_f <= 0.0 or not 0.0 < self.ersatz_ratio < 1.0:
            raise ValueError("need E_f > 0 and an ersatz ratio in (0, 1)")
        if min(self.rho_f, self.rho_a, self.rho_m) < 0.0:
            raise ValueError("mass densities must be nonnegative")
        if self.stress_limit <= 0.0:
            raise ValueError("stress limit must be positive")
        if self.exponent < 2:
            raise ValueError("penalty exponent must be at least 2")
        if self.exclusion < 0.0:
            raise ValueError("exclusion margin must be nonnegative")

    @classmethod
    def reference(cls):
        return cls()

    @property
    def e_a(self):
        return self.ersatz_ratio * self.e_f

    @property
    def moduli(self):
        values = np.full(N_MATERIALS, self.e_a)
        values[IRON] = self.e_f
        return values

    @property
    def densities(self):
        values = np.zeros(N_MATERIALS)
        values[IRON], values[AIR] = self.rho_f, self.rho_a
        values[MAGNET_1] = values[MAGNET_2] = self.rho_m
        return values

    @property
    def weights(self):
        """Penalty weights c_i: only iron is constrained."""
        values = np.zeros(N_MATERIALS)
        values[IRON] = 1.0
        return values

    @property
    def omega(self):
        return 2.0 * math.pi * self.speed_rpm / 60.0

    @property
    def m_star(self):
        return (self.stress_limit / self.e_f) ** 2

    def contrast(self, i, j):
        e = self.moduli
        return (e[j] - e[i]) / (2.0 * e[j] + e[i])

    def contrast_range(self):
        values = [self.contrast(i, j) for i in range(N_MATERIALS) for j in range(N_MATERIALS) if i != j]
        return min(values), max(values)


@dataclass(frozen=True)
class DeformationField:
    values: np.ndarray  # (nodes, 2) on the rotor iron mesh, m

    @property
    def flat(self):
        return self.values.ravel()


def phi(s, limit, p):
    """Phi_S(s) = (1 + (s/S)^p)^(1/p) - 1, evaluated in log form."""
    x = np.maximum(np.asarray(s, dtype=float) / limit, 0.0)
    log_x = np.log(np.maximum(x, 1e-300))
    return np.where(x > 0.0, np.expm1(np.logaddexp(0.0, p * log_x) / p), 0.0)


def phi_prime(s, limit, p):
    x = np.maximum(np.asarray(s, dtype=float) / limit, 0.0)
    log_x = np.log(np.maximum(x, 1e-300))
    value = np.exp((p - 1) * log_x - (p - 1) / p * np.logaddexp(0.0, p * log_x)) / limit
    return np.where(x > 0.0, value, 0.0)


def von_mises_voigt(stress):
    """s = 1/2 (3 sigma:sigma - tr^2) for Voigt stresses (..., 3)."""
    sxx, syy, sxy = stress[..., 0], stress[..., 1], stress[..., 2]
    return 0.5 * (3.0 * (sxx ** 2 + syy ** 2 + 2.0 * sxy ** 2) - (sxx + syy) ** 2)


def von_mises_gradient(stress):
    """ds/dsigma in Voigt order."""
    tr = stress[..., 0] + stress[..., 1]
    return np.stack([3.0 * stress[..., 0] - tr, 3.0 * stress[..., 1] - tr, 6.0 * stress[..., 2]], axis=-1)


def principal_stresses(stress):
    mean = 0.5 * (stress[..., 0] + stress[..., 1])
    radius = np.hypot(0.5 * (stress[..., 0] - stress[..., 1]), stress[..., 2])
    return mean + radius, mean - radius


def _lambda(r, s1, s2, t, angle):
    diff2 = (s1 - s2) ** 2
    sq = s1 ** 2 - s2 ** 2
    first = 0.5 * r * t * (5.0 * sq * np.cos(angle) + 3.0 * diff2 * (2.0 - 3.0 * t) * np.cos(2.0 * angle))
    second = 0.25 * (r * t) ** 2 * (3.0 * (s1 + s2) ** 2 + 6.0 * sq * (2.0 - 3.0 * t) * np.cos(angle)
                                    + diff2 * (3.0 * (3.0 * t - 2.0) ** 2 + 4.0 * np.cos(angle) ** 2))
    return first + second


def _psi_quadrature(r, s1, s2, p, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (nodes + 1.0)
    angle = 0.5 * math.pi * (nodes + 1.0)
    tt, aa = np.meshgrid(t, angle, indexing="ij")
    ww = np.outer(0.5 * weights, 0.5 * math.pi * weights)
    s = s1 ** 2 + s2 ** 2 - s1 * s2
    lam = _lambda(r, s1, s2, tt, aa)
    bracket = phi(s + lam, 1.0, p) - phi(s, 1.0, p) - phi_prime(s, 1.0, p) * lam
    return float(np.sum(ww * bracket / tt ** 2) / math.pi)


def psi_value(r, s1, s2, p, tol=PSI_TOL):
    """Psi_r at normalized principal stresses; returns (value, converged)."""
    if r == 0.0 or (s1 == 0.0 and s2 == 0.0):
        return 0.0, True
    order = 8
    previous = _psi_quadrature(r, s1, s2, p, order)
    while order < PSI_MAX_ORDER:
        order *= 2
        current = _psi_quadrature(r, s1, s2, p, order)
        if abs(current - previous) <= tol * max(abs(current), 1e-12):
            return current, True
        previous = current
    return previous, False


@dataclass(frozen=True)
class PsiTable:
    """Psi_r sampled over r and normalized principal stresses sigma/sqrt(M*)."""

    r_values: np.ndarray
    stresses: np.ndarray
    values: np.ndarray  # (len(r_values), len(stresses), len(stresses))
    exponent: int

    def __post_init__(self):
        if self.values.shape != (len(self.r_values), len(self.stresses), len(self.stresses)):
            raise TableError("Psi table shape does not match its grid")
        if not np.all(np.isfinite(self.values)):
            raise TableError("Psi table contains non-finite samples")

    @property
    def stress_range(self):
        return float(self.stresses[-1])

    def covers(self, s1, s2):
        bound = self.stress_range
        return bool(np.all(np.abs(s1) <= bound) and np.all(np.abs(s2) <= bound))

    def __call__(self, r, s1, s2):
        s1, s2 = np.asarray(s1, dtype=float), np.asarray(s2, dtype=float)
        if not self.covers(s1, s2):
            logger.warning("principal stresses outside the Psi table range %.3g; clamping", self.stress_range)
        bound = self.stress_range
        r = np.clip(np.broadcast_to(r, s1.shape), self.r_values[0], self.r_values[-1])
        points = np.stack([r, np.clip(s1, -bound, bound), np.clip(s2, -bound, bound)], axis=-1)
        interpolator = RegularGridInterpolator((self.r_values, self.stresses, self.stresses), self.values)
        return interpolator(points)


def precompute_psi_table(params, r_count=16, stress_count=41, stress_range=3.0, threads=1):
    """Sample Psi_r on a tensor grid; r spans every material contrast with exact endpoints."""
    r_min, r_max = params.contrast_range()
    r_values = np.linspace(r_min, r_max, r_count)
    r_values[0], r_values[-1] = r_min, r_max
    stresses = np.linspace(-stress_range, stress_range, stress_count)
    p = params.exponent

    def row(r):
        out = np.zeros((stress_count, stress_count))
        flagged = 0
        for a in range(stress_count):
            for b in range(a, stress_count):
                value, converged = psi_value(r, stresses[a], stresses[b], p)
                flagged += not converged
                out[a, b] = out[b, a] = value
        return out, flagged

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(row, r_values))
    flagged = sum(f for _, f in rows)
    if flagged:
        logger.warning("%d Psi samples did not reach the quadrature tolerance", flagged)
    logger.info("Psi table: %d r values x %d^2 stresses", r_count, stress_count)
    return PsiTable(r_values, stresses, np.stack([v for v, _ in rows]), p)


def segment_distance(points, starts, ends):
    """Distance from each point to the nearest of the given segments."""
    d = ends - starts
    length2 = np.maximum(np.sum(d ** 2, axis=1), 1e-300)
    rel = points[:, None, :] - starts[None]
    t = np.clip(np.sum(rel * d[None], axis=2) / length2[None], 0.0, 1.0)
    nearest = starts[None] + t[..., None] * d[None]
    return np.linalg.norm(points[:, None, :] - nearest, axis=2).min(axis=1)


class ElasticSolver:
    """Plane-stress problem on the rotor iron mesh, clamped on the shaft surface."""

    def __init__(self, mesh, params=None):
        self.params = params or ElasticParams.reference()
        self.parent = mesh
        self.mesh = sub = mesh.rotor_iron
        self.local = np.full(mesh.n_elements, -1, dtype=np.int64)
        self.local[sub.parent_elements] = np.arange(sub.n_elements)
        g = sub.grads
        self.B = np.zeros((sub.n_elements, 3, 6))
        self.B[:, 0, 0::2] = g[..., 0]
        self.B[:, 1, 1::2] = g[..., 1]
        self.B[:, 2, 0::2] = g[..., 1]
        self.B[:, 2, 1::2] = g[..., 0]
        self.dofs = np.stack([2 * sub.triangles, 2 * sub.triangles + 1], axis=2).reshape(-1, 6)
        self.P = self._constraints()
        self.unit_stiffness = np.einsum("e,eia,ij,ejb->eab", sub.areas, self.B, ELASTIC_D, self.B)
        edges = sub.edges("gamma_sh")
        p = sub.points
        self.constrained = segment_distance(sub.centroids, p[edges[:, 0]], p[edges[:, 1]]) > self.params.exclusion
        self.unit_loads = self._unit_loads()

    def _constraints(self):
        """Prolongation onto dofs free of the clamp, with Gamma_2 tied to R Gamma_1."""
        sub = self.mesh
        n = sub.n_nodes
        clamped = np.zeros(n, bool)
        clamped[sub.node_set("gamma_sh")] = True
        masters, slaves = sub.periodic_pairs()
        either = clamped[masters] | clamped[slaves]
        clamped[masters[either]] = clamped[slaves[either]] = True
        is_slave = np.zeros(n, bool)
        is_slave[slaves] = True
        free_nodes = np.flatnonzero(~clamped & ~is_slave)
        index = np.full(n, -1, dtype=np.int64)
        index[free_nodes] = np.arange(len(free_nodes))
        rows = [2 * free_nodes, 2 * free_nodes + 1]
        cols = [2 * index[free_nodes], 2 * index[free_nodes] + 1]
        data = [np.ones(len(free_nodes)), np.ones(len(free_nodes))]
        c, s = math.cos(sub.pole_angle), math.sin(sub.pole_angle)
        rotation = np.array([[c, -s], [s, c]])
        keep = ~either
        for a in range(2):
            for b in range(2):
                rows.append(2 * slaves[keep] + a)
                cols.append(2 * index[masters[keep]] + b)
                data.append(np.full(int(keep.sum()), rotation[a, b]))
        return coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * n, 2 * len(free_nodes))).tocsr()

    def _unit_loads(self):
        """Per element, integral of x phi_k for both components, length 6 in dof order."""
        sub = self.mesh
        x = sub.points[sub.triangles]  # (m, 3, 2)
        integral = sub.areas[:, None, None] / 12.0 * (x.sum(axis=1)[:, None, :] + x)
        return integral.reshape(-1, 6)

    def element_moduli(self, config):
        return config.coefficient(self.params.moduli)[self.mesh.parent_elements]

    def element_densities(self, config):
        return config.coefficient(self.params.densities)[self.mesh.parent_elements]

    def element_weights(self, config):
        return config.coefficient(self.params.weights)[self.mesh.parent_elements]

    def stiffness(self, config):
        local = self.element_moduli(config)[:, None, None] * self.unit_stiffness
        rows = np.repeat(self.dofs, 6, axis=1).ravel()
        cols = np.tile(self.dofs, (1, 6)).ravel()
        n = 2 * self.mesh.n_nodes
        return coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def load(self, config, omega=None):
        omega = self.params.omega if omega is None else omega
        local = (self.element_densities(config) * omega ** 2)[:, None] * self.unit_loads
        return np.bincount(self.dofs.ravel(), weights=local.ravel(), minlength=2 * self.mesh.n_nodes)

    def _solve(self, config, rhs, label):
        matrix = (self.P.T @ self.stiffness(config) @ self.P).tocsc()
        reduced = self.P.T @ rhs
        try:
            solution = splu(matrix).solve(reduced)
        except RuntimeError as exc:
            raise SolverError(f"singular {label} system: {exc}") from exc
        scale = np.linalg.norm(reduced)
        residual = np.linalg.norm(matrix @ solution - reduced)
        if scale > 0.0 and residual > 1e-10 * scale:
            raise SolverError(f"{label} solve inaccurate (ersatz modulus too small?)", residual / scale)
        return DeformationField((self.P @ solution).reshape(-1, 2))

    def solve_elasticity(self, config, omega=None):
        return self._solve(config, self.load(config, omega), "elasticity")

    def strains(self, field):
        return np.einsum("eij,ej->ei", self.B, field.flat[self.dofs])

    def stresses(self, field):
        """Unit-modulus stresses sigma(u) per element, Voigt (m, 3)."""
        return self.strains(field) @ ELASTIC_D.T

    def von_mises_sq(self, field):
        return von_mises_voigt(self.stresses(field))

    def von_mises_pa(self, field, config):
        return self.element_moduli(config) * np.sqrt(np.maximum(self.von_mises_sq(field), 0.0))

    def max_von_mises(self, field, config):
        """Largest von Mises stress (Pa) over iron-dominated elements away from the shaft."""
        mask = self.constrained & (self.element_weights(config) >= 0.5)
        if not np.any(mask):
            return 0.0
        return float(self.params.e_f * np.sqrt(np.maximum(self.von_mises_sq(field)[mask], 0.0)).max())

    def stress_penalty(self, field, config):
        p = self.params
        s = self.von_mises_sq(field)
        weight = self.mesh.areas * self.element_weights(config) * self.constrained
        return float(np.sum(weight * phi(s, p.m_star, p.exponent)))

    def penalty_gradient(self, field, config):
        p = self.params
        stress = self.stresses(field)
        weight = self.mesh.areas * self.element_weights(config) * self.constrained
        factor = weight * phi_prime(von_mises_voigt(stress), p.m_star, p.exponent)
        local = np.einsum("e,ej,jk,eka->ea", factor, von_mises_gradient(stress), ELASTIC_D, self.B)
        return np.bincount(self.dofs.ravel(), weights=local.ravel(), minlength=2 * self.mesh.n_nodes)

    def solve_stress_adjoint(self, config, field):
        """K p = -dC_VM/du; the operator is symmetric, so the forward factorization pattern is reused."""
        return self._solve(config, -self.penalty_gradient(field, config), "stress adjoint")

    def fraction_sensitivity(self, config, field, adjoint, element, source, target):
        """Exact derivative of C_VM for moving fraction source -> target in one (parent) element."""
        e = int(self.local[element])
        if e < 0:
            return 0.0
        p = self.params
        dofs = self.dofs[e]
        u_e, p_e = field.flat[dofs], adjoint.flat[dofs]
        d_modulus = p.moduli[target] - p.moduli[source]
        d_density = p.densities[target] - p.densities[source]
        d_weight = p.weights[target] - p.weights[source]
        s = von_mises_voigt(ELASTIC_D @ (self.B[e] @ u_e))
        total = d_modulus * p_e @ self.unit_stiffness[e] @ u_e
        total -= d_density * p.omega ** 2 * p_e @ self.unit_loads[e]
        if self.constrained[e]:
            total += d_weight * self.mesh.areas[e] * float(phi(s, p.m_star, p.exponent))
        return float(total)

    def td_vonmises(self, config, field, adjoint, table=None):
        """d^{i->j} C_VM per rotor-iron element, shape (elements, M, M), zero on the diagonal."""
        p = self.params
        sub = self.mesh
        stress = self.stresses(field)
        strain_p = self.strains(adjoint)
        svm = von_mises_voigt(stress)
        ss = stress[:, 0] ** 2 + stress[:, 1] ** 2 + 2.0 * stress[:, 2] ** 2
        s_eps = np.sum(stress * strain_p, axis=1)
        z_dot_p = np.sum(sub.centroids * adjoint.values[sub.triangles].mean(axis=1), axis=1)
        m_star, power = p.m_star, p.exponent
        phi_s, dphi_s = phi(svm, m_star, power), phi_prime(svm, m_star, power)
        s1, s2 = principal_stresses(stress / math.sqrt(m_star))
        e, rho, c = p.moduli, p.densities, p.weights
        out = np.zeros((sub.n_elements, N_MATERIALS, N_MATERIALS))
        for i in range(N_MATERIALS):
            for j in range(N_MATERIALS):
                if i == j:
                    continue
                r = p.contrast(i, j)
                value = 3.0 * e[i] * r * s_eps - (rho[j] - rho[i]) * p.omega ** 2 * z_dot_p
                bracket = c[j] * phi((1.0 - 2.0 * r) ** 2 * svm, m_star, power) - c[i] * phi_s
                if c[i] != 0.0:
                    if table is None:
                        raise TableError("a Psi table is required for the stress topological derivative")
                    bracket = bracket + c[i] * (table(r, s1, s2) + r ** 2 * dphi_s * (svm + ss)
                                                + 4.0 * r * dphi_s * svm)
                out[:, i, j] = value + self.constrained * bracket
        return out
