"""
Topological derivatives of the magnetic, thermal, stress and volume terms.

Element TD arrays have shape (elements, M, M) with entry [e, i, j] the
derivative for replacing material i by j at the element's evaluation point;
the diagonal is zero. Pairs of linear materials use the closed form,
pairs involving iron use spline tables of exterior-problem samples.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import TableError
from .exterior import ExteriorProblem, reference_magnet_laws
from .levelset import TDField, generalized_td, simplex_vertices
from .materials import h_eval
from .mesh import AIR, IRON, MAGNET_1, MAGNET_2, N_MATERIALS, element_mean, screened_poisson_solve
from .thermal import theta_penalty

logger = logging.getLogger(__name__)

B_MAX = 3.0
RADIAL_SAMPLES = 50
ANGULAR_SAMPLES = 48

# table pair -> (source, target) with m0 represented by MAGNET_1 magnetized along e_0
TABLE_PAIRS = {
    "f->a": (IRON, AIR),
    "a->f": (AIR, IRON),
    "f->m0": (IRON, MAGNET_1),
    "m0->f": (MAGNET_1, IRON),
}
ISOTROPIC_PAIRS = ("f->a", "a->f")
LINEAR = (AIR, MAGNET_1, MAGNET_2)


def rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class TDSampleTable:
    """Samples (f1, f2) over |U| (and angle of U for the iron/magnet pairs) with their splines."""

    pair: str
    radii: np.ndarray  # (T,)
    angles: np.ndarray  # (A,) or empty for isotropic pairs
    samples: np.ndarray  # (T, 2) or (T, A, 2)

    def __post_init__(self):
        if self.pair not in TABLE_PAIRS:
            raise TableError(f"unknown table pair '{self.pair}'")
        expected = (len(self.radii), 2) if self.isotropic else (len(self.radii), len(self.angles), 2)
        if self.samples.shape != expected:
            raise TableError(f"table {self.pair}: samples of shape {self.samples.shape}, expected {expected}")
        if not np.all(np.isfinite(self.samples)):
            raise TableError(f"table {self.pair} contains non-finite samples")

    @property
    def isotropic(self):
        return self.pair in ISOTROPIC_PAIRS

    @property
    def b_max(self):
        return float(self.radii[-1])

    @cached_property
    def _radial(self):
        if self.isotropic:
            return CubicSpline(self.radii, self.samples, axis=0, bc_type="natural")
        return CubicSpline(self.radii, np.eye(len(self.radii)), axis=0, bc_type="natural")

    @cached_property
    def _angular(self):
        angles = np.append(self.angles, 2.0 * math.pi)
        samples = np.concatenate([self.samples, self.samples[:, :1]], axis=1)
        return CubicSpline(angles, samples, axis=1, bc_type="periodic")

    def __call__(self, U):
        U = np.asarray(U, dtype=float)
        shape = U.shape
        U = U.reshape(-1, 2)
        t = np.hypot(U[:, 0], U[:, 1])
        if np.any(t > self.b_max * (1 + 1e-12)):
            logger.warning("table %s: |U| up to %.3g T beyond the sampled %.3g T; clamping",
                           self.pair, t.max(), self.b_max)
            t = np.minimum(t, self.b_max)
        beta = np.mod(np.arctan2(U[:, 1], U[:, 0]), 2.0 * math.pi)
        if self.isotropic:
            g = self._radial(t)
            c, s = np.cos(beta), np.sin(beta)
            out = np.stack([c * g[:, 0] - s * g[:, 1], s * g[:, 0] + c * g[:, 1]], axis=1)
        else:
            weights = self._radial(t)  # (Q, T) cardinal weights
            along = self._angular(beta)  # (T, Q, 2)
            out = np.einsum("qi,iqc->qc", weights, along)
        return out.reshape(shape)


def build_table(pair, laws, radial=RADIAL_SAMPLES, angular=ANGULAR_SAMPLES, b_max=B_MAX,
                threads=1, min_level=1, max_level=3):
    """Sample a table pair by exterior solves."""
    if pair not in TABLE_PAIRS:
        raise TableError(f"unknown table pair '{pair}'")
    source, target = TABLE_PAIRS[pair]
    if pair not in ISOTROPIC_PAIRS:
        laws = reference_magnet_laws(laws)
    problem = ExteriorProblem(source, target, laws, min_level=min_level, max_level=max_level)
    radii = np.linspace(0.0, b_max, radial)

    def sample(U):
        return problem.solve(np.asarray(U, dtype=float)).f

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        if pair in ISOTROPIC_PAIRS:
            samples = np.array(list(pool.map(sample, [(t, 0.0) for t in radii])))
            angles = np.zeros(0)
        else:
            angles = 2.0 * math.pi * np.arange(angular) / angular
            at_zero = sample((0.0, 0.0))
            points = [(t * math.cos(b), t * math.sin(b)) for t in radii[1:] for b in angles]
            rest = np.array(list(pool.map(sample, points))).reshape(radial - 1, angular, 2)
            samples = np.concatenate([np.broadcast_to(at_zero, (1, angular, 2)), rest], axis=0)
    logger.info("table %s: %d x %d samples up to %.2f T", pair, radial, max(len(angles), 1), b_max)
    return TDSampleTable(pair, radii, angles, samples)


def required_pairs():
    return tuple(TABLE_PAIRS)


def linear_f(source, target, U, laws):
    """Closed-form (f1, f2) for two linear materials."""
    if source not in LINEAR or target not in LINEAR:
        raise ValueError("closed-form topological derivative needs two linear materials")
    nu_i, nu_j = laws.reluctivity(source), laws.reluctivity(target)
    U = np.asarray(U, dtype=float)
    jump = h_eval(target, U, laws) - h_eval(source, U, laws)
    return 2.0 * nu_i / (nu_j + nu_i) * jump


def td_linear_pair(source, target, U, P, laws):
    return np.sum(linear_f(source, target, U, laws) * np.asarray(P, dtype=float), axis=-1)


def pair_f(source, target, U, tables, laws):
    """(f1, f2) of any material change at background fields U (..., 2)."""
    if source == target:
        return np.zeros_like(np.asarray(U, dtype=float))
    if source in LINEAR and target in LINEAR:
        return linear_f(source, target, U, laws)
    if {source, target} == {IRON, AIR}:
        return _table(tables, "f->a" if source == IRON else "a->f")(U)
    magnet = target if source == IRON else source
    turn = rotation(laws.angle(magnet))
    table = _table(tables, "f->m0" if source == IRON else "m0->f")
    return table(np.asarray(U) @ turn) @ turn.T


def _table(tables, pair):
    try:
        return tables[pair]
    except KeyError:
        raise TableError(f"missing TD sample table '{pair}'; run precompute") from None


@dataclass(frozen=True)
class PointData:
    """Point evaluations on a set of elements, per rotor position where applicable."""

    elements: np.ndarray  # parent mesh element indices
    U: np.ndarray  # (N, m, 2) curl u^n
    P: np.ndarray  # (N, m, 2) curl p^n
    u: np.ndarray  # (N, m)
    p: np.ndarray  # (N, m)
    grad_theta: np.ndarray = None  # (m, 2)
    grad_phi: np.ndarray = None
    theta: np.ndarray = None  # (m,)
    phi: np.ndarray = None
    losses: np.ndarray = None  # (m, M) loss density if the point were material i

    @classmethod
    def collect(cls, magnetic, state, adjoint, elements, thermal=None, theta=None, phi=None, loss=None):
        mesh = magnetic.mesh
        elements = np.asarray(elements)
        curls, tri = mesh.curls[elements], mesh.triangles[elements]
        U = np.einsum("nek,eki->nei", state.u[:, tri], curls)
        P = np.einsum("nek,eki->nei", adjoint.u[:, tri], curls)
        u = state.u[:, tri].mean(axis=2)
        p = adjoint.u[:, tri].mean(axis=2)
        if thermal is None:
            return cls(elements, U, P, u, p)
        domain = thermal.domain
        local = np.full(mesh.n_elements, -1, dtype=np.int64)
        local[domain.parent_elements] = np.arange(domain.n_elements)
        sub = local[elements]
        inside = sub >= 0
        sub = np.where(inside, sub, 0)
        grads, sub_tri = domain.grads[sub], domain.triangles[sub]
        grad_theta = np.einsum("ek,eki->ei", theta.values[sub_tri], grads) * inside[:, None]
        grad_phi = np.einsum("ek,eki->ei", phi[sub_tri], grads) * inside[:, None]
        losses = np.zeros((len(elements), N_MATERIALS))
        losses[:, MAGNET_1] = loss.magnet_density[elements, 0]
        losses[:, MAGNET_2] = loss.magnet_density[elements, 1]
        return cls(elements, U, P, u, p, grad_theta, grad_phi,
                   element_mean(domain, theta.values)[sub] * inside, element_mean(domain, phi)[sub] * inside, losses)


def td_torque_field(data, tables, laws):
    """Sum over positions of f^{i->j}(U^n) . P^n for every material pair."""
    m = len(data.elements)
    out = np.zeros((m, N_MATERIALS, N_MATERIALS))
    for i in range(N_MATERIALS):
        for j in range(N_MATERIALS):
            if i != j:
                f = pair_f(i, j, data.U, tables, laws)
                out[:, i, j] = np.sum(f * data.P, axis=(0, 2))
    return out


def td_quasistatic_field(data, tables, laws, tau):
    """Torque TD plus the conductivity change sum_n (sigma_j - sigma_i)/tau (u^n - u^{n-1}) p^n."""
    out = td_torque_field(data, tables, laws)
    if len(data.u) < 2:
        return out
    rate = np.sum((data.u - np.roll(data.u, 1, axis=0)) * data.p, axis=0) / tau
    sigma = laws.conductivities
    out += (sigma[None, :] - sigma[:, None])[None] * rate[:, None, None]
    return out


def td_thermal_terms(data, params):
    """Diffusion, temperature penalty and heat source parts of the coupled TD."""
    lam = params.conductivities
    polar = 2.0 * lam[:, None] * (lam[None, :] - lam[:, None]) / (lam[None, :] + lam[:, None])
    flux = np.sum(data.grad_theta * data.grad_phi, axis=1)
    c = params.magnet_indicator
    penalty = params.weight * theta_penalty(data.theta, params.limit)
    out = polar[None] * flux[:, None, None]
    out += (c[None, :] - c[:, None])[None] * penalty[:, None, None]
    out -= (data.losses[:, None, :] - data.losses[:, :, None]) * data.phi[:, None, None]
    index = np.arange(N_MATERIALS)
    out[:, index, index] = 0.0
    return out


def td_coupled_field(data, tables, laws, params, tau):
    return td_quasistatic_field(data, tables, laws, tau) + td_thermal_terms(data, params)


def nodal_td(element_td, psi, space):
    """Area-average element arrays onto design nodes and pick each node's sector entries."""
    m = element_td.shape[0]
    M = psi.M
    nodal = (space.node_average @ element_td[:, :M, :M].reshape(m, M * M)).reshape(-1, M, M)
    materials = psi.materials()
    basis = simplex_vertices(M)
    others = np.array([basis.others(i) for i in range(M)])
    values = np.take_along_axis(nodal[np.arange(len(materials)), materials], others[materials], axis=1)
    return TDField(values, materials)


def assemble_generalized_td(fields, psi, mesh, rho=None):
    """Weighted sum of element TD arrays over the design elements, mapped to g and optionally smoothed."""
    space = mesh.design_space
    total = None
    for weight, array in fields:
        term = weight * np.asarray(array)
        total = term if total is None else total + term
    td = nodal_td(total, psi, space)
    g = generalized_td(td, simplex_vertices(psi.M))
    if rho is None:
        return g
    return screened_poisson_solve(g, rho, mesh)
