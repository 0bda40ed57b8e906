"""
Nonlinear magnetostatics and time-periodic magnetoquasistatics on one pole.

Unknowns are the nodal potential on rotor and stator (with Gamma_S Dirichlet
and the anti-periodic Gamma_1/Gamma_2 identification eliminated through a
prolongation P) and the mortar multiplier coefficients. Every position n
contributes the saddle system

    P^T (A(P u) - f(alpha_n)) + B^T lam = 0,    B P u = 0,

and the quasistatic problem couples consecutive positions cyclically through
the conductivity mass matrix.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse import bmat, coo_matrix, csr_matrix
from scipy.sparse.linalg import splu

from .errors import SolverError
from .materials import BHLawSet, blended_law, h_eval
from .mesh import Region, element_curl, load_vector, mass_matrix
from .mortar import MortarCoupling

logger = logging.getLogger(__name__)

CURRENT_DENSITY = 23.7e6  # A/m^2
LOAD_ANGLE = math.radians(6.0)
ROTOR_SPEED_RPM = 16000.0

MAX_NEWTON = 50
MAX_HALVINGS = 10


@dataclass(frozen=True)
class RotorSchedule:
    """N equidistant rotor positions over one period of the rotor field."""

    positions: int
    pole_pairs: int = 4
    speed_rpm: float = ROTOR_SPEED_RPM

    def __post_init__(self):
        if self.positions < 1:
            raise ValueError("at least one rotor position is required")

    @property
    def period_angle(self):
        return 2.0 * math.pi / (6 * self.pole_pairs)

    @property
    def alphas(self):
        return self.period_angle * np.arange(self.positions) / self.positions

    @property
    def tau(self):
        return 60.0 / (self.pole_pairs * self.speed_rpm * 6 * self.positions)

    @property
    def speed_rad_s(self):
        return self.speed_rpm * 2.0 * math.pi / 60.0


@dataclass
class MagnetoState:
    """Potentials u^n (full nodal) and multipliers lam^n per rotor position."""

    alphas: np.ndarray
    u: np.ndarray  # (N, nodes)
    lam: np.ndarray  # (N, K)
    quasistatic: bool = False
    tau: float = None
    iterations: int = 0
    residual: float = 0.0

    @property
    def positions(self):
        return len(self.alphas)


def phase_currents(alpha, load_angle=LOAD_ANGLE, pole_pairs=4):
    x = pole_pairs * alpha + load_angle
    return np.array([math.sin(x), math.sin(x + 2 * math.pi / 3), math.sin(x + 4 * math.pi / 3)])


def source_current(alpha, current_density=CURRENT_DENSITY, load_angle=LOAD_ANGLE, pole_pairs=4):
    """Current densities (A/m^2) of the A+, B- and C+ coil sides at rotor angle alpha."""
    i_a, i_b, i_c = phase_currents(alpha, load_angle, pole_pairs)
    return {"coil_a": current_density * i_a, "coil_b": -current_density * i_b, "coil_c": current_density * i_c}


def prolongation(n_nodes, fixed, masters, slaves, sign):
    """Sparse P with u_full = P u_free; slaves copy ``sign`` times their master."""
    dependent = np.zeros(n_nodes, dtype=bool)
    dependent[fixed] = True
    dependent[slaves] = True
    free = np.flatnonzero(~dependent)
    column = np.full(n_nodes, -1, dtype=np.int64)
    column[free] = np.arange(len(free))
    keep = column[masters] >= 0
    rows = np.concatenate([free, slaves[keep]])
    cols = np.concatenate([column[free], column[masters[keep]]])
    data = np.concatenate([np.ones(len(free)), np.full(keep.sum(), float(sign))])
    return coo_matrix((data, (rows, cols)), shape=(n_nodes, len(free))).tocsr(), free


class MagneticSolver:
    """Assembles and solves the mortar-coupled magnetic problems of one mesh."""

    def __init__(self, mesh, laws=None, harmonics=8, current_density=CURRENT_DENSITY,
                 load_angle=LOAD_ANGLE, rtol=1e-8, threads=1):
        self.mesh = mesh
        self.laws = laws or BHLawSet.reference()
        self.mortar = MortarCoupling(mesh, harmonics)
        self.current_density = current_density
        self.load_angle = load_angle
        self.rtol = rtol
        self.threads = max(1, int(threads))
        spec = mesh.spec
        self.scale = spec.axial_length * 2 * spec.pole_pairs
        masters, slaves = mesh.periodic_pairs()
        self.P, self.free = prolongation(mesh.n_nodes, mesh.node_set("gamma_s"), masters, slaves, -1.0)
        self.n_free = self.P.shape[1]
        self.K = self.mortar.space.harmonics
        self.coil_loads = {
            name: load_vector(mesh, mesh.region_mask(region).astype(float))
            for name, region in (("coil_a", Region.COIL_A), ("coil_b", Region.COIL_B), ("coil_c", Region.COIL_C))
        }

    # -- assembly -----------------------------------------------------------------

    @property
    def size(self):
        return self.n_free + self.K

    def source(self, alpha):
        densities = source_current(alpha, self.current_density, self.load_angle, self.mesh.spec.pole_pairs)
        return sum(densities[name] * self.coil_loads[name] for name in self.coil_loads)

    def expand(self, x):
        """Split a reduced vector into the full nodal potential and multipliers."""
        return self.P @ x[:self.n_free], x[self.n_free:]

    def reduce(self, u_full, lam):
        return np.concatenate([u_full[self.free], lam])

    def element_fields(self, u_full):
        return element_curl(self.mesh, u_full)

    def operator(self, config, u_full, jacobian=True):
        """Nodal residual A(u) (without sources) and optionally its Jacobian."""
        mesh = self.mesh
        b = self.element_fields(u_full)
        h, dh = blended_law(config.fractions, b, self.laws)
        local = mesh.areas[:, None] * np.einsum("ei,eki->ek", h, mesh.curls)
        residual = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)
        if not jacobian:
            return residual, None
        k_local = mesh.areas[:, None, None] * np.einsum("eki,eij,elj->ekl", mesh.curls, dh, mesh.curls)
        rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        cols = np.tile(mesh.triangles, (1, 3)).ravel()
        stiffness = coo_matrix((k_local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
        return residual, stiffness

    def static_system(self, config, x, alpha, jacobian=True):
        """Reduced residual and saddle-point Jacobian at one position."""
        u_full, lam = self.expand(x)
        coupling = self.mortar.coupling(alpha) @ self.P
        a_u, stiffness = self.operator(config, u_full, jacobian)
        residual = np.concatenate([
            self.P.T @ (a_u - self.source(alpha)) + coupling.T @ lam,
            coupling @ x[:self.n_free],
        ])
        if not jacobian:
            return residual, None
        matrix = bmat([[self.P.T @ stiffness @ self.P, coupling.T], [coupling, None]], format="csc")
        return residual, matrix

    def conductivity_mass(self, config, tau):
        sigma = config.coefficient(self.laws.conductivities)
        return csr_matrix(self.P.T @ mass_matrix(self.mesh, sigma) @ self.P) / tau

    # -- nonlinear solves ---------------------------------------------------------

    def _newton(self, system, x0, reference, label):
        tol = self.rtol * reference
        x = x0.copy()
        residual, matrix = system(x, True)
        norm = np.linalg.norm(residual)
        for iteration in range(MAX_NEWTON + 1):
            if norm <= tol:
                logger.debug("%s converged in %d Newton steps (residual %.2e)", label, iteration, norm / reference)
                return x, iteration, norm / reference
            if iteration == MAX_NEWTON:
                break
            try:
                step = splu(matrix).solve(-residual)
            except RuntimeError as exc:
                raise SolverError(f"{label}: singular Newton matrix ({exc})", norm / reference) from exc
            t = 1.0
            for _ in range(MAX_HALVINGS + 1):
                trial = x + t * step
                trial_residual, _ = system(trial, False)
                trial_norm = np.linalg.norm(trial_residual)
                if trial_norm < norm:
                    break
                t *= 0.5
            else:
                if norm <= 10.0 * tol:
                    return x, iteration, norm / reference
                raise SolverError(f"{label}: line search failed", norm / reference)
            x = trial
            residual, matrix = system(x, True)
            norm = np.linalg.norm(residual)
        raise SolverError(f"{label}: Newton did not converge in {MAX_NEWTON} steps", norm / reference)

    def _static(self, config, alpha, x0=None):
        zero = np.zeros(self.size)
        reference = np.linalg.norm(self.static_system(config, zero, alpha, False)[0])
        if reference == 0.0:
            return zero, 0, 0.0
        return self._newton(lambda x, jac: self.static_system(config, x, alpha, jac),
                            zero if x0 is None else x0, reference, f"magnetostatic solve at {math.degrees(alpha):.2f} deg")

    def solve_magnetostatic(self, config, alpha):
        """Potential (full nodal) and multipliers at rotor angle ``alpha``."""
        x, _, _ = self._static(config, alpha)
        return self.expand(x)

    def solve_static_positions(self, config, schedule):
        """Independent magnetostatic solves at every rotor position."""
        alphas = schedule.alphas
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(lambda a: self._static(config, a), alphas))
        xs = np.array([r[0] for r in results])
        u = np.array([self.P @ x[:self.n_free] for x in xs])
        return MagnetoState(alphas, u, xs[:, self.n_free:], quasistatic=False,
                            iterations=max(r[1] for r in results), residual=max(r[2] for r in results))

    def quasistatic_system(self, config, xs, schedule, jacobian=True):
        """Stacked residual and block-cyclic all-in-one Jacobian."""
        N = schedule.positions
        alphas = schedule.alphas
        mass = self.conductivity_mass(config, schedule.tau) if N > 1 else None
        residuals, diagonal = [], []
        for n in range(N):
            r, m = self.static_system(config, xs[n], alphas[n], jacobian)
            if mass is not None:
                r = r.copy()
                r[:self.n_free] += mass @ (xs[n, :self.n_free] - xs[n - 1, :self.n_free])
            residuals.append(r)
            diagonal.append(m)
        residual = np.concatenate(residuals)
        if not jacobian:
            return residual, None
        blocks = [[None] * N for _ in range(N)]
        if mass is None:
            blocks[0][0] = diagonal[0]
        else:
            pad = bmat([[mass, None], [None, csr_matrix((self.K, self.K))]])
            for n in range(N):
                blocks[n][n] = diagonal[n] + pad
                blocks[n][(n - 1) % N] = -pad
        return residual, bmat(blocks, format="csc")

    def solve_quasistatic_periodic(self, config, schedule):
        """All-in-one Newton solve of the time-periodic eddy-current problem."""
        N = schedule.positions
        static = self.solve_static_positions(config, schedule)
        xs0 = np.array([self.reduce(static.u[n], static.lam[n]) for n in range(N)])
        zero = np.zeros_like(xs0)
        reference = np.linalg.norm(self.quasistatic_system(config, zero, schedule, False)[0])
        if reference == 0.0:
            return MagnetoState(schedule.alphas, static.u, static.lam, True, schedule.tau)

        def system(flat, jac):
            return self.quasistatic_system(config, flat.reshape(N, self.size), schedule, jac)

        flat, iterations, residual = self._newton(system, xs0.ravel(), reference, "quasistatic solve")
        xs = flat.reshape(N, self.size)
        u = np.array([self.P @ x[:self.n_free] for x in xs])
        return MagnetoState(schedule.alphas, u, xs[:, self.n_free:], True, schedule.tau, iterations, residual)

    # -- torque -------------------------------------------------------------------

    def torque(self, u, lam, alpha):
        """Whole-machine torque (N m) from one pole: scale * r_Gamma * <lam, B_r o rho_{-alpha}>."""
        return float(self.scale * self.mortar.space.radius * lam @ (self.mortar.flux(alpha) @ u))

    def torques(self, state):
        return np.array([self.torque(state.u[n], state.lam[n], state.alphas[n]) for n in range(state.positions)])

    def average_torque(self, state):
        return float(np.mean(self.torques(state)))

    def torque_rhs(self, state, weight=1.0):
        """-dJ/dx for J = -(weight/N) sum_n T_n, stacked per position in reduced form."""
        N = state.positions
        factor = weight * self.scale * self.mortar.space.radius / N
        blocks = []
        for n in range(N):
            flux = self.mortar.flux(state.alphas[n])
            blocks.append(np.concatenate([
                factor * (self.P.T @ (flux.T @ state.lam[n])),
                factor * (flux @ state.u[n]),
            ]))
        return np.array(blocks)

    def stack(self, state):
        return np.array([self.reduce(state.u[n], state.lam[n]) for n in range(state.positions)])

    # -- adjoints -----------------------------------------------------------------

    def _adjoint_state(self, state, ys, quasistatic):
        p = np.array([self.P @ y[:self.n_free] for y in ys])
        return MagnetoState(state.alphas, p, ys[:, self.n_free:], quasistatic, state.tau)

    @staticmethod
    def _transposed_solve(matrix, rhs):
        if not np.any(rhs):
            return np.zeros_like(rhs)
        try:
            return splu(matrix).solve(rhs, trans="T")
        except RuntimeError as exc:
            raise SolverError(f"singular adjoint system: {exc}") from exc

    def solve_adjoint_static(self, config, u, lam, alpha, rhs=None, weight=1.0, positions=1):
        """Transposed Newton-matrix solve; default right-hand side is the averaged torque derivative."""
        _, matrix = self.static_system(config, self.reduce(u, lam), alpha)
        if rhs is None:
            single = MagnetoState(np.array([alpha]), u[None], lam[None])
            rhs = self.torque_rhs(single, weight)[0] / positions
        y = self._transposed_solve(matrix, rhs)
        return self.P @ y[:self.n_free], y[self.n_free:]

    def solve_adjoint_positions(self, config, state, weight=1.0, extra=None):
        """Static adjoints for every position of a magnetostatic state."""
        rhs = self.torque_rhs(state, weight)
        if extra is not None:
            rhs[:, :self.n_free] += np.array([self.P.T @ e for e in extra])
        ys = []
        for n in range(state.positions):
            _, matrix = self.static_system(config, self.reduce(state.u[n], state.lam[n]), state.alphas[n])
            ys.append(self._transposed_solve(matrix, rhs[n]))
        return self._adjoint_state(state, np.array(ys), False)

    def solve_adjoint_quasistatic(self, config, state, schedule, weight=1.0, extra=None):
        """One transposed all-in-one solve; ``extra`` adds full nodal right-hand sides per position."""
        rhs = self.torque_rhs(state, weight)
        if extra is not None:
            rhs[:, :self.n_free] += np.array([self.P.T @ e for e in extra])
        if not np.any(rhs):
            return self._adjoint_state(state, np.zeros_like(rhs), True)
        _, matrix = self.quasistatic_system(config, self.stack(state), schedule)
        y = self._transposed_solve(matrix, rhs.ravel())
        return self._adjoint_state(state, y.reshape(state.positions, self.size), True)

    # -- discrete sensitivities ---------------------------------------------------

    def fraction_sensitivity(self, config, state, adjoint, element, source, target):
        """Exact derivative of the objective behind ``adjoint`` w.r.t. moving fraction source -> target in one element."""
        mesh = self.mesh
        curls = mesh.curls[element]
        total = 0.0
        for n in range(state.positions):
            b = curls.T @ state.u[n][mesh.triangles[element]]
            p = curls.T @ adjoint.u[n][mesh.triangles[element]]
            diff = h_eval(target, b, self.laws) - h_eval(source, b, self.laws)
            total += mesh.areas[element] * diff @ p
        if state.quasistatic and state.positions > 1:
            sigma = self.laws.conductivities
            local = mesh.areas[element] * (np.ones((3, 3)) + np.eye(3)) / 12.0
            nodes = mesh.triangles[element]
            for n in range(state.positions):
                du = state.u[n][nodes] - state.u[n - 1][nodes]
                total += (sigma[target] - sigma[source]) / state.tau * du @ local @ adjoint.u[n][nodes]
        return float(total)
