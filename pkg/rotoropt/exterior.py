"""
Exterior transmission problem for a unit-disk inclusion.

The plane is truncated to a disk of radius 128 with a homogeneous Dirichlet
condition. The inclusion holds the target material j, the background the
source material i. Its corrector K_U yields the sample values (f1, f2) of the
topological derivative of a magnetic objective at background induction U.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import SolverError
from .materials import dh_eval, h_eval
from .mesh import Mesh

logger = logging.getLogger(__name__)

TRUNCATION_RADIUS = 128.0
REFINE_TOL = 1e-3
NEWTON_TOL = 1e-10
MAX_NEWTON = 50
MAX_HALVINGS = 10


def reference_magnet_laws(laws):
    """Law set whose first magnet is magnetized along e_0 (the m0 of the sample tables)."""
    return replace(laws, phi_1=0.0)


def _ring_radii(n_theta, radius):
    inner = max(2, math.ceil(n_theta / (2.0 * math.pi)))
    radii = list(np.linspace(0.0, 1.0, inner + 1)[1:])
    ratio = 1.0 + 2.0 * math.pi / n_theta
    r = 1.0
    while r * ratio < radius:
        r *= ratio
        radii.append(r)
    radii.append(radius)
    return np.array(radii), inner


def disk_mesh(level, radius=TRUNCATION_RADIUS):
    """Center fan plus rings, geometrically graded away from the unit circle; label 1 marks the inclusion."""
    n = 32 * 2 ** level
    radii, inner = _ring_radii(n, radius)
    angles = 2.0 * math.pi * np.arange(n) / n
    points = [np.zeros((1, 2))]
    for r in radii:
        points.append(np.column_stack([r * np.cos(angles), r * np.sin(angles)]))
    points = np.vstack(points)

    def ring(k):
        return 1 + k * n + np.arange(n)

    first = ring(0)
    triangles = [np.column_stack([np.zeros(n, np.int64), first, np.roll(first, -1)])]
    labels = [np.ones(n, np.int64)]
    for k in range(len(radii) - 1):
        a, b = ring(k), ring(k + 1)
        a1, b1 = np.roll(a, -1), np.roll(b, -1)
        triangles += [np.column_stack([a, b, b1]), np.column_stack([a, b1, a1])]
        label = 1 if k + 1 < inner else 0
        labels += [np.full(n, label), np.full(n, label)]
    last = ring(len(radii) - 1)
    outer = np.column_stack([last, np.roll(last, -1)])
    return Mesh(points, np.vstack(triangles), np.concatenate(labels), {"outer": outer})


@dataclass(frozen=True)
class ExteriorSolution:
    corrector: np.ndarray  # curl K_U per element, (elements, 2)
    mesh: Mesh
    level: int
    f: np.ndarray  # (f1, f2)


@dataclass(frozen=True)
class ExteriorProblem:
    """Inclusion of ``target`` in a background of ``source``."""

    source: int
    target: int
    laws: object
    radius: float = TRUNCATION_RADIUS
    min_level: int = 1
    max_level: int = 3

    def laws_inside(self, b):
        return h_eval(self.target, b, self.laws), dh_eval(self.target, b, self.laws)

    def laws_outside(self, b):
        return h_eval(self.source, b, self.laws), dh_eval(self.source, b, self.laws)

    def _blended(self, inside, b):
        h_in, dh_in = self.laws_inside(b)
        h_out, dh_out = self.laws_outside(b)
        return np.where(inside[:, None], h_in, h_out), np.where(inside[:, None, None], dh_in, dh_out)

    def _newton(self, mesh, U, scale=1.0, k0=None):
        inside = mesh.labels == 1
        areas, curls = mesh.areas, mesh.curls
        m = mesh.n_elements
        U = scale * np.asarray(U, dtype=float)
        u_elem = np.broadcast_to(U, (m, 2))
        h_u, _ = self._blended(inside, u_elem)
        jump = h_eval(self.target, U, self.laws) - h_eval(self.source, U, self.laws)
        source = inside[:, None] * jump[None]
        free = np.setdiff1d(np.arange(mesh.n_nodes), mesh.node_set("outer"))
        rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        cols = np.tile(mesh.triangles, (1, 3)).ravel()

        def residual(k):
            b = np.einsum("ek,eki->ei", k[mesh.triangles], curls) + u_elem
            h, dh = self._blended(inside, b)
            flux = (h - h_u + source) * areas[:, None]
            r = np.bincount(mesh.triangles.ravel(), weights=np.einsum("ei,eki->ek", flux, curls).ravel(),
                            minlength=mesh.n_nodes)
            return r, dh

        r0, _ = residual(np.zeros(mesh.n_nodes))
        reference = np.linalg.norm(r0[free])
        if reference == 0.0:
            return np.zeros(mesh.n_nodes)
        k = np.zeros(mesh.n_nodes) if k0 is None else k0
        r, dh = residual(k)
        norm = np.linalg.norm(r[free])
        for _ in range(MAX_NEWTON):
            if norm <= NEWTON_TOL * reference:
                return k
            local = np.einsum("e,eki,eij,elj->ekl", areas, curls, dh, curls)
            jac = coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsc()
            step = np.zeros(mesh.n_nodes)
            step[free] = splu(jac[free][:, free]).solve(-r[free])
            damping = 1.0
            for _ in range(MAX_HALVINGS + 1):
                trial = k + damping * step
                r_trial, dh_trial = residual(trial)
                trial_norm = np.linalg.norm(r_trial[free])
                if trial_norm < norm:
                    break
                damping *= 0.5
            else:
                if norm <= 1e3 * NEWTON_TOL * reference:
                    return k
                raise SolverError("exterior Newton step could not reduce the residual", norm / reference)
            k, r, dh, norm = trial, r_trial, dh_trial, trial_norm
        if norm > NEWTON_TOL * reference:
            raise SolverError("exterior Newton did not converge", norm / reference)
        return k

    def _solve_continued(self, mesh, U):
        try:
            return self._newton(mesh, U)
        except SolverError as exc:
            logger.debug("exterior Newton failed at |U|=%.3g (%s); continuing in U", np.linalg.norm(U), exc)
        steps = 2
        while steps <= 16:
            try:
                k = None
                for scale in np.linspace(1.0 / steps, 1.0, steps):
                    k = self._newton(mesh, U, scale, k)
                return k
            except SolverError:
                steps *= 2
        raise SolverError(f"exterior problem failed for U={np.asarray(U).tolist()} even with load continuation")

    def _sample(self, mesh, U, k):
        inside = mesh.labels == 1
        U = np.asarray(U, dtype=float)
        m = mesh.n_elements
        u_elem = np.broadcast_to(U, (m, 2))
        corrector = np.einsum("ek,eki->ei", k[mesh.triangles], mesh.curls)
        h_u, dh_u = self._blended(inside, u_elem)
        h_k, _ = self._blended(inside, u_elem + corrector)
        defect = h_k - h_u - np.einsum("eij,ej->ei", dh_u, corrector)
        area = float(mesh.areas[inside].sum())
        d_jump = dh_eval(self.target, U, self.laws) - dh_eval(self.source, U, self.laws)
        f = (mesh.areas @ defect) / area
        f = f + d_jump @ (mesh.areas[inside] @ corrector[inside]) / area
        f = f + h_eval(self.target, U, self.laws) - h_eval(self.source, U, self.laws)
        return corrector, f

    def solve(self, U):
        """Corrector on refined disk meshes until (f1, f2) settles."""
        previous = None
        for level in range(self.min_level, self.max_level + 1):
            mesh = disk_mesh(level, self.radius)
            k = self._solve_continued(mesh, U)
            corrector, f = self._sample(mesh, U, k)
            if previous is not None:
                change = np.linalg.norm(f - previous)
                if change <= REFINE_TOL * max(np.linalg.norm(f), 1.0):
                    return ExteriorSolution(corrector, mesh, level, f)
            previous = f
        if self.max_level > self.min_level:
            logger.warning("exterior samples for U=%s not settled at level %d", np.asarray(U).tolist(), self.max_level)
        return ExteriorSolution(corrector, mesh, self.max_level, f)


def solve_exterior(source, target, U, laws, **kwargs):
    return ExteriorProblem(source, target, laws, **kwargs).solve(U)


def sample_f12(source, target, U, laws, **kwargs):
    """(f1, f2): the topological derivative sample against e_0 and e_pi/2."""
    return solve_exterior(source, target, U, laws, **kwargs).f


def inclusion_mean(solution):
    inside = solution.mesh.labels == 1
    areas = solution.mesh.areas[inside]
    return areas @ solution.corrector[inside] / areas.sum()

