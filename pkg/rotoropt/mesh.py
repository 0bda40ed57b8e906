"""
Pole mesh, P1 fields and assembly, cut ratios and sensitivity smoothing.

The pole of the machine is meshed as a structured polar triangulation. Rotor
and stator are separate node sets that meet on the mortar circle inside the
air gap; every radial breakpoint of the geometry is a mesh line, and the
angular division is a multiple of four times the slot count so that slot
edges are grid lines as well. Gamma_1 and Gamma_2 therefore carry rotationally
matched nodes, which the anti-periodic identification relies on.
"""

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import splu

from .errors import ConfigError, GeometryError, SolverError
from .levelset import LevelSetField, simplex_vertices

logger = logging.getLogger(__name__)

# Material indices used by every coefficient lookup.
IRON, AIR, MAGNET_1, MAGNET_2 = 0, 1, 2, 3
MATERIAL_NAMES = ("f", "a", "m1", "m2")
N_MATERIALS = 4

SUBDIVISION_DEPTH = 4


class Region(IntEnum):
    SHAFT = 0
    DESIGN = 1
    RING = 2
    GAP_ROTOR = 3
    GAP_STATOR = 4
    STATOR = 5
    COIL_A = 6
    COIL_B = 7
    COIL_C = 8


ROTOR_REGIONS = (Region.SHAFT, Region.DESIGN, Region.RING, Region.GAP_ROTOR)

# Pure material of every region outside the design domain.
FIXED_MATERIAL = {
    Region.SHAFT: AIR,
    Region.RING: IRON,
    Region.GAP_ROTOR: AIR,
    Region.GAP_STATOR: AIR,
    Region.STATOR: IRON,
    Region.COIL_A: AIR,
    Region.COIL_B: AIR,
    Region.COIL_C: AIR,
}

REGION_GROUPS = {
    "shaft": (Region.SHAFT,),
    "design": (Region.DESIGN,),
    "ring": (Region.RING,),
    "airgap": (Region.GAP_ROTOR, Region.GAP_STATOR),
    "stator": (Region.STATOR,),
    "coil_a": (Region.COIL_A,),
    "coil_b": (Region.COIL_B,),
    "coil_c": (Region.COIL_C,),
    "coils": (Region.COIL_A, Region.COIL_B, Region.COIL_C),
    "rotor": ROTOR_REGIONS,
    "rotor_iron": (Region.DESIGN, Region.RING),
    "all": tuple(Region),
}


@dataclass(frozen=True)
class MachineSpec:
    """Geometry of one pole of the machine. Lengths in m, angles in rad."""

    pole_pairs: int = 4
    shaft_bore_radius: float = 0.010
    rotor_inner_radius: float = 0.0265
    rotor_outer_radius: float = 0.0786
    ring_width: float = 0.001
    stator_inner_radius: float = 0.0791
    stator_outer_radius: float = 0.116
    coil_inner_radius: float = 0.0801
    coil_outer_radius: float = 0.096
    slots_per_pole: int = 6
    axial_length: float = 0.179

    def __post_init__(self):
        if self.pole_pairs < 1:
            raise GeometryError("pole_pairs must be at least 1")
        if self.slots_per_pole < 3 or self.slots_per_pole % 3:
            raise GeometryError("slots_per_pole must be a positive multiple of 3")
        if self.ring_width <= 0.0:
            raise GeometryError("iron ring width must be positive")
        if self.air_gap_width <= 0.0:
            raise GeometryError("air gap width must be positive")
        radii = [
            self.shaft_bore_radius,
            self.rotor_inner_radius,
            self.rotor_outer_radius - self.ring_width,
            self.rotor_outer_radius,
            self.stator_inner_radius,
            self.coil_inner_radius,
            self.coil_outer_radius,
            self.stator_outer_radius,
        ]
        if radii[0] <= 0.0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise GeometryError(f"radii must increase strictly from shaft to stator, got {radii}")

    @property
    def air_gap_width(self):
        return self.stator_inner_radius - self.rotor_outer_radius

    @property
    def pole_angle(self):
        return math.pi / self.pole_pairs

    @property
    def mortar_radius(self):
        return self.rotor_outer_radius + 0.5 * self.air_gap_width

    @property
    def coil_spans(self):
        """Angular spans (rad) of the A+, B-, C+ coil sides within the pole."""
        pitch = self.pole_angle / self.slots_per_pole
        per_phase = self.slots_per_pole // 3
        spans = {"coil_a": [], "coil_b": [], "coil_c": []}
        for slot in range(self.slots_per_pole):
            name = ("coil_a", "coil_b", "coil_c")[slot // per_phase]
            spans[name].append((pitch * (slot + 0.25), pitch * (slot + 0.75)))
        return spans

    def area(self, r_in, r_out):
        """Area of an annular sector of the pole."""
        return 0.5 * self.pole_angle * (r_out ** 2 - r_in ** 2)

    @classmethod
    def reference(cls):
        return cls()

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown machine fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read machine file {path}: {exc}") from exc
        return cls.from_dict(data)


class Mesh:
    """Conforming P1 triangulation with region labels and named edge sets.

    ``boundaries`` partitions the boundary edges; ``interfaces`` holds named
    interior curves (the shaft surface and the rotor surface) that become
    boundaries of the rotor-iron sub-mesh.
    """

    def __init__(self, points, triangles, labels, boundaries, interfaces=None,
                 node_side=None, spec=None, parent_nodes=None, parent_elements=None):
        self.points = np.asarray(points, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.boundaries = {k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in boundaries.items()}
        self.interfaces = {k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in (interfaces or {}).items()}
        self.node_side = np.zeros(len(self.points), dtype=np.int64) if node_side is None else np.asarray(node_side)
        self.spec = spec
        self.parent_nodes = parent_nodes
        self.parent_elements = parent_elements

    @property
    def n_nodes(self):
        return len(self.points)

    @property
    def n_elements(self):
        return len(self.triangles)

    @property
    def pole_angle(self):
        return self.spec.pole_angle

    @cached_property
    def _geometry(self):
        p = self.points[self.triangles]
        a = p[:, 1, 0] - p[:, 0, 0]
        b = p[:, 2, 0] - p[:, 0, 0]
        c = p[:, 1, 1] - p[:, 0, 1]
        d = p[:, 2, 1] - p[:, 0, 1]
        det = a * d - b * c
        g1 = np.stack([d, -b], axis=1) / det[:, None]
        g2 = np.stack([-c, a], axis=1) / det[:, None]
        g0 = -(g1 + g2)
        return 0.5 * det, np.stack([g0, g1, g2], axis=1)

    @property
    def areas(self):
        return self._geometry[0]

    @property
    def grads(self):
        """Barycentric gradients, shape (elements, 3, 2)."""
        return self._geometry[1]

    @cached_property
    def curls(self):
        """Scalar curls (d/dy, -d/dx) of the nodal basis, shape (elements, 3, 2)."""
        g = self.grads
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    @cached_property
    def centroids(self):
        return self.points[self.triangles].mean(axis=1)

    def edges(self, name):
        if name in self.boundaries:
            return self.boundaries[name]
        if name in self.interfaces:
            return self.interfaces[name]
        raise KeyError(f"unknown edge set '{name}'")

    def node_set(self, name):
        return np.unique(self.edges(name))

    def region_mask(self, region):
        return np.isin(self.labels, [int(r) for r in region_labels(region)])

    @cached_property
    def rotor_element_mask(self):
        return np.isin(self.labels, [int(r) for r in ROTOR_REGIONS])

    def periodic_pairs(self):
        """Matched (master on Gamma_1, slave on Gamma_2) node arrays."""
        first, second = self.node_set("gamma_1"), self.node_set("gamma_2")
        if len(first) != len(second):
            raise GeometryError("Gamma_1 and Gamma_2 carry different node counts")
        c, s = math.cos(self.pole_angle), math.sin(self.pole_angle)
        rotation = np.array([[c, -s], [s, c]])
        masters, slaves = [], []
        for side in np.unique(self.node_side[first]):
            m = first[self.node_side[first] == side]
            sl = second[self.node_side[second] == side]
            m = m[np.argsort(np.hypot(*self.points[m].T))]
            sl = sl[np.argsort(np.hypot(*self.points[sl].T))]
            gap = np.abs(self.points[m] @ rotation.T - self.points[sl]).max() if len(m) else 0.0
            if len(m) != len(sl) or gap > 1e-9:
                raise GeometryError(f"Gamma_1/Gamma_2 nodes do not match under rotation (gap {gap:.2e} m)")
            masters.append(m)
            slaves.append(sl)
        return np.concatenate(masters), np.concatenate(slaves)

    def restrict(self, region):
        """Sub-mesh of the elements in ``region`` with parent index maps."""
        mask = self.region_mask(region)
        elements = np.flatnonzero(mask)
        nodes = np.unique(self.triangles[elements])
        local = np.full(self.n_nodes, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))

        def keep(edge_sets):
            out = {}
            for name, edges in edge_sets.items():
                inside = (local[edges] >= 0).all(axis=1) if len(edges) else np.zeros(0, bool)
                out[name] = local[edges[inside]]
            return out

        return Mesh(self.points[nodes], local[self.triangles[elements]], self.labels[elements],
                    keep(self.boundaries), keep(self.interfaces), self.node_side[nodes], self.spec,
                    parent_nodes=nodes, parent_elements=elements)

    @cached_property
    def rotor_iron(self):
        """Design domain plus iron ring, where heat and elasticity are solved."""
        return self.restrict("rotor_iron")

    @cached_property
    def design_space(self):
        return DesignSpace(self)


class DesignSpace:
    """P1 space on the design domain D where the level set lives."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.elements = np.flatnonzero(mesh.labels == Region.DESIGN)
        self.nodes = np.unique(mesh.triangles[self.elements])
        self.local = np.full(mesh.n_nodes, -1, dtype=np.int64)
        self.local[self.nodes] = np.arange(len(self.nodes))
        self.triangles = self.local[mesh.triangles[self.elements]]
        self.areas = mesh.areas[self.elements]
        self.grads = mesh.grads[self.elements]
        self.mass = _mass(self.triangles, self.areas, len(self.nodes))
        self.stiffness = _stiffness(self.triangles, self.areas, self.grads, len(self.nodes))
        weights = coo_matrix(
            (np.repeat(self.areas, 3), (self.triangles.ravel(), np.repeat(np.arange(len(self.elements)), 3))),
            shape=(len(self.nodes), len(self.elements)),
        ).tocsr()
        row_sum = np.asarray(weights.sum(axis=1)).ravel()
        self.node_average = csr_matrix(weights.multiply(1.0 / row_sum[:, None]))
        self._smoothers = {}

    @property
    def n_nodes(self):
        return len(self.nodes)

    def smoother(self, rho):
        if rho not in self._smoothers:
            try:
                self._smoothers[rho] = splu((rho * self.stiffness + self.mass).tocsc())
            except RuntimeError as exc:
                raise SolverError(f"singular smoothing system: {exc}") from exc
        return self._smoothers[rho]


@dataclass
class MaterialConfig:
    """Per-element material fractions; design elements from cut ratios, the rest pure."""

    mesh: Mesh
    fractions: np.ndarray

    @classmethod
    def from_design(cls, mesh, design_fractions):
        design_fractions = np.asarray(design_fractions, dtype=float)
        n_mat = design_fractions.shape[1]
        fractions = np.zeros((mesh.n_elements, n_mat))
        for region, material in FIXED_MATERIAL.items():
            fractions[mesh.labels == region, material] = 1.0
        fractions[mesh.design_space.elements] = design_fractions
        return cls(mesh, fractions)

    @classmethod
    def uniform(cls, mesh, material, n_materials=N_MATERIALS):
        design = np.zeros((len(mesh.design_space.elements), n_materials))
        design[:, material] = 1.0
        return cls.from_design(mesh, design)

    @property
    def design_fractions(self):
        return self.fractions[self.mesh.design_space.elements]

    def coefficient(self, values):
        """Fraction-weighted element coefficient for per-material ``values``."""
        return self.fractions @ np.asarray(values, dtype=float)

    def transfer(self, element, source, target, amount):
        """Copy with ``amount`` of fraction moved from ``source`` to ``target`` in one element."""
        fractions = self.fractions.copy()
        fractions[element, source] -= amount
        fractions[element, target] += amount
        return replace(self, fractions=fractions)

    def validate(self, tol=1e-12):
        if np.any(self.fractions < -tol) or np.any(self.fractions > 1 + tol):
            raise ValueError("material fractions outside [0, 1]")
        if np.abs(self.fractions.sum(axis=1) - 1.0).max() > tol:
            raise ValueError("material fractions do not sum to 1")


def region_labels(region):
    """Normalize a region name, Region member or iterable of them to Region members."""
    if region is None:
        return tuple(Region)
    if isinstance(region, (Region, int)) and not isinstance(region, bool):
        return (Region(region),)
    if isinstance(region, str):
        if region not in REGION_GROUPS:
            raise ValueError(f"unknown region label '{region}'")
        return REGION_GROUPS[region]
    out = []
    for item in region:
        out.extend(region_labels(item))
    return tuple(out)


def _radial_nodes(breaks, min_layers, h):
    radii = [breaks[0]]
    for (a, b), minimum in zip(zip(breaks, breaks[1:]), min_layers):
        n = max(minimum, int(math.ceil((b - a) / h - 1e-9)))
        radii.extend(np.linspace(a, b, n + 1)[1:])
    return np.array(radii)


def _polar_block(radii, angles):
    n_t = len(angles)
    rr, tt = np.meshgrid(radii, angles, indexing="ij")
    points = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
    i, j = np.meshgrid(np.arange(len(radii) - 1), np.arange(n_t - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a, b = i * n_t + j, i * n_t + j + 1
    c, d = (i + 1) * n_t + j + 1, (i + 1) * n_t + j
    even = (i + j) % 2 == 0
    t1 = np.where(even[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(even[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    return points, np.vstack([t1, t2])


def _row_edges(row, n_t, offset=0):
    j = np.arange(n_t - 1)
    return np.column_stack([row * n_t + j, row * n_t + j + 1]) + offset


def _column_edges(column, n_r, n_t, offset=0):
    i = np.arange(n_r - 1)
    return np.column_stack([i * n_t + column, (i + 1) * n_t + column]) + offset


def build_pole_mesh(spec, target_h):
    """Mesh one pole of ``spec`` with element size about ``target_h`` (m)."""
    if target_h <= 0.0:
        raise GeometryError("target mesh size must be positive")
    r_gamma = spec.mortar_radius
    base = 4 * spec.slots_per_pole
    n_div = base * max(1, int(math.ceil(spec.pole_angle * r_gamma / target_h / base - 1e-9)))
    angles = np.linspace(0.0, spec.pole_angle, n_div + 1)
    n_t = n_div + 1

    rotor_breaks = [spec.shaft_bore_radius, spec.rotor_inner_radius,
                    spec.rotor_outer_radius - spec.ring_width, spec.rotor_outer_radius, r_gamma]
    stator_breaks = [r_gamma, spec.stator_inner_radius, spec.coil_inner_radius,
                     spec.coil_outer_radius, spec.stator_outer_radius]
    r_rotor = _radial_nodes(rotor_breaks, (1, 1, 2, 2), target_h)
    r_stator = _radial_nodes(stator_breaks, (2, 1, 1, 1), target_h)

    p_rot, t_rot = _polar_block(r_rotor, angles)
    p_sta, t_sta = _polar_block(r_stator, angles)
    offset = len(p_rot)
    points = np.vstack([p_rot, p_sta])
    triangles = np.vstack([t_rot, t_sta + offset])
    node_side = np.concatenate([np.zeros(len(p_rot), np.int64), np.ones(len(p_sta), np.int64)])

    # counter-clockwise orientation
    p = points[triangles]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    triangles[signed < 0] = triangles[signed < 0][:, [0, 2, 1]]

    centroids = points[triangles].mean(axis=1)
    r_c = np.hypot(centroids[:, 0], centroids[:, 1])
    t_c = np.arctan2(centroids[:, 1], centroids[:, 0])
    labels = np.full(len(triangles), int(Region.STATOR), dtype=np.int64)
    bands = [
        (spec.shaft_bore_radius, spec.rotor_inner_radius, Region.SHAFT),
        (spec.rotor_inner_radius, spec.rotor_outer_radius - spec.ring_width, Region.DESIGN),
        (spec.rotor_outer_radius - spec.ring_width, spec.rotor_outer_radius, Region.RING),
        (spec.rotor_outer_radius, r_gamma, Region.GAP_ROTOR),
        (r_gamma, spec.stator_inner_radius, Region.GAP_STATOR),
    ]
    for lo, hi, region in bands:
        labels[(r_c > lo) & (r_c < hi)] = int(region)
    in_coil_band = (r_c > spec.coil_inner_radius) & (r_c < spec.coil_outer_radius)
    for name, region in (("coil_a", Region.COIL_A), ("coil_b", Region.COIL_B), ("coil_c", Region.COIL_C)):
        for lo, hi in spec.coil_spans[name]:
            labels[in_coil_band & (t_c > lo) & (t_c < hi)] = int(region)

    n_rr, n_rs = len(r_rotor), len(r_stator)
    ring_row = int(np.argmin(np.abs(r_rotor - spec.rotor_outer_radius)))
    shaft_row = int(np.argmin(np.abs(r_rotor - spec.rotor_inner_radius)))
    boundaries = {
        "inner": _row_edges(0, n_t),
        "gamma": _row_edges(n_rr - 1, n_t),
        "gamma_stator": _row_edges(0, n_t, offset),
        "gamma_s": _row_edges(n_rs - 1, n_t, offset),
        "gamma_1": np.vstack([_column_edges(0, n_rr, n_t), _column_edges(0, n_rs, n_t, offset)]),
        "gamma_2": np.vstack([_column_edges(n_t - 1, n_rr, n_t), _column_edges(n_t - 1, n_rs, n_t, offset)]),
    }
    interfaces = {
        "gamma_sh": _row_edges(shaft_row, n_t),
        "gamma_r": _row_edges(ring_row, n_t),
    }
    mesh = Mesh(points, triangles, labels, boundaries, interfaces, node_side, spec)
    logger.info("pole mesh: %d nodes, %d elements, %d angular divisions",
                mesh.n_nodes, mesh.n_elements, n_div)
    return mesh


def radial_layers(mesh, region):
    """Number of element layers across an annular region, by radial binning of its nodes."""
    nodes = np.unique(mesh.triangles[mesh.region_mask(region)])
    radii = np.round(np.hypot(*mesh.points[nodes].T), 12)
    return len(np.unique(radii)) - 1


def _stiffness(triangles, areas, grads, n, coeff=None):
    weight = areas if coeff is None else areas * coeff
    local = np.einsum("e,eki,eli->ekl", weight, grads, grads)
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _mass(triangles, areas, n, coeff=None):
    weight = areas if coeff is None else areas * coeff
    pattern = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = weight[:, None, None] * pattern[None]
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(mesh, coeff=None):
    return _stiffness(mesh.triangles, mesh.areas, mesh.grads, mesh.n_nodes, coeff)


def mass_matrix(mesh, coeff=None):
    return _mass(mesh.triangles, mesh.areas, mesh.n_nodes, coeff)


def load_vector(mesh, element_values):
    """Load vector of an element-constant density against the P1 basis."""
    values = np.repeat(mesh.areas * element_values / 3.0, 3)
    return np.bincount(mesh.triangles.ravel(), weights=values, minlength=mesh.n_nodes)


def edge_mass_matrix(mesh, edges, coeff=1.0):
    """P1 mass matrix of a polygonal curve given as an edge list."""
    if len(edges) == 0:
        return csr_matrix((mesh.n_nodes, mesh.n_nodes))
    length = np.linalg.norm(mesh.points[edges[:, 1]] - mesh.points[edges[:, 0]], axis=1)
    local = coeff * length[:, None, None] * (np.ones((2, 2)) + np.eye(2))[None] / 6.0
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def element_mean(mesh, nodal):
    return np.asarray(nodal)[mesh.triangles].mean(axis=1)


def element_gradient(mesh, nodal):
    return np.einsum("ek,eki->ei", np.asarray(nodal)[mesh.triangles], mesh.grads)


def element_curl(mesh, nodal):
    return np.einsum("ek,eki->ei", np.asarray(nodal)[mesh.triangles], mesh.curls)


def integrate(field, region, mesh):
    """Integral of a nodal (P1) or element-constant field over a region."""
    mask = mesh.region_mask(region)
    values = np.asarray(field, dtype=float)
    if values.ndim == 0:
        values = np.full(mesh.n_elements, float(values))
    if values.shape[0] == mesh.n_nodes and values.shape[0] != mesh.n_elements:
        v = values[mesh.triangles]
        midpoints = 0.5 * (v + np.roll(v, -1, axis=1))
        element = midpoints.mean(axis=1)
    elif values.shape[0] == mesh.n_elements:
        element = values
    else:
        raise ValueError(f"field of length {values.shape[0]} matches neither nodes nor elements")
    return float(np.sum(mesh.areas[mask] * element[mask]))


def _subdivision_barycenters(depth):
    n = 2 ** depth
    up = [((a + 1 / 3) / n, (b + 1 / 3) / n) for a in range(n) for b in range(n - a)]
    down = [((a + 2 / 3) / n, (b + 2 / 3) / n) for a in range(n - 1) for b in range(n - 1 - a)]
    l12 = np.array(up + down)
    return np.column_stack([1.0 - l12.sum(axis=1), l12])


def cut_ratios(psi, mesh, depth=SUBDIVISION_DEPTH):
    """Material fractions of the design elements induced by the level set ``psi``."""
    values = psi.values if isinstance(psi, LevelSetField) else np.asarray(psi, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    space = mesh.design_space
    if values.shape[0] != space.n_nodes:
        raise ValueError("level set must be defined on every design node")
    basis = simplex_vertices(values.shape[1] + 1)
    n_mat = basis.M
    node_material = np.argmax(values @ basis.vertices.T, axis=1)

    materials = node_material[space.triangles]
    pure = (materials == materials[:, :1]).all(axis=1)
    design = np.zeros((len(space.elements), n_mat))
    design[pure, materials[pure, 0]] = 1.0

    cut = np.flatnonzero(~pure)
    if len(cut):
        bary = _subdivision_barycenters(depth)
        sub_values = np.einsum("sk,ekc->esc", bary, values[space.triangles[cut]])
        sub_material = np.argmax(sub_values @ basis.vertices.T, axis=2)
        design[cut] = np.eye(n_mat)[sub_material].mean(axis=1)
    return MaterialConfig.from_design(mesh, design)


def screened_poisson_solve(rhs, rho, mesh):
    """Solve -rho*Lap(g) + g = rhs componentwise on D with zero-flux boundary."""
    if rho <= 0.0:
        raise ValueError("smoothing length rho must be positive")
    space = mesh.design_space
    rhs = np.asarray(rhs, dtype=float)
    load = space.mass @ rhs
    solution = space.smoother(rho).solve(load)
    operator = rho * space.stiffness + space.mass
    residual = np.linalg.norm(operator @ solution - load)
    scale = np.linalg.norm(load)
    if scale > 0.0 and residual > 1e-10 * scale:
        raise SolverError("smoothing solve inaccurate", residual / scale)
    return solution
