import logging
import math

import numpy as np
import pytest

from rotoropt.config import RunConfig
from rotoropt.levelset import LevelSetField
from rotoropt.magnetics import MagneticSolver, RotorSchedule
from rotoropt.materials import BHLawSet
from rotoropt.mesh import IRON, MAGNET_1, MachineSpec, MaterialConfig, build_pole_mesh
from rotoropt.td_engine import TDSampleTable

COARSE_H = 0.008


@pytest.fixture(autouse=True)
def _propagate_logs():
    # the command line detaches the package logger from the root one
    yield
    logger = logging.getLogger("rotoropt")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.propagate = True
    logger.setLevel(logging.NOTSET)


@pytest.fixture(scope="session")
def spec():
    return MachineSpec.reference()


@pytest.fixture(scope="session")
def coarse_mesh(spec):
    return build_pole_mesh(spec, COARSE_H)


@pytest.fixture(scope="session")
def laws():
    return BHLawSet.reference()


@pytest.fixture(scope="session")
def magnetic(coarse_mesh, laws):
    return MagneticSolver(coarse_mesh, laws, harmonics=4, rtol=1e-10)


@pytest.fixture(scope="session")
def schedule(spec):
    return RotorSchedule(2, spec.pole_pairs)


def nearest_design_element(mesh, radius, angle):
    elements = mesh.design_space.elements
    target = radius * np.array([math.cos(angle), math.sin(angle)])
    return int(elements[np.argmin(np.linalg.norm(mesh.centroids[elements] - target, axis=1))])


@pytest.fixture(scope="session")
def magnet_config(coarse_mesh):
    """Iron with magnet 1 in the outer part of the first half of the pole."""
    space = coarse_mesh.design_space
    centroids = coarse_mesh.centroids[space.elements]
    radius = np.hypot(centroids[:, 0], centroids[:, 1])
    angle = np.arctan2(centroids[:, 1], centroids[:, 0])
    magnet = (radius > 0.055) & (angle < 0.5 * coarse_mesh.pole_angle)
    design = np.zeros((len(space.elements), 4))
    design[:, IRON] = 1.0
    design[magnet, IRON] = 0.0
    design[magnet, MAGNET_1] = 1.0
    return MaterialConfig.from_design(coarse_mesh, design)


@pytest.fixture(scope="session")
def synthetic_tables():
    """Tables with f(U) = 0.5 U for iron/air and f(U) = (|U|, 0) for iron/magnet."""
    radii = np.linspace(0.0, 3.0, 7)
    angles = 2.0 * math.pi * np.arange(8) / 8
    isotropic = np.column_stack([0.5 * radii, np.zeros_like(radii)])
    directed = np.zeros((len(radii), len(angles), 2))
    directed[..., 0] = radii[:, None]
    tables = {pair: TDSampleTable(pair, radii, np.zeros(0), isotropic) for pair in ("f->a", "a->f")}
    tables.update({pair: TDSampleTable(pair, radii, angles, directed) for pair in ("f->m0", "m0->f")})
    return tables


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def coarse_settings(tmp_path):
    return {
        "mesh_size_m": COARSE_H,
        "positions": 2,
        "harmonics": 4,
        "k_max": 3,
        "table_dir": str(tmp_path / "tables"),
        "output_dir": str(tmp_path / "out"),
    }


@pytest.fixture
def coarse_run(coarse_settings):
    return RunConfig.from_dict(coarse_settings)


def random_levelset(space, columns, rng):
    return LevelSetField(rng.standard_normal((space.n_nodes, columns)), space).normalized()
