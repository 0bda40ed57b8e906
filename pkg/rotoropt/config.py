"""Run configuration: JSON file merged over defaults, validated into a RunConfig."""

import json
import math
import os
from dataclasses import asdict, dataclass

from .elasticity import ElasticParams
from .errors import ConfigError
from .helpers import sha256_bytes
from .materials import BHLawSet
from .mesh import MATERIAL_NAMES, MachineSpec
from .optimizer import OptimizerParams, VolumeBudget
from .thermal import ThermalParams

CONFIG_FILE = "rotoropt.json"

OBJECTIVES = ("torque", "torque_ed")
SEED_DESIGNS = ("two_bar", "iron")

DEFAULT_CONFIG = {
    "machine_file": None,
    "mesh_size_m": 0.002,
    "positions": 11,
    "harmonics": 8,
    "objective": "torque",
    "thermal_weight": 0.0,
    "stress_weight": 0.0,
    "volume_materials": ["m1", "m2"],
    "volume_fraction": 0.1,
    "k_max": 1000,
    "angle_tol_deg": 4.0,
    "s_min": 0.05,
    "s_max": 1.0,
    "gamma": 0.5,
    "delta": 1.5,
    "weight_step": 1e5,
    "volume_tol_ratio": 1e-3,
    "temperature_limit_degc": 90.0,
    "ambient_temperature_degc": 40.0,
    "stress_limit_pa": 500e6,
    "stress_exponent": 16,
    "smoothing_rho_m2": 1e-6,
    "table_dir": "tables",
    "radial_samples": 50,
    "angular_samples": 48,
    "b_max_t": 3.0,
    "exterior_min_level": 1,
    "exterior_max_level": 3,
    "psi_r_samples": 16,
    "psi_stress_samples": 41,
    "psi_stress_range": 3.0,
    "output_dir": "rotoropt-out",
    "seed_design": "two_bar",
    "threads": 1,
    "rotor_speed_rpm": 16000.0,
    "current_density_a_m2": 23.7e6,
    "load_angle_deg": 6.0,
}


def get_config(path=None):
    """Load a run configuration; missing keys fall back to the defaults."""
    config = dict(DEFAULT_CONFIG)
    path = path or CONFIG_FILE
    if not os.path.exists(path):
        if path != CONFIG_FILE:
            raise ConfigError(f"config file not found: {path}")
        return config
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = sorted(set(data) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    config.update(data)
    return config


def save_config(config, path=None):
    """Save a run configuration"""
    with open(path or CONFIG_FILE, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True)


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return sha256_bytes(canonical.encode("utf-8"))


@dataclass(frozen=True)
class RunConfig:
    machine_file: str
    mesh_size_m: float
    positions: int
    harmonics: int
    objective: str
    thermal_weight: float
    stress_weight: float
    volume_materials: tuple
    volume_fraction: float
    k_max: int
    angle_tol_deg: float
    s_min: float
    s_max: float
    gamma: float
    delta: float
    weight_step: float
    volume_tol_ratio: float
    temperature_limit_degc: float
    ambient_temperature_degc: float
    stress_limit_pa: float
    stress_exponent: int
    smoothing_rho_m2: float
    table_dir: str
    radial_samples: int
    angular_samples: int
    b_max_t: float
    exterior_min_level: int
    exterior_max_level: int
    psi_r_samples: int
    psi_stress_samples: int
    psi_stress_range: float
    output_dir: str
    seed_design: str
    threads: int
    rotor_speed_rpm: float
    current_density_a_m2: float
    load_angle_deg: float

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got '{self.objective}'")
        if self.seed_design not in SEED_DESIGNS:
            raise ConfigError(f"seed_design must be one of {SEED_DESIGNS}, got '{self.seed_design}'")
        if self.thermal_weight < 0.0 or self.stress_weight < 0.0:
            raise ConfigError("objective weights must be nonnegative")
        if self.mesh_size_m <= 0.0:
            raise ConfigError("mesh_size_m must be positive")
        if self.positions < 1:
            raise ConfigError("positions must be at least 1")
        if self.harmonics < 2 or self.harmonics % 2:
            raise ConfigError("harmonics must be a positive even number")
        if not 0.0 < self.volume_fraction < 1.0:
            raise ConfigError("volume_fraction must lie in (0, 1)")
        unknown = [m for m in self.volume_materials if m not in MATERIAL_NAMES]
        if unknown or not self.volume_materials:
            raise ConfigError(f"volume_materials must be names from {MATERIAL_NAMES}, got {list(self.volume_materials)}")
        if self.smoothing_rho_m2 < 0.0:
            raise ConfigError("smoothing_rho_m2 must be nonnegative")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.radial_samples < 4 or self.angular_samples < 4 or self.b_max_t <= 0.0:
            raise ConfigError("TD tables need at least 4 samples per direction and b_max_t > 0")
        if not 0 <= self.exterior_min_level <= self.exterior_max_level:
            raise ConfigError("need 0 <= exterior_min_level <= exterior_max_level")
        if self.psi_r_samples < 2 or self.psi_stress_samples < 2 or self.psi_stress_range <= 0.0:
            raise ConfigError("the Psi table needs at least 2 samples per axis and a positive range")

    @classmethod
    def from_dict(cls, data):
        merged = dict(DEFAULT_CONFIG)
        unknown = sorted(set(data) - set(DEFAULT_CONFIG))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged.update(data)
        merged["volume_materials"] = tuple(merged["volume_materials"])
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path=None):
        return cls.from_dict(get_config(path))

    def to_dict(self):
        data = asdict(self)
        data["volume_materials"] = list(self.volume_materials)
        return data

    @property
    def hash(self):
        return config_hash(self.to_dict())

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data)

    # -- derived parameter objects -------------------------------------------------

    def machine(self):
        if self.machine_file:
            return MachineSpec.from_json(self.machine_file)
        return MachineSpec.reference()

    def laws(self):
        return BHLawSet.reference()

    @property
    def quasistatic(self):
        return self.objective == "torque_ed" or self.thermal_weight > 0.0

    def thermal_params(self):
        try:
            return ThermalParams(limit=self.temperature_limit_degc, ambient=self.ambient_temperature_degc,
                                 weight=self.thermal_weight)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def elastic_params(self):
        try:
            return ElasticParams(speed_rpm=self.rotor_speed_rpm, stress_limit=self.stress_limit_pa,
                                 exponent=self.stress_exponent, weight=self.stress_weight)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def optimizer_params(self):
        return OptimizerParams(k_max=self.k_max, angle_tol=math.radians(self.angle_tol_deg), s_min=self.s_min,
                               s_max=self.s_max, gamma=self.gamma, delta=self.delta,
                               weight_step=self.weight_step, volume_tol_ratio=self.volume_tol_ratio)

    def budget_materials(self):
        return tuple(MATERIAL_NAMES.index(name) for name in self.volume_materials)

    def volume_budget(self, cap):
        return VolumeBudget(self.budget_materials(), cap)

    def effective_threads(self, deterministic=False):
        return 1 if deterministic else self.threads
