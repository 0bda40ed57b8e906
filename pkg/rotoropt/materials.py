"""Magnetic material laws h_i(b) and their Jacobians."""

import math
from dataclasses import dataclass

import numpy as np

from .mesh import AIR, IRON, MAGNET_1, MAGNET_2, N_MATERIALS

NU_0 = 1e7 / (4 * math.pi)


@dataclass(frozen=True)
class BHLawSet:
    """Iron saturation law, linear air and magnet laws, magnet conductivity (SI units)."""

    nu_0: float = NU_0
    nu_f: float = 200.0
    k_f: float = 2.2
    n_f: int = 12
    nu_m: float = NU_0 / 1.086
    b_r: float = 1.216
    phi_1: float = math.radians(30.0)
    phi_2: float = math.radians(15.0)
    sigma_m: float = 6.7e5

    def __post_init__(self):
        for name in ("nu_0", "nu_f", "k_f", "n_f", "nu_m", "b_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_m < 0:
            raise ValueError("sigma_m must be nonnegative")
        if not self.nu_f < self.nu_0:
            raise ValueError("iron must be ferromagnetic (nu_f < nu_0)")

    @classmethod
    def reference(cls):
        return cls()

    def reluctivity(self, material):
        """Linear reluctivity of air and magnets."""
        if material == AIR:
            return self.nu_0
        if material in (MAGNET_1, MAGNET_2):
            return self.nu_m
        raise ValueError("iron has no constant reluctivity")

    def magnetization(self, material):
        """Remanent induction vector M_i (zero for air)."""
        if material == MAGNET_1:
            return self.b_r * np.array([math.cos(self.phi_1), math.sin(self.phi_1)])
        if material == MAGNET_2:
            return self.b_r * np.array([math.cos(self.phi_2), math.sin(self.phi_2)])
        return np.zeros(2)

    def angle(self, material):
        return {MAGNET_1: self.phi_1, MAGNET_2: self.phi_2}.get(material, 0.0)

    @property
    def conductivities(self):
        return np.array([0.0, 0.0, self.sigma_m, self.sigma_m])

    def is_linear(self, material):
        return material != IRON


def _iron(laws, b):
    s = np.linalg.norm(b, axis=-1)
    log_x = np.log(np.maximum(s / laws.k_f, 1e-300))
    log1p_xn = np.logaddexp(0.0, laws.n_f * log_x)
    factor = laws.nu_0 + (laws.nu_f - laws.nu_0) * np.exp(-log1p_xn / laws.n_f)
    # phi'(s)/s, finite at s = 0 for n_f >= 2
    slope = -(laws.nu_f - laws.nu_0) / laws.k_f ** 2 * np.exp(
        (laws.n_f - 2) * log_x - (laws.n_f + 1) / laws.n_f * log1p_xn)
    slope = np.where(s > 0.0, slope, 0.0)
    return factor, slope


def h_eval(material, b, laws):
    """Field strength h_i(b) for one material; ``b`` has shape (..., 2)."""
    b = np.asarray(b, dtype=float)
    if material == IRON:
        factor, _ = _iron(laws, b)
        return factor[..., None] * b
    nu = laws.reluctivity(material)
    return nu * (b - laws.magnetization(material))


def dh_eval(material, b, laws):
    """Jacobian d_b h_i(b), shape (..., 2, 2)."""
    b = np.asarray(b, dtype=float)
    eye = np.broadcast_to(np.eye(2), b.shape[:-1] + (2, 2))
    if material == IRON:
        factor, slope = _iron(laws, b)
        return factor[..., None, None] * eye + slope[..., None, None] * b[..., :, None] * b[..., None, :]
    return laws.reluctivity(material) * eye


def blended_law(fractions, b, laws):
    """Fraction-weighted h and d_b h for element fields ``b`` (elements, 2)."""
    h = np.zeros_like(b)
    dh = np.zeros(b.shape[:-1] + (2, 2))
    for material in range(N_MATERIALS):
        weight = fractions[..., material]
        if not np.any(weight):
            continue
        h += weight[..., None] * h_eval(material, b, laws)
        dh += weight[..., None, None] * dh_eval(material, b, laws)
    return h, dh
