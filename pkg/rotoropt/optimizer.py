"""
Level-set descent on the L2 unit sphere, with and without explicit volume control.

A problem object provides
    evaluate(psi) -> float             objective J of the design of psi
    gradient(psi) -> array             generalized topological derivative g of J
    volume(psi) -> float               constrained material volume (volume control only)
    volume_gradient(psi) -> array      generalized topological derivative of the volume
and optionally constraint_values(psi) -> dict for the history.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RotorOptError
from .levelset import optimality_angle, slerp_update
from .mesh import MAGNET_1, MAGNET_2, N_MATERIALS

logger = logging.getLogger(__name__)

MAX_BISECTIONS = 60
MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class OptimizerParams:
    k_max: int = 1000
    angle_tol: float = math.radians(4.0)
    s_min: float = 0.05
    s_max: float = 1.0
    gamma: float = 0.5
    delta: float = 1.5
    weight_step: float = 1e5
    volume_tol_ratio: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.s_min < self.s_max <= 1.0:
            raise ConfigError("need 0 < s_min < s_max <= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.delta < 1.0:
            raise ConfigError("delta must be at least 1")
        if self.angle_tol <= 0.0 or self.weight_step <= 0.0 or self.volume_tol_ratio <= 0.0:
            raise ConfigError("angle tolerance, weight step and volume tolerance must be positive")
        if self.k_max < 0:
            raise ConfigError("k_max must be nonnegative")


@dataclass(frozen=True)
class VolumeBudget:
    materials: tuple = (MAGNET_1, MAGNET_2)
    cap: float = 0.0

    def __post_init__(self):
        if not self.materials or len(set(self.materials)) >= N_MATERIALS:
            raise ConfigError("the volume budget must constrain a proper, nonempty subset of materials")
        if any(not 0 <= m < N_MATERIALS for m in self.materials):
            raise ConfigError(f"unknown material index in budget {self.materials}")
        if self.cap <= 0.0:
            raise ConfigError("volume cap must be positive")


@dataclass
class HistoryRecord:
    iteration: int
    trial: int
    objective: float
    volume: float
    step: float
    weight: float
    angle: float
    accepted: bool
    constraints: dict = field(default_factory=dict)


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    psi: object = None
    reason: str = ""
    error: str = ""

    def append(self, record):
        self.records.append(record)
        logger.info("k=%d trial=%d J=%.6g V=%.4g s=%.3g l=%.3g theta=%.2f deg %s",
                    record.iteration, record.trial, record.objective, record.volume, record.step,
                    record.weight, math.degrees(record.angle), "accepted" if record.accepted else "rejected")

    @property
    def accepted(self):
        return [r for r in self.records if r.accepted]

    @property
    def iterations(self):
        return len(self.accepted)

    def objectives(self):
        return np.array([r.objective for r in self.accepted])


def volume(config, budget):
    """Constrained material volume in the design domain (m^2)."""
    space = config.mesh.design_space
    fractions = config.fractions[space.elements][:, list(budget.materials)]
    return float(space.areas @ fractions.sum(axis=1))


def volume_td(budget, n_materials=N_MATERIALS):
    """d^{i->j} V as an (M, M) matrix: +1 into the budget, -1 out of it."""
    mask = np.zeros(n_materials)
    mask[list(budget.materials)] = 1.0
    return mask[None, :] - mask[:, None]


def _constraints(problem, psi):
    values = getattr(problem, "constraint_values", None)
    return values(psi) if values else {}


def run_descent(problem, psi0, params, on_accept=None):
    """Level-set descent with a step-size line search restarted at s_max in every iteration."""
    history = RunHistory(psi=psi0)
    if abs(psi0.norm() - 1.0) > 1e-10:
        raise ValueError("initial level set must have unit L2 norm")
    psi = psi0
    try:
        objective = problem.evaluate(psi)
        history.append(HistoryRecord(0, 0, objective, float("nan"), 0.0, 0.0, float("nan"), True,
                                     _constraints(problem, psi)))
        for k in range(params.k_max):
            g = problem.gradient(psi)
            theta = optimality_angle(psi, g)
            if theta < params.angle_tol:
                history.reason = "converged"
                break
            trial, improved = 0, False
            s = params.s_max
            while s > params.s_min:
                trial += 1
                candidate = slerp_update(psi, g, s)
                value = problem.evaluate(candidate)
                improved = value < objective
                history.append(HistoryRecord(k + 1, trial, value, float("nan"), s, 0.0, theta, improved,
                                             _constraints(problem, candidate) if improved else {}))
                if improved:
                    psi, objective = candidate, value
                    if on_accept:
                        on_accept(k + 1, psi)
                    break
                s = max(params.s_min, params.gamma * s)
            if not improved:
                history.reason = "step size exhausted"
                break
        else:
            history.reason = "k_max reached"
    except RotorOptError as exc:
        logger.error("optimization aborted: %s", exc)
        history.error = str(exc)
    history.psi = psi
    return history


class _WeightedDirection:
    """g(l) = g_J + l g_V with its angle to psi."""

    def __init__(self, psi, g_objective, g_volume):
        self.psi = psi
        self.g_objective = np.asarray(g_objective, dtype=float)
        self.g_volume = np.asarray(g_volume, dtype=float)

    def __call__(self, weight):
        return self.g_objective + weight * self.g_volume

    def angle(self, weight):
        return optimality_angle(self.psi, self(weight))

    def step(self, weight, s):
        return slerp_update(self.psi, self(weight), s)


def _feasible_weight(problem, direction, s, weight_step, cap, tol):
    """Smallest penalty weight whose update meets the volume cap; returns (weight, candidate, volume)."""
    limit = cap + tol
    candidate = direction.step(0.0, s)
    vol = problem.volume(candidate)
    if vol <= limit:
        return 0.0, candidate, vol
    low, high = 0.0, 0.0
    for _ in range(MAX_DOUBLINGS):
        low = high
        weight_step *= 2.0
        high += weight_step
        candidate = direction.step(high, s)
        vol = problem.volume(candidate)
        if vol <= limit:
            break
    else:
        raise RotorOptError(f"no penalty weight up to {high:.3g} satisfies the volume cap")
    best = (high, candidate, vol)
    # [low, high] brackets the cap crossing; keep the feasible end until V is within tol of the cap
    for _ in range(MAX_BISECTIONS):
        if abs(cap - best[2]) <= tol:
            break
        middle = 0.5 * (low + high)
        candidate = direction.step(middle, s)
        vol = problem.volume(candidate)
        if vol <= limit:
            high, best = middle, (middle, candidate, vol)
        else:
            low = middle
    return best


def run_volume_controlled(problem, psi0, budget, params, on_accept=None):
    """Level-set descent for J + l V with l chosen per trial so that V stays within the cap."""
    history = RunHistory(psi=psi0)
    if abs(psi0.norm() - 1.0) > 1e-10:
        raise ValueError("initial level set must have unit L2 norm")
    tol = params.volume_tol_ratio * budget.cap
    psi = psi0
    try:
        vol = problem.volume(psi)
        if vol > budget.cap + tol:
            raise ConfigError(f"initial design violates the volume cap ({vol:.4g} > {budget.cap:.4g})")
        objective = problem.evaluate(psi)
        history.append(HistoryRecord(0, 0, objective, vol, 0.0, 0.0, float("nan"), True,
                                     _constraints(problem, psi)))
        for k in range(params.k_max):
            direction = _WeightedDirection(psi, problem.gradient(psi), problem.volume_gradient(psi))
            weight, trial, improved = 0.0, 0, False
            s = params.s_max
            theta = direction.angle(weight)
            if theta <= params.angle_tol:
                history.reason = "converged"
                break
            while theta > params.angle_tol:
                trial += 1
                try:
                    weight, candidate, cand_vol = _feasible_weight(
                        problem, direction, s, params.weight_step, budget.cap, tol)
                except RotorOptError as exc:
                    logger.warning("step s=%.3g rejected: %s", s, exc)
                    candidate = None
                theta = direction.angle(weight)
                if candidate is not None:
                    value = problem.evaluate(candidate)
                    improved = value < objective
                    history.append(HistoryRecord(k + 1, trial, value, cand_vol, s, weight, theta, improved,
                                                 _constraints(problem, candidate) if improved else {}))
                    if improved:
                        psi, objective = candidate, value
                        if on_accept:
                            on_accept(k + 1, psi)
                        break
                if s <= params.s_min:
                    break
                s = max(params.s_min, params.gamma * s)
            if not improved:
                history.reason = "step size exhausted" if theta > params.angle_tol else "converged"
                break
        else:
            history.reason = "k_max reached"
    except RotorOptError as exc:
        if isinstance(exc, ConfigError):
            raise
        logger.error("optimization aborted: %s", exc)
        history.error = str(exc)
    history.psi = psi
    return history

