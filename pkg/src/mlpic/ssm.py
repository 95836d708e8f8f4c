"""The smoothing-model layer: potentials, coupled potentials, RN weights.

The time-discretized control problem is read as a state space model whose
latent chain is the Euler scheme and whose "observation" factors are

    G_k(z) = exp(-(h / gamma) * running_cost(z))   for k = 1 .. steps-1,
    G_k(z) = exp(-terminal_cost(z) / gamma)        for k = steps.

Steps are 1-based over (0, T]; the initial state carries no potential.
Per-step potentials are O(1), but path products have ``2^l`` factors and
underflow quickly, so every product here is accumulated in log space and
exponentiated only when a ratio is formed.

The coupled model evaluates odd fine steps as ``G + 1`` and even fine steps
as the max of the fine potential and the matching coarse one; those choices
make the change-of-measure weights H1, H2 of :func:`rn_log_weights` lie in
(0, 1] uniformly over levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ControlProblem
from .simulate import CoupledPath, DiscretePath, LevelGrid

__all__ = [
    "PotentialTable",
    "potential",
    "log_potential",
    "interior_log_potentials",
    "terminal_log_potentials",
    "potential_table",
    "coupled_potential",
    "log_potential_table",
    "coupled_log_potential_product",
    "rn_log_weights",
    "rn_weights",
    "test_function",
    "test_function_state_diff",
]


def interior_log_potentials(problem: ControlProblem, level: LevelGrid, z: np.ndarray) -> np.ndarray:
    """log G_k at interior steps, batched over leading axes of z."""
    return -(level.h / problem.gamma) * problem.running_cost(z)


def terminal_log_potentials(problem: ControlProblem, z: np.ndarray) -> np.ndarray:
    return -problem.terminal_cost(z) / problem.gamma


def log_potential(problem: ControlProblem, level: LevelGrid, k: int, z) -> float:
    if not 1 <= k <= level.steps:
        raise ValueError(f"step index must be in [1, {level.steps}], got {k}")
    z = np.asarray(z, dtype=float)
    if k == level.steps:
        return float(terminal_log_potentials(problem, z))
    return float(interior_log_potentials(problem, level, z))


def potential(problem: ControlProblem, level: LevelGrid, k: int, z) -> float:
    """G_k(z): interior exp(-h ell(z)/gamma), terminal exp(-phi(z)/gamma)."""
    return float(np.exp(log_potential(problem, level, k, z)))


@dataclass(frozen=True)
class PotentialTable:
    """Per-step potentials G_1..G_steps along one path."""

    level: LevelGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.level.steps,):
            raise ValueError(f"values must have shape ({self.level.steps},), got {self.values.shape}")

    @property
    def log_product(self) -> float:
        return float(np.sum(np.log(self.values)))


def log_potential_table(problem: ControlProblem, level: LevelGrid, states: np.ndarray) -> np.ndarray:
    """log G_k for k = 1..steps along a path given as states z_0..z_steps."""
    logs = np.empty(level.steps)
    logs[: level.steps - 1] = interior_log_potentials(problem, level, states[1 : level.steps])
    logs[level.steps - 1] = terminal_log_potentials(problem, states[level.steps])
    return logs


def potential_table(problem: ControlProblem, path: DiscretePath) -> PotentialTable:
    return PotentialTable(path.level, np.exp(log_potential_table(problem, path.level, path.states)))


def coupled_potential(problem, fine_level: LevelGrid, k: int, z_fine, z_coarse=None) -> float:
    """The coupled-model potential at fine step k.

    Odd k: G_k(z_fine) + 1 (no coarse state exists). Even k: the max of the
    fine potential and the coarse potential at step k/2 of the level-(l-1)
    grid. Presence of ``z_coarse`` must match the parity of ``k``.
    """
    if not 1 <= k <= fine_level.steps:
        raise ValueError(f"step index must be in [1, {fine_level.steps}], got {k}")
    if k % 2 == 1:
        if z_coarse is not None:
            raise ValueError(f"odd fine step {k} has no coarse state")
        return potential(problem, fine_level, k, z_fine) + 1.0
    if z_coarse is None:
        raise ValueError(f"even fine step {k} requires the coarse state at step {k // 2}")
    coarse_level = fine_level.coarsened()
    return max(
        potential(problem, fine_level, k, z_fine),
        potential(problem, coarse_level, k // 2, z_coarse),
    )


def coupled_log_potential_product(problem, coupled: CoupledPath) -> float:
    """log of the coupled-model potential product along a coupled path."""
    fine_level = coupled.fine.level
    log_f = log_potential_table(problem, fine_level, coupled.fine.states)
    log_c = log_potential_table(problem, coupled.coarse.level, coupled.coarse.states)
    # odd steps: log(G + 1) = log1p(G), stable for G anywhere in (0, 1].
    odd = np.log1p(np.exp(log_f[0::2]))
    even = np.maximum(log_f[1::2], log_c)
    return float(np.sum(odd) + np.sum(even))


def rn_log_weights(problem, coupled: CoupledPath) -> tuple:
    """(log H1, log H2): fine and coarse products over the coupled product.

    Both weights are in (0, 1]: every odd factor contributes
    G/(G+1) < 1 and every even factor G/max(G, G') <= 1.
    """
    log_check = coupled_log_potential_product(problem, coupled)
    log_f = np.sum(log_potential_table(problem, coupled.fine.level, coupled.fine.states))
    log_c = np.sum(log_potential_table(problem, coupled.coarse.level, coupled.coarse.states))
    return float(log_f - log_check), float(log_c - log_check)


def rn_weights(problem, coupled: CoupledPath) -> tuple:
    """(H1, H2) as plain numbers; underflows to 0.0 for very fine levels, use
    :func:`rn_log_weights` inside estimators."""
    log_h1, log_h2 = rn_log_weights(problem, coupled)
    return float(np.exp(log_h1)), float(np.exp(log_h2))


def test_function(problem: ControlProblem, path: DiscretePath) -> np.ndarray:
    """The truncated stochastic-integral statistic, from stored increments.

    Returns the m-vector sum over the first ``r_steps`` steps of
    ``e^-1(z_k) g(z_k) W_{k+1}``; equal to the state-difference form by the
    path reconstruction invariant.
    """
    ks = path.level.r_steps
    z = path.states[:ks]
    w = path.increments[:ks]
    e_inv = problem.e_left_inverse(z)
    g = problem.g(z)
    return np.einsum("kmn,knd,kd->m", e_inv, g, w)


def test_function_state_diff(problem: ControlProblem, path: DiscretePath) -> np.ndarray:
    """Cross-check form of :func:`test_function` using state differences.

    Uses e^-1 g g^-1 {z_{k+1} - z_k - f(z_k) h} instead of the stored
    increments; agreement to ~1e-10 is a reconstruction diagnostic.
    """
    ks = path.level.r_steps
    h = path.level.h
    z = path.states[:ks]
    dz = path.states[1 : ks + 1] - z - problem.f(z) * h
    e_inv = problem.e_left_inverse(z)
    g = problem.g(z)
    g_inv = problem.g_left_inverse(z)
    return np.einsum("kmn,knd,kdi,ki->m", e_inv, g, g_inv, dz)
