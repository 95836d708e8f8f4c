"""Bootstrap particle filters for the single-level and coupled smoothing models.

Both runners draw their randomness from the supplied generator in a fixed,
documented order (one normal block, then one uniform block; see
mlpic._kernels.pure for the exact shapes), so a run is a pure function of
(problem, level, n_particles, generator state). With one particle,
resampling is a no-op and the output trajectory coincides bitwise with
:func:`mlpic.simulate.simulate_path` / ``simulate_coupled`` started from the
same generator state.

The normalizing-constant estimator is returned in log space: the product of
per-step weight means has 2^l factors and is accumulated as a sum of logs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _kernels
from ._kernels.pure import multinomial_indices, systematic_indices
from .errors import AllZeroWeights
from .model import ControlProblem
from .simulate import CoupledPath, DiscretePath, LevelGrid

__all__ = ["ParticleSystem", "SmcOutput", "resample", "run_smc", "run_coupled_smc"]


@dataclass(frozen=True)
class ParticleSystem:
    """Full particle history of one sweep (pure backend only).

    ``ancestors[k-1]`` holds the indices drawn after step k; ``traced_indices``
    is the backward-traced lineage B_1..B_steps, which satisfies
    ``traced_indices[k-1] == ancestors[k-1][traced_indices[k]]``.
    """

    n_particles: int
    states: np.ndarray
    increments: np.ndarray
    ancestors: np.ndarray
    traced_indices: np.ndarray
    step_log_means: np.ndarray


@dataclass(frozen=True)
class SmcOutput:
    """A traced trajectory plus the log normalizing-constant estimator."""

    trajectory: Union[DiscretePath, CoupledPath]
    log_normalizing_constant: float
    particles: Optional[ParticleSystem] = None


def resample(weights, scheme="multinomial", rng: np.random.Generator = None, n_draws=None) -> np.ndarray:
    """Draw ancestor indices proportional to nonnegative weights.

    Multinomial draws i.i.d. from the normalized categorical (one uniform per
    draw); systematic uses a single uniform with stratified inversion, which
    pins every offspring count to floor/ceil of its expectation. Both are
    unbiased: E[#{j : index_j = i}] = n_draws * w_i / sum(w).
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or weights.size == 0:
        raise ValueError("weights must be a nonempty vector")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    n = weights.size if n_draws is None else int(n_draws)
    cum = np.cumsum(weights)
    if not cum[-1] > 0.0:
        raise AllZeroWeights("all resampling weights are zero")
    if scheme == "multinomial":
        return multinomial_indices(cum, rng.random(n))
    if scheme == "systematic":
        return systematic_indices(cum, rng.random(), n)
    raise ValueError(f"unknown resampling scheme {scheme!r}")


def run_smc(problem: ControlProblem, level: LevelGrid, n_particles: int,
            rng: np.random.Generator, *, resampling="multinomial",
            backend=None, return_particles=False) -> SmcOutput:
    """One bootstrap-particle-filter pass over the single-level model.

    Consumes ``standard_normal((steps, n_particles, d))`` then
    ``random((steps, n_particles))`` from ``rng``. The trajectory is the
    ancestry-traced lineage; ``log_normalizing_constant`` sums the log
    per-step weight means.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    normals = rng.standard_normal((level.steps, n_particles, problem.d))
    uniforms = rng.random((level.steps, n_particles))
    res = _kernels.smc_sweep(problem, level, n_particles, normals, uniforms,
                             scheme=resampling, collect_particles=return_particles,
                             backend=backend)
    path = DiscretePath(level, res.traced_states, res.traced_increments)
    particles = None
    if return_particles:
        p = res.particles
        particles = ParticleSystem(n_particles, p["states"], p["increments"],
                                   p["ancestors"], p["traced_indices"], res.step_log_means)
    return SmcOutput(path, float(np.sum(res.step_log_means)), particles)


def run_coupled_smc(problem: ControlProblem, fine_level: LevelGrid, n_particles: int,
                    rng: np.random.Generator, *, resampling="multinomial",
                    backend=None, return_particles=False) -> SmcOutput:
    """One SMC pass over the coupled fine/coarse model.

    Consumes ``standard_normal((steps, n_particles, d))`` then
    ``random((steps/2, n_particles))`` from ``rng``. The log
    normalizing-constant estimator sums log weight means of the odd-step
    (G+1) potentials and the even-step max-coupled potentials.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if fine_level.l < fine_level.M + 1:
        raise ValueError(f"coupled SMC needs l >= M+1, got l={fine_level.l}, M={fine_level.M}")
    steps = fine_level.steps
    normals = rng.standard_normal((steps, n_particles, problem.d))
    uniforms = rng.random((steps // 2, n_particles))
    res = _kernels.coupled_smc_sweep(problem, fine_level, n_particles, normals, uniforms,
                                     scheme=resampling, collect_particles=return_particles,
                                     backend=backend)
    fine = DiscretePath(fine_level, res.fine_states, res.fine_increments)
    coarse = DiscretePath(fine_level.coarsened(), res.coarse_states, res.coarse_increments)
    log_c = float(np.sum(res.odd_log_means) + np.sum(res.even_log_means))
    particles = None
    if return_particles:
        p = res.particles
        particles = ParticleSystem(n_particles, p["fine_states"], p["increments"],
                                   p["ancestors"], p["traced_indices"],
                                   np.concatenate([res.odd_log_means, res.even_log_means]))
    return SmcOutput(CoupledPath(fine, coarse), log_c, particles)
