"""Pure numpy SMC sweeps: the reference implementation of the hot kernels.

Works for any ControlProblem (the compiled backend only covers the built-in
model families). Both backends consume identical pre-drawn randomness:

* ``normals``: one ``(steps, n_particles, d)`` standard-normal block, scaled
  by ``sqrt(h)`` inside the sweep;
* ``uniforms``: one ``(steps, n_particles)`` block for the single-level
  sweep (row k-1 resamples after step k; the terminal row contributes only
  its first element, which draws the output ancestor), and a
  ``(steps/2, n_particles)`` block for the coupled sweep (row n-1 resamples
  after even step 2n).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import AllZeroWeights, NonFiniteState
from ..simulate import euler_step
from ..ssm import interior_log_potentials, terminal_log_potentials

_SCHEMES = ("multinomial", "systematic")


def multinomial_indices(cum_weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """i.i.d. categorical draws by inverse CDF on the unnormalized cumsum."""
    idx = np.searchsorted(cum_weights, uniforms * cum_weights[-1], side="right")
    return np.minimum(idx, cum_weights.size - 1)


def systematic_indices(cum_weights: np.ndarray, uniform: float, n_draws: int) -> np.ndarray:
    """Stratified inversion with a single uniform: one draw per stratum."""
    positions = (np.arange(n_draws) + uniform) / n_draws
    idx = np.searchsorted(cum_weights, positions * cum_weights[-1], side="right")
    return np.minimum(idx, cum_weights.size - 1)


def _ancestor_indices(weights, uniform_row, scheme):
    if not np.all(np.isfinite(weights)):
        raise NonFiniteState("particle potentials overflowed (non-finite weight)")
    cum = np.cumsum(weights)
    if not cum[-1] > 0.0:
        raise AllZeroWeights("all particle weights are zero")
    if scheme == "multinomial":
        return multinomial_indices(cum, uniform_row)
    return systematic_indices(cum, uniform_row[0], weights.size)


def _single_index(weights, uniform):
    if not np.all(np.isfinite(weights)):
        raise NonFiniteState("particle potentials overflowed (non-finite weight)")
    cum = np.cumsum(weights)
    if not cum[-1] > 0.0:
        raise AllZeroWeights("all particle weights are zero")
    return int(min(np.searchsorted(cum, uniform * cum[-1], side="right"), weights.size - 1))


def _log_mean(weights):
    mean = float(np.mean(weights))
    if not mean > 0.0:
        raise AllZeroWeights("all particle weights are zero")
    return np.log(mean)


@dataclass
class SweepResult:
    traced_states: np.ndarray
    traced_increments: np.ndarray
    step_log_means: np.ndarray
    particles: Optional[dict] = None


@dataclass
class CoupledSweepResult:
    fine_states: np.ndarray
    fine_increments: np.ndarray
    coarse_states: np.ndarray
    coarse_increments: np.ndarray
    odd_log_means: np.ndarray
    even_log_means: np.ndarray
    particles: Optional[dict] = None


def smc_sweep(problem, level, n_particles, normals, uniforms, scheme="multinomial",
              collect_particles=False) -> SweepResult:
    """Bootstrap particle filter sweep for the single-level smoothing model.

    Propagates all particles with the Euler scheme, resamples ancestors with
    the interior potentials after every interior step, draws the output
    ancestor with the terminal potentials, and traces the ancestry backward.
    ``step_log_means[k-1]`` is log of the particle mean of G_k; their sum is
    the log normalizing-constant estimator.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    steps, n, d, h = level.steps, problem.n, problem.d, level.h
    incr = normals * np.sqrt(h)
    states = np.empty((steps, n_particles, n))
    ancestors = np.empty((steps - 1, n_particles), dtype=np.intp) if steps > 1 else np.empty((0, n_particles), dtype=np.intp)
    log_means = np.empty(steps)

    z = np.broadcast_to(problem.x0, (n_particles, n))
    parents = None
    terminal_pick = 0
    for k in range(1, steps + 1):
        src = z if parents is None else z[parents]
        z = euler_step(problem, src, incr[k - 1], h)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState(f"particle state became non-finite at step {k} of level {level.l}")
        states[k - 1] = z
        if k < steps:
            weights = np.exp(interior_log_potentials(problem, level, z))
            log_means[k - 1] = _log_mean(weights)
            parents = _ancestor_indices(weights, uniforms[k - 1], scheme)
            ancestors[k - 1] = parents
        else:
            weights = np.exp(terminal_log_potentials(problem, z))
            log_means[k - 1] = _log_mean(weights)
            terminal_pick = _single_index(weights, uniforms[k - 1, 0])

    traced_states = np.empty((steps + 1, n))
    traced_incr = np.empty((steps, d))
    traced_states[0] = problem.x0
    traced_idx = np.empty(steps, dtype=np.intp) if collect_particles else None
    idx = terminal_pick
    for k in range(steps, 0, -1):
        traced_states[k] = states[k - 1, idx]
        traced_incr[k - 1] = incr[k - 1, idx]
        if collect_particles:
            traced_idx[k - 1] = idx
        if k > 1:
            idx = ancestors[k - 2, idx]

    particles = None
    if collect_particles:
        particles = {"states": states, "ancestors": ancestors, "traced_indices": traced_idx,
                     "increments": incr}
    return SweepResult(traced_states, traced_incr, log_means, particles)


def coupled_smc_sweep(problem, fine_level, n_particles, normals, uniforms,
                      scheme="multinomial", collect_particles=False) -> CoupledSweepResult:
    """SMC sweep for the coupled fine/coarse smoothing model.

    Fine particles advance every fine step; the coarse system advances at
    even fine steps using each particle's own summed increment pair and the
    ancestor drawn at the previous even step. Resampling happens only at
    even steps, with the max-coupled potentials; odd-step potentials
    (G + 1) enter only the normalizing constant. Ancestry is traced through
    the even steps and copied onto the preceding odd steps.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    coarse_level = fine_level.coarsened()
    steps_f = fine_level.steps
    half = steps_f // 2
    n, d = problem.n, problem.d
    h_f, h_c = fine_level.h, coarse_level.h
    incr = normals * np.sqrt(h_f)

    states_f = np.empty((steps_f, n_particles, n))
    states_c = np.empty((half, n_particles, n))
    ancestors = np.empty((half - 1, n_particles), dtype=np.intp) if half > 1 else np.empty((0, n_particles), dtype=np.intp)
    odd_log_means = np.empty(half)
    even_log_means = np.empty(half)

    zf = np.broadcast_to(problem.x0, (n_particles, n))
    zc = np.broadcast_to(problem.x0, (n_particles, n))
    parents = None
    terminal_pick = 0
    for k in range(1, steps_f + 1):
        if k % 2 == 1:
            src = zf if parents is None else zf[parents]
            zf = euler_step(problem, src, incr[k - 1], h_f)
            if not np.all(np.isfinite(zf)):
                raise NonFiniteState(f"fine state became non-finite at step {k} of level {fine_level.l}")
            states_f[k - 1] = zf
            weights = np.exp(interior_log_potentials(problem, fine_level, zf)) + 1.0
            odd_log_means[k // 2] = _log_mean(weights)
        else:
            zf = euler_step(problem, zf, incr[k - 1], h_f)  # odd-step ancestors are the identity
            if not np.all(np.isfinite(zf)):
                raise NonFiniteState(f"fine state became non-finite at step {k} of level {fine_level.l}")
            states_f[k - 1] = zf
            n_c = k // 2
            w_sum = incr[k - 2] + incr[k - 1]
            src_c = zc if parents is None else zc[parents]
            zc = euler_step(problem, src_c, w_sum, h_c)
            if not np.all(np.isfinite(zc)):
                raise NonFiniteState(f"coarse state became non-finite at step {n_c} of level {coarse_level.l}")
            states_c[n_c - 1] = zc
            if k < steps_f:
                pot_f = np.exp(interior_log_potentials(problem, fine_level, zf))
                pot_c = np.exp(interior_log_potentials(problem, coarse_level, zc))
            else:
                pot_f = np.exp(terminal_log_potentials(problem, zf))
                pot_c = np.exp(terminal_log_potentials(problem, zc))
            weights = np.maximum(pot_f, pot_c)
            even_log_means[n_c - 1] = _log_mean(weights)
            if k < steps_f:
                parents = _ancestor_indices(weights, uniforms[n_c - 1], scheme)
                ancestors[n_c - 1] = parents
            else:
                terminal_pick = _single_index(weights, uniforms[n_c - 1, 0])

    traced_f_states = np.empty((steps_f + 1, n))
    traced_f_incr = np.empty((steps_f, d))
    traced_c_states = np.empty((half + 1, n))
    traced_c_incr = np.empty((half, d))
    traced_f_states[0] = problem.x0
    traced_c_states[0] = problem.x0
    traced_idx = np.empty(half, dtype=np.intp) if collect_particles else None
    idx = terminal_pick
    for n_c in range(half, 0, -1):
        k = 2 * n_c
        traced_f_states[k] = states_f[k - 1, idx]
        traced_f_states[k - 1] = states_f[k - 2, idx]
        traced_f_incr[k - 1] = incr[k - 1, idx]
        traced_f_incr[k - 2] = incr[k - 2, idx]
        traced_c_states[n_c] = states_c[n_c - 1, idx]
        traced_c_incr[n_c - 1] = traced_f_incr[k - 2] + traced_f_incr[k - 1]
        if collect_particles:
            traced_idx[n_c - 1] = idx
        if n_c > 1:
            idx = ancestors[n_c - 2, idx]

    particles = None
    if collect_particles:
        particles = {"fine_states": states_f, "coarse_states": states_c,
                     "ancestors": ancestors, "traced_indices": traced_idx,
                     "increments": incr}
    return CoupledSweepResult(traced_f_states, traced_f_incr, traced_c_states,
                              traced_c_incr, odd_log_means, even_log_means, particles)
