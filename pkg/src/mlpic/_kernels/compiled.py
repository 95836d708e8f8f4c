"""Thin adapter between ControlProblem values and the compiled sweeps."""

from __future__ import annotations

import numpy as np

from . import _core
from .pure import CoupledSweepResult, SweepResult

_SCHEME_CODES = {"multinomial": 0, "systematic": 1}


def smc_sweep(problem, level, n_particles, normals, uniforms, scheme="multinomial") -> SweepResult:
    code = _SCHEME_CODES[scheme]
    steps = level.steps
    traced_states = np.empty((steps + 1, problem.n))
    traced_incr = np.empty((steps, problem.d))
    log_means = np.empty(steps)
    fam = problem.kernel.family
    if fam == "lqg":
        A, B, Q, F, gamma = problem.kernel.params
        _core.lqg_smc(normals, uniforms, float(problem.x0[0]), A, Q, F, gamma,
                      level.h, code, traced_states, traced_incr, log_means)
    elif fam == "sivr":
        args = _sivr_args(problem)
        _core.sivr_smc(normals, uniforms, problem.x0.copy(), *args,
                       level.h, code, traced_states, traced_incr, log_means)
    else:  # pragma: no cover - guarded by _resolve
        raise ValueError(f"no compiled kernel for family {fam!r}")
    return SweepResult(traced_states, traced_incr, log_means, None)


def coupled_smc_sweep(problem, fine_level, n_particles, normals, uniforms,
                      scheme="multinomial") -> CoupledSweepResult:
    code = _SCHEME_CODES[scheme]
    steps = fine_level.steps
    half = steps // 2
    coarse_level = fine_level.coarsened()
    f_states = np.empty((steps + 1, problem.n))
    f_incr = np.empty((steps, problem.d))
    c_states = np.empty((half + 1, problem.n))
    c_incr = np.empty((half, problem.d))
    odd_log_means = np.empty(half)
    even_log_means = np.empty(half)
    fam = problem.kernel.family
    if fam == "lqg":
        A, B, Q, F, gamma = problem.kernel.params
        _core.lqg_coupled_smc(normals, uniforms, float(problem.x0[0]), A, Q, F, gamma,
                              fine_level.h, coarse_level.h, code,
                              f_states, f_incr, c_states, c_incr,
                              odd_log_means, even_log_means)
    elif fam == "sivr":
        args = _sivr_args(problem)
        _core.sivr_coupled_smc(normals, uniforms, problem.x0.copy(), *args,
                               fine_level.h, coarse_level.h, code,
                               f_states, f_incr, c_states, c_incr,
                               odd_log_means, even_log_means)
    else:  # pragma: no cover
        raise ValueError(f"no compiled kernel for family {fam!r}")
    return CoupledSweepResult(f_states, f_incr, c_states, c_incr,
                              odd_log_means, even_log_means, None)


def _sivr_args(problem):
    beta, kappa, lam, eps, theta, rho, sigma, sigma_varrho, q, gamma = problem.kernel.params
    # same expressions as in model.build_sivr
    cS = -1.0
    cI = 1.0 - eps - sigma_varrho * rho
    cV = eps + sigma_varrho * rho
    return (beta, kappa, lam, eps, theta, rho, sigma, cS, cI, cV, q, gamma)
