"""Particle independent Metropolis-Hastings over the smoothing models.

Each iteration proposes a fresh SMC run and accepts it with probability
min(1, C* / C_current), evaluated on log normalizing constants so that the
2^l-factor products never materialize. A proposal whose SMC run dies of
total weight degeneracy counts as a rejection (the proposal was "minus
infinity"); any other failure aborts.

Chains are strictly sequential: one generator drives the initialization run,
then per iteration the proposal's randomness followed by one acceptance
uniform. Distinct chains must use distinct keyed streams.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Union

import numpy as np

from .errors import AllZeroWeights
from .model import ControlProblem
from .simulate import CoupledPath, DiscretePath, LevelGrid
from .smc import run_coupled_smc, run_smc

__all__ = ["PimhChain", "PimhResult", "init_chain", "pimh_step", "run_pimh",
           "run_coupled_pimh", "default_burn_in"]

_INIT_RETRIES = 10


@dataclass(frozen=True)
class PimhChain:
    """Current state of one PIMH chain."""

    kind: str  # "single" | "coupled"
    trajectory: Union[DiscretePath, CoupledPath]
    log_c: float
    iterations: int = 0
    accepted: int = 0

    def __post_init__(self):
        if self.kind not in ("single", "coupled"):
            raise ValueError(f"kind must be 'single' or 'coupled', got {self.kind!r}")
        if self.accepted > self.iterations:
            raise ValueError("accepted count cannot exceed iteration count")
        if not np.isfinite(self.log_c):
            raise ValueError(f"chain log normalizing constant must be finite, got {self.log_c}")


@dataclass(frozen=True)
class PimhResult:
    """Retained trajectories plus chain diagnostics.

    ``log_c_trace`` has length n_iters + 1 (initial state first);
    ``accept_flags`` has length n_iters. ``trajectories`` holds the retained
    (post burn-in) states in order.
    """

    trajectories: List
    log_c_trace: np.ndarray
    accept_flags: np.ndarray
    burn_in: int

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accept_flags)) if self.accept_flags.size else 0.0


def default_burn_in(n_iters: int) -> int:
    """max(100, n_iters // 10), capped so at least one state is retained."""
    return min(max(100, n_iters // 10), n_iters - 1)


def _proposal(kind, problem, level, n_particles, rng, resampling, backend):
    runner = run_smc if kind == "single" else run_coupled_smc
    return runner(problem, level, n_particles, rng, resampling=resampling, backend=backend)


def init_chain(kind, problem, level, n_particles, rng, *, resampling="multinomial",
               backend=None) -> PimhChain:
    """Run the initialization SMC; retry on total degeneracy, then give up."""
    for attempt in range(_INIT_RETRIES):
        try:
            out = _proposal(kind, problem, level, n_particles, rng, resampling, backend)
            return PimhChain(kind, out.trajectory, out.log_normalizing_constant)
        except AllZeroWeights:
            if attempt == _INIT_RETRIES - 1:
                raise
    raise AssertionError("unreachable")


def pimh_step(chain: PimhChain, problem: ControlProblem, level: LevelGrid,
              n_particles: int, rng: np.random.Generator, *,
              resampling="multinomial", backend=None) -> PimhChain:
    """One independence-MH transition: propose a fresh SMC run, accept on the log-C ratio."""
    try:
        out = _proposal(chain.kind, problem, level, n_particles, rng, resampling, backend)
    except AllZeroWeights:
        rng.random()  # keep the per-iteration draw count fixed
        return replace(chain, iterations=chain.iterations + 1)
    delta = out.log_normalizing_constant - chain.log_c
    u = rng.random()
    if delta >= 0.0 or u < np.exp(delta):
        return PimhChain(chain.kind, out.trajectory, out.log_normalizing_constant,
                         chain.iterations + 1, chain.accepted + 1)
    return replace(chain, iterations=chain.iterations + 1)


def _run(kind, problem, level, n_particles, n_iters, burn_in, rng, resampling, backend,
         collect=None):
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if burn_in is None:
        burn_in = default_burn_in(n_iters)
    if not 0 <= burn_in < n_iters:
        raise ValueError(f"need 0 <= burn_in < n_iters, got burn_in={burn_in}, n_iters={n_iters}")
    chain = init_chain(kind, problem, level, n_particles, rng,
                       resampling=resampling, backend=backend)
    log_c_trace = np.empty(n_iters + 1)
    accept_flags = np.empty(n_iters, dtype=bool)
    log_c_trace[0] = chain.log_c
    kept = []
    for i in range(1, n_iters + 1):
        prev_accepted = chain.accepted
        chain = pimh_step(chain, problem, level, n_particles, rng,
                          resampling=resampling, backend=backend)
        log_c_trace[i] = chain.log_c
        accept_flags[i - 1] = chain.accepted > prev_accepted
        if i > burn_in:
            kept.append(chain.trajectory if collect is None else collect(chain.trajectory))
    return PimhResult(kept, log_c_trace, accept_flags, burn_in)


def run_pimh(problem, level, n_particles, n_iters, burn_in=None,
             rng: np.random.Generator = None, *, resampling="multinomial",
             backend=None, collect=None) -> PimhResult:
    """Run a single-level PIMH chain for ``n_iters`` iterations.

    ``burn_in=None`` applies :func:`default_burn_in`. ``collect`` optionally
    maps each retained trajectory to a summary (e.g. a test-function value)
    so long chains need not hold every path in memory.
    """
    return _run("single", problem, level, n_particles, n_iters, burn_in, rng,
                resampling, backend, collect)


def run_coupled_pimh(problem, fine_level, n_particles, n_iters, burn_in=None,
                     rng: np.random.Generator = None, *, resampling="multinomial",
                     backend=None, collect=None) -> PimhResult:
    """Run a coupled-model PIMH chain; retained states are CoupledPath values."""
    return _run("coupled", problem, fine_level, n_particles, n_iters, burn_in, rng,
                resampling, backend, collect)
