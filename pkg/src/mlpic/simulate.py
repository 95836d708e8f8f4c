"""Euler-Maruyama simulation on dyadic grids, single-level and coupled.

A level ``l`` discretizes ``[0, T]`` into ``2^l`` steps of size
``h = T * 2^-l``. The coupled simulation drives a fine path at level ``l``
and a coarse path at level ``l-1`` from the same randomness: each coarse
Brownian increment is exactly the sum of the corresponding pair of fine
increments.

Paths carry their increments explicitly; replaying the increments through
:func:`euler_step` reproduces the stored states (to 1e-12), which is both a
storage invariant and the bridge between the stochastic-integral test
function and its state-difference form.

Draw-order contract: :func:`simulate_path` consumes exactly ``2^l * d``
standard normals, drawn as one ``(steps, d)`` block and scaled by
``sqrt(h)``; :func:`simulate_coupled` consumes the same block for the fine
level and derives the coarse increments without further draws. A fixed
(seed, level, problem) triple therefore yields bitwise-identical paths no
matter what else runs concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState
from .model import ControlProblem

__all__ = [
    "LevelGrid",
    "DiscretePath",
    "CoupledPath",
    "euler_step",
    "controlled_euler_step",
    "simulate_path",
    "simulate_coupled",
    "sample_terminal_states",
    "reconstruction_error",
]


@dataclass(frozen=True)
class LevelGrid:
    """Dyadic discretization level with its truncation window.

    ``M`` fixes the truncation time ``r = T * 2^-(M-1)`` over which the
    control test function accumulates; ``M = 1`` means ``r = T`` (no
    truncation; only used by reduced-model diagnostics, the built-in
    experiments use ``M >= 3``).
    """

    l: int
    M: int
    T: float = 1.0

    def __post_init__(self):
        if self.l < 1:
            raise ValueError(f"level must be >= 1, got {self.l}")
        if not 1 <= self.M <= self.l:
            raise ValueError(f"need 1 <= M <= l, got M={self.M}, l={self.l}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")

    @property
    def h(self) -> float:
        return self.T * 2.0 ** (-self.l)

    @property
    def steps(self) -> int:
        return 2 ** self.l

    @property
    def r(self) -> float:
        return self.T * 2.0 ** (-(self.M - 1))

    @property
    def r_steps(self) -> int:
        return 2 ** (self.l - self.M + 1)

    def coarsened(self) -> "LevelGrid":
        """The level-(l-1) grid with the same truncation window."""
        return LevelGrid(self.l - 1, self.M, self.T)


@dataclass(frozen=True)
class DiscretePath:
    """States z_0..z_steps plus the increments W_1..W_steps that produced them."""

    level: LevelGrid
    states: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        steps = self.level.steps
        if self.states.ndim != 2 or self.states.shape[0] != steps + 1:
            raise ValueError(f"states must have shape ({steps + 1}, n), got {self.states.shape}")
        if self.increments.ndim != 2 or self.increments.shape[0] != steps:
            raise ValueError(f"increments must have shape ({steps}, d), got {self.increments.shape}")


@dataclass(frozen=True)
class CoupledPath:
    """A fine path at level l and a coarse path at level l-1, increment-coupled."""

    fine: DiscretePath
    coarse: DiscretePath

    def __post_init__(self):
        if self.coarse.level.l != self.fine.level.l - 1:
            raise ValueError("coarse path must be one level below the fine path")

    def coupling_residual(self) -> float:
        """Max abs difference between coarse increments and fine pair sums (0.0 when exact)."""
        fi = self.fine.increments
        sums = fi[0::2] + fi[1::2]
        return float(np.max(np.abs(self.coarse.increments - sums)))


def _g_matvec(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    # (..., n, d) @ (..., d) -> (..., n); the d == 1 case avoids einsum overhead
    if g.shape[-1] == 1:
        return g[..., 0] * w
    return np.einsum("...nd,...d->...n", g, w)


def euler_step(problem: ControlProblem, z: np.ndarray, w: np.ndarray, h: float) -> np.ndarray:
    """One Euler-Maruyama update z + f(z) h + g(z) w; batched over leading axes."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    return z + problem.f(z) * h + _g_matvec(problem.g(z), w)


def controlled_euler_step(problem, z, u, w, h) -> np.ndarray:
    """Euler update of the controlled dynamics: z + (f(z) + e(z) u) h + g(z) w."""
    z = np.asarray(z, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    drift = problem.f(z) + _g_matvec(problem.e(z), u)
    return z + drift * h + _g_matvec(problem.g(z), np.asarray(w, dtype=float))


def _replay(problem, level, increments) -> np.ndarray:
    h = level.h
    states = np.empty((level.steps + 1, problem.n))
    states[0] = problem.x0
    z = problem.x0
    for k in range(level.steps):
        z = euler_step(problem, z, increments[k], h)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState(f"state became non-finite at step {k + 1} of level {level.l}")
        states[k + 1] = z
    return states


def simulate_path(problem: ControlProblem, level: LevelGrid, rng: np.random.Generator) -> DiscretePath:
    """One trajectory of the uncontrolled dynamics at a single level."""
    sqrt_h = np.sqrt(level.h)
    increments = rng.standard_normal((level.steps, problem.d)) * sqrt_h
    states = _replay(problem, level, increments)
    return DiscretePath(level, states, increments)


def simulate_coupled(problem: ControlProblem, fine_level: LevelGrid, rng: np.random.Generator) -> CoupledPath:
    """A coupled fine/coarse pair; coarse increments are exact fine pair sums.

    With the same generator state this produces the same fine path as
    :func:`simulate_path` at ``fine_level``.
    """
    if fine_level.l < fine_level.M + 1:
        raise ValueError(f"coupled simulation needs l >= M+1, got l={fine_level.l}, M={fine_level.M}")
    sqrt_h = np.sqrt(fine_level.h)
    fine_incr = rng.standard_normal((fine_level.steps, problem.d)) * sqrt_h
    coarse_incr = fine_incr[0::2] + fine_incr[1::2]
    coarse_level = fine_level.coarsened()
    fine = DiscretePath(fine_level, _replay(problem, fine_level, fine_incr), fine_incr)
    coarse = DiscretePath(coarse_level, _replay(problem, coarse_level, coarse_incr), coarse_incr)
    return CoupledPath(fine, coarse)


def sample_terminal_states(
    problem: ControlProblem, level: LevelGrid, n_paths: int, rng: np.random.Generator
) -> np.ndarray:
    """Terminal states of ``n_paths`` independent trajectories, vectorized.

    Draws one ``(n_paths, d)`` normal block per time step (step-major order).
    """
    h = level.h
    sqrt_h = np.sqrt(h)
    z = np.broadcast_to(problem.x0, (n_paths, problem.n)).copy()
    for k in range(level.steps):
        w = rng.standard_normal((n_paths, problem.d)) * sqrt_h
        z = euler_step(problem, z, w, h)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState(f"batch contained a non-finite state at step {k + 1}")
    return z


def reconstruction_error(problem: ControlProblem, path: DiscretePath) -> float:
    """Max abs deviation between stored states and an euler_step replay of the increments."""
    states = _replay(problem, path.level, path.increments)
    return float(np.max(np.abs(states - path.states)))
