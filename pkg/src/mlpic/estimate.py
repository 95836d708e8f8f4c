"""Control estimators: plain MC, single-level PIMH, level differences, MLMC.

All estimators target the time-0 control of the truncated path-integral
representation: the test-function average over the smoothing distribution,
divided by the truncation time r. Costs are counted in Euler steps of one
particle (a coupled chain counts fine plus coarse steps); the number of
particles multiplies in, and initialization runs are included in actual
costs.

The epsilon-driven schedule follows the multilevel analysis: the finest
level L makes the squared discretization bias ~ epsilon^2 and the per-level
chain lengths decay like h_l, with the (L - M + 1) factor spreading the
variance budget evenly across levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ssm
from .errors import DegenerateWeights, NonFiniteState
from .model import ControlProblem
from .pimh import run_coupled_pimh, run_pimh
from .rng import Streams
from .simulate import LevelGrid, euler_step

__all__ = [
    "ControlEstimate",
    "LevelSchedule",
    "level_schedule",
    "mc_single_level",
    "pimh_single_level",
    "level_difference",
    "multilevel_estimate",
    "default_level_burn_in",
    "cost_of",
    "loglog_fit",
    "loglog_interp",
]


@dataclass(frozen=True)
class ControlEstimate:
    """An estimated control vector with its cost and diagnostics."""

    value: np.ndarray
    kind: str
    level_min: int
    level_max: int
    n_per_level: dict
    cost: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.cost > 0:
            raise ValueError(f"cost must be positive, got {self.cost}")
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteState(f"estimate is not finite: {self.value!r}")


@dataclass(frozen=True)
class LevelSchedule:
    """Levels M..L with per-level chain lengths N_M >= ... >= N_L."""

    epsilon: float
    M: int
    L: int
    n_iters: tuple

    def __post_init__(self):
        if self.L < self.M:
            raise ValueError(f"need L >= M, got M={self.M}, L={self.L}")
        if len(self.n_iters) != self.L - self.M + 1:
            raise ValueError("need one chain length per level M..L")
        if any(n < 1 for n in self.n_iters):
            raise ValueError("chain lengths must be >= 1")
        if any(a < b for a, b in zip(self.n_iters, self.n_iters[1:])):
            raise ValueError("chain lengths must be nonincreasing in the level")

    def n_at(self, level: int) -> int:
        return self.n_iters[level - self.M]


def level_schedule(epsilon: float, M: int, c_bias: float = 1.0, c_var: float = 1.0,
                   T: float = 1.0) -> LevelSchedule:
    """The epsilon-driven level schedule.

    L = max(M, ceil(log2(c_bias / epsilon^2))) so that 2^-L <= epsilon^2 /
    c_bias, and N_l = ceil(c_var * epsilon^-2 * h_l * (L - M + 1)) with
    h_l = T * 2^-l. Halving epsilon adds exactly 2 to L (c_bias = 1) and
    roughly quadruples every N_l.
    """
    if not epsilon > 0 or not c_bias > 0 or not c_var > 0:
        raise ValueError("epsilon, c_bias and c_var must be positive")
    if M < 1:
        raise ValueError("M must be >= 1")
    L = max(M, math.ceil(math.log2(c_bias / (epsilon * epsilon))))
    k = L - M + 1
    n_iters = tuple(
        math.ceil(c_var * (T * 2.0 ** (-l)) * k / (epsilon * epsilon)) for l in range(M, L + 1)
    )
    return LevelSchedule(epsilon, M, L, n_iters)


# ---------------------------------------------------------------------------
# Plain Monte Carlo (normalized importance sampling)
# ---------------------------------------------------------------------------


class _WeightedAccumulator:
    """Streaming self-normalized sums with a running log-scale shift."""

    def __init__(self, m):
        self.shift = -np.inf
        self.w_sum = 0.0
        self.w_sq_sum = 0.0
        self.wphi = np.zeros(m)
        self.w_sq_phi = np.zeros(m)
        self.w_sq_phi2 = np.zeros(m)

    def add(self, log_w, phi):
        chunk_max = float(np.max(log_w))
        shift = max(self.shift, chunk_max)
        if shift == -np.inf:
            return
        if shift > self.shift and np.isfinite(self.shift):
            scale = np.exp(self.shift - shift)
            self.w_sum *= scale
            self.wphi *= scale
            self.w_sq_sum *= scale * scale
            self.w_sq_phi *= scale * scale
            self.w_sq_phi2 *= scale * scale
        self.shift = shift
        w = np.exp(log_w - shift)
        self.w_sum += float(np.sum(w))
        self.w_sq_sum += float(np.sum(w * w))
        self.wphi += w @ phi
        self.w_sq_phi += (w * w) @ phi
        self.w_sq_phi2 += (w * w) @ (phi * phi)

    def mean(self):
        if self.w_sum <= 0.0:
            raise DegenerateWeights("importance weights underflowed to zero")
        return self.wphi / self.w_sum

    def ess(self):
        return self.w_sum * self.w_sum / self.w_sq_sum if self.w_sq_sum > 0 else 0.0

    def std_error(self):
        # Delta-method variance of the self-normalized estimator.
        mu = self.mean()
        var = (self.w_sq_phi2 - 2.0 * mu * self.w_sq_phi + mu * mu * self.w_sq_sum)
        return np.sqrt(np.maximum(var, 0.0)) / self.w_sum


def _mc_chunk_terms(problem, level, n_chunk, rng):
    h, steps, r_steps = level.h, level.steps, level.r_steps
    sqrt_h = np.sqrt(h)
    z = np.broadcast_to(problem.x0, (n_chunk, problem.n)).copy()
    ell_sum = np.zeros(n_chunk)
    phi_l = np.zeros((n_chunk, problem.m))
    for k in range(1, steps + 1):
        w = rng.standard_normal((n_chunk, problem.d)) * sqrt_h
        if k <= r_steps:
            e_inv = problem.e_left_inverse(z)
            g = problem.g(z)
            phi_l += np.einsum("cmn,cnd,cd->cm", e_inv, g, w)
        z = euler_step(problem, z, w, h)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState(f"a path became non-finite at step {k} of level {level.l}")
        if k <= steps - 1:
            ell_sum += problem.running_cost(z)
    log_w = -(problem.terminal_cost(z) + h * ell_sum) / problem.gamma
    return log_w, phi_l


def mc_single_level(problem: ControlProblem, level: LevelGrid, n_samples: int,
                    rng: np.random.Generator, chunk_size: int = 32768) -> ControlEstimate:
    """The standard normalized importance-sampling estimator.

    Simulates ``n_samples`` independent paths and returns
    r^-1 * sum_i omega_i * phi_l(path_i) with omega the normalized
    exponential cost weights. Paths are processed in fixed-size chunks
    (per-step normal draws of shape ``(chunk, d)``); the chunk size is part
    of the determinism contract.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    acc = _WeightedAccumulator(problem.m)
    done = 0
    while done < n_samples:
        nc = min(chunk_size, n_samples - done)
        log_w, phi_l = _mc_chunk_terms(problem, level, nc, rng)
        acc.add(log_w, phi_l)
        done += nc
    inv_r = 1.0 / level.r
    value = acc.mean() * inv_r
    diag = {
        "ess": acc.ess(),
        "std_error": acc.std_error() * inv_r,
        "n_samples": n_samples,
    }
    return ControlEstimate(value, "mc", level.l, level.l, {level.l: n_samples},
                           n_samples * level.steps, diag)


# ---------------------------------------------------------------------------
# PIMH-based estimators
# ---------------------------------------------------------------------------


def pimh_single_level(problem: ControlProblem, level: LevelGrid, n_particles: int,
                      n_iters: int, burn_in=None, rng: np.random.Generator = None,
                      *, resampling="multinomial", backend=None) -> ControlEstimate:
    """Average r^-1 phi_l over the retained states of a single-level PIMH chain."""
    if burn_in is not None and not n_iters > burn_in:
        raise ValueError("need n_iters > burn_in")
    res = run_pimh(problem, level, n_particles, n_iters, burn_in, rng,
                   resampling=resampling, backend=backend,
                   collect=lambda path: ssm.test_function(problem, path))
    values = np.asarray(res.trajectories) / level.r
    n_kept = values.shape[0]
    value = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(n_kept) if n_kept > 1 else np.full(problem.m, np.nan)
    cost = (n_iters + 1) * n_particles * level.steps
    diag = {
        "acceptance_rate": res.acceptance_rate,
        "std_error": se,
        "n_retained": n_kept,
        "log_c_trace": res.log_c_trace,
    }
    return ControlEstimate(value, "pimh", level.l, level.l, {level.l: n_kept}, cost, diag)


def level_difference(problem: ControlProblem, fine_level: LevelGrid, n_particles: int,
                     n_iters: int, burn_in=None, rng: np.random.Generator = None,
                     *, resampling="multinomial", backend=None) -> ControlEstimate:
    """Coupled-chain estimate of u^l - u^(l-1) via the self-normalized RN ratios.

    Per retained coupled state the sweep records phi_l(fine), phi_{l-1}(coarse)
    and the log RN weights; the estimate is
    r^-1 [ sum_i phi_l H1_i / sum_i H1_i - sum_i phi_{l-1} H2_i / sum_i H2_i ],
    evaluated with softmax weights so underflow in H1, H2 cancels.
    """
    if burn_in is not None and not n_iters > burn_in:
        raise ValueError("need n_iters > burn_in")

    def collect(coupled):
        log_h1, log_h2 = ssm.rn_log_weights(problem, coupled)
        return (ssm.test_function(problem, coupled.fine),
                ssm.test_function(problem, coupled.coarse), log_h1, log_h2)

    res = run_coupled_pimh(problem, fine_level, n_particles, n_iters, burn_in, rng,
                           resampling=resampling, backend=backend, collect=collect)
    phi_f = np.asarray([t[0] for t in res.trajectories])
    phi_c = np.asarray([t[1] for t in res.trajectories])
    log_h1 = np.asarray([t[2] for t in res.trajectories])
    log_h2 = np.asarray([t[3] for t in res.trajectories])
    n_kept = phi_f.shape[0]

    w1 = _softmax(log_h1)
    w2 = _softmax(log_h2)
    inv_r = 1.0 / fine_level.r
    value = ((w1[:, None] * phi_f).sum(axis=0) - (w2[:, None] * phi_c).sum(axis=0)) * inv_r
    # Per-state difference terms: their mean is the estimate, their spread is
    # the h_l-scaling variance diagnostic.
    terms = n_kept * (w1[:, None] * phi_f - w2[:, None] * phi_c) * inv_r
    per_state_var = terms.var(axis=0, ddof=1) if n_kept > 1 else np.full(problem.m, np.nan)
    se = np.sqrt(per_state_var / n_kept) if n_kept > 1 else np.full(problem.m, np.nan)
    cost = (n_iters + 1) * n_particles * (fine_level.steps + fine_level.steps // 2)
    diag = {
        "acceptance_rate": res.acceptance_rate,
        "per_state_variance": per_state_var,
        "std_error": se,
        "n_retained": n_kept,
        "ess_h1": 1.0 / float(np.sum(w1 * w1)),
        "ess_h2": 1.0 / float(np.sum(w2 * w2)),
    }
    return ControlEstimate(value, "difference", fine_level.l - 1, fine_level.l,
                           {fine_level.l: n_kept}, cost, diag)


def _softmax(log_w):
    m = float(np.max(log_w))
    if not np.isfinite(m):
        raise DegenerateWeights("RN weights underflowed to zero")
    w = np.exp(log_w - m)
    return w / np.sum(w)


def default_level_burn_in(n_iters: int) -> int:
    """Per-level burn-in inside the multilevel estimator: short, since PIMH
    is an independence sampler; capped so fine levels stay cheap."""
    return max(1, min(50, n_iters // 10))


def multilevel_estimate(problem: ControlProblem, schedule: LevelSchedule, n_particles: int,
                        burn_in_rule: Optional[Callable[[int], int]] = None,
                        streams: Streams = None, *, resampling="multinomial",
                        backend=None) -> ControlEstimate:
    """The multilevel control estimator: base chain at M plus level differences.

    Each component runs on its own keyed stream (base: ("pimh", M);
    difference at l: ("pimh-diff", l)), so components are independent and the
    execution order is irrelevant. Every chain runs schedule-N_l retained
    iterations on top of ``burn_in_rule(N_l)`` burn-in.
    """
    if streams is None:
        raise ValueError("multilevel_estimate requires a Streams factory")
    rule = default_level_burn_in if burn_in_rule is None else burn_in_rule
    T = problem.horizon
    M = schedule.M

    parts = {}
    n_base = schedule.n_at(M)
    b = rule(n_base)
    base = pimh_single_level(problem, LevelGrid(M, M, T), n_particles,
                             n_base + b, b, streams.child("pimh", M),
                             resampling=resampling, backend=backend)
    parts[M] = base
    value = base.value.copy()
    cost = base.cost
    ses = [base.diagnostics["std_error"]]
    n_per_level = {M: n_base}
    for l in range(M + 1, schedule.L + 1):
        n_l = schedule.n_at(l)
        b = rule(n_l)
        try:
            diff = level_difference(problem, LevelGrid(l, M, T), n_particles,
                                    n_l + b, b, streams.child("pimh-diff", l),
                                    resampling=resampling, backend=backend)
        except Exception as exc:
            raise type(exc)(f"level {l}: {exc}") from exc
        parts[l] = diff
        value += diff.value
        cost += diff.cost
        ses.append(diff.diagnostics["std_error"])
        n_per_level[l] = n_l
    combined_se = np.sqrt(np.sum(np.square(np.asarray(ses)), axis=0))
    diag = {
        "std_error": combined_se,
        "per_level": {l: p.diagnostics for l, p in parts.items()},
        "values_per_level": {l: p.value for l, p in parts.items()},
    }
    return ControlEstimate(value, "mlmc", M, schedule.L, n_per_level, cost, diag)


# ---------------------------------------------------------------------------
# Cost accounting and complexity summaries
# ---------------------------------------------------------------------------


def cost_of(obj, n_particles: Optional[int] = None, include_init: bool = False) -> int:
    """Euler-step cost of an estimate (actual) or a schedule (planned).

    Planned schedule cost is sum_l N_l * n_particles * (steps at level l),
    with coupled chains paying fine plus coarse steps, so doubling every N_l
    doubles it exactly; ``include_init=True`` adds the one initialization
    sweep each level chain runs. Burn-in is an implementation choice and is
    excluded from planned costs (actual costs on estimates include both).
    """
    if isinstance(obj, ControlEstimate):
        return obj.cost
    if isinstance(obj, LevelSchedule):
        if n_particles is None:
            raise ValueError("planned schedule cost needs n_particles")
        extra = 1 if include_init else 0
        total = (obj.n_at(obj.M) + extra) * 2 ** obj.M
        for l in range(obj.M + 1, obj.L + 1):
            total += (obj.n_at(l) + extra) * (2 ** l + 2 ** (l - 1))
        return total * n_particles
    raise TypeError(f"cost_of expects a ControlEstimate or LevelSchedule, got {type(obj)!r}")


def loglog_fit(x, y):
    """Least-squares slope and intercept of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def loglog_interp(fit, x):
    """Evaluate a loglog_fit at x."""
    slope, intercept = fit
    return float(np.exp(intercept + slope * math.log(x)))
