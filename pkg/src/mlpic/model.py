"""Control-problem definitions and validation oracles.

A :class:`ControlProblem` bundles the uncontrolled dynamics (drift ``f``,
diffusion ``g``), the control channel ``e`` with its left inverse, the cost
functions, the quadratic control weight ``R`` and the noise-to-control ratio
``gamma`` that ties ``e``, ``R`` and ``g`` together:

    gamma * e(x) R^-1 e(x)^T = g(x) g(x)^T   for all x.

All function fields are vectorized and pure: they accept arrays of shape
``(..., n)`` and return batched results (``f -> (..., n)``,
``e -> (..., n, m)``, ``g -> (..., n, d)``, costs ``-> (...)``). Problems are
immutable after construction and safe to share across workers.

Two builders are provided: :func:`build_lqg` (scalar linear-quadratic
problem) and :func:`build_sivr` (stochastic epidemic with cost-controlled
vaccination on the S+I+V+R=1 simplex). :func:`riccati_reference_control` is
the analytic validation oracle for the linear-quadratic case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NoConsistentGamma

__all__ = [
    "ControlProblem",
    "KernelModel",
    "LqgParams",
    "SivrParams",
    "build_lqg",
    "build_sivr",
    "assumption2_gamma",
    "riccati_gain",
    "riccati_reference_control",
    "riccati_control_fixed_step",
    "default_probes",
]


@dataclass(frozen=True)
class KernelModel:
    """Descriptor that lets compiled kernels recognize a built-in model family.

    ``params`` is a flat float vector whose layout is fixed per family (see
    mlpic._kernels). Generic problems carry no descriptor and always run on
    the pure backend.
    """

    family: str
    params: tuple


@dataclass(frozen=True)
class ControlProblem:
    """One instance of the additive-control, quadratic-cost problem class."""

    n: int
    m: int
    d: int
    f: Callable[[np.ndarray], np.ndarray]
    e: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    e_left_inverse: Callable[[np.ndarray], np.ndarray]
    g_left_inverse: Callable[[np.ndarray], np.ndarray]
    running_cost: Callable[[np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    gamma: float
    x0: np.ndarray
    horizon: float = 1.0
    name: str = "custom"
    kernel: Optional[KernelModel] = None

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if R.shape != (self.m, self.m):
            raise ValueError(f"R must be {self.m}x{self.m}, got {R.shape}")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        if np.any(np.linalg.eigvalsh(R) <= 0):
            raise ValueError("R must be positive definite")
        if x0.shape != (self.n,):
            raise ValueError(f"x0 must have shape ({self.n},), got {x0.shape}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "x0", x0)
        R.setflags(write=False)
        x0.setflags(write=False)


# ---------------------------------------------------------------------------
# Linear-quadratic Gaussian problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqgParams:
    """Scalar LQG problem: dX = A X dt + B u dt + dW, cost F X_T^2 + int Q X^2 + R u^2."""

    A: float = -1.0
    B: float = 1.0
    F: float = 1.0
    Q: float = 1.0
    R_cost: float = 0.1
    x0: float = -0.1
    T: float = 1.0

    def __post_init__(self):
        if not self.R_cost > 0:
            raise ValueError(f"R_cost must be positive, got {self.R_cost}")
        if self.F < 0 or self.Q < 0:
            raise ValueError("F and Q must be nonnegative")
        if not self.T > 0:
            raise ValueError("T must be positive")


def build_lqg(params: LqgParams) -> ControlProblem:
    """Assemble the scalar LQG problem; gamma = R/B^2 solves the ratio relation."""
    A, B, F, Q = params.A, params.B, params.F, params.Q
    if B == 0:
        raise ValueError("B must be nonzero (control channel must have full rank)")
    gamma = params.R_cost / (B * B)

    def f(x):
        return A * x

    def e(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.array([[B]]), x.shape[:-1] + (1, 1))

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(1), x.shape[:-1] + (1, 1))

    def e_inv(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.array([[1.0 / B]]), x.shape[:-1] + (1, 1))

    def ell(x):
        x = np.asarray(x, dtype=float)
        return Q * (x[..., 0] * x[..., 0])

    def phi(x):
        x = np.asarray(x, dtype=float)
        return F * (x[..., 0] * x[..., 0])

    return ControlProblem(
        n=1, m=1, d=1,
        f=f, e=e, g=g,
        e_left_inverse=e_inv, g_left_inverse=g,
        running_cost=ell, terminal_cost=phi,
        R=np.array([[params.R_cost]]), gamma=gamma,
        x0=np.array([params.x0]), horizon=params.T,
        name="lqg",
        kernel=KernelModel("lqg", (A, B, Q, F, gamma)),
    )


# ---------------------------------------------------------------------------
# Stochastic SIVR epidemic with cost-controlled vaccination
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SivrParams:
    """Compartmental S/I/V/R model parameters.

    The control is the vaccination fraction of the susceptible class; the
    diffusion coefficients are tied to the control channel through
    eps + (sigma_varrho + 1) * varrho = 1, without which no single gamma
    satisfies the noise-to-control relation.
    """

    beta: float = 0.016
    kappa: float = 0.55
    lam: float = 0.45
    eps: float = 0.4
    theta: float = 0.1
    varrho: float = 0.01
    sigma: float = 0.4
    sigma_varrho: float = 59.0
    q_weight: float = 1.0
    r_weight: float = 0.05
    x0: tuple = (0.75, 0.15, 0.05, 0.05)
    T: float = 3.0


def build_sivr(params: SivrParams, *, check_assumption2: bool = True) -> ControlProblem:
    """Assemble the 4-state SIVR problem (1 control, 1 noise channel).

    ``check_assumption2=False`` skips the eps + (sigma_varrho+1)*varrho = 1
    rejection so that diagnostic tooling can probe a broken parameter set;
    estimation on such a problem is meaningless.
    """
    p = params
    x0 = np.asarray(p.x0, dtype=float)
    if x0.shape != (4,):
        raise ValueError("x0 must be a 4-vector (S, I, V, R)")
    # "exactly 1" interpreted as within one double rounding, so that states
    # reached by simulation (which preserve the sum to float accumulation)
    # can seed new instances, e.g. in receding-horizon re-estimation.
    if np.any(x0 < 0) or abs(math.fsum(x0.tolist()) - 1.0) > 1e-12:
        raise ValueError(f"x0 must lie on the simplex (components >= 0, sum = 1), got {p.x0}")
    if not p.T > 0 or not p.r_weight > 0 or not p.q_weight > 0 or not p.sigma > 0:
        raise ValueError("T, r_weight, q_weight, sigma must be positive")
    reproduction = p.kappa / (p.beta + p.lam)
    if not reproduction > 1:
        raise ValueError(f"basic reproduction rate kappa/(beta+lam) = {reproduction:.4g} must exceed 1")
    constraint = p.eps + (p.sigma_varrho + 1.0) * p.varrho
    if check_assumption2 and abs(constraint - 1.0) > 1e-12:
        raise NoConsistentGamma(
            f"eps + (sigma_varrho+1)*varrho = {constraint!r} != 1: "
            "no gamma satisfies the noise-to-control relation"
        )

    beta, kappa, lam, eps, theta, rho, sigma = p.beta, p.kappa, p.lam, p.eps, p.theta, p.varrho, p.sigma
    q = p.q_weight
    # Diffusion column is sigma * (cS, cI, cV, 0) * S.
    cS = -1.0
    cI = 1.0 - eps - p.sigma_varrho * rho
    cV = eps + p.sigma_varrho * rho
    gamma = sigma * sigma * p.r_weight

    def f(x):
        x = np.asarray(x, dtype=float)
        S, I, V, R = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        return np.stack(
            [
                beta - beta * S - kappa * I * S + theta * V,
                kappa * S * I + eps * kappa * V * I - lam * I - beta * I,
                -eps * kappa * I * V - beta * V - theta * V,
                lam * I - beta * R,
            ],
            axis=-1,
        )

    def e(x):
        x = np.asarray(x, dtype=float)
        S = x[..., 0]
        z = np.zeros_like(S)
        return np.stack([-S, rho * S, (1.0 - rho) * S, z], axis=-1)[..., None]

    def g(x):
        x = np.asarray(x, dtype=float)
        S = x[..., 0]
        z = np.zeros_like(S)
        return np.stack([sigma * (cS * S), sigma * (cI * S), sigma * (cV * S), z], axis=-1)[..., None]

    # Left inverses act on the first three coordinates only (the R_t row of
    # e and g is identically zero) and are zero-padded in the fourth column.
    e_sq = 1.0 + rho * rho + (1.0 - rho) * (1.0 - rho)

    def e_inv(x):
        x = np.asarray(x, dtype=float)
        S = x[..., 0]
        denom = e_sq * (S * S)
        z = np.zeros_like(S)
        row = np.stack([-S, rho * S, (1.0 - rho) * S, z], axis=-1) / denom[..., None]
        return row[..., None, :]

    g_sq = sigma * sigma * (cS * cS + cI * cI + cV * cV)

    def g_inv(x):
        x = np.asarray(x, dtype=float)
        S = x[..., 0]
        denom = g_sq * (S * S)
        z = np.zeros_like(S)
        row = np.stack([sigma * (cS * S), sigma * (cI * S), sigma * (cV * S), z], axis=-1) / denom[..., None]
        return row[..., None, :]

    def ell(x):
        x = np.asarray(x, dtype=float)
        return q * x[..., 1]

    def phi(x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] * x[..., 1]

    return ControlProblem(
        n=4, m=1, d=1,
        f=f, e=e, g=g,
        e_left_inverse=e_inv, g_left_inverse=g_inv,
        running_cost=ell, terminal_cost=phi,
        R=np.array([[p.r_weight]]), gamma=gamma,
        x0=x0, horizon=p.T,
        name="sivr",
        kernel=KernelModel(
            "sivr", (beta, kappa, lam, eps, theta, rho, sigma, p.sigma_varrho, q, gamma)
        ),
    )


# ---------------------------------------------------------------------------
# Assumption checks and probes
# ---------------------------------------------------------------------------


def assumption2_gamma(problem, probe_states, rel_tol: float = 1e-8) -> float:
    """Solve gamma from gamma * e R^-1 e^T = g g^T at the probe states.

    Returns the least-squares gamma if the relation holds entrywise at every
    probe to relative tolerance ``rel_tol`` (relative to the max-norm of
    g g^T at that probe); raises :class:`NoConsistentGamma` naming the worst
    probe and matrix entry otherwise. ``problem.gamma`` is ignored.
    """
    probes = np.atleast_2d(np.asarray(probe_states, dtype=float))
    if probes.size == 0:
        raise ValueError("probe_states must be nonempty")
    R_inv = np.linalg.inv(problem.R)
    E = problem.e(probes)
    G = problem.g(probes)
    lhs = np.einsum("pij,jk,plk->pil", E, R_inv, E)
    rhs = np.einsum("pij,plj->pil", G, G)
    denom = float(np.sum(lhs * lhs))
    if denom == 0.0:
        raise NoConsistentGamma("e(x) R^-1 e(x)^T vanished at every probe")
    gamma = float(np.sum(lhs * rhs) / denom)
    resid = np.abs(gamma * lhs - rhs)
    scale = np.max(np.abs(rhs), axis=(1, 2))
    scale = np.where(scale > 0, scale, 1.0)
    rel = resid / scale[:, None, None]
    worst = np.unravel_index(np.argmax(rel), rel.shape)
    if rel[worst] > rel_tol:
        p, i, j = worst
        raise NoConsistentGamma(
            f"relation violated at probe {p} entry ({i},{j}): "
            f"relative residual {rel[worst]:.3e} > {rel_tol:.1e} "
            f"(probe state {probes[p]!r}, best gamma {gamma!r})"
        )
    if not gamma > 0:
        raise NoConsistentGamma(f"solved gamma = {gamma!r} is not positive")
    return gamma


def default_probes(problem: ControlProblem, n_probes: int, rng: np.random.Generator) -> np.ndarray:
    """Random states in the region a problem is meant to be exercised on."""
    if problem.name == "sivr":
        # Dirichlet draws stay strictly inside the simplex, where the left
        # inverses exist (they are undefined at S = 0).
        return rng.dirichlet(np.array([6.0, 2.0, 1.5, 1.5]), size=n_probes)
    return problem.x0 + rng.standard_normal((n_probes, problem.n))


# ---------------------------------------------------------------------------
# Riccati oracle for the LQG problem
# ---------------------------------------------------------------------------


def _riccati_rhs(A, B, F, Q, R):
    # Backward equation -p' = 2 A p - p^2 B^2 / R + Q, p(T) = F, written as a
    # forward-time RHS for integration from T down to t.
    def rhs(_s, p):
        return -(2.0 * A * p - (p * p) * (B * B) / R + Q)

    return rhs


@lru_cache(maxsize=64)
def _riccati_solution(key):
    A, B, F, Q, R, T = key
    sol = solve_ivp(
        _riccati_rhs(A, B, F, Q, R),
        (T, 0.0),
        [F],
        method="RK45",
        rtol=1e-12,
        atol=1e-14,
        dense_output=True,
    )
    if not sol.success:
        raise RuntimeError(f"Riccati integration failed: {sol.message}")
    return sol


def riccati_gain(params: LqgParams, t: float) -> float:
    """p(t) from the scalar backward Riccati equation (adaptive integrator)."""
    if not 0.0 <= t <= params.T:
        raise ValueError(f"t must lie in [0, {params.T}], got {t}")
    if params.Q == 0.0 and params.F == 0.0:
        return 0.0
    sol = _riccati_solution((params.A, params.B, params.F, params.Q, params.R_cost, params.T))
    return float(sol.sol(t)[0])


def riccati_reference_control(params: LqgParams, t: float, x: float) -> float:
    """Exact LQG feedback u*(t, x) = -B p(t) x / R.

    Antisymmetric in x by construction (negation is exact), zero when both
    cost weights vanish.
    """
    return -(params.B * riccati_gain(params, t) * x) / params.R_cost


def riccati_control_fixed_step(params: LqgParams, t: float, x: float, n_steps: int = 200_000) -> float:
    """Independent fixed-step RK4 route to u*(t, x), for cross-checking.

    Integrates backward from T to t with ``n_steps`` equal steps; halving the
    step (doubling ``n_steps``) is the standard convergence check against
    :func:`riccati_reference_control`.
    """
    if not 0.0 <= t <= params.T:
        raise ValueError(f"t must lie in [0, {params.T}], got {t}")
    rhs = _riccati_rhs(params.A, params.B, params.F, params.Q, params.R_cost)
    h = (t - params.T) / n_steps  # negative: backward in time
    p = float(params.F)
    s = params.T
    for _ in range(n_steps):
        k1 = rhs(s, p)
        k2 = rhs(s + 0.5 * h, p + 0.5 * h * k1)
        k3 = rhs(s + 0.5 * h, p + 0.5 * h * k2)
        k4 = rhs(s + h, p + h * k3)
        p += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s += h
    return -(params.B * p * x) / params.R_cost
