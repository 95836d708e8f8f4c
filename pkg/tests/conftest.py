import numpy as np
import pytest

from mlpic import LqgParams, SivrParams, build_lqg, build_sivr
from mlpic.model import ControlProblem


@pytest.fixture(scope="session")
def lqg():
    return build_lqg(LqgParams())


@pytest.fixture(scope="session")
def sivr():
    return build_sivr(SivrParams())


def make_custom(f=None, running_cost=None, terminal_cost=None, gamma=1.0, x0=0.0,
                horizon=1.0, name="custom"):
    """Scalar problem with e = g = 1 and overridable pieces (defaults: all zero)."""

    def zero_vec(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def zero_scalar(x):
        return np.zeros(np.asarray(x).shape[:-1])

    def one_mat(x):
        return np.broadcast_to(np.eye(1), np.asarray(x).shape[:-1] + (1, 1))

    return ControlProblem(
        n=1, m=1, d=1,
        f=f or zero_vec, e=one_mat, g=one_mat,
        e_left_inverse=one_mat, g_left_inverse=one_mat,
        running_cost=running_cost or zero_scalar,
        terminal_cost=terminal_cost or zero_scalar,
        R=np.eye(1) * gamma, gamma=gamma,
        x0=np.atleast_1d(np.asarray(x0, dtype=float)), horizon=horizon, name=name,
    )


@pytest.fixture(scope="session")
def zero_problem():
    return make_custom(name="zero")


def constant_cost_problem(c, horizon=1.0):
    def ell(x):
        return np.full(np.asarray(x).shape[:-1], c)

    return make_custom(running_cost=ell, name="const-cost", horizon=horizon)


def kalman_control(params: LqgParams, l: int, M: int) -> float:
    """Exact value of the discretized truncated control for the scalar
    linear-quadratic model, by Kalman filtering/smoothing of the smoothing
    model (Gaussian transitions, Gaussian potentials). Independent oracle:
    shares no code with the estimators."""
    A, B, F, Q = params.A, params.B, params.F, params.Q
    gamma = params.R_cost / (B * B)
    T = params.T
    steps = 2 ** l
    h = T / steps
    a = 1.0 + A * h
    rs = 2 ** (l - M + 1)
    r = T * 2.0 ** (-(M - 1))
    ms, Ps = [], []
    m, P = params.x0, 0.0
    for k in range(1, steps + 1):
        m, P = a * m, a * a * P + h
        weight = 2 * h * Q if k < steps else 2 * F
        if weight > 0:
            v = gamma / weight
            K = P / (P + v)
            m, P = m + K * (0.0 - m), (1 - K) * P
        ms.append(m)
        Ps.append(P)
    sm = [0.0] * (steps + 1)
    sm[steps] = ms[-1]
    for k in range(steps - 1, 0, -1):
        mp = a * ms[k - 1]
        Pp = a * a * Ps[k - 1] + h
        G = Ps[k - 1] * a / Pp
        sm[k] = ms[k - 1] + G * (sm[k + 1] - mp)
    sm[0] = params.x0
    # u = (1/r) sum_{k<rs} E[e^-1 g W_{k+1}] = (1/(B r)) sum (sm[k+1] - a sm[k])
    return sum(sm[k + 1] - a * sm[k] for k in range(rs)) / (B * r)
