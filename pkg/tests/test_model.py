import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlpic import LqgParams, SivrParams, assumption2_gamma, build_lqg, build_sivr
from mlpic.errors import NoConsistentGamma
from mlpic.model import (
    default_probes,
    riccati_control_fixed_step,
    riccati_gain,
    riccati_reference_control,
)
from mlpic.rng import stream

# frozen during development: adaptive RK45 (rtol 1e-12) and fixed-step RK4
# with 2e5/4e5 steps agree on this value to < 1e-12
LQG_ORACLE_AT_0 = 0.2321312501624806


class TestLqg:
    def test_paper_parameters_force_gamma(self):
        p = build_lqg(LqgParams(A=-1, B=1, F=1, Q=1, R_cost=0.1, x0=-0.1, T=1))
        assert p.gamma == 0.1
        assert (p.n, p.m, p.d) == (1, 1, 1)

    def test_zero_cost_problem_has_zero_control(self):
        params = LqgParams(A=0, B=1, F=0, Q=0, R_cost=1, x0=0, T=1)
        build_lqg(params)
        assert riccati_reference_control(params, 0.3, 1.7) == 0.0

    def test_rejects_nonpositive_control_weight(self):
        with pytest.raises(ValueError):
            LqgParams(R_cost=0.0)
        with pytest.raises(ValueError):
            LqgParams(R_cost=-1.0)

    def test_field_functions_vectorized(self, lqg):
        x = np.linspace(-2, 2, 12).reshape(-1, 1)
        assert lqg.f(x).shape == (12, 1)
        assert lqg.e(x).shape == (12, 1, 1)
        assert lqg.g(x).shape == (12, 1, 1)
        assert lqg.running_cost(x).shape == (12,)
        assert np.allclose(lqg.running_cost(x), x[:, 0] ** 2)


class TestSivr:
    def test_paper_defaults(self, sivr):
        assert sivr.gamma == pytest.approx(0.16 * 0.05, rel=1e-14)
        assert (sivr.n, sivr.m, sivr.d) == (4, 1, 1)
        assert math.fsum(np.asarray(SivrParams().x0).tolist()) == 1.0

    def test_drift_and_diffusion_cancellation(self, sivr):
        rng = stream(0, "probes")
        x = default_probes(sivr, 500, rng)
        drift_sum = sivr.f(x).sum(axis=1)
        beta = 0.016
        assert np.max(np.abs(drift_sum - beta * (1.0 - x.sum(axis=1)))) < 1e-14
        assert np.max(np.abs(sivr.g(x)[..., 0].sum(axis=1))) < 1e-14
        assert np.max(np.abs(sivr.e(x)[..., 0].sum(axis=1))) < 1e-14

    def test_constraint_violation_rejected(self):
        # eps + (58+1)*0.01 = 0.99 != 1, while the default 59 satisfies it
        with pytest.raises(NoConsistentGamma):
            build_sivr(SivrParams(sigma_varrho=58.0))
        assert abs(0.4 + (58 + 1) * 0.01 - 0.99) < 1e-12
        assert abs(0.4 + (59 + 1) * 0.01 - 1.0) < 1e-12

    def test_off_simplex_rejected(self):
        with pytest.raises(ValueError):
            build_sivr(SivrParams(x0=(0.8, 0.15, 0.05, 0.05)))
        with pytest.raises(ValueError):
            build_sivr(SivrParams(x0=(0.8, 0.25, 0.05, -0.1)))

    def test_subcritical_reproduction_rejected(self):
        with pytest.raises(ValueError):
            build_sivr(SivrParams(kappa=0.4))

    def test_left_inverse_normal_equation(self, sivr):
        rng = stream(1, "probes")
        x = default_probes(sivr, 200, rng)
        e = sivr.e(x)
        e_inv = sivr.e_left_inverse(x)
        prod = np.einsum("pij,pjk->pik", e_inv, e)
        assert np.max(np.abs(prod - np.eye(1))) < 1e-10
        assert np.all(e_inv[..., 3] == 0.0)  # fourth column zero-padded


class TestAssumption2:
    def test_lqg_probes(self, lqg):
        probes = np.array([[-1.0], [0.5], [2.0]])
        assert assumption2_gamma(lqg, probes) == pytest.approx(0.1, rel=1e-12)

    def test_sivr_probes(self, sivr):
        probes = default_probes(sivr, 50, stream(2, "probes"))
        assert assumption2_gamma(sivr, probes) == pytest.approx(0.008, rel=1e-10)

    def test_inconsistent_parameters_detected(self):
        broken = build_sivr(SivrParams(sigma_varrho=58.0), check_assumption2=False)
        probes = default_probes(broken, 20, stream(3, "probes"))
        with pytest.raises(NoConsistentGamma) as err:
            assumption2_gamma(broken, probes)
        assert "probe" in str(err.value)

    def test_residual_bound_over_many_probes(self, lqg, sivr):
        for prob in (lqg, sivr):
            probes = default_probes(prob, 1000, stream(4, "probes", prob.name))
            gamma = assumption2_gamma(prob, probes)
            assert gamma == pytest.approx(prob.gamma, rel=1e-10)


class TestRiccati:
    def test_two_integrators_agree(self):
        params = LqgParams()
        adaptive = riccati_reference_control(params, 0.0, -0.1)
        fixed = riccati_control_fixed_step(params, 0.0, -0.1, 200_000)
        halved = riccati_control_fixed_step(params, 0.0, -0.1, 400_000)
        assert abs(adaptive - fixed) < 1e-8
        assert abs(fixed - halved) < 1e-8
        assert adaptive == pytest.approx(LQG_ORACLE_AT_0, abs=1e-10)

    def test_antisymmetric_in_state(self):
        params = LqgParams()
        for t in (0.0, 0.25, 0.9):
            for x in (0.3, 1.7):
                assert riccati_reference_control(params, t, -x) == -riccati_reference_control(params, t, x)

    def test_zero_at_origin(self):
        assert riccati_reference_control(LqgParams(), 0.5, 0.0) == 0.0

    def test_terminal_condition(self):
        params = LqgParams(F=0.7)
        assert riccati_gain(params, params.T) == pytest.approx(0.7, abs=1e-12)

    def test_time_outside_horizon_rejected(self):
        with pytest.raises(ValueError):
            riccati_reference_control(LqgParams(), 1.5, 0.0)


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(-2, 2), b=st.floats(0.2, 3), q=st.floats(0, 4), f=st.floats(0, 4),
    r=st.floats(0.01, 2),
)
def test_gamma_solves_relation_for_any_lqg(a, b, q, f, r):
    p = build_lqg(LqgParams(A=a, B=b, F=f, Q=q, R_cost=r))
    probes = np.linspace(-3, 3, 7).reshape(-1, 1)
    assert assumption2_gamma(p, probes) == pytest.approx(p.gamma, rel=1e-9)
