"""Multilevel particle-MCMC estimation of path-integral stochastic optimal control.

The package estimates the time-0 optimal control of finite-horizon problems
with additive control and quadratic control cost by simulating only the
uncontrolled dynamics: the control is a ratio of path-space expectations,
read as a smoothing problem and sampled with particle independent
Metropolis-Hastings, with a multilevel combination over dyadic time grids
cutting the cost of a target mean squared error.

Entry points: build a problem (:func:`build_lqg`, :func:`build_sivr` or a
custom :class:`ControlProblem`), then call :func:`pimh_single_level` or
:func:`multilevel_estimate`; the ``mlpic`` CLI drives the packaged
experiments.
"""

from ._kernels import active_backend, has_compiled
from .errors import (
    AllZeroWeights,
    ConfigError,
    DegenerateWeights,
    MlpicError,
    NoConsistentGamma,
    NonFiniteState,
)
from .estimate import (
    ControlEstimate,
    LevelSchedule,
    cost_of,
    level_difference,
    level_schedule,
    mc_single_level,
    multilevel_estimate,
    pimh_single_level,
)
from .model import (
    ControlProblem,
    LqgParams,
    SivrParams,
    assumption2_gamma,
    build_lqg,
    build_sivr,
    riccati_reference_control,
)
from .pimh import PimhChain, pimh_step, run_coupled_pimh, run_pimh
from .rng import Streams, stream
from .simulate import (
    CoupledPath,
    DiscretePath,
    LevelGrid,
    euler_step,
    simulate_coupled,
    simulate_path,
)
from .smc import SmcOutput, resample, run_coupled_smc, run_smc
from .ssm import coupled_potential, potential, rn_weights, test_function

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "active_backend",
    "has_compiled",
    "MlpicError",
    "NoConsistentGamma",
    "NonFiniteState",
    "AllZeroWeights",
    "DegenerateWeights",
    "ConfigError",
    "ControlProblem",
    "LqgParams",
    "SivrParams",
    "build_lqg",
    "build_sivr",
    "assumption2_gamma",
    "riccati_reference_control",
    "LevelGrid",
    "DiscretePath",
    "CoupledPath",
    "euler_step",
    "simulate_path",
    "simulate_coupled",
    "potential",
    "coupled_potential",
    "rn_weights",
    "test_function",
    "SmcOutput",
    "resample",
    "run_smc",
    "run_coupled_smc",
    "PimhChain",
    "pimh_step",
    "run_pimh",
    "run_coupled_pimh",
    "ControlEstimate",
    "LevelSchedule",
    "level_schedule",
    "mc_single_level",
    "pimh_single_level",
    "level_difference",
    "multilevel_estimate",
    "cost_of",
    "Streams",
    "stream",
]
