"""Kernel backend selection: compiled extension when available, numpy otherwise.

The compiled core (Cython, ``mlpic._kernels._core``) implements the SMC
sweeps for the built-in model families ("lqg", "sivr"); the pure numpy
kernels in :mod:`.pure` cover every problem. Selection happens at import and
can be forced with the environment variable ``MLPIC_KERNEL``:

* ``auto`` (default): compiled where it applies, pure otherwise;
* ``pure``: never use the extension;
* ``compiled``: require the extension (errors if it did not build).

Per-call overrides are available through the ``backend=`` keyword on
:func:`mlpic.smc.run_smc` and friends. Both backends draw identical
randomness and implement identical arithmetic, but are not bitwise-equal in
general (vectorized exp differs from libm exp by an ulp on some inputs);
see tests/test_backends.py for the equivalence contract.
"""

from __future__ import annotations

import os

from . import pure

try:
    from . import compiled
except ImportError:  # extension not built
    compiled = None

_MODE = os.environ.get("MLPIC_KERNEL", "auto")
if _MODE not in ("auto", "pure", "compiled"):
    raise RuntimeError(f"MLPIC_KERNEL must be auto, pure or compiled, got {_MODE!r}")
if _MODE == "compiled" and compiled is None:
    raise RuntimeError("MLPIC_KERNEL=compiled but the extension is not built")


def has_compiled() -> bool:
    return compiled is not None


def active_backend() -> str:
    """The backend used for built-in models under the current configuration."""
    if _MODE == "pure" or compiled is None:
        return "pure"
    return "compiled"


def _resolve(problem, backend, collect_particles, scheme) -> str:
    choice = backend if backend is not None else _MODE
    if choice == "auto":
        usable = (
            compiled is not None
            and not collect_particles
            and problem.kernel is not None
            and problem.kernel.family in ("lqg", "sivr")
        )
        return "compiled" if usable else "pure"
    if choice == "pure":
        return "pure"
    if choice == "compiled":
        if compiled is None:
            raise RuntimeError("compiled backend requested but the extension is not built")
        if problem.kernel is None or problem.kernel.family not in ("lqg", "sivr"):
            raise ValueError("compiled backend only covers the built-in model families")
        if collect_particles:
            raise ValueError("full particle histories are only available from the pure backend")
        return "compiled"
    raise ValueError(f"backend must be None, 'auto', 'pure' or 'compiled', got {backend!r}")


def smc_sweep(problem, level, n_particles, normals, uniforms, scheme="multinomial",
              collect_particles=False, backend=None):
    which = _resolve(problem, backend, collect_particles, scheme)
    if which == "compiled":
        return compiled.smc_sweep(problem, level, n_particles, normals, uniforms, scheme)
    return pure.smc_sweep(problem, level, n_particles, normals, uniforms, scheme, collect_particles)


def coupled_smc_sweep(problem, fine_level, n_particles, normals, uniforms,
                      scheme="multinomial", collect_particles=False, backend=None):
    which = _resolve(problem, backend, collect_particles, scheme)
    if which == "compiled":
        return compiled.coupled_smc_sweep(problem, fine_level, n_particles, normals, uniforms, scheme)
    return pure.coupled_smc_sweep(problem, fine_level, n_particles, normals, uniforms, scheme,
                                  collect_particles)
