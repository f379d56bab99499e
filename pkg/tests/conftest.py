"""Shared scenario generators.

Masses are built as dyadic rationals (integer / 2**20) summing to exactly one:
every partial sum and every pooled cluster mass is then exactly representable,
so mass conservation can be asserted with ``==`` instead of a tolerance.
"""

import numpy as np
import pytest

from stickyalign import (
    AllToAll,
    CompactBump,
    Ensemble,
    Exponential,
    PowerLaw,
    Zero,
    natural_velocities,
)

MASS_DENOM_POW = 20

KERNEL_POOL = (
    Zero(),
    AllToAll(0.8),
    PowerLaw(1.0, 0.5, 1.0),
    Exponential(0.9),
    CompactBump(1.0, 2.0),
)


def dyadic_masses(rng: np.random.Generator, n: int,
                  denom_pow: int = MASS_DENOM_POW) -> np.ndarray:
    """n positive masses k/2**denom_pow with sum exactly 1.0."""
    denom = 1 << denom_pow
    cuts = np.sort(rng.choice(np.arange(1, denom), size=n - 1, replace=False))
    parts = np.diff(np.concatenate(([0], cuts, [denom])))
    return parts.astype(float) / denom


def random_scenario(rng: np.random.Generator, n_max: int = 50, *,
                    kernel=None, scale: float = 1.5, min_gap: float = 1e-4):
    """A sorted random ensemble + kernel; masses dyadic, positions distinct."""
    n = int(rng.integers(2, n_max + 1))
    if kernel is None:
        kernel = KERNEL_POOL[int(rng.integers(len(KERNEL_POOL)))]
    m = dyadic_masses(rng, n)
    x = np.sort(rng.normal(scale=scale, size=n)) + np.arange(n) * min_gap
    v = rng.normal(scale=1.5, size=n)
    return Ensemble.from_particles(m, x, v, kernel), kernel


def ensemble_with_psi(masses, positions, psi, kernel, **kwargs) -> Ensemble:
    """Back out raw velocities so the natural velocities come out as ``psi``."""
    m = np.asarray(masses, dtype=float)
    x = np.asarray(positions, dtype=float)
    conv = natural_velocities(m, x, np.zeros_like(m), kernel)
    return Ensemble.from_particles(m, x, np.asarray(psi, dtype=float) - conv,
                                   kernel, **kwargs)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0x5EED)
