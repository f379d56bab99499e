"""Kernel families: primitives against quadrature, inverses, descriptors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from stickyalign import (
    AllToAll,
    CompactBump,
    Exponential,
    KernelRangeError,
    PowerLaw,
    SingularKernelError,
    Zero,
    kernel_from_config,
    kernel_to_config,
)

ALL_KERNELS = [
    Zero(),
    AllToAll(1.0),
    AllToAll(0.3),
    PowerLaw(1.0, 0.5, 1.0),
    PowerLaw(2.0, 0.25, 0.7),
    PowerLaw(0.5, 0.9, 2.0),
    Exponential(1.0),
    Exponential(0.4),
    CompactBump(1.0, 2.0),
    CompactBump(0.3, 1.5),
]

NONZERO_KERNELS = [k for k in ALL_KERNELS if not isinstance(k, Zero)]


# -- quadrature oracles --------------------------------------------------


@pytest.mark.parametrize("kernel", NONZERO_KERNELS, ids=repr)
@pytest.mark.parametrize("x", [0.01, 0.3, 0.9, 1.0, 1.5, 4.0])
def test_big_phi_is_integral_of_phi(kernel, x):
    # quad copes with the integrable r^-beta singularity at the origin
    val, err = quad(kernel.phi, 0.0, x, points=[0.0], limit=200)
    assert kernel.big_phi(x) == pytest.approx(val, abs=max(1e-9, 10 * err))


@pytest.mark.parametrize("kernel", NONZERO_KERNELS, ids=repr)
@pytest.mark.parametrize("x", [0.05, 0.5, 1.0, 2.5])
def test_w_phi_is_integral_of_big_phi(kernel, x):
    val, err = quad(kernel.big_phi, 0.0, x, limit=200)
    assert kernel.w_phi(x) == pytest.approx(val, abs=max(1e-10, 10 * err))


# -- frozen closed-form values ------------------------------------------


def test_power_law_frozen_values():
    k = PowerLaw(1.0, 0.5, 1.0)
    assert k.phi(0.25) == pytest.approx(2.0, abs=1e-15)
    assert k.big_phi(0.25) == pytest.approx(1.0, abs=1e-15)
    assert k.big_phi(1.0) == pytest.approx(2.0, abs=1e-15)
    # beyond the cutoff the tail decays exponentially from phi(R) = 1
    assert k.big_phi(2.0) == pytest.approx(2.632120558828558, abs=1e-15)
    assert k.w_phi(1.0) == pytest.approx(4.0 / 3.0, rel=1e-15)
    assert k.big_phi_sup == pytest.approx(3.0, abs=1e-15)  # 2 + 1


def test_exponential_frozen_values():
    k = Exponential(1.0)
    assert k.big_phi(1.0) == pytest.approx(1.0 - math.exp(-1.0), rel=1e-15)
    assert k.inv_big_phi(0.5) == pytest.approx(math.log(2.0), rel=1e-15)
    assert k.big_phi_sup == 1.0
    assert k.phi_l1_norm == 2.0


def test_all_to_all_is_linear():
    k = AllToAll(2.5)
    xs = np.array([-3.0, -0.5, 0.0, 1.0, 7.0])
    np.testing.assert_allclose(k.big_phi(xs), 2.5 * xs, rtol=0, atol=0)
    assert k.phi(100.0) == 2.5
    assert math.isinf(k.big_phi_sup)


def test_zero_kernel_everything_vanishes():
    k = Zero()
    assert k.phi(0.3) == 0.0 and k.big_phi(5.0) == 0.0 and k.w_phi(2.0) == 0.0
    assert k.vanishes and not k.is_fat_tailed
    assert k.inv_big_phi(0.0) == 0.0
    with pytest.raises(KernelRangeError):
        k.inv_big_phi(0.1)


def test_compact_bump_saturates():
    k = CompactBump(1.0, 2.0)
    assert k.big_phi(0.5) == 1.0
    assert k.big_phi(1.0) == 2.0
    assert k.big_phi(10.0) == 2.0  # saturated at height * radius
    assert k.phi(1.5) == 0.0
    assert k.w_phi(2.0) == pytest.approx(0.5 * 2.0 + 2.0 * 1.0, rel=1e-15)


def test_power_law_singular_at_origin():
    k = PowerLaw(1.0, 0.5, 1.0)
    with pytest.raises(SingularKernelError):
        k.phi(0.0)
    with pytest.raises(SingularKernelError):
        k.phi(np.array([0.5, 0.0]))
    # the primitive is fine at 0
    assert k.big_phi(0.0) == 0.0


def test_reciprocal_integrability_flags():
    assert PowerLaw(1.0, 0.5, 1.0).reciprocal_phi_integrable_at_zero
    for k in (Zero(), AllToAll(1.0), Exponential(1.0), CompactBump(1.0, 1.0)):
        assert not k.reciprocal_phi_integrable_at_zero


# -- inverse round-trips ------------------------------------------------


@pytest.mark.parametrize("kernel", [k for k in NONZERO_KERNELS], ids=repr)
def test_inverse_round_trip(kernel):
    sup = kernel.big_phi_sup
    upper = 4.0 if math.isinf(sup) else 0.999 * sup
    for y in np.linspace(0.0, upper, 17):
        x = kernel.inv_big_phi(float(y))
        assert x >= 0.0
        assert kernel.big_phi(x) == pytest.approx(y, abs=1e-10 * (1.0 + y))


def test_power_law_inverse_both_branches():
    k = PowerLaw(1.0, 0.5, 1.0)
    # below the cutoff: Phi = 2 sqrt(x)
    assert k.inv_big_phi(1.0) == pytest.approx(0.25, rel=1e-14)
    # above the cutoff value Phi(R) = 2
    y = 2.5
    x = k.inv_big_phi(y)
    assert x > 1.0
    assert k.big_phi(x) == pytest.approx(y, rel=1e-12)


@pytest.mark.parametrize("kernel,bad", [
    (Exponential(1.0), 1.0),
    (Exponential(1.0), -0.1),
    (CompactBump(1.0, 2.0), 2.0),
    (PowerLaw(1.0, 0.5, 1.0), 3.0),
])
def test_inverse_rejects_out_of_range(kernel, bad):
    with pytest.raises(KernelRangeError):
        kernel.inv_big_phi(bad)


# -- structural properties (hypothesis) ---------------------------------


@st.composite
def kernels(draw):
    family = draw(st.sampled_from(["all_to_all", "power_law", "exponential", "bump"]))
    pos = st.floats(0.05, 4.0)
    if family == "all_to_all":
        return AllToAll(draw(pos))
    if family == "power_law":
        return PowerLaw(draw(pos), draw(st.floats(0.05, 0.95)), draw(pos))
    if family == "exponential":
        return Exponential(draw(pos))
    return CompactBump(draw(pos), draw(pos))


@given(kernels(), st.floats(-8.0, 8.0))
@settings(max_examples=200, deadline=None)
def test_big_phi_odd_and_monotone(kernel, x):
    assert kernel.big_phi(-x) == pytest.approx(-kernel.big_phi(x), rel=1e-12, abs=1e-12)
    h = 1e-3
    assert kernel.big_phi(x + h) >= kernel.big_phi(x) - 1e-12
    assert abs(kernel.big_phi(x)) <= kernel.big_phi_sup + 1e-12


@given(kernels(), st.floats(-6.0, 6.0))
@settings(max_examples=200, deadline=None)
def test_w_phi_even_nonnegative(kernel, x):
    assert kernel.w_phi(x) >= 0.0
    assert kernel.w_phi(-x) == pytest.approx(kernel.w_phi(x), rel=1e-12, abs=1e-12)
    assert kernel.w_phi(0.0) == 0.0


@given(kernels(), st.floats(0.05, 5.0), st.floats(0.05, 5.0))
@settings(max_examples=150, deadline=None)
def test_big_phi_subadditive(kernel, x, y):
    # concavity on the half line gives Phi(x+y) <= Phi(x) + Phi(y)
    assert kernel.big_phi(x + y) <= kernel.big_phi(x) + kernel.big_phi(y) + 1e-12


@given(st.floats(0.05, 4.0), st.floats(-5.0, 5.0))
@settings(max_examples=100, deadline=None)
def test_bounded_phi_linear_bound(a, x):
    k = Exponential(a)
    assert abs(k.big_phi(x)) <= a * abs(x) + 1e-12


def test_vectorization_matches_scalars():
    # numpy's SIMD loops may round differently from the scalar path by 1 ulp
    xs = np.array([-2.0, -0.5, 0.0, 0.4, 1.0, 3.0])
    for k in NONZERO_KERNELS:
        np.testing.assert_allclose(k.big_phi(xs), [k.big_phi(float(x)) for x in xs],
                                   rtol=1e-15, atol=0)
        np.testing.assert_allclose(k.w_phi(xs), [k.w_phi(float(x)) for x in xs],
                                   rtol=1e-15, atol=0)
        assert np.isscalar(k.big_phi(1.0))


# -- configuration round-trip -------------------------------------------


@pytest.mark.parametrize("kernel", ALL_KERNELS, ids=repr)
def test_config_round_trip(kernel):
    cfg = kernel_to_config(kernel)
    assert kernel_from_config(cfg) == kernel


@pytest.mark.parametrize("cfg", [
    {"type": "warp"},
    {"type": "power_law", "c": 1.0, "beta": 1.5, "R": 1.0},
    {"type": "exponential", "a": -1.0},
    {"type": "all_to_all", "K": 1.0, "extra": 2},
    {},
    "zero",
])
def test_config_rejects_malformed(cfg):
    with pytest.raises(ValueError):
        kernel_from_config(cfg)


@pytest.mark.parametrize("bad", [
    lambda: PowerLaw(1.0, 1.0, 1.0),
    lambda: PowerLaw(1.0, 0.0, 1.0),
    lambda: PowerLaw(-1.0, 0.5, 1.0),
    lambda: AllToAll(0.0),
    lambda: Exponential(-0.5),
    lambda: CompactBump(0.0, 1.0),
])
def test_parameter_validation(bad):
    with pytest.raises(ValueError):
        bad()
