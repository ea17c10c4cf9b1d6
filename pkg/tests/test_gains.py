import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import decoupled, example1, example2
from oracles import brute_gain, example2_pi11
from ltvgain.gains import (GainMatrix, gain_estimate, gain_matrix, integral_gain,
                           limit_gain_matrix, spectral_radius_2x2, trace_det_ok)

# Integrand pieces written out for the scalar example with a1 = a2 = K = 1,
# q = 1 + t, omega1 = 1, omega2 = (1 + t)^2 and rate-one exponential envelopes.
E = math.exp
EX1_PARTS = {
    "pi11": (lambda t: E(2 * t), lambda s: 1 + s, lambda p: E(-3 * p)),
    "pi12": (lambda t: (1 + t) ** 2 * E(2 * t), lambda s: E(-s), lambda p: E(-3 * p)),
    "pi21": (lambda t: E(2 * t), lambda s: 1 + s, lambda p: E(-2 * p) / (1 + p)),
    "pi22": (lambda t: (1 + t) ** 2 * E(2 * t), lambda s: E(-s), lambda p: (1 + p) * E(-2 * p) / (1 + p) ** 2),
}


@pytest.fixture(scope="module")
def pi_ex1():
    sys, env, w = example1()
    return {t0: gain_matrix(t0, sys, env, w) for t0 in (0.0, 1.0, 2.0, 4.0, 5.0)}


@pytest.mark.parametrize("slot", ["pi11", "pi12", "pi22"])
@pytest.mark.parametrize("t0", [0.0, 1.0])
def test_gains_match_nested_quadrature(pi_ex1, slot, t0):
    P, F, G = EX1_PARTS[slot]
    ref = brute_gain(P, F, G, t0, horizon=12.0)
    assert getattr(pi_ex1[t0], slot) == pytest.approx(ref, rel=1e-6)


def test_edge_supremum_limit(pi_ex1):
    # 2 e^{2t} int_t^inf (1+s) int_s^inf e^{-2p}/(1+p) dp ds increases to 1/2
    for t0 in (0.0, 1.0, 5.0):
        est = pi_ex1[t0].details["pi21"]
        assert est.value == pytest.approx(0.5, rel=1e-6)
        assert not est.sup_attained


def test_pi11_reference_closed_form(pi_ex1):
    for t0 in (0.0, 1.0, 5.0):
        ref = 2 / 27 * math.exp(-t0) * (3 * t0 + 4)
        assert pi_ex1[t0].pi11 == pytest.approx(ref, rel=1e-6)


def test_pi12_reference_closed_form(pi_ex1):
    for t0 in (0.0, 1.0, 5.0):
        ref = (1 + t0) ** 2 / 6 * math.exp(-2 * t0)
        assert pi_ex1[t0].pi12 == pytest.approx(ref, rel=1e-6)


def test_gains_nonincreasing_in_t0(pi_ex1):
    mats = [pi_ex1[t].matrix for t in (0.0, 1.0, 2.0, 4.0)]
    for a, b in zip(mats[:-1], mats[1:]):
        assert np.all(b <= a + 1e-9)


def test_all_entries_nonnegative(pi_ex1):
    assert all(np.all(m.matrix >= 0) for m in pi_ex1.values())


def test_decoupled_gains_vanish():
    sys, env, w = decoupled()
    gm = gain_matrix(0.0, sys, env, w)
    assert np.array_equal(gm.matrix, np.zeros((2, 2))) and gm.spectral_radius == 0.0


@pytest.mark.parametrize("t0", [0.0, 2.3, 2.6, 5.0, 17.5, 34.03125])
def test_pulse_gain_closed_form(t0):
    sys, env, w = example2(0.42, 0.42)
    est = gain_estimate("ii", 1, t0, sys, env, w)
    assert est.method == "pulse"
    assert est.value == pytest.approx(example2_pi11(t0, 0.42, 0.42), rel=1e-9)


def test_pulse_gains_are_symmetric_for_equal_parameters():
    gm = gain_matrix(3.0, *example2(0.42, 0.42))
    assert np.allclose(gm.matrix, gm.pi11, rtol=1e-12)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_quadratic_coupling_scaling(pi_ex1, c):
    sys, env, w = example1()
    scaled = gain_matrix(1.0, sys.scaled_coupling(c), env, w)
    assert np.allclose(scaled.matrix, c * c * pi_ex1[1.0].matrix, rtol=1e-3)


@pytest.mark.parametrize("m, r", [([[0, 0], [0.25, 0]], 0.0), ([[0.3, 0.1], [0.2, 0.4]], 0.5),
                                  ([[0, 0], [0, 0]], 0.0)])
def test_spectral_radius_examples(m, r):
    assert spectral_radius_2x2(np.array(m, dtype=float)) == pytest.approx(r, abs=1e-12)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=4, max_size=4))
def test_spectral_radius_trace_det_equivalence(v):
    m = np.array(v).reshape(2, 2)
    r = spectral_radius_2x2(m)
    assert r == pytest.approx(max(abs(np.linalg.eigvals(m))), abs=1e-9)
    if abs(r - 1.0) > 1e-9:
        assert (r < 1.0) == trace_det_ok(m)


def test_gain_matrix_flags():
    gm = GainMatrix.from_matrix(0.0, [[0.3, 0.1], [0.2, 0.4]])
    assert gm.small_gain_ok and gm.trace_det_ok
    bad = GainMatrix.from_matrix(0.0, [[1.2, 0.0], [0.0, 0.1]])
    assert not bad.small_gain_ok and not bad.trace_det_ok
    assert set(gm.to_dict()) >= {"pi11", "pi12", "pi21", "pi22", "spectral_radius"}


def test_limit_example1():
    sys, env, w = example1()
    L, rep = limit_gain_matrix([2, 4, 8, 16], sys, env, w)
    assert rep.ok
    assert L[0, 0] == pytest.approx(0, abs=1e-3) and L[0, 1] == pytest.approx(0, abs=1e-3)
    assert L[1, 1] == pytest.approx(0, abs=1e-3)
    assert L[1, 0] == pytest.approx(0.5, abs=1e-3)
    assert spectral_radius_2x2(L) == pytest.approx(0.0, abs=1e-6)


def test_limit_pulse_system():
    a = 0.4
    L, rep = limit_gain_matrix([8, 16, 32, 64], *example2(a, a))
    ref = 2 * a * a / (1 - math.exp(-2)) ** 2
    assert rep.ok and np.allclose(L, ref, rtol=1e-3)


def test_limit_of_constant_sequence():
    m = np.array([[0.1, 0.2], [0.3, 0.4]])
    L, rep = limit_gain_matrix([1, 2, 3], matrices=[m, m, m])
    assert np.array_equal(L, m) and rep.ok


def test_limit_needs_three_values():
    with pytest.raises(ValueError):
        limit_gain_matrix([1, 2], matrices=[np.eye(2)] * 2)


def test_integral_gain_wrapper():
    sys, env, w = example1()
    assert integral_gain("ii", 1, 0.0, sys, env, w) == pytest.approx(8 / 27, rel=1e-6)
    with pytest.raises(ValueError):
        integral_gain("ij", 1, 0.0, sys, env, w)
