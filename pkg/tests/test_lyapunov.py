import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import example1
from ltvgain.envelopes import phi
from ltvgain.gains import gain_matrix
from ltvgain.lyapunov import (HProfile, LyapunovGrid, SmallGainError, evaluate_v, h_bounds,
                              picard_solve, residual_check)


@pytest.fixture(scope="module")
def p_dec(dec):
    return picard_solve(*dec, 0.0, 10.0)


@pytest.fixture(scope="module")
def p_ex1(ex1):
    return picard_solve(*ex1, 0.0, 10.0)


def test_decoupled_constant_solution(p_dec):
    assert p_dec.iterations <= 2
    assert np.max(np.abs(p_dec.P11 - 1.0)) <= 1e-8
    assert np.max(np.abs(p_dec.P22 - 1.0)) <= 1e-8
    assert np.max(np.abs(p_dec.P12)) == 0.0


def test_decoupled_residuals(p_dec, dec):
    assert residual_check(p_dec, dec[0], dec[2]).max <= 1e-6


def test_example1_converges_nonnegative(p_ex1):
    assert p_ex1.final_update_norm < 1e-8
    assert p_ex1.min_entry() >= -1e-9
    assert min(p_ex1.min_entry_history) >= -1e-9
    assert p_ex1.symmetry_defect() <= 1e-9


def test_example1_residuals(p_ex1, ex1):
    assert residual_check(p_ex1, ex1[0], ex1[2], step=0.01).max <= 1e-3


def test_residual_detects_perturbation(p_ex1, ex1):
    bumped = LyapunovGrid(p_ex1.t0, p_ex1.nodes, p_ex1.P11, p_ex1.P22, p_ex1.P12,
                          p_ex1.iterations, p_ex1.final_update_norm,
                          dense=lambda t: p_ex1.dense(t) + np.array([0.0, 0.1, 0.0])[
                              (slice(None),) + (None,) * np.ndim(t)],
                          breakpoints=p_ex1.breakpoints)
    assert residual_check(bumped, ex1[0], ex1[2], step=0.01).max > 0.1


@pytest.mark.parametrize("x0", [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
def test_v_matches_cost_integral(p_ex1, x0):
    # v(t0, x0) = int_t0^inf q |x(s)|^2 ds along the trajectory, q1 = q2 = 1 + t
    def f(t, y):
        return [-y[0] + np.exp(-t) * y[1], (1 + t) * y[0] - y[1], (1 + t) * (y[0] ** 2 + y[1] ** 2)]

    sol = solve_ivp(f, (0.0, 60.0), [*x0, 0.0], rtol=1e-11, atol=1e-13)
    assert evaluate_v(p_ex1, 0.0, x0[0], x0[1]) == pytest.approx(sol.y[2, -1], rel=1e-6)


def test_evaluate_v_examples(p_dec):
    assert evaluate_v(p_dec, 3.0, 0.0, 0.0) == 0.0
    assert evaluate_v(p_dec, 3.0, 2.0, 0.0) == pytest.approx(4.0, abs=1e-8)
    with pytest.raises(ValueError):
        evaluate_v(p_dec, 11.0, 1.0, 1.0)


def test_lower_sandwich(p_ex1, ex1, rng):
    _, env, w = ex1
    X = np.abs(rng.standard_normal((50, 2)))
    for t in p_ex1.nodes[::10]:
        f = min(phi(env, w, 1, t), phi(env, w, 2, t))
        for x in X:
            assert evaluate_v(p_ex1, t, x[0], x[1]) >= f * (x @ x) * (1 - 1e-6)


def test_gate_rejects_large_coupling():
    sys, env, w = example1(a1=2.0, a2=2.0)
    g = gain_matrix(0.0, sys, env, w)
    assert g.spectral_radius >= 1.0
    with pytest.raises(SmallGainError):
        picard_solve(sys, env, w, 0.0, 5.0, gains=g)


def test_h_decoupled_is_one(dec):
    sys, env, w = dec
    g = gain_matrix(0.0, sys, env, w)
    hp = HProfile(sys, env, w, g, 10.0)
    ts = np.linspace(0.0, 10.0, 11)
    assert np.allclose(hp.h(ts), 1.0, atol=1e-8)
    assert np.allclose(hp.h12(ts), 0.0)


def test_h_example1_at_t0(ex1):
    sys, env, w = ex1
    g = gain_matrix(0.0, sys, env, w)
    hb = h_bounds(0.0, 0.0, g, env, w, sys)
    d = 1 - g.trace + g.det
    g1 = g2 = 0.75
    assert hb.h11 == pytest.approx(((1 - g.pi22) * g1 + g.pi21 * g2) / d, rel=1e-6)
    assert hb.h22 == pytest.approx((g.pi12 * g1 + (1 - g.pi11) * g2) / d, rel=1e-6)
    assert hb.h == max(hb.h11 + hb.h12, hb.h22 + hb.h12)
    assert all(np.isfinite([hb.h11, hb.h22, hb.h12]))


def test_h_bounds_rejects_mismatched_gains(ex1):
    sys, env, w = ex1
    g = gain_matrix(0.0, sys, env, w)
    with pytest.raises(ValueError):
        h_bounds(1.0, 1.0, g, env, w, sys)


def test_csv_header(p_dec):
    buf = io.StringIO()
    p_dec.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "t,P11_1_1,P12_1_1,P22_1_1"


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(-3, 3), st.floats(-3, 3))
def test_v_quadratic_in_state(p_ex1, t, a, b):
    v1 = evaluate_v(p_ex1, t, a, b)
    assert evaluate_v(p_ex1, t, 2 * a, 2 * b) == pytest.approx(4 * v1, rel=1e-12, abs=1e-12)
    assert evaluate_v(p_ex1, t, abs(a), abs(b)) >= -1e-12
