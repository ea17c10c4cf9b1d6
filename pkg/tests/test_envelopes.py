import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import EXP, example1
from oracles import example1_phi, weighted_norm_exp_quadratic
from ltvgain.envelopes import (EnvelopeSet, RunningGNorm, TailProfile, WeightSet, g, phi,
                               validate_envelopes, weighted_norm)
from ltvgain.system import InterconnectedSystem

GRID = np.linspace(0.0, 4.0, 9)


def scalar_sys(a11="-1", a22="-K", K=1.0):
    return InterconnectedSystem.from_blocks(a11, "0", "0", a22, params={"K": K})


def test_exact_envelopes_pass():
    sys, env, _ = example1()
    rep = validate_envelopes(sys, env, GRID)
    assert rep.ok
    assert all(c.worst_ratio == pytest.approx(1.0, abs=1e-6) for c in rep.checks)


def test_rate_K_envelopes_pass():
    K = 2.5
    sys, env, _ = example1(K=K)
    assert validate_envelopes(scalar_sys(K=K), env, GRID).ok


def test_too_small_envelope_violates():
    sys = scalar_sys()
    env = EnvelopeSet.from_strings(dict(EXP, alpha="exp(-2*t)"), EXP)
    rep = validate_envelopes(sys, env, GRID)
    fwd = [c for c in rep.checks if c.subsystem == 1 and c.direction == "forward"][0]
    assert not rep.ok and fwd.violations > 0


@pytest.mark.parametrize("t", [0.0, 1.0, 10.0])
@pytest.mark.parametrize("i", [1, 2])
def test_phi_closed_form(i, t):
    _, env, w = example1()
    assert phi(env, w, i, t) == pytest.approx(example1_phi(i, t), abs=1e-6)


def test_phi_with_rate_K():
    K = 3.0
    _, env, w = example1(K=K)
    assert phi(env, w, 2, 2.0) == pytest.approx(example1_phi(2, 2.0, K), abs=1e-6)


def test_g_closed_form():
    _, env, w = example1()
    assert g(env, w, 1, 2.0) == pytest.approx(1.75, abs=1e-6)
    assert g(env, w, 2, 0.0) == pytest.approx(0.75, abs=1e-6)


def test_zero_weight_gives_zero():
    _, env, _ = example1()
    w0 = WeightSet.from_strings(q1="0", q2="0")
    assert phi(env, w0, 1, 1.0) == 0.0 and g(env, w0, 2, 1.0) == 0.0


def test_tail_profile_matches_pointwise():
    _, env, w = example1()
    prof = TailProfile(env, w, 1, "phi", 0.0, 10.0)
    ts = np.array([0.0, 0.37, 5.0, 10.0])
    assert np.allclose(prof(ts), [example1_phi(1, t) for t in ts], atol=1e-9)


def test_weighted_norm_examples():
    assert weighted_norm(lambda t: np.exp(-t), "1", 0.0, 7.0) == pytest.approx(1.0)
    assert weighted_norm(lambda t: np.full(np.shape(t), 2.5), "1", 0.0, 3.0) == pytest.approx(2.5)
    val = weighted_norm(lambda t: np.exp(-t), "(1+t)^2", 0.0, 5.0)
    assert val == pytest.approx(weighted_norm_exp_quadratic(), rel=1e-9)


def test_weighted_norm_sampled():
    ts = np.linspace(0, 5, 501)
    assert weighted_norm(np.exp(-ts), "(1+t)^2", 0.0, 5.0, times=ts) == pytest.approx(
        weighted_norm_exp_quadratic(), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.01, 4.0), st.floats(0.01, 4.0))
def test_weighted_norm_nondecreasing_in_T(t0, d1, d2):
    f = lambda t: np.exp(-t) * (1 + np.cos(3 * t) ** 2)
    T1, T2 = t0 + min(d1, d2), t0 + max(d1, d2)
    assert weighted_norm(f, "(1+t)^2", t0, T1) <= weighted_norm(f, "(1+t)^2", t0, T2) + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 5.0), st.sampled_from([1, 2]))
def test_validation_margin_rescale_invariant(c, i):
    sys, env, _ = example1()
    grid = np.linspace(0.0, 3.0, 5)
    base = validate_envelopes(sys, env, grid)
    scaled = validate_envelopes(sys, env.rescaled(i, c), grid)
    for a, b in zip(base.checks, scaled.checks):
        assert a.worst_ratio == pytest.approx(b.worst_ratio, rel=1e-9)
        assert a.violations == b.violations


def test_running_norm_is_monotone():
    _, env, w = example1()
    M = RunningGNorm(env, w, 0.0, 10.0)
    ts = np.linspace(0.0, 10.0, 101)
    for i in (1, 2):
        vals = M(i, ts)
        assert np.all(np.diff(vals) >= -1e-12)
    # omega_2 g_2 = (1+t)^2 (t/2 + 3/4) is increasing, so M_2 equals it
    assert np.allclose(M(2, ts), (1 + ts) ** 2 * (ts / 2 + 0.75), rtol=1e-9)
