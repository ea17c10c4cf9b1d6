import io
import json
import math

import numpy as np
import pytest

from conftest import example1, example2
from ltvgain.certify import (VERDICTS, EnvelopeCurve, certificate_envelope,
                             classify, corollary_check)
from ltvgain.envelopes import phi
from ltvgain.gains import gain_matrix
from ltvgain.lyapunov import h_bounds
from ltvgain.system import InterconnectedSystem

from oracles import example1_phi, example2_threshold


def rank(cert):
    return VERDICTS.index(cert.verdict)


@pytest.fixture(scope="module")
def c_ex1():
    return classify(*example1(), 0.0)


@pytest.fixture(scope="module")
def c_ex2_below():
    return classify(*example2(0.42, 0.42), 0.0)


@pytest.fixture(scope="module")
def c_ex2_above():
    return classify(*example2(0.46, 0.46), 0.0)


def test_envelope_at_t0(ex1):
    sys, env, w = ex1
    g = gain_matrix(0.0, sys, env, w)
    h00 = h_bounds(0.0, 0.0, g, env, w, sys).h
    phi0 = min(example1_phi(1, 0.0), example1_phi(2, 0.0))
    assert certificate_envelope(0.0, 0.0, sys, env, w, g) == pytest.approx(
        2 * math.sqrt(h00 / phi0), rel=1e-9)


def test_envelope_decoupled_closed_form(dec):
    sys, env, w = dec
    curve = EnvelopeCurve(sys, env, w, gain_matrix(0.0, sys, env, w), 20.0)
    ts = np.linspace(0.0, 20.0, 41)
    phis = np.array([phi(env, w, 1, t) for t in ts])
    assert np.allclose(curve(ts), 2 * np.sqrt(1 / phis) * np.exp(-ts), rtol=1e-8)


def test_envelope_nonincreasing_example1(c_ex1):
    assert np.all(np.diff(c_ex1.envelope) <= 1e-12)


def test_example1_verdict(c_ex1):
    assert c_ex1.verdict == "asymptotically_stable"
    assert "phi(t)->inf (sampled growth)" in c_ex1.evidence["conditions"]
    assert c_ex1.evidence["uniformity"] == "non-uniform evidence"
    assert c_ex1.envelope[0] == pytest.approx(
        2 * math.sqrt(c_ex1.evidence["h_t0_t0"] / 0.75), rel=1e-9)


def test_example1_corollary_route(c_ex1):
    cd = c_ex1.evidence["corollary"]
    assert cd["limit_radius"] == pytest.approx(0.0, abs=1e-9)
    assert cd["applicable"] and cd["asymptotic"]


def test_example2_below_threshold(c_ex2_below):
    assert 0.42 * 0.42 < example2_threshold()
    assert c_ex2_below.verdict == "asymptotically_stable"
    assert c_ex2_below.gains.small_gain_ok


def test_example2_above_threshold(c_ex2_above):
    assert 0.46 * 0.46 > example2_threshold()
    assert c_ex2_above.verdict == "inconclusive"
    assert not c_ex2_above.certified


def test_negative_coupling_inconclusive():
    sys = InterconnectedSystem.from_blocks("-1", "-0.5*exp(-t)", "1", "-1")
    _, env, w = example1()
    cert = classify(sys, env, w, 0.0)
    assert cert.verdict == "inconclusive"
    assert "Wazewski" in cert.evidence["reason"]


def test_decoupled_uniform(dec):
    cert = classify(*dec, 0.0)
    assert cert.verdict == "uniformly_asymptotically_stable"
    assert "sampled" in cert.evidence["uniform"]["note"]


def test_corollary_zero_coupling(dec):
    sys, env, _ = dec
    from ltvgain.envelopes import WeightSet
    w = WeightSet.from_strings(q1="1+t", q2="1+t")
    cd = corollary_check(sys, env, w, 0.0)
    assert cd.coupling_integral == 0.0
    assert np.all(cd.w >= 0) and np.all(np.isfinite(cd.w))
    assert np.all(np.diff(cd.divergence_partial) > 0)
    assert cd.divergence_partial[-1] > cd.divergence_partial[0] * 2
    assert cd.asymptotic


def test_corollary_inapplicable_large_coupling():
    cd = corollary_check(*example2(0.6, 0.6), 40.0)
    assert not cd.applicable
    assert any("spectral radius" in n for n in cd.notes)


@pytest.mark.parametrize("c", [0.5, 0.9])
def test_verdict_monotone_under_weaker_coupling(c, c_ex1, c_ex2_below):
    assert rank(classify(*example1(c, c), 0.0)) >= rank(c_ex1)
    assert rank(classify(*example2(0.42 * c, 0.42 * c), 0.0)) >= rank(c_ex2_below)


def test_certificate_serialization(c_ex1):
    d = json.loads(c_ex1.to_json())
    assert d["verdict"] == "asymptotically_stable"
    assert json.loads(json.dumps(d)) == d
    buf = io.StringIO()
    c_ex1.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,B" and len(lines) == len(c_ex1.times) + 1


def test_scaled_copy(c_ex1):
    s = c_ex1.scaled(0.1)
    assert np.allclose(s.envelope, 0.1 * c_ex1.envelope)
    assert s.verdict == c_ex1.verdict
