import io
import json

import numpy as np
import pytest

from conftest import example1
from ltvgain.certify import classify
from ltvgain.flow import simulate
from ltvgain.lyapunov import picard_solve
from ltvgain.system import InterconnectedSystem
from ltvgain.validate import (ValidationReport, dominance_check, dv_check, monotonicity_check,
                              validate)


@pytest.fixture(scope="module")
def cert_ex1():
    return classify(*example1(), 0.0)


def test_example1_dominance(ex1, cert_ex1):
    res = dominance_check(ex1[0], cert_ex1, n_trials=100, T=50.0, seed=0)
    assert res.trials == 200
    assert res.max_violation <= 1e-9
    assert res.positivity_min >= -1e-9


def test_zero_state_dominated(ex1, cert_ex1):
    tr = simulate(ex1[0], 0.0, [0.0, 0.0], 50.0)
    assert np.all(tr.x == 0.0)
    assert np.all(np.linalg.norm(tr.x, axis=1) <= cert_ex1.B(tr.t) * 0.0 + 1e-9)


def test_corrupted_envelope_detected(ex1, cert_ex1):
    res = dominance_check(ex1[0], cert_ex1.scaled(0.1), n_trials=20, T=20.0, seed=0)
    assert res.max_violation > 1e-3
    assert res.offenders and res.offenders[0].violation == res.max_violation


def test_monotonicity_corner_pair(ex1):
    res = monotonicity_check(ex1[0], 0.0, 50.0, pairs=[[[0.0, 0.0], [1.0, 1.0]]])
    assert res.failures == 0 and not res.skipped


def test_monotonicity_random_pairs(ex1):
    res = monotonicity_check(ex1[0], 0.0, 50.0, n_pairs=50, seed=3)
    assert res.pairs == 50 and res.failures == 0


def test_monotonicity_rejects_unordered(ex1):
    with pytest.raises(ValueError):
        monotonicity_check(ex1[0], 0.0, 5.0, pairs=[[[1.0, 0.0], [0.0, 1.0]]])


def test_monotonicity_skips_non_wazewski():
    sys = InterconnectedSystem.from_blocks("-1", "-0.5*exp(-t)", "1", "-1")
    res = monotonicity_check(sys, 0.0, 10.0)
    assert res.skipped and "Wazewski" in res.note


def test_dv_decoupled(dec):
    sys, env, w = dec
    P = picard_solve(sys, env, w, 0.0, 10.0)
    tr = simulate(sys, 0.0, [1.0, 0.5], 10.0)
    assert dv_check(sys, P, tr, w) <= 1e-6


def test_dv_example1(ex1):
    sys, env, w = ex1
    P = picard_solve(sys, env, w, 0.0, 10.0)
    tr = simulate(sys, 0.0, [1.0, 1.0], 10.0)
    assert dv_check(sys, P, tr, w) <= 1e-3


def test_dv_zero_trajectory(dec):
    sys, env, w = dec
    P = picard_solve(sys, env, w, 0.0, 10.0)
    tr = simulate(sys, 0.0, [0.0, 0.0], 10.0)
    assert dv_check(sys, P, tr, w) == 0.0


def test_report_deterministic_and_passes(ex1, cert_ex1):
    a = validate(*ex1, cert_ex1, n_trials=10, T=20.0, seed=7)
    b = validate(*ex1, cert_ex1, n_trials=10, T=20.0, seed=7)
    assert a.to_json() == b.to_json()
    assert a.passed and json.loads(a.to_json())["pass"] is True
    buf = io.StringIO()
    a.offenders_csv(buf)
    assert buf.getvalue().splitlines()[0] == "trial,kind,x0_1,x0_2,t,norm,bound,violation"


def test_pass_flag_thresholds():
    base = dict(trials=1, positivity_min=0.0, monotonicity_failures=0, seed=0)
    assert ValidationReport(max_bound_violation=1e-9, dv_max_rel_error=1e-3, **base).passed
    assert not ValidationReport(max_bound_violation=2e-9, dv_max_rel_error=0.0, **base).passed
    assert not ValidationReport(max_bound_violation=0.0, dv_max_rel_error=np.nan, **base).passed


@pytest.mark.parametrize("x0", [(1.0, 0.0), (0.3, 2.0)])
def test_linearity(ex1, x0):
    ts = np.linspace(0.0, 20.0, 81)
    a = simulate(ex1[0], 0.0, x0, 20.0, samples=ts)
    b = simulate(ex1[0], 0.0, 2 * np.asarray(x0), 20.0, samples=ts)
    assert np.allclose(b.x, 2 * a.x, rtol=1e-8, atol=1e-12)
