import numpy as np
import pytest

from ltvgain.config import bundled, load_config
from ltvgain.envelopes import EnvelopeSet, WeightSet
from ltvgain.system import InterconnectedSystem

EXP = dict(alpha="exp(-t)", beta="exp(t)", gamma="exp(t)", delta="exp(-t)")


def example1(a1=1.0, a2=1.0, K=1.0):
    sys = InterconnectedSystem.from_blocks("-1", "abs(a1*exp(-t))", "abs(a2*(1+t))", "-K",
                                           params=dict(a1=a1, a2=a2, K=K))
    env = EnvelopeSet.from_strings(
        EXP, dict(alpha="exp(-K*t)", beta="exp(K*t)", gamma="exp(K*t)", delta="exp(-K*t)"),
        params={"K": K})
    w = WeightSet.from_strings(q1="1+t", q2="1+t", omega2="(1+t)^2")
    return sys, env, w


def example2(a1=0.42, a2=0.42, nu=1.0):
    psi = "pulses(n >= 2; [n, n + 1/n) -> n)"
    sys = InterconnectedSystem.from_blocks("-nu", f"a1*{psi}", f"a2*{psi}", "-nu",
                                           params=dict(a1=a1, a2=a2, nu=nu))
    rate = dict(alpha="exp(-nu*t)", beta="exp(nu*t)", gamma="exp(nu*t)", delta="exp(-nu*t)")
    env = EnvelopeSet.from_strings(rate, rate, params={"nu": nu})
    return sys, env, WeightSet()


def decoupled(q="2"):
    sys = InterconnectedSystem.from_blocks("-1", "0", "0", "-1")
    env = EnvelopeSet.from_strings(EXP, EXP)
    return sys, env, WeightSet.from_strings(q1=q, q2=q)


@pytest.fixture(scope="session")
def ex1():
    return example1()


@pytest.fixture(scope="session")
def ex2():
    return example2()


@pytest.fixture(scope="session")
def dec():
    return decoupled()


@pytest.fixture(scope="session")
def ex1_config():
    return load_config(bundled("example1"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
