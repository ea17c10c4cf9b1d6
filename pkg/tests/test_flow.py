import math

import numpy as np
import pytest

from conftest import decoupled, example1, example2
from ltvgain.flow import evolution, operator_norm, simulate, simulate_batch
from ltvgain.system import InterconnectedSystem

FIXTURES = {"example1": lambda: example1()[0], "example2": lambda: example2()[0],
            "decoupled": lambda: decoupled()[0]}


def cocycle_residual(sys, triples):
    worst = 0.0
    for t0, s, t in triples:
        full = evolution(sys, "full", t0, t).matrix
        split = evolution(sys, "full", s, t).matrix @ evolution(sys, "full", t0, s).matrix
        worst = max(worst, float(np.abs(full - split).max()))
    return worst


def random_triples(rng, n, span):
    return [tuple(np.sort(rng.uniform(0.0, span, 3))) for _ in range(n)]


def test_scalar_exponential():
    sys = InterconnectedSystem.from_blocks("-1", "0", "0", "-1")
    assert evolution(sys, 1, 0.0, 1.0).matrix[0, 0] == pytest.approx(math.exp(-1), abs=1e-8)


def test_time_varying_scalar():
    sys = InterconnectedSystem.from_blocks("-(1+t)", "0", "0", "-1")
    assert evolution(sys, 1, 0.0, 1.0).matrix[0, 0] == pytest.approx(math.exp(-1.5), abs=1e-8)


def test_identity_at_equal_times():
    sys = example1()[0]
    for t in (0.0, 0.37, 12.0):
        assert np.array_equal(evolution(sys, "full", t, t).matrix, np.eye(2))


def test_cocycle_small_example():
    sys = example1()[0]
    full = evolution(sys, "full", 0.0, 2.0).matrix
    split = evolution(sys, "full", 1.0, 2.0).matrix @ evolution(sys, "full", 0.0, 1.0).matrix
    assert np.abs(full - split).max() <= 1e-8


@pytest.mark.parametrize("name, span", [("example1", 10.0), ("decoupled", 10.0),
                                        ("example2", 12.0)])
def test_cocycle_random_triples(name, span):
    rng = np.random.default_rng(7)
    assert cocycle_residual(FIXTURES[name](), random_triples(rng, 25, span)) <= 1e-8


def test_backward_forward_consistency():
    sys = example1()[0]
    fwd = evolution(sys, "full", 1.0, 3.0).matrix
    bwd = evolution(sys, "full", 3.0, 1.0).matrix
    assert np.abs(bwd @ fwd - np.eye(2)).max() <= 1e-8


def test_positivity_across_pulses():
    sys = example2()[0]
    worst = np.inf
    for n in range(2, 51):
        for s, t in ((n - 0.5, n + 0.5 / n), (n, n + 1), (n + 0.2 / n, n + 1.0 / n + 0.3)):
            worst = min(worst, float(evolution(sys, "full", s, t).matrix.min()))
    assert worst >= -1e-9


@pytest.mark.parametrize("M, expected", [(np.eye(3), 1.0), (np.diag([2.0, -5.0]), 5.0),
                                         (np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)])
def test_operator_norm(M, expected):
    assert operator_norm(M) == pytest.approx(expected)


def test_zero_initial_state():
    tr = simulate(example1()[0], 0.0, [0.0, 0.0], 5.0)
    assert not np.any(tr.x)


def test_decoupled_decay():
    tr = simulate(decoupled()[0], 0.0, [1.0, 0.0], 3.0, samples=[0.0, 3.0])
    assert tr.x[-1, 0] == pytest.approx(math.exp(-3), abs=1e-8)


def test_example1_trajectory_decays():
    tr = simulate(example1()[0], 0.0, [1.0, 1.0], 40.0)
    assert tr.norms()[-1] < 1e-6 * tr.norms()[0]
    assert np.all(np.diff(tr.t) > 0) and np.array_equal(tr.x[0], [1.0, 1.0])


def test_linearity_of_solution():
    sys = example2()[0]
    a = simulate(sys, 0.0, [0.3, 0.7], 8.0)
    b = simulate(sys, 0.0, [0.6, 1.4], 8.0)
    assert np.abs(b.x - 2 * a.x).max() <= 10 * 1e-9 * max(1.0, np.abs(b.x).max())


def test_batch_matches_single():
    sys = example1()[0]
    X0 = np.array([[1.0, 0.0], [0.2, 0.9]])
    ts = np.linspace(0, 5, 11)
    Y = simulate_batch(sys, 0.0, X0, 5.0, ts)
    for k in range(2):
        ref = simulate(sys, 0.0, X0[k], 5.0, samples=ts).x
        assert np.abs(Y[k] - ref).max() <= 1e-8


def test_csv_header(tmp_path):
    tr = simulate(example1()[0], 0.0, [1.0, 1.0], 1.0)
    path = tmp_path / "tr.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1_1,x2_1"
    assert len(lines) == len(tr.t) + 1
