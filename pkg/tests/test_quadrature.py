import math

import numpy as np
import pytest

from ltvgain.quadrature import (DivergenceError, QuadSettings, TailIntegral, make_nodes,
                                semi_infinite_integral, semi_infinite_with_end)


def test_exponential_tail():
    val = semi_infinite_integral(lambda s: math.exp(-2 * s), 1.0)
    assert val == pytest.approx(math.exp(-2) / 2, rel=1e-9)


def test_polynomial_times_exponential():
    val = semi_infinite_integral(lambda s: (1 + s) * math.exp(-2 * s), 0.0)
    assert val == pytest.approx(0.75, rel=1e-9)


def test_decay_hint_stops_early():
    f = lambda s: math.exp(-3 * s)
    plain, end_plain = semi_infinite_with_end(f, 0.0)
    hinted, end_hint = semi_infinite_with_end(f, 0.0, QuadSettings(decay_rate=3.0))
    assert hinted == pytest.approx(1 / 3, rel=1e-8) and plain == pytest.approx(1 / 3, rel=1e-9)
    assert end_hint <= end_plain


def test_divergent_integral_detected():
    with pytest.raises(DivergenceError):
        semi_infinite_integral(lambda s: 1.0, 0.0)


def test_zero_integrand():
    assert semi_infinite_integral(lambda s: 0.0, 0.0) == 0.0


def test_breakpoints_respected():
    f = lambda s: 1.0 if 2.0 <= s < 2.5 else 0.0
    bps = lambda a, b: [p for p in (2.0, 2.5) if a <= p <= b]
    assert semi_infinite_integral(f, 0.0, QuadSettings(), bps) == pytest.approx(0.5, rel=1e-9)


def test_nodes_include_breakpoints():
    nodes = make_nodes(0.0, 1.0, 0.3, [0.45, 0.9])
    assert nodes[0] == 0.0 and nodes[-1] == 1.0
    assert 0.45 in nodes and 0.9 in nodes and np.all(np.diff(nodes) > 0)


def test_tail_integral_table():
    nodes = make_nodes(0.0, 5.0, 0.1)
    f = lambda s: np.exp(-s)
    tab = TailIntegral(f, nodes, tail_beyond=math.exp(-5))
    s = np.array([0.0, 0.123, 2.0, 4.99])
    assert np.allclose(tab(s), np.exp(-s), rtol=1e-12)
    assert np.allclose(tab.values, np.exp(-nodes), rtol=1e-12)
