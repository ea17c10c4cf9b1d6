"""Frozen closed-form reference values, independent of the package code."""

import math

import numpy as np
from scipy import integrate, optimize


def example1_phi(i, t, K=1.0):
    if i == 1:
        return t / 2 + 3 / 4
    return t / (2 * K) + (2 * K + 1) / (4 * K ** 2)


def example1_gains_reference(t0, a1=1.0, a2=1.0, K=1.0):
    """Gain matrix entries as stated in closed form for the scalar example with q = 1 + t."""
    e = math.exp(-t0)
    return np.array([
        [2 * abs(a1 * a2) / (9 * (K + 2)) * e * (3 * t0 + 4),
         (1 + t0) ** 2 * a1 ** 2 / ((K + 2) * (K + 1)) * math.exp(-2 * t0)],
        [a2 ** 2 / (2 * (K + 1)), 2 * abs(a1 * a2) * e / ((K + 1) * (2 * K + 1))],
    ])


def example1_limit_reference(a2=1.0, K=1.0):
    return np.array([[0.0, 0.0], [a2 ** 2 / (2 * (K + 1)), 0.0]])


def example2_threshold(nu1=1.0, nu2=1.0):
    """Largest certifiable a1*a2 for the pulse-coupled pair."""
    return ((1 - math.exp(-(nu1 + nu2))) * (1 - math.exp(-2 * nu1)) * (1 - math.exp(-2 * nu2))
            / (2 * (2 - math.exp(-2 * nu2) - math.exp(-2 * nu1))))


def example2_pi11(t0, a1, a2, nu=1.0):
    """Pulse-majorant gain for equal rates; constant on [p, p + 1) after the pulse."""
    m = max(2, math.floor(t0) + (0 if t0 - math.floor(t0) < 1 / max(2, math.floor(t0)) else 1))
    return 2 * a1 * a2 * math.exp(2 * nu / m) / (1 - math.exp(-2 * nu)) ** 2


def brute_gain(P, F, G, t0, horizon=30.0, grid=None):
    """``2 sup_t P(t) int_t^inf F(s) int_s^inf G(r) dr ds`` by nested scipy quad."""
    def inner(s):
        return integrate.quad(G, s, np.inf, limit=200, epsabs=1e-13, epsrel=1e-11)[0]

    def outer(t):
        return integrate.quad(lambda s: F(s) * inner(s), t, np.inf, limit=200,
                              epsabs=1e-13, epsrel=1e-10)[0]

    ts = np.linspace(t0, t0 + horizon, 61) if grid is None else grid
    vals = [P(t) * outer(t) for t in ts]
    k = int(np.argmax(vals))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda t: -P(t) * outer(t), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-10})
        best = max(vals[k], -res.fun)
    else:
        best = vals[k]
    return 2 * best


def weighted_norm_exp_quadratic():
    """max over [0, 5] of (1 + t)^2 e^{-t}, attained at t = 1."""
    return 4 * math.exp(-1)
