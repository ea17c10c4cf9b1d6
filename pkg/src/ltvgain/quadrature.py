"""Composite Gauss-Legendre tail tables and semi-infinite quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

GL_ORDER = 12
_GX, _GW = np.polynomial.legendre.leggauss(GL_ORDER)


class DivergenceError(ArithmeticError):
    """A semi-infinite integral whose tail increments do not shrink."""


@dataclass(frozen=True)
class QuadSettings:
    tol: float = 1e-9
    max_doublings: int = 40
    initial_length: float = 1.0
    decay_rate: float | None = None
    zero_span: float = 64.0


def make_nodes(a: float, b: float, step: float, breakpoints: Sequence[float] = ()) -> np.ndarray:
    """Uniform nodes on ``[a, b]`` merged with breakpoints (near-duplicates dropped)."""
    n = max(1, int(np.ceil((b - a) / step - 1e-9)))
    pts = np.concatenate([np.linspace(a, b, n + 1),
                          [p for p in breakpoints if a < p < b]])
    pts = np.unique(pts)
    keep = np.concatenate([[True], np.diff(pts) > 1e-11 * np.maximum(1.0, np.abs(pts[1:]))])
    pts = pts[keep]
    pts[-1] = b
    return pts


def gauss_points(lo, hi):
    """Gauss nodes/weights mapped onto each interval ``[lo[k], hi[k]]``."""
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (_GX + 1.0), half * _GW


class TailIntegral:
    """``s -> integral of f over [s, nodes[-1]]`` for ``s`` in the node span.

    The integrand is assumed smooth between consecutive nodes, so every
    breakpoint of ``f`` must be a node.  Panel integrals use a fixed
    Gauss-Legendre rule; queries between nodes integrate the partial panel
    with the same rule.
    """

    def __init__(self, f: Callable, nodes, tail_beyond: float = 0.0):
        self.f = f
        self.nodes = np.asarray(nodes, dtype=float)
        x, w = gauss_points(self.nodes[:-1], self.nodes[1:])
        vals = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
        panels = np.sum(vals * w, axis=1)
        self.panels = panels
        tail = np.zeros(len(self.nodes))
        tail[-1] = tail_beyond
        tail[:-1] = np.cumsum(panels[::-1])[::-1] + tail_beyond
        self.values = tail

    def __call__(self, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        k = np.clip(np.searchsorted(self.nodes, s_arr, side="right") - 1, 0, len(self.nodes) - 2)
        right = self.nodes[k + 1]
        x, w = gauss_points(s_arr, right)
        part = np.sum(np.asarray(self.f(x.ravel()), dtype=float).reshape(x.shape) * w, axis=1)
        out = part + self.values[k + 1]
        at_end = s_arr >= self.nodes[-1]
        out[at_end] = self.values[-1]
        return float(out[0]) if np.ndim(s) == 0 else out


def integrate_pieces(f: Callable, a: float, b: float, cuts: Sequence[float] = (),
                     epsrel: float = 1e-12) -> float:
    """Adaptive quadrature of a scalar integrand on ``[a, b]`` split at ``cuts``."""
    knots = [a] + [c for c in cuts if a < c < b] + [b]
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi > lo:
            val, _ = quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)
            total += val
    return total


def semi_infinite_integral(f: Callable, a: float, settings: QuadSettings = QuadSettings(),
                           breakpoints: Callable[[float, float], Sequence[float]] | None = None
                           ) -> float:
    """Integral of ``f`` over ``[a, inf)``; see :func:`semi_infinite_with_end`."""
    return semi_infinite_with_end(f, a, settings, breakpoints)[0]


def semi_infinite_with_end(f: Callable, a: float, settings: QuadSettings = QuadSettings(),
                           breakpoints: Callable[[float, float], Sequence[float]] | None = None
                           ) -> tuple[float, float]:
    """Integral of ``f`` over ``[a, inf)`` by geometric truncation doubling.

    Chunks ``[a + L_k, a + L_{k+1}]`` with doubling lengths are added until
    a chunk contributes less than ``settings.tol`` relative to the running
    total.  With ``settings.decay_rate`` the remaining tail is bounded by
    ``f(b) / rate`` instead.  An integrand that vanishes on all of
    ``[a, a + settings.zero_span]`` is reported as zero.

    Returns the integral and the truncation point reached.
    """
    length = settings.initial_length
    lo = a
    hi = a + length
    total = 0.0
    prev_inc = None
    growing = 0
    for _ in range(settings.max_doublings):
        cuts = breakpoints(lo, hi) if breakpoints else ()
        inc = integrate_pieces(f, lo, hi, cuts, epsrel=min(1e-10, settings.tol * 1e-2))
        total += inc
        scale = abs(total)
        if scale == 0.0 and hi - a >= settings.zero_span:
            # identically zero over a long stretch: treat as zero
            return 0.0, hi
        if scale == 0.0:
            pass
        elif settings.decay_rate:
            tail = abs(f(hi)) / settings.decay_rate
            if tail <= settings.tol * scale:
                return total, hi
        elif abs(inc) <= settings.tol * scale and prev_inc is not None:
            return total, hi
        if prev_inc is not None and abs(inc) >= abs(prev_inc) and abs(inc) > 0:
            growing += 1
            if growing >= 3:
                raise DivergenceError(f"tail increments not shrinking beyond t={hi:g}")
        else:
            growing = 0
        prev_inc = inc
        length *= 2.0
        lo, hi = hi, a + length
    raise DivergenceError(f"no convergence up to t={hi:g}")
