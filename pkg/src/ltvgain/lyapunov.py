"""Matrix-valued Lyapunov data for the interconnection and its a priori bounds.

The blocks ``P11, P12, P22`` of ``v(t, x) = <x1, P11 x1> + 2 <x1, P12 x2>
+ <x2, P22 x2>`` solve, on ``[t0, inf)`` with zero limit at infinity::

    P11' + A11^T P11 + P11 A11 + P12 A21 + A21^T P12^T = -q1 I
    P12' + A11^T P12 + P12 A22 + P11 A12 + A21^T P22   = 0
    P22' + A22^T P22 + P22 A22 + A12^T P12 + P12^T A12 = -q2 I

Variation of constants turns these into integral equations.  Substituting
the ``P12`` equation into the other two gives a fixed-point problem for
``(P11, P22)`` alone::

    P_ii = Q_i + F_i(P11, P22)
    Q_i(t) = int_t^inf Omega_i(s, t)^T q_i(s) Omega_i(s, t) ds

where ``F_i`` collects the coupling terms through ``P12``.  One Picard step
maps ``(P11, P22)`` to new diagonal blocks; it is realized here as a single
backward ODE solve for ``[P12, P11_new, P22_new]`` with the previous
diagonal blocks frozen in the ``P12`` equation, which is the same map.
Infinite upper limits are truncated at ``T_max + margin`` with zero
terminal data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .envelopes import EnvelopeSet, RunningGNorm, WeightSet, _pointwise_norm, _vec
from .flow import PiecewiseSolution, integrate_piecewise
from .gains import GainMatrix, GainSettings, gain_matrix
from .quadrature import QuadSettings, TailIntegral, make_nodes, semi_infinite_with_end
from .system import InterconnectedSystem

EPS_POS = 1e-9


class SmallGainError(RuntimeError):
    """Raised when the contraction gate ``r_sigma(Pi(t0)) < 1`` fails."""

    def __init__(self, gains: GainMatrix):
        super().__init__(f"small-gain condition fails at t0={gains.t0:g}: "
                         f"spectral radius {gains.spectral_radius:.6g} >= 1")
        self.gains = gains


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, update: float):
        super().__init__(f"Picard iteration did not converge in {iterations} steps "
                         f"(last update {update:.3g})")
        self.iterations = iterations
        self.update = update


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

@dataclass
class LyapunovGrid:
    t0: float
    nodes: np.ndarray
    P11: np.ndarray          # (N, n1, n1)
    P22: np.ndarray          # (N, n2, n2)
    P12: np.ndarray          # (N, n1, n2)
    iterations: int
    final_update_norm: float
    T_solve: float = np.nan
    update_history: list = field(default_factory=list)
    min_entry_history: list = field(default_factory=list)
    dense: Callable | None = field(default=None, repr=False)
    breakpoints: list = field(default_factory=list, repr=False)

    @property
    def n1(self) -> int:
        return self.P11.shape[1]

    @property
    def n2(self) -> int:
        return self.P22.shape[1]

    @property
    def T_max(self) -> float:
        return float(self.nodes[-1])

    def at(self, t):
        """``(P11, P12, P22)`` at time(s) ``t`` from the dense solution.

        Scalar ``t`` gives matrices; an array gives stacks with a leading
        time axis.
        """
        lo, hi = self.t0, self.T_max
        tt = np.asarray(t, dtype=float)
        slack = 1e-9 * max(1.0, abs(hi))
        if np.any(tt < lo - slack) or np.any(tt > hi + slack):
            raise ValueError(f"t outside the solution span [{lo:g}, {hi:g}]")
        y = self.dense(np.clip(tt, lo, hi))
        n1, n2 = self.n1, self.n2
        if tt.ndim == 0:
            return _unpack(y, n1, n2)
        parts = [_unpack(y[:, k], n1, n2) for k in range(tt.size)]
        return tuple(np.array([p[m] for p in parts]) for m in range(3))

    def min_entry(self) -> float:
        return float(min(self.P11.min(), self.P22.min(), self.P12.min()))

    def symmetry_defect(self) -> float:
        d11 = np.max(np.abs(self.P11 - np.swapaxes(self.P11, 1, 2)))
        d22 = np.max(np.abs(self.P22 - np.swapaxes(self.P22, 1, 2)))
        return float(max(d11, d22))

    def header(self) -> list[str]:
        cols = ["t"]
        for name, (r, c) in (("P11", (self.n1, self.n1)), ("P12", (self.n1, self.n2)),
                             ("P22", (self.n2, self.n2))):
            cols += [f"{name}_{a + 1}_{b + 1}" for a in range(r) for b in range(c)]
        return cols

    def to_csv(self, path_or_file) -> None:
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(self.header())
            for k, t in enumerate(self.nodes):
                row = [t, *self.P11[k].ravel(), *self.P12[k].ravel(), *self.P22[k].ravel()]
                w.writerow([repr(float(v)) for v in row])
        finally:
            if own:
                fh.close()


def _unpack(y, n1: int, n2: int):
    k = n1 * n2
    P12 = y[:k].reshape(n1, n2)
    P11 = y[k:k + n1 * n1].reshape(n1, n1)
    P22 = y[k + n1 * n1:].reshape(n2, n2)
    return P11, P12, P22


def tail_margin(env: EnvelopeSet, weights: WeightSet, T: float,
                quad: QuadSettings = QuadSettings(), safety: float = 1.5) -> float:
    """Truncation length beyond ``T`` for the defining semi-infinite integrals.

    The length is where the tail of ``int q_i alpha_i^2`` became negligible
    at ``T``, times a safety factor.
    """
    lengths = []
    for i in (1, 2):
        q, al = _vec(weights.fn("q", i)), _vec(env.fn("alpha", i))
        f = lambda s: float(q(np.asarray(s)) * al(np.asarray(s)) ** 2)
        _, end = semi_infinite_with_end(f, T, quad)
        lengths.append(end - T)
    return safety * max(lengths)


def picard_solve(sys: InterconnectedSystem, env: EnvelopeSet, weights: WeightSet,
                 t0: float, T_max: float | None = None, step: float = 0.05,
                 tol: float = 1e-8, max_iter: int = 200,
                 gains: GainMatrix | None = None,
                 gain_settings: GainSettings = GainSettings(),
                 ode_rtol: float = 1e-10, ode_atol: float = 1e-12,
                 quad: QuadSettings = QuadSettings(), margin: float | None = None
                 ) -> LyapunovGrid:
    """Solve for ``P11, P12, P22`` on ``[t0, T_max]`` by Picard iteration.

    Parameters
    ----------
    T_max : float, optional
        End of the output grid (default ``t0 + 20``).  The backward solves
        start at ``T_max + margin`` with zero data.
    tol : float
        Stop when the omega-weighted sup-norm update of ``(P11, P22)``
        relative to the current iterate drops below ``tol``.
    gains : GainMatrix, optional
        Precomputed ``Pi(t0)``; computed when omitted.  Iteration only
        starts when the small-gain condition holds.

    Raises
    ------
    SmallGainError
        The contraction gate fails.
    ConvergenceError
        ``max_iter`` reached without meeting ``tol``.
    """
    if gains is None:
        gains = gain_matrix(t0, sys, env, weights, gain_settings)
    if not gains.small_gain_ok:
        raise SmallGainError(gains)
    if T_max is None:
        T_max = t0 + 20.0
    if margin is None:
        margin = tail_margin(env, weights, T_max, quad)
    T_solve = T_max + margin
    n1, n2 = sys.n1, sys.n2
    k12, k11 = n1 * n2, n1 * n1
    cuts = sorted(set(sys.breakpoints(t0, T_solve)) | set(weights.breakpoints(t0, T_solve)))
    nodes = make_nodes(t0, T_max, step, [c for c in cuts if c <= T_max])
    q1, q2 = weights.fn("q", 1), weights.fn("q", 2)
    om1, om2 = _vec(weights.fn("omega", 1)), _vec(weights.fn("omega", 2))
    w1, w2 = om1(nodes), om2(nodes)
    I1, I2 = np.eye(n1), np.eye(n2)

    def step_map(prev: PiecewiseSolution | None):
        def rhs(t, y):
            A11, A12 = sys.block_at("A11", t), sys.block_at("A12", t)
            A21, A22 = sys.block_at("A21", t), sys.block_at("A22", t)
            P12 = y[:k12].reshape(n1, n2)
            P11 = y[k12:k12 + k11].reshape(n1, n1)
            P22 = y[k12 + k11:].reshape(n2, n2)
            if prev is None:
                old11, old22 = np.zeros((n1, n1)), np.zeros((n2, n2))
            else:
                old11, _, old22 = _unpack(prev(t), n1, n2)
            d12 = -(A11.T @ P12 + P12 @ A22 + old11 @ A12 + A21.T @ old22)
            d11 = -(A11.T @ P11 + P11 @ A11 + P12 @ A21 + A21.T @ P12.T) - float(q1(t)) * I1
            d22 = -(A22.T @ P22 + P22 @ A22 + A12.T @ P12 + P12.T @ A12) - float(q2(t)) * I2
            return np.concatenate([d12.ravel(), d11.ravel(), d22.ravel()])

        y_end = np.zeros(k12 + k11 + n2 * n2)
        _, sol = integrate_piecewise(rhs, T_solve, t0, y_end, cuts, rtol=ode_rtol,
                                     atol=ode_atol)
        return sol

    def sample(sol):
        Y = sol(nodes)
        P12 = Y[:k12].T.reshape(-1, n1, n2)
        P11 = Y[k12:k12 + k11].T.reshape(-1, n1, n1)
        P22 = Y[k12 + k11:].T.reshape(-1, n2, n2)
        return P11, P12, P22

    sol = step_map(None)            # P^(0) = Q_i, the pure tail term
    P11, P12, P22 = sample(sol)
    updates, mins = [], [float(min(P11.min(), P22.min(), P12.min()))]
    update = np.inf
    it = 0
    while it < max_iter:
        it += 1
        new_sol = step_map(sol)
        N11, N12, N22 = sample(new_sol)
        scale = max(np.max(w1 * _pointwise_norm(N11)), np.max(w2 * _pointwise_norm(N22)), 1e-300)
        update = max(np.max(w1 * _pointwise_norm(N11 - P11)),
                     np.max(w2 * _pointwise_norm(N22 - P22))) / scale
        updates.append(float(update))
        mins.append(float(min(N11.min(), N22.min(), N12.min())))
        sol, P11, P12, P22 = new_sol, N11, N12, N22
        if update < tol:
            break
    else:
        raise ConvergenceError(it, float(update))
    return LyapunovGrid(float(t0), nodes, P11, P22, P12, it, float(update), T_solve,
                        updates, mins, sol, [c for c in cuts if c <= T_max])


# ---------------------------------------------------------------------------
# Differential residuals and v
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    r11: float
    r12: float
    r22: float
    points: int

    @property
    def max(self) -> float:
        return max(self.r11, self.r12, self.r22)

    def to_dict(self) -> dict:
        return {"r11": self.r11, "r12": self.r12, "r22": self.r22, "points": self.points}


def _three_point(t, Y, at: int):
    """Second-order derivative at ``t[at]`` from three (possibly uneven) samples."""
    t0, t1, t2 = (float(v) for v in t)
    x = (t0, t1, t2)[at]
    w0 = ((x - t1) + (x - t2)) / ((t0 - t1) * (t0 - t2))
    w1 = ((x - t0) + (x - t2)) / ((t1 - t0) * (t1 - t2))
    w2 = ((x - t0) + (x - t1)) / ((t2 - t0) * (t2 - t1))
    return w0 * Y[0] + w1 * Y[1] + w2 * Y[2]


def _derivative(ts: np.ndarray, Y: np.ndarray, breakpoints) -> np.ndarray:
    """Second-order finite differences along axis 0 on an uneven grid.

    Stencils never straddle a coefficient jump; one-sided stencils are used
    next to cuts and at the ends.
    """
    dY = np.empty_like(Y)
    n = ts.size
    bps = np.asarray(sorted(breakpoints), dtype=float)

    def crosses(a, b):
        # a coefficient jump strictly inside (a, b]
        return bps.size and np.any((bps > a) & (bps <= b))

    for k in range(n):
        left = k > 0 and not crosses(ts[k - 1], ts[k])
        right = k < n - 1 and not crosses(ts[k], ts[k + 1])
        if left and right:
            dY[k] = _three_point(ts[k - 1:k + 2], Y[k - 1:k + 2], 1)
        elif right and k + 2 < n and not crosses(ts[k + 1], ts[k + 2]):
            dY[k] = _three_point(ts[k:k + 3], Y[k:k + 3], 0)
        elif left and k >= 2 and not crosses(ts[k - 2], ts[k - 1]):
            dY[k] = _three_point(ts[k - 2:k + 1], Y[k - 2:k + 1], 2)
        elif right:
            dY[k] = (Y[k + 1] - Y[k]) / (ts[k + 1] - ts[k])
        elif left:
            dY[k] = (Y[k] - Y[k - 1]) / (ts[k] - ts[k - 1])
        else:
            dY[k] = np.nan
    return dY


def residuals_from_samples(ts, P11, P12, P22, sys: InterconnectedSystem, weights: WeightSet,
                           breakpoints=()) -> ResidualReport:
    """Max-norm residuals of the three differential equations from sampled blocks."""
    ts = np.asarray(ts, dtype=float)
    d11, d12, d22 = (_derivative(ts, np.asarray(P), breakpoints) for P in (P11, P12, P22))
    A11, A12 = sys.block_values("A11", ts), sys.block_values("A12", ts)
    A21, A22 = sys.block_values("A21", ts), sys.block_values("A22", ts)
    T = lambda M: np.swapaxes(M, 1, 2)
    q1 = _vec(weights.fn("q", 1))(ts)[:, None, None]
    q2 = _vec(weights.fn("q", 2))(ts)[:, None, None]
    I1, I2 = np.eye(sys.n1)[None], np.eye(sys.n2)[None]
    R11 = d11 + T(A11) @ P11 + P11 @ A11 + P12 @ A21 + T(A21) @ T(P12) + q1 * I1
    R12 = d12 + T(A11) @ P12 + P12 @ A22 + P11 @ A12 + T(A21) @ P22
    R22 = d22 + T(A22) @ P22 + P22 @ A22 + T(A12) @ P12 + T(P12) @ A12 + q2 * I2
    norm = lambda R: float(np.nanmax(_pointwise_norm(R)))
    return ResidualReport(norm(R11), norm(R12), norm(R22), int(ts.size))


def residual_check(P: LyapunovGrid, sys: InterconnectedSystem, weights: WeightSet,
                   grid=None, step: float = 0.01) -> ResidualReport:
    """Residuals of the differential equations for a Picard solution.

    Derivatives are finite differences of the dense solution sampled on
    ``grid`` (default: spacing ``step`` over the solution span).
    """
    if grid is None:
        grid = make_nodes(P.t0, P.T_max, step, P.breakpoints)
    grid = np.asarray(grid, dtype=float)
    P11, P12, P22 = P.at(grid)
    return residuals_from_samples(grid, P11, P12, P22, sys, weights, P.breakpoints)


def evaluate_v(P: LyapunovGrid, t: float, x1, x2) -> float:
    """``<x1, P11 x1> + 2 <x1, P12 x2> + <x2, P22 x2>`` at time ``t``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    P11, P12, P22 = P.at(float(t))
    return float(x1 @ P11 @ x1 + 2.0 * x1 @ P12 @ x2 + x2 @ P22 @ x2)


def evaluate_v_along(P: LyapunovGrid, ts, X, n1: int) -> np.ndarray:
    """``v(t_k, x(t_k))`` for sampled states ``X`` of shape ``(N, n1 + n2)``."""
    ts = np.asarray(ts, dtype=float)
    X = np.asarray(X, dtype=float)
    P11, P12, P22 = P.at(ts)
    x1, x2 = X[:, :n1], X[:, n1:]
    return (np.einsum("ki,kij,kj->k", x1, P11, x1) + 2 * np.einsum("ki,kij,kj->k", x1, P12, x2)
            + np.einsum("ki,kij,kj->k", x2, P22, x2))


# ---------------------------------------------------------------------------
# A priori bounds h11, h22, h12, h
# ---------------------------------------------------------------------------

@dataclass
class HBounds:
    t: float
    t0: float
    h11: float
    h22: float
    h12: float
    h: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("t", "t0", "h11", "h22", "h12", "h")}


class HProfile:
    """Vectorized ``h11, h22, h12, h`` as functions of ``t`` for a fixed ``t0``.

    With ``d = 1 - tr Pi + det Pi`` and ``M_i(t) = max_{[t0, t]} omega_i g_i``::

        h11 = ((1 - pi22) M_1 + pi21 M_2) / (d omega_1)
        h22 = (pi12 M_1 + (1 - pi11) M_2) / (d omega_2)
        h12 = beta_1 beta_2 (t) int_t^inf alpha_1 alpha_2 (||A12|| h11 + ||A21|| h22) ds

    These are the rows of ``(I - Pi^T)^{-1}`` applied to ``(M_1, M_2)``,
    the contraction matrix of the fixed-point map being ``Pi^T``.
    """

    def __init__(self, sys: InterconnectedSystem, env: EnvelopeSet, weights: WeightSet,
                 gains: GainMatrix, T: float, step: float = 0.05,
                 quad: QuadSettings = QuadSettings(), margin: float = 16.0,
                 max_margin: float = 256.0):
        if not gains.small_gain_ok:
            raise SmallGainError(gains)
        self.sys, self.env, self.weights, self.gains = sys, env, weights, gains
        self.t0 = t0 = gains.t0
        self.T = T = max(float(T), t0)
        self.step, self.quad = step, quad
        p11, p12, p21, p22 = gains.pi11, gains.pi12, gains.pi21, gains.pi22
        d = 1.0 - gains.trace + gains.det
        self.c1 = ((1 - p22) / d, p21 / d)
        self.c2 = (p12 / d, (1 - p11) / d)
        self.om = {i: _vec(weights.fn("omega", i)) for i in (1, 2)}
        self.n12 = lambda s: _norm(sys, "A12", s)
        self.n21 = lambda s: _norm(sys, "A21", s)
        self.al1, self.al2 = _vec(env.fn("alpha", 1)), _vec(env.fn("alpha", 2))
        self.be1, self.be2 = _vec(env.fn("beta", 1)), _vec(env.fn("beta", 2))
        prev = None
        while True:
            self._build(T + margin)
            cur = self._h12_raw(T)
            if prev is not None and abs(cur - prev) <= quad.tol * max(abs(cur), 1e-300):
                break
            if margin >= max_margin:
                break
            prev, margin = cur, 2 * margin
        self.margin = margin

    def _build(self, T_end: float):
        sys, env, weights, t0 = self.sys, self.env, self.weights, self.t0
        bps = sorted(set(sys.breakpoints(t0, T_end)) | set(env.breakpoints(t0, T_end))
                     | set(weights.breakpoints(t0, T_end)))
        nodes = make_nodes(t0, T_end, self.step, bps)
        self.nodes = nodes
        self.gnorm = RunningGNorm(env, weights, t0, T_end, self.step, self.quad)

        def integrand(s):
            return self.al1(s) * self.al2(s) * (self.n12(s) * self.h11(s) + self.n21(s) * self.h22(s))

        self.tail12 = TailIntegral(integrand, nodes)

    def M(self, i: int, t):
        """``||g_i||_{omega_i, t}`` for ``t`` in the profile span."""
        return self.gnorm(i, t)

    def h11(self, t):
        a, b = self.c1
        return (a * self.M(1, t) + b * self.M(2, t)) / self.om[1](np.asarray(t, dtype=float))

    def h22(self, t):
        a, b = self.c2
        return (a * self.M(1, t) + b * self.M(2, t)) / self.om[2](np.asarray(t, dtype=float))

    def _h12_raw(self, t):
        t = np.asarray(t, dtype=float)
        return self.be1(t) * self.be2(t) * self.tail12(t)

    def h12(self, t):
        return self._h12_raw(t)

    def h(self, t):
        h12 = self.h12(t)
        return np.maximum(self.h11(t) + h12, self.h22(t) + h12)

    def bounds(self, t: float) -> HBounds:
        h11, h22, h12 = (float(f(np.asarray(float(t)))) for f in (self.h11, self.h22, self.h12))
        return HBounds(float(t), self.t0, h11, h22, h12, max(h11 + h12, h22 + h12))


def _norm(sys: InterconnectedSystem, name: str, s):
    s = np.asarray(s, dtype=float)
    return sys.block_norms(name, s.ravel()).reshape(s.shape)


def h_bounds(t: float, t0: float, gains: GainMatrix, env: EnvelopeSet, weights: WeightSet,
             sys: InterconnectedSystem, quad: QuadSettings = QuadSettings(),
             step: float = 0.05) -> HBounds:
    """``h11, h22, h12, h`` at a single ``(t, t0)``; ``gains`` must be ``Pi(t0)``."""
    if abs(gains.t0 - t0) > 1e-12 * max(1.0, abs(t0)):
        raise ValueError("gains were computed for a different t0")
    return HProfile(sys, env, weights, gains, t, step, quad).bounds(t)
