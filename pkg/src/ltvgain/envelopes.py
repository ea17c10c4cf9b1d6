"""Envelope functions of the subsystem evolution operators and derived weights.

For each subsystem ``i`` the envelopes bound the decoupled evolution
operator ``Omega_i`` in both time directions::

    ||Omega_i(t, s)|| <= alpha_i(t) * beta_i(s)              t >= s
    ||Omega_i(t, s)|| <= 1 / (gamma_i(t) * delta_i(s))       s >= t

From these and the weights ``q_i`` the module computes::

    phi_i(t) = gamma_i(t)^2 * int_t^inf q_i(s) delta_i(s)^2 ds
    g_i(t)   = beta_i(t)^2  * int_t^inf q_i(s) alpha_i(s)^2 ds
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .expr import Const, Expr, breakpoints as expr_breakpoints, free_params, lambdify, parse
from .flow import evolution, operator_norm
from .quadrature import QuadSettings, TailIntegral, make_nodes, semi_infinite_integral
from .system import InterconnectedSystem

ONE = Const(1.0)


def _expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return parse(value if isinstance(value, str) else float(value))


@dataclass(frozen=True, eq=False)
class EnvelopeSet:
    """Envelope expressions ``alpha_i, beta_i, gamma_i, delta_i`` for i = 1, 2.

    ``decay`` optionally maps a subsystem index to an exponential rate ``r``
    with ``alpha_i, delta_i = O(exp(-r t))``; it is only used to bound
    quadrature tails.
    """
    alpha1: Expr
    beta1: Expr
    gamma1: Expr
    delta1: Expr
    alpha2: Expr
    beta2: Expr
    gamma2: Expr
    delta2: Expr
    params: Mapping[str, float] = field(default_factory=dict)
    decay: Mapping[int, float] = field(default_factory=dict)

    @classmethod
    def from_strings(cls, sub1: Mapping, sub2: Mapping, params=None, decay=None):
        """Build from two mappings with keys ``alpha, beta, gamma, delta``."""
        kw = {}
        for i, sub in ((1, sub1), (2, sub2)):
            for name in ("alpha", "beta", "gamma", "delta"):
                kw[f"{name}{i}"] = _expr(sub[name])
        env = cls(**kw, params=dict(params or {}),
                  decay={int(k): float(v) for k, v in (decay or {}).items()})
        missing = env.free_params() - set(env.params)
        if missing:
            raise ValueError(f"unbound parameter(s) in envelopes: {', '.join(sorted(missing))}")
        return env

    def get(self, name: str, i: int) -> Expr:
        return getattr(self, f"{name}{i}")

    def fn(self, name: str, i: int) -> Callable:
        return self._compiled[(name, i)]

    @property
    def _compiled(self) -> dict:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {(n, i): lambdify(self.get(n, i), self.params)
                     for n in ("alpha", "beta", "gamma", "delta") for i in (1, 2)}
            object.__setattr__(self, "_cache", cache)
        return cache

    def free_params(self) -> set[str]:
        out: set[str] = set()
        for n in ("alpha", "beta", "gamma", "delta"):
            for i in (1, 2):
                out |= free_params(self.get(n, i))
        return out

    def breakpoints(self, a: float, b: float) -> list[float]:
        pts: set[float] = set()
        for n in ("alpha", "beta", "gamma", "delta"):
            for i in (1, 2):
                pts.update(expr_breakpoints(self.get(n, i), a, b, self.params))
        return sorted(pts)

    def rescaled(self, i: int, c: float) -> "EnvelopeSet":
        """Copy with ``alpha_i -> c alpha_i`` and ``beta_i -> beta_i / c``."""
        from .expr import Binary
        kw = {f"{n}{k}": self.get(n, k) for n in ("alpha", "beta", "gamma", "delta")
              for k in (1, 2)}
        kw[f"alpha{i}"] = Binary("*", Const(float(c)), self.get("alpha", i))
        kw[f"beta{i}"] = Binary("/", self.get("beta", i), Const(float(c)))
        return EnvelopeSet(**kw, params=dict(self.params), decay=dict(self.decay))


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Weights ``q_i`` (Lyapunov dissipation) and ``omega_i`` (gain weighting)."""
    q1: Expr = ONE
    q2: Expr = ONE
    omega1: Expr = ONE
    omega2: Expr = ONE
    params: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_strings(cls, q1="1", q2="1", omega1="1", omega2="1", params=None):
        return cls(_expr(q1), _expr(q2), _expr(omega1), _expr(omega2),
                   params=dict(params or {}))

    def get(self, name: str, i: int) -> Expr:
        return getattr(self, f"{name}{i}")

    def fn(self, name: str, i: int) -> Callable:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {}
            object.__setattr__(self, "_cache", cache)
        key = (name, i)
        if key not in cache:
            cache[key] = lambdify(self.get(name, i), self.params)
        return cache[key]

    def breakpoints(self, a: float, b: float) -> list[float]:
        pts: set[float] = set()
        for n in ("q", "omega"):
            for i in (1, 2):
                pts.update(expr_breakpoints(self.get(n, i), a, b, self.params))
        return sorted(pts)


def _vec(f: Callable) -> Callable:
    """Make a lambdified scalar/array function always return an array of the input shape."""
    def g(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(f(t), dtype=float), t.shape)
    return g


# ---------------------------------------------------------------------------
# Envelope validation
# ---------------------------------------------------------------------------

@dataclass
class EnvelopeCheck:
    subsystem: int
    direction: str        # "forward" (t >= s) or "backward" (s >= t)
    pairs: int
    worst_margin: float   # min over pairs of bound - ||Omega||
    worst_ratio: float    # max over pairs of ||Omega|| / bound
    worst_pair: tuple
    violations: int


@dataclass
class EnvelopeReport:
    checks: list
    rtol: float

    @property
    def ok(self) -> bool:
        return all(c.violations == 0 for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "rtol": self.rtol,
            "checks": [
                {"subsystem": c.subsystem, "direction": c.direction, "pairs": c.pairs,
                 "worst_margin": c.worst_margin, "worst_ratio": c.worst_ratio,
                 "worst_pair": list(c.worst_pair), "violations": c.violations}
                for c in self.checks
            ],
        }


def _pairs(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim == 2:
        return g
    tt, ss = np.meshgrid(g, g, indexing="ij")
    mask = ~np.eye(len(g), dtype=bool)
    return np.column_stack([tt[mask], ss[mask]])


def validate_envelopes(sys: InterconnectedSystem, env: EnvelopeSet, grid,
                       rtol: float = 1e-6, tol: float = 1e-10) -> EnvelopeReport:
    """Check both envelope inequalities on sampled ``(t, s)`` pairs.

    ``grid`` is either a 1-D array of times (all ordered pairs are used) or
    an ``(N, 2)`` array of explicit ``(t, s)`` pairs.  A pair violates an
    inequality when ``||Omega_i(t, s)|| > bound * (1 + rtol)``; the
    relative slack absorbs integration error in the equality case.
    """
    pairs = _pairs(grid)
    checks = []
    for i in (1, 2):
        alpha, beta = _vec(env.fn("alpha", i)), _vec(env.fn("beta", i))
        gamma, delta = _vec(env.fn("gamma", i)), _vec(env.fn("delta", i))
        norms = np.array([operator_norm(evolution(sys, i, s, t, tol=tol).matrix)
                          for t, s in pairs])
        t, s = pairs[:, 0], pairs[:, 1]
        for direction, mask, bound in (
            ("forward", t >= s, alpha(t) * beta(s)),
            ("backward", s >= t, 1.0 / (gamma(t) * delta(s))),
        ):
            if not mask.any():
                checks.append(EnvelopeCheck(i, direction, 0, np.inf, 0.0, (), 0))
                continue
            nb, bb, pp = norms[mask], bound[mask], pairs[mask]
            margin = bb - nb
            ratio = nb / bb
            k = int(np.argmax(ratio))
            checks.append(EnvelopeCheck(
                i, direction, int(mask.sum()), float(margin.min()), float(ratio[k]),
                (float(pp[k, 0]), float(pp[k, 1])), int(np.sum(ratio > 1.0 + rtol))))
    return EnvelopeReport(checks, rtol)


# ---------------------------------------------------------------------------
# phi_i, g_i
# ---------------------------------------------------------------------------

def _tail_parts(env: EnvelopeSet, weights: WeightSet, i: int, kind: str):
    """Outer factor, integrand and breakpoint function for phi (``kind='phi'``) or g."""
    q = _vec(weights.fn("q", i))
    if kind == "phi":
        outer, inner = env.fn("gamma", i), env.fn("delta", i)
    else:
        outer, inner = env.fn("beta", i), env.fn("alpha", i)
    inner = _vec(inner)

    def integrand(s):
        return q(s) * inner(s) ** 2

    def bps(a, b):
        return sorted(set(env.breakpoints(a, b)) | set(weights.breakpoints(a, b)))
    return _vec(outer), integrand, bps


def _settings_for(env: EnvelopeSet, i: int, quad: QuadSettings) -> QuadSettings:
    rate = env.decay.get(i)
    if rate and quad.decay_rate is None:
        return QuadSettings(quad.tol, quad.max_doublings, quad.initial_length, 2.0 * rate)
    return quad


def _weighted_tail(env, weights, i, t, quad, kind):
    outer, integrand, bps = _tail_parts(env, weights, i, kind)
    scalar_f = lambda s: float(integrand(np.asarray(s)))
    val = semi_infinite_integral(scalar_f, float(t), _settings_for(env, i, quad), bps)
    return float(outer(np.asarray(float(t)))) ** 2 * val


def phi(env: EnvelopeSet, weights: WeightSet, i: int, t: float,
        quad: QuadSettings = QuadSettings()) -> float:
    """``gamma_i(t)^2 * int_t^inf q_i delta_i^2 ds``.

    Raises :class:`~ltvgain.quadrature.DivergenceError` when the tail
    increments stop shrinking.
    """
    return _weighted_tail(env, weights, i, t, quad, "phi")


def g(env: EnvelopeSet, weights: WeightSet, i: int, t: float,
      quad: QuadSettings = QuadSettings()) -> float:
    """``beta_i(t)^2 * int_t^inf q_i alpha_i^2 ds``."""
    return _weighted_tail(env, weights, i, t, quad, "g")


class TailProfile:
    """Vectorized ``phi_i`` or ``g_i`` on ``[a, b]`` from one cumulative table.

    The table covers ``[a, b]``; the remainder beyond ``b`` is a single
    semi-infinite quadrature.  Calls accept scalars or arrays in ``[a, b]``.
    """

    def __init__(self, env: EnvelopeSet, weights: WeightSet, i: int, kind: str,
                 a: float, b: float, step: float = 0.05,
                 quad: QuadSettings = QuadSettings()):
        outer, integrand, bps = _tail_parts(env, weights, i, kind)
        self.outer = outer
        self.a, self.b = float(a), float(b)
        nodes = make_nodes(a, b, step, bps(a, b))
        beyond = semi_infinite_integral(lambda s: float(integrand(np.asarray(s))), b,
                                        _settings_for(env, i, quad), bps)
        self.tail = TailIntegral(integrand, nodes, tail_beyond=beyond)

    def __call__(self, t):
        return self.outer(t) ** 2 * self.tail(t)


# ---------------------------------------------------------------------------
# Weighted norms
# ---------------------------------------------------------------------------

def _pointwise_norm(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim <= 1:
        return np.abs(v)
    if v.shape[1] == 1 or v.shape[2] == 1:
        return np.sqrt(np.sum(v ** 2, axis=(1, 2)))
    return np.linalg.svd(v, compute_uv=False)[:, 0]


def running_weighted_norm(values, times, omega: Callable) -> np.ndarray:
    """Cumulative ``max_{s <= t_k} omega(s) ||f(s)||`` over increasing ``times``."""
    times = np.asarray(times, dtype=float)
    w = np.asarray(omega(times), dtype=float) * _pointwise_norm(values)
    return np.maximum.accumulate(np.broadcast_to(w, times.shape))


def weighted_norm(f, omega, t0: float, T: float, times: Sequence[float] | None = None,
                  params: Mapping[str, float] | None = None, step: float = 0.01) -> float:
    """``max_{t in [t0, T]} omega(t) ||f(t)||``.

    Parameters
    ----------
    f : callable or array
        Either a function of time or samples at ``times``.  Matrix-valued
        samples have shape ``(N, r, c)``.
    omega : Expr, str or callable
        Weight function.
    times : array, optional
        Sample times for array-valued ``f``.  For a callable ``f`` a grid of
        spacing ``step`` is used and the best sample is refined locally.
    """
    if T < t0:
        raise ValueError("empty interval: T < t0")
    if isinstance(omega, (str, Expr)):
        omega = _vec(lambdify(_expr(omega), params or {}))
    elif not callable(omega):
        c = float(omega)
        omega = lambda t, c=c: np.full(np.shape(t), c)
    if callable(f):
        grid = make_nodes(t0, T, step) if T > t0 else np.array([t0])
        vals = np.asarray(omega(grid), dtype=float) * _pointwise_norm(
            np.asarray(f(grid), dtype=float))
        vals = np.broadcast_to(vals, grid.shape)
        k = int(np.argmax(vals))
        best = float(vals[k])
        if grid.size > 1:
            lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
            obj = lambda t: -float(np.asarray(omega(np.asarray(t))) *
                                   _pointwise_norm(np.atleast_1d(f(np.asarray(t))))[0])
            res = minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10})
            best = max(best, -float(res.fun))
        return best
    if times is None:
        raise ValueError("sampled f needs its sample times")
    times = np.asarray(times, dtype=float)
    mask = (times >= t0) & (times <= T)
    if not mask.any():
        raise ValueError("no samples inside [t0, T]")
    vals = np.asarray(f)[mask]
    w = np.asarray(omega(times[mask]), dtype=float) * _pointwise_norm(vals)
    return float(np.max(w))


class RunningGNorm:
    """``M_i(t) = ||g_i||_{omega_i, t} = max_{s in [t0, t]} omega_i(s) g_i(s)`` on ``[t0, T]``.

    The running maximum is taken over table nodes and their Gauss points,
    then combined with the pointwise value at the query time.
    """

    def __init__(self, env: EnvelopeSet, weights: WeightSet, t0: float, T: float,
                 step: float = 0.05, quad: QuadSettings = QuadSettings()):
        from .quadrature import gauss_points
        self.t0, self.T = float(t0), float(T)
        self.omega = {i: _vec(weights.fn("omega", i)) for i in (1, 2)}
        self.g = {i: TailProfile(env, weights, i, "g", t0, T, step, quad) for i in (1, 2)}
        bps = sorted(set(env.breakpoints(t0, T)) | set(weights.breakpoints(t0, T)))
        nodes = make_nodes(t0, T, step, bps)
        x, _ = gauss_points(nodes[:-1], nodes[1:])
        dense = np.sort(np.concatenate([nodes, x.ravel()]))
        self.dense = dense
        self.runmax = {i: np.maximum.accumulate(self.omega[i](dense) * self.g[i](dense))
                       for i in (1, 2)}

    def __call__(self, i: int, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.dense, t, side="right") - 1, 0, self.dense.size - 1)
        return np.maximum(self.runmax[i][k], self.omega[i](t) * self.g[i](t))
