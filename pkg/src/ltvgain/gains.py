"""Weighted integral gains of a two-block interconnection and the small-gain test.

Every gain has the common shape::

    pi = 2 sup_{t >= t0} P(t) int_t^inf F(s) int_s^inf G(p) dp ds

with, for subsystem index ``i`` and ``j = 3 - i``::

    P(s) = omega_i(s) beta_i(s)^2
    F(s) = alpha_i(s)^2 beta_i(s) beta_j(s) ||A_ji(s)||
    G(p) = alpha_i(p) alpha_j(p) ||A_c(p)|| / omega_w(p)

where ``(c, w) = (ij, i)`` for the diagonal gain ``pi_ii`` and
``(c, w) = (ji, j)`` for the cross gain ``pi_ji``.  The cross gain
``pi_ji`` bounds the contribution of ``P_jj`` to ``P_ii`` in the Lyapunov
fixed-point map, so the contraction matrix of that map is the transpose
of ``Pi = [[pi11, pi12], [pi21, pi22]]``.  Spectral radius, trace and
determinant are transpose invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .envelopes import EnvelopeSet, WeightSet, _vec
from .expr import pulse_support, pulse_supported
from .quadrature import QuadSettings, TailIntegral, make_nodes
from .system import InterconnectedSystem


class GainError(ArithmeticError):
    """A gain whose supremum or defining integrals could not be bounded."""


@dataclass(frozen=True)
class GainSettings:
    """Numerical controls for gain evaluation.

    ``horizon`` is the initial sup-search window beyond ``t0``; it doubles
    up to ``max_horizon`` while the maximizer sits at the window edge.
    ``margin`` is the extra integration length beyond the window, doubled
    until the profile on the window is stable to ``quad.tol``.
    """
    step: float = 0.05
    horizon: float = 32.0
    max_horizon: float = 256.0
    margin: float = 32.0
    max_margin: float = 256.0
    quad: QuadSettings = QuadSettings()
    method: str = "auto"          # "auto" | "quadrature" | "pulse"


@dataclass
class GainEstimate:
    value: float
    t_star: float
    sup_attained: bool
    method: str
    horizon: float

    def to_dict(self) -> dict:
        return {"value": self.value, "t_star": self.t_star,
                "sup_attained": self.sup_attained, "method": self.method,
                "horizon": self.horizon}


# ---------------------------------------------------------------------------
# Integrand assembly
# ---------------------------------------------------------------------------

@dataclass
class _Parts:
    P: Callable
    F: Callable
    G: Callable
    couplings: tuple
    breakpoints: Callable


def _norm_fn(sys: InterconnectedSystem, name: str) -> Callable:
    def f(t):
        t = np.asarray(t, dtype=float)
        return sys.block_norms(name, t.ravel()).reshape(t.shape)
    return f


def gain_parts(kind: str, i: int, sys: InterconnectedSystem, env: EnvelopeSet,
               weights: WeightSet) -> _Parts:
    """Integrand pieces ``P, F, G`` of one gain (see module docstring)."""
    if kind not in ("ii", "ji") or i not in (1, 2):
        raise ValueError(f"unknown gain {kind!r} for subsystem {i}")
    j = 3 - i
    al_i, al_j = _vec(env.fn("alpha", i)), _vec(env.fn("alpha", j))
    be_i, be_j = _vec(env.fn("beta", i)), _vec(env.fn("beta", j))
    om_i = _vec(weights.fn("omega", i))
    a_ji = f"A{j}{i}"
    a_c, w = (f"A{i}{j}", i) if kind == "ii" else (a_ji, j)
    om_w = _vec(weights.fn("omega", w))
    n_ji, n_c = _norm_fn(sys, a_ji), _norm_fn(sys, a_c)

    def P(t):
        return om_i(t) * be_i(t) ** 2

    def F(s):
        return al_i(s) ** 2 * be_i(s) * be_j(s) * n_ji(s)

    def G(p):
        return al_i(p) * al_j(p) * n_c(p) / om_w(p)

    def bps(a, b):
        pts = set(sys.breakpoints(a, b)) | set(env.breakpoints(a, b)) | set(weights.breakpoints(a, b))
        return sorted(pts)

    couplings = tuple(e for name in (a_ji, a_c) for row in sys.block(name) for e in row)
    return _Parts(P, F, G, couplings, bps)


def _is_pulse_case(parts: _Parts) -> bool:
    return all(pulse_supported(e) for e in parts.couplings)


# ---------------------------------------------------------------------------
# Profiles: candidate values of 2 P(t) J(t) on the search window
# ---------------------------------------------------------------------------

class _QuadratureProfile:
    """Inner-first cumulative tables on a shared node set."""

    method = "quadrature"

    def __init__(self, parts: _Parts, t0: float, H: float, margin: float, step: float):
        T_end = t0 + H + margin
        nodes = make_nodes(t0, T_end, step, parts.breakpoints(t0, T_end))
        inner = TailIntegral(parts.G, nodes)
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            outer = TailIntegral(lambda s: parts.F(s) * inner(s), nodes)
        self.parts, self.outer = parts, outer
        ts = nodes[nodes <= t0 + H + 1e-12]
        self.ts = ts
        self.J = outer.values[: ts.size]
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            self.vals = 2.0 * parts.P(ts) * self.J

    def at(self, t: float) -> float:
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            return float(2.0 * self.parts.P(np.asarray(t)) * self.outer(t))


def _pulse_max(f: Callable, a, b, n: int = 33, levels: int = 4) -> np.ndarray:
    """Maxima of a continuous function on each half-open interval ``[a_k, b_k)``.

    All intervals are sampled at once; the grid is zoomed around the best
    sample ``levels`` times.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    lo, hi = a.copy(), a + (b - a) * (1.0 - 1e-9)
    frac = np.linspace(0.0, 1.0, n)
    best = np.full(a.shape, -np.inf)
    rows = np.arange(a.size)
    for _ in range(levels):
        x = lo[:, None] + (hi - lo)[:, None] * frac
        v = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
        k = np.argmax(v, axis=1)
        best = np.maximum(best, v[rows, k])
        h = (hi - lo) / (n - 1)
        c = x[rows, k]
        lo, hi = np.maximum(c - h, lo), np.minimum(c + h, hi)
    return best


class _PulseProfile:
    """Pulse-majorant evaluation for couplings supported on pulse intervals.

    With pulses ``[a_k, b_k)`` after ``t0`` and ``w_k = b_k - a_k``::

        G_m = sum_{k >= m} w_k max_k G
        J_m = sum_{k >= m} w_k max_k F * G_k
        V_m = 2 sup_{t in [max(t0, b_{m-1}), b_m]} P(t) J_m

    ``V_m`` bounds ``2 P(t) int_t^inf F int_s^inf G`` on its window, so the
    largest ``V_m`` is an upper bound for the gain.  Candidate values are
    reported at ``t = b_m``.
    """

    method = "pulse"

    def __init__(self, parts: _Parts, t0: float, H: float, margin: float, step: float,
                 params):
        T_end = t0 + H + margin
        pulses = pulse_support(parts.couplings, t0, T_end, params)
        pulses = pulses[pulses[:, 1] > t0]
        self.parts, self.t0 = parts, t0
        if pulses.size == 0:
            self.ts, self.vals, self.J = np.array([t0]), np.array([0.0]), np.array([0.0])
            self.windows = [(t0, t0)]
            return
        width = pulses[:, 1] - pulses[:, 0]
        mG = _pulse_max(parts.G, pulses[:, 0], pulses[:, 1])
        mF = _pulse_max(parts.F, pulses[:, 0], pulses[:, 1])
        G_hat = np.cumsum((width * mG)[::-1])[::-1]
        J_hat = np.cumsum((width * mF * G_hat)[::-1])[::-1]
        keep = pulses[:, 1] <= t0 + H + 1e-12
        keep[0] = True
        lefts = np.concatenate([[t0], pulses[:-1, 1]])
        lo = np.maximum(lefts[keep], t0)
        hi = pulses[keep, 1]
        # P is continuous, so the closed window maximum is the limit at b_m
        vals = 2.0 * np.maximum(_pulse_max(parts.P, lo, hi), parts.P(hi)) * J_hat[keep]
        windows = list(zip(lo.tolist(), hi.tolist()))
        self.ts = pulses[keep, 1]
        self.vals = np.asarray(vals, dtype=float)
        self.J = J_hat[keep]
        self.windows = windows

    def at(self, t: float) -> float:
        k = int(np.clip(np.searchsorted(self.ts, t), 0, self.ts.size - 1))
        return float(self.vals[k])


# ---------------------------------------------------------------------------
# Sup search
# ---------------------------------------------------------------------------

def _valid(prof) -> np.ndarray:
    v = prof.vals
    ok = np.isfinite(v)
    if np.any(prof.J > 0):
        # beyond this point the tail integral has underflowed
        ok &= (prof.J > 1e-280) | (np.arange(v.size) == 0)
    return ok


def _stable_profile(build: Callable, t0: float, H: float, s: GainSettings):
    """Profile with a margin large enough that the window values stopped moving."""
    margin = s.margin
    prof = build(H, margin)
    while margin < s.max_margin:
        nxt = build(H, 2 * margin)
        n = min(prof.vals.size, nxt.vals.size)
        a, b = prof.vals[:n], nxt.vals[:n]
        ok = np.isfinite(a) & np.isfinite(b)
        scale = np.max(np.abs(b[ok])) if ok.any() else 0.0
        if scale == 0.0 or np.max(np.abs(a[ok] - b[ok])) <= s.quad.tol * scale:
            return nxt
        prof, margin = nxt, 2 * margin
    return prof


def _refine(prof, k: int) -> tuple[float, float]:
    ts, vals = prof.ts, prof.vals
    best_t, best = float(ts[k]), float(vals[k])
    if prof.method != "quadrature" or ts.size < 2:
        return best_t, best
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, ts.size - 1)]
    res = minimize_scalar(lambda t: -prof.at(t), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10 * max(1.0, hi)})
    if np.isfinite(res.fun) and -res.fun > best:
        best_t, best = float(res.x), float(-res.fun)
    return best_t, best


def _sup(build: Callable, t0: float, s: GainSettings, method: str) -> GainEstimate:
    H = s.horizon
    while True:
        prof = _stable_profile(build, t0, H, s)
        ok = _valid(prof)
        ts, vals = prof.ts[ok], prof.vals[ok]
        if vals.size == 0:
            raise GainError(f"gain profile not finite at t0={t0:g}")
        if np.all(vals == 0.0):
            return GainEstimate(0.0, t0, True, method, H)
        k = int(np.argmax(vals))
        reach = ts[-1] - t0
        truncated = ok.size and not ok[-1]
        at_edge = ts[k] - t0 >= 0.9 * reach and k >= ts.size - 3 and reach > 0
        if not at_edge:
            kk = int(np.flatnonzero(ok)[k])
            t_star, best = _refine(prof, kk)
            return GainEstimate(best, t_star, True, method, H)
        if H < s.max_horizon and not truncated:
            H *= 2
            continue
        return _edge_limit(ts, vals, t0, s, method, H)


def _edge_limit(ts, vals, t0, s: GainSettings, method: str, H: float) -> GainEstimate:
    """Supremum approached at the search edge: plateau or algebraic extrapolation.

    With increasing, flattening values the limit is estimated by a cubic
    least-squares fit in ``u = 1 / (1 + t - min(t0, 0))`` on the last half
    of the window, evaluated at ``u = 0``.  Algebraic factors are
    polynomials in absolute time, so ``u`` is not shifted to ``t0``.
    """
    reach = ts[-1] - t0
    probes = [t0 + reach / 4, t0 + reach / 2, ts[-1]]
    f1, f2, f3 = (float(np.interp(p, ts, vals)) for p in probes)
    d1, d2 = f2 - f1, f3 - f2
    if abs(d2) <= 1e2 * s.quad.tol * abs(f3):
        return GainEstimate(float(np.max(vals)), float(ts[-1]), False, method, H)
    if d1 > 0 and 0 < d2 < d1:
        tail = ts >= t0 + reach / 2
        if np.count_nonzero(tail) >= 8:
            u = 1.0 / (1.0 + ts[tail] - min(t0, 0.0))
            coef = np.linalg.lstsq(np.vander(u, 4, increasing=True), vals[tail], rcond=None)[0]
            limit = float(coef[0])
        else:
            limit = f3 + d2 * d2 / (d1 - d2)
        return GainEstimate(max(limit, f3), float("inf"), False, method, H)
    raise GainError(
        f"supremum not attained within horizon {H:g}: profile still increasing on "
        f"[{probes[1]:.6g}, {probes[2]:.6g}] ({f2:.6g} -> {f3:.6g})")


def gain_estimate(kind: str, i: int, t0: float, sys: InterconnectedSystem, env: EnvelopeSet,
                  weights: WeightSet, settings: GainSettings = GainSettings()) -> GainEstimate:
    """One gain with its maximizer and evaluation method."""
    parts = gain_parts(kind, i, sys, env, weights)
    method = settings.method
    if method == "auto":
        method = "pulse" if _is_pulse_case(parts) else "quadrature"
    if method == "pulse":
        if not _is_pulse_case(parts):
            raise GainError("pulse method needs pulse-supported coupling blocks")
        build = lambda H, m: _PulseProfile(parts, t0, H, m, settings.step, sys.params)
    else:
        build = lambda H, m: _QuadratureProfile(parts, t0, H, m, settings.step)
    return _sup(build, float(t0), settings, method)


def integral_gain(kind: str, i: int, t0: float, sys: InterconnectedSystem, env: EnvelopeSet,
                  weights: WeightSet, settings: GainSettings = GainSettings()) -> float:
    """Value of ``pi_ii(t0)`` (``kind='ii'``) or ``pi_ji(t0)`` (``kind='ji'``), ``j = 3 - i``."""
    return gain_estimate(kind, i, t0, sys, env, weights, settings).value


# ---------------------------------------------------------------------------
# Gain matrix and the small-gain test
# ---------------------------------------------------------------------------

def spectral_radius_2x2(m) -> float:
    """Largest eigenvalue modulus of a real 2x2 matrix from its characteristic polynomial."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = (m[0, 0] - m[1, 1]) ** 2 + 4.0 * m[0, 1] * m[1, 0]
    if disc >= 0.0:
        r = np.sqrt(disc)
        return float(max(abs(tr + r), abs(tr - r)) / 2.0)
    return float(np.sqrt(det))


def trace_det_ok(m) -> bool:
    """``-1 + tr < det < 1``, equivalent to spectral radius below one for nonnegative 2x2."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return bool(-1.0 + tr < det < 1.0)


@dataclass
class GainMatrix:
    t0: float
    pi11: float
    pi12: float
    pi21: float
    pi22: float
    spectral_radius: float = field(init=False)
    small_gain_ok: bool = field(init=False)
    details: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.spectral_radius = spectral_radius_2x2(self.matrix)
        self.small_gain_ok = self.spectral_radius < 1.0

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.pi11, self.pi12], [self.pi21, self.pi22]])

    @property
    def trace(self) -> float:
        return self.pi11 + self.pi22

    @property
    def det(self) -> float:
        return self.pi11 * self.pi22 - self.pi12 * self.pi21

    @property
    def trace_det_ok(self) -> bool:
        return trace_det_ok(self.matrix)

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "pi11": self.pi11, "pi12": self.pi12, "pi21": self.pi21, "pi22": self.pi22,
            "matrix": self.matrix.tolist(),
            "spectral_radius": self.spectral_radius,
            "trace": self.trace,
            "det": self.det,
            "trace_det_ok": self.trace_det_ok,
            "small_gain_ok": self.small_gain_ok,
            "details": {k: v.to_dict() for k, v in self.details.items()},
        }

    @classmethod
    def from_matrix(cls, t0: float, m) -> "GainMatrix":
        m = np.asarray(m, dtype=float)
        return cls(float(t0), float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))


# slot -> (kind, subsystem index)
SLOTS = {"pi11": ("ii", 1), "pi12": ("ji", 2), "pi21": ("ji", 1), "pi22": ("ii", 2)}


def gain_matrix(t0: float, sys: InterconnectedSystem, env: EnvelopeSet, weights: WeightSet,
                settings: GainSettings = GainSettings()) -> GainMatrix:
    """Assemble ``Pi(t0)`` and evaluate the small-gain condition."""
    est = {slot: gain_estimate(kind, i, t0, sys, env, weights, settings)
           for slot, (kind, i) in SLOTS.items()}
    gm = GainMatrix(float(t0), *(max(est[s].value, 0.0) for s in SLOTS))
    gm.details = est
    return gm


# ---------------------------------------------------------------------------
# Limit t0 -> infinity
# ---------------------------------------------------------------------------

@dataclass
class LimitReport:
    t0_values: list
    matrices: list
    converged: np.ndarray       # per entry: successive differences shrink
    extrapolated: np.ndarray    # per entry: Aitken step applied

    @property
    def ok(self) -> bool:
        return bool(np.all(self.converged))

    def to_dict(self) -> dict:
        return {"t0_values": list(self.t0_values),
                "matrices": [np.asarray(m).tolist() for m in self.matrices],
                "converged": self.converged.tolist(),
                "extrapolated": self.extrapolated.tolist(),
                "ok": self.ok}


def _extrapolate(seq: np.ndarray, tol: float, t0s=None) -> tuple[float, bool, bool]:
    """Limit estimate of a sequence, convergence flag, and whether acceleration was used.

    Differences shrinking like ``1/t0`` select Richardson extrapolation in
    ``h = 1/t0`` through the last three values; otherwise one Aitken step.
    """
    d = np.diff(seq)
    last = float(seq[-1])
    scale = max(abs(last), 1.0)
    if abs(d[-1]) <= tol * scale:
        return last, True, False
    shrinking = bool(np.all(np.abs(d[1:]) <= np.abs(d[:-1]) * (1 + 1e-12)))
    if not shrinking:
        return last, False, False
    d1, d2 = d[-2], d[-1]
    if d1 == d2 or np.sign(d1) != np.sign(d2):
        return last, True, False
    if t0s is not None and min(t0s[-3:]) > 0:
        h = 1.0 / np.asarray(t0s[-3:], dtype=float)
        ratio_alg = (h[2] - h[1]) / (h[1] - h[0])
        if abs((d2 / d1) / ratio_alg - 1.0) < 0.25:
            y = np.asarray(seq[-3:], dtype=float)
            w = [h[1] * h[2] / ((h[0] - h[1]) * (h[0] - h[2])),
                 h[0] * h[2] / ((h[1] - h[0]) * (h[1] - h[2])),
                 h[0] * h[1] / ((h[2] - h[0]) * (h[2] - h[1]))]
            return float(np.dot(w, y)), True, True
    return last - d2 * d2 / (d2 - d1), True, True


def limit_gain_matrix(t0_sequence: Sequence[float], sys: InterconnectedSystem | None = None,
                      env: EnvelopeSet | None = None, weights: WeightSet | None = None,
                      settings: GainSettings = GainSettings(),
                      matrices: Sequence | None = None, tol: float = 1e-6):
    """Estimate ``lim_{t0 -> inf} Pi(t0)`` from a few increasing ``t0`` values.

    Each entry is extrapolated separately: the last value when its final
    increment is negligible, otherwise Richardson extrapolation in ``1/t0``
    when the differences decay algebraically and one Aitken step when they
    decay faster.  An entry is flagged as not converged when its successive
    differences grow.  Precomputed ``matrices`` skip the gain evaluation.

    Returns
    -------
    (numpy.ndarray, LimitReport)
    """
    t0s = [float(t) for t in t0_sequence]
    if len(t0s) < 3 or np.any(np.diff(t0s) <= 0):
        raise ValueError("need at least three increasing t0 values")
    if matrices is None:
        matrices = [gain_matrix(t, sys, env, weights, settings).matrix for t in t0s]
    mats = np.array([np.asarray(getattr(m, "matrix", m), dtype=float) for m in matrices])
    limit = np.zeros((2, 2))
    conv = np.zeros((2, 2), dtype=bool)
    aitken = np.zeros((2, 2), dtype=bool)
    for a in range(2):
        for b in range(2):
            v, c, x = _extrapolate(mats[:, a, b], tol, t0s)
            limit[a, b], conv[a, b], aitken[a, b] = max(v, 0.0), c, x
    return limit, LimitReport(t0s, list(mats), conv, aitken)
