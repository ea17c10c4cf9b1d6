"""Evolution operators and trajectories with breakpoint-aware stepping."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .system import InterconnectedSystem

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_METHOD = "RK45"


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (at t={t:g})")
        self.t = t


class PiecewiseSolution:
    """Dense output assembled from integrations between breakpoints.

    Segments are stored in increasing time order.  At an interior cut the
    right-hand segment is used, so the solution is right-continuous in the
    derivative like the coefficients themselves.
    """

    def __init__(self, segments: list[tuple[float, float, Callable]]):
        segs = sorted(((min(a, b), max(a, b), s) for a, b, s in segments), key=lambda x: x[0])
        self.segments = segs
        self.lo = np.array([s[0] for s in segs])
        self.hi = np.array([s[1] for s in segs])
        self._lo = self.lo.tolist()

    @property
    def t_min(self) -> float:
        return float(self.lo[0])

    @property
    def t_max(self) -> float:
        return float(self.hi[-1])

    def _index(self, t):
        k = np.searchsorted(self.lo, t, side="right") - 1
        return np.clip(k, 0, len(self.segments) - 1)

    def __call__(self, t):
        if np.ndim(t) == 0:
            t = float(t)
            if t < self.t_min - 1e-12 * max(1, abs(t)) or t > self.t_max + 1e-12 * max(1, abs(t)):
                raise ValueError(f"t={t} outside solution span [{self.t_min}, {self.t_max}]")
            k = min(max(bisect.bisect_right(self._lo, t) - 1, 0), len(self.segments) - 1)
            return self.segments[k][2](t)
        t = np.asarray(t, dtype=float)
        idx = self._index(t)
        out = None
        for k in np.unique(idx):
            mask = idx == k
            vals = self.segments[k][2](t[mask])
            if out is None:
                out = np.empty(vals.shape[:-1] + (t.size,))
            out[..., mask] = vals
        return out


def _cuts_between(a: float, b: float, points: Sequence[float]) -> list[float]:
    lo, hi = min(a, b), max(a, b)
    eps = 1e-12 * max(1.0, abs(lo), abs(hi))
    inner = [p for p in points if lo + eps < p < hi - eps]
    return sorted(inner, reverse=bool(b < a))


def integrate_piecewise(rhs, t_start: float, t_end: float, y0, cuts: Sequence[float] = (),
                        rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                        method: str = DEFAULT_METHOD, dense: bool = True):
    """Integrate ``y' = rhs(t, y)`` from ``t_start`` to ``t_end`` restarting at ``cuts``.

    Works in either time direction.  Returns ``(y_end, PiecewiseSolution | None)``.
    """
    y = np.asarray(y0, dtype=float).copy()
    if t_start == t_end:
        const = y.copy()
        sol = PiecewiseSolution([(t_start, t_end, lambda t, c=const: (
            c if np.ndim(t) == 0 else np.repeat(c[:, None], np.size(t), axis=1)))])
        return y, sol if dense else None
    knots = [t_start] + _cuts_between(t_start, t_end, cuts) + [t_end]
    segments = []
    for a, b in zip(knots[:-1], knots[1:]):
        if a == b:
            continue
        res = solve_ivp(rhs, (a, b), y, method=method, rtol=rtol, atol=atol,
                        dense_output=dense)
        if res.status != 0:
            raise IntegrationError(res.message, float(res.t[-1]))
        y = res.y[:, -1].copy()
        if not np.all(np.isfinite(y)):
            raise IntegrationError("non-finite state", b)
        if dense:
            segments.append((a, b, res.sol))
    return y, (PiecewiseSolution(segments) if dense else None)


# ---------------------------------------------------------------------------
# Evolution operators
# ---------------------------------------------------------------------------

@dataclass
class EvolutionOperator:
    block: str
    s: float
    t: float
    matrix: np.ndarray


_BLOCK_NAMES = {"full": None, 1: "A11", 2: "A22", "1": "A11", "2": "A22",
                "sub1": "A11", "sub2": "A22"}


def _matrix_fn(sys: InterconnectedSystem, block):
    name = _BLOCK_NAMES[block]
    if name is None:
        return sys.A, sys.n, sys.breakpoints
    dim = sys.n1 if name == "A11" else sys.n2
    return (lambda t: sys.block_at(name, t), dim,
            lambda a, b: sys.breakpoints(a, b, blocks=(name,)))


def evolution(sys: InterconnectedSystem, block="full", s: float = 0.0, t: float = 0.0,
              tol: float = DEFAULT_RTOL, atol: float | None = None,
              method: str = DEFAULT_METHOD) -> EvolutionOperator:
    """Evolution operator from time ``s`` to time ``t`` of one block.

    ``block`` is ``"full"`` or ``1`` / ``2`` for the decoupled diagonal
    subsystems.  Columns are integrated as one stacked system, forward or
    backward, restarting at every coefficient breakpoint between ``s`` and
    ``t``.
    """
    Afn, dim, bp = _matrix_fn(sys, block)
    if s == t:
        return EvolutionOperator(str(block), s, t, np.eye(dim))

    def rhs(tt, y):
        return (Afn(tt) @ y.reshape(dim, dim)).ravel()

    cuts = bp(min(s, t), max(s, t))
    y, _ = integrate_piecewise(rhs, s, t, np.eye(dim).ravel(), cuts, rtol=tol,
                               atol=tol * 1e-3 if atol is None else atol,
                               method=method, dense=False)
    return EvolutionOperator(str(block), s, t, y.reshape(dim, dim))


def transition_table(sys: InterconnectedSystem, block, times, tol: float = DEFAULT_RTOL,
                     method: str = DEFAULT_METHOD) -> np.ndarray:
    """Operators ``Omega(times[k+1], times[k])`` for consecutive sample times."""
    times = np.asarray(times, dtype=float)
    mats = [evolution(sys, block, a, b, tol=tol, method=method).matrix
            for a, b in zip(times[:-1], times[1:])]
    return np.array(mats)


def operator_norm(M) -> float:
    """Spectral norm (largest singular value)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    t0: float
    t: np.ndarray
    x: np.ndarray
    n1: int
    n2: int
    dense: PiecewiseSolution | None = field(default=None, repr=False)
    breakpoints: list = field(default_factory=list, repr=False)

    def __call__(self, t):
        if self.dense is None:
            raise ValueError("trajectory was simulated without dense output")
        return self.dense(t)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def header(self) -> list[str]:
        return (["t"] + [f"x1_{k + 1}" for k in range(self.n1)]
                + [f"x2_{k + 1}" for k in range(self.n2)])

    def to_csv(self, path_or_file) -> None:
        """Write ``t,x1_1,...,x2_n2`` rows."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(self.header())
            for tk, xk in zip(self.t, self.x):
                w.writerow([repr(float(tk))] + [repr(float(v)) for v in xk])
        finally:
            if own:
                fh.close()


def simulate(sys: InterconnectedSystem, t0: float, x0, T: float,
             tol: float = DEFAULT_RTOL, atol: float | None = None, samples=None,
             method: str = DEFAULT_METHOD) -> Trajectory:
    """Solve ``x' = A(t) x`` on ``[t0, T]`` from ``x(t0) = x0``.

    ``samples`` fixes the output times (default: 0.01 spacing plus every
    breakpoint).  Dense output is kept on the trajectory.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != sys.n:
        raise ValueError(f"x0 has {x0.size} components, system has {sys.n}")
    if T < t0:
        raise ValueError("need T >= t0")
    cuts = sys.breakpoints(t0, T)

    def rhs(tt, y):
        return sys.A(tt) @ y

    if not np.any(x0):
        dense = PiecewiseSolution([(t0, T, lambda t, n=sys.n: (
            np.zeros(n) if np.ndim(t) == 0 else np.zeros((n, np.size(t)))))])
    else:
        _, dense = integrate_piecewise(rhs, t0, T, x0, cuts, rtol=tol,
                                       atol=tol * 1e-3 if atol is None else atol,
                                       method=method)
    if samples is None:
        n = max(1, int(np.ceil((T - t0) / 0.01 - 1e-9)))
        samples = np.unique(np.concatenate([np.linspace(t0, T, n + 1), cuts]))
    samples = np.asarray(samples, dtype=float)
    xs = dense(samples).T if samples.size else np.empty((0, sys.n))
    if samples.size and samples[0] == t0:
        xs[0] = x0
    return Trajectory(t0, samples, xs, sys.n1, sys.n2, dense, list(cuts))


def simulate_batch(sys: InterconnectedSystem, t0: float, X0, T: float, samples,
                   tol: float = DEFAULT_RTOL, atol: float | None = None,
                   method: str = DEFAULT_METHOD) -> np.ndarray:
    """Trajectories from every row of ``X0`` integrated as one stacked system.

    Returns states of shape ``(len(X0), len(samples), n)``.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    m, n = X0.shape
    if n != sys.n:
        raise ValueError(f"initial states have {n} components, system has {sys.n}")
    samples = np.asarray(samples, dtype=float)
    if m == 0:
        return np.empty((0, samples.size, n))

    def rhs(tt, y):
        return (sys.A(tt) @ y.reshape(n, m)).ravel()

    cuts = sys.breakpoints(t0, T)
    _, dense = integrate_piecewise(rhs, t0, T, X0.T.ravel(), cuts, rtol=tol,
                                   atol=tol * 1e-3 if atol is None else atol, method=method)
    Y = dense(samples).reshape(n, m, samples.size)
    out = np.transpose(Y, (1, 2, 0)).copy()
    out[:, samples == t0, :] = X0[:, None, :]
    return out
