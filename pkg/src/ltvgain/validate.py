"""Monte-Carlo cross-checks of certificates against direct simulation.

Every check draws initial states from per-trial child seeds of one
``SeedSequence``, so a report depends only on the seed and not on how the
trials are batched.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .certify import Certificate, _jsonable
from .envelopes import WeightSet, _vec
from .flow import DEFAULT_RTOL, simulate, simulate_batch
from .lyapunov import ConvergenceError, LyapunovGrid, SmallGainError, evaluate_v_along, \
    picard_solve
from .system import InterconnectedSystem, analysis_grid, check_wazewski

EPS_POS = 1e-9
BOUND_TOL = 1e-9
DV_TOL = 1e-3


def _trial_states(seed: int, n_trials: int, n: int, cone: bool, stream: int) -> np.ndarray:
    """Unit vectors, one child seed per trial; absolute values for cone states."""
    children = np.random.SeedSequence([seed, stream]).spawn(n_trials)
    X = np.empty((n_trials, n))
    for k, child in enumerate(children):
        x = np.random.default_rng(child).standard_normal(n)
        if cone:
            x = np.abs(x)
        X[k] = x / np.linalg.norm(x)
    return X


@dataclass
class Offender:
    trial: int
    kind: str
    x0: np.ndarray
    t: float
    norm: float
    bound: float
    violation: float


@dataclass
class DominanceResult:
    trials: int
    max_violation: float
    positivity_min: float
    offenders: list
    T: float


def dominance_check(sys: InterconnectedSystem, cert: Certificate, n_trials: int = 100,
                    T: float = 50.0, seed: int = 0, general: bool = True,
                    tol: float = DEFAULT_RTOL, worst: int = 10) -> DominanceResult:
    """Largest ``||x(t)|| - B(t, t0) ||x0||`` over simulated trajectories.

    Cone initial states are normalized absolute Gaussians; with ``general``
    the same number of unrestricted unit vectors is added.  Samples are the
    certificate's own envelope nodes inside ``[t0, t0 + T]``.
    """
    if not cert.certified:
        raise ValueError("dominance needs a certified verdict")
    t0 = cert.t0
    mask = cert.times <= t0 + T + 1e-12
    ts, B = cert.times[mask], cert.envelope[mask]
    kinds = [("cone", _trial_states(seed, n_trials, sys.n, True, 0))]
    if general:
        kinds.append(("general", _trial_states(seed, n_trials, sys.n, False, 1)))
    max_v, pos_min = -np.inf, np.inf
    offenders = []
    for kind, X0 in kinds:
        Y = simulate_batch(sys, t0, X0, ts[-1], ts, tol=tol)
        norms = np.linalg.norm(Y, axis=2)
        viol = norms - B[None, :] * np.linalg.norm(X0, axis=1)[:, None]
        max_v = max(max_v, float(viol.max()))
        if kind == "cone":
            pos_min = float(Y.min())
        for k in range(len(X0)):
            j = int(np.argmax(viol[k]))
            offenders.append(Offender(k, kind, X0[k], float(ts[j]), float(norms[k, j]),
                                      float(B[j]), float(viol[k, j])))
    offenders.sort(key=lambda o: -o.violation)
    return DominanceResult(len(kinds) * n_trials, max_v, pos_min, offenders[:worst],
                           float(ts[-1] - t0))


@dataclass
class MonotonicityResult:
    pairs: int
    failures: int
    worst_gap: float
    skipped: bool = False
    note: str = ""


def monotonicity_check(sys: InterconnectedSystem, t0: float, T: float, pairs=None,
                       n_pairs: int = 50, seed: int = 0, eps: float = EPS_POS,
                       tol: float = DEFAULT_RTOL, step: float = 0.05) -> MonotonicityResult:
    """Count ordered pairs ``x0 <= y0`` whose trajectories lose the order.

    ``pairs`` is an optional ``(m, 2, n)`` array of ``(x0, y0)``; otherwise
    random pairs ``y0 = x0 + d`` with ``x0, d`` in the orthant are drawn.
    Non-Wazewski systems are skipped with a note.
    """
    wz = check_wazewski(sys, analysis_grid(sys, t0, T, 0.01))
    if not wz.ok:
        return MonotonicityResult(0, 0, 0.0, True,
                                  "skipped: not a Wazewski system, order is not preserved")
    if pairs is None:
        ss = np.random.SeedSequence([seed, 2]).spawn(n_pairs)
        pairs = np.empty((n_pairs, 2, sys.n))
        for k, child in enumerate(ss):
            rng = np.random.default_rng(child)
            x = np.abs(rng.standard_normal(sys.n))
            pairs[k] = (x, x + np.abs(rng.standard_normal(sys.n)))
    pairs = np.asarray(pairs, dtype=float)
    m = len(pairs)
    if np.any(pairs[:, 0] > pairs[:, 1]):
        raise ValueError("pairs must satisfy x0 <= y0 componentwise")
    n = max(1, int(np.ceil((T - t0) / step)))
    ts = np.unique(np.concatenate([np.linspace(t0, T, n + 1), sys.breakpoints(t0, T)]))
    Y = simulate_batch(sys, t0, pairs.reshape(2 * m, sys.n), T, ts, tol=tol).reshape(
        m, 2, ts.size, sys.n)
    gap = (Y[:, 0] - Y[:, 1]).max(axis=(1, 2))
    return MonotonicityResult(m, int(np.sum(gap > eps)), float(gap.max()))


def dv_check(sys: InterconnectedSystem, P: LyapunovGrid, trajectory, weights: WeightSet,
             h: float = 1e-4) -> float:
    """Largest pointwise relative error between ``dv/dt`` and ``-q1|x1|^2 - q2|x2|^2``.

    ``dv/dt`` at each interior sample time is a central difference of
    ``v(t, x(t))`` with half-width ``h``, using the trajectory's dense
    output when present and the neighbouring samples otherwise.  Stencils
    that straddle a breakpoint are dropped; points where both sides vanish
    contribute zero.
    """
    ts = np.asarray(trajectory.t, dtype=float)
    X = np.asarray(trajectory.x, dtype=float)
    inside = (ts >= P.t0) & (ts <= P.T_max)
    ts, X = ts[inside], X[inside]
    if ts.size < 3:
        raise ValueError("trajectory has fewer than three samples inside the grid")
    n1 = P.n1
    tm, Xm = ts[1:-1], X[1:-1]
    if getattr(trajectory, "dense", None) is not None:
        lo, hi = tm - h, tm + h
        v_lo = evaluate_v_along(P, lo, trajectory(lo).T, n1)
        v_hi = evaluate_v_along(P, hi, trajectory(hi).T, n1)
        dv = (v_hi - v_lo) / (2 * h)
    else:
        lo, hi = ts[:-2], ts[2:]
        v = evaluate_v_along(P, ts, X, n1)
        h1, h2 = tm - lo, hi - tm
        dv = (-h2 / (h1 * (h1 + h2)) * v[:-2] + (h2 - h1) / (h1 * h2) * v[1:-1]
              + h1 / (h2 * (h1 + h2)) * v[2:])
    q1, q2 = _vec(weights.fn("q", 1)), _vec(weights.fn("q", 2))
    rhs = -q1(tm) * np.sum(Xm[:, :n1] ** 2, axis=1) - q2(tm) * np.sum(Xm[:, n1:] ** 2, axis=1)
    cuts = sorted(set(sys.breakpoints(P.t0, P.T_max)) | set(P.breakpoints))
    keep = np.ones(tm.size, dtype=bool)
    for c in cuts:
        keep &= ~((lo <= c) & (c <= hi))
    err = np.abs(dv - rhs)[keep]
    scale = np.abs(rhs)[keep]
    rel = np.where(scale > 0, err / np.where(scale > 0, scale, 1.0),
                   np.where(err > 0, np.inf, 0.0))
    return float(rel.max()) if rel.size else 0.0


@dataclass
class ValidationReport:
    trials: int
    max_bound_violation: float
    positivity_min: float
    monotonicity_failures: int
    dv_max_rel_error: float
    seed: int
    t0: float = np.nan
    T: float = np.nan
    notes: list = field(default_factory=list)
    offenders: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_bound_violation <= BOUND_TOL and self.positivity_min >= -EPS_POS
                    and self.monotonicity_failures == 0 and self.dv_max_rel_error <= DV_TOL)

    def to_dict(self) -> dict:
        return _jsonable({
            "trials": self.trials,
            "max_bound_violation": self.max_bound_violation,
            "positivity_min": self.positivity_min,
            "monotonicity_failures": self.monotonicity_failures,
            "dv_max_rel_error": self.dv_max_rel_error,
            "pass": self.passed,
            "seed": self.seed,
            "t0": self.t0,
            "T": self.T,
            "notes": self.notes,
        })

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def offenders_csv(self, path_or_file) -> None:
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\r\n")
            n = len(self.offenders[0].x0) if self.offenders else 0
            w.writerow(["trial", "kind"] + [f"x0_{k + 1}" for k in range(n)]
                       + ["t", "norm", "bound", "violation"])
            for o in self.offenders:
                w.writerow([o.trial, o.kind] + [repr(float(v)) for v in o.x0]
                           + [repr(o.t), repr(o.norm), repr(o.bound), repr(o.violation)])
        finally:
            if own:
                fh.close()


def validate(sys: InterconnectedSystem, env, weights: WeightSet, cert: Certificate,
             n_trials: int = 100, T: float = 50.0, seed: int = 0, P: LyapunovGrid | None = None,
             dv_span: float = 10.0) -> ValidationReport:
    """Run dominance, positivity, monotonicity and ``dv/dt`` checks for ``cert``."""
    notes = []
    dom = dominance_check(sys, cert, n_trials, T, seed)
    mono = monotonicity_check(sys, cert.t0, cert.t0 + T, seed=seed)
    if mono.skipped:
        notes.append(mono.note)
    dv_err = np.nan
    if P is None:
        try:
            P = picard_solve(sys, env, weights, cert.t0, cert.t0 + dv_span, gains=cert.gains)
        except (SmallGainError, ConvergenceError) as exc:
            notes.append(f"dv check skipped: {exc}")
    if P is not None:
        tr = simulate(sys, P.t0, np.ones(sys.n), P.T_max)
        dv_err = dv_check(sys, P, tr, weights)
    return ValidationReport(dom.trials, dom.max_violation, dom.positivity_min, mono.failures,
                            dv_err, seed, cert.t0, dom.T, notes, dom.offenders)


def simulated_max_norm(sys: InterconnectedSystem, cert: Certificate, n_trials: int = 100,
                       seed: int = 0, tol: float = DEFAULT_RTOL) -> np.ndarray:
    """Largest ``||x(t)||`` over unit cone initial states at each envelope node."""
    X0 = _trial_states(seed, n_trials, sys.n, True, 0)
    Y = simulate_batch(sys, cert.t0, X0, cert.times[-1], cert.times, tol=tol)
    return np.linalg.norm(Y, axis=2).max(axis=0)
