"""Stability certificates from the integral small-gain condition.

For a certifying initial time ``t0`` the solution estimate is::

    ||x(t)|| <= B(t, t0) ||x0||
    B(t, t0) = 2 a_K sqrt(h(t0, t0) / phi(t)) exp(-int_{t0}^t q / (2 h(s, t0)) ds)

with ``q = min(q1, q2)`` and ``phi = min(phi1, phi2)``.  The verdict ladder
adds sampled evidence about ``phi`` growth, divergence of
``int q / h`` and boundedness of ``h(t0, t0)`` over initial times.  When
``Pi(t0)`` itself fails the small-gain test, the limit of ``Pi`` as
``t0 -> inf`` is used to find a later certifying initial time; that route
never yields more than asymptotic stability, because the constants then
depend on the initial time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .envelopes import EnvelopeSet, RunningGNorm, TailProfile, WeightSet, _vec
from .gains import GainError, GainMatrix, GainSettings, gain_matrix, limit_gain_matrix, \
    spectral_radius_2x2
from .lyapunov import HProfile
from .quadrature import DivergenceError, QuadSettings, TailIntegral, make_nodes
from .system import InterconnectedSystem, analysis_grid, check_wazewski

VERDICTS = ("inconclusive", "stable", "asymptotically_stable",
            "uniformly_asymptotically_stable")

SAMPLED_NOTE = ("sup over t0 of h(t0, t0) is checked only at the sampled initial times; "
                "this is sampled evidence, not a proof of uniformity")


@dataclass(frozen=True)
class CertifySettings:
    horizons: tuple = (10.0, 20.0, 40.0)
    uniform_offsets: tuple = (0.0, 1.0, 5.0, 20.0)
    envelope_span: float = 50.0
    step: float = 0.05
    growth_factor: float = 2.0
    divergence_threshold: float = 5.0
    search_max: float = 256.0
    search_resolution: float = 1e-2
    limit_offsets: tuple = (8.0, 16.0, 32.0, 64.0)
    wazewski_span: float = 50.0
    wazewski_step: float = 0.01
    gains: GainSettings = GainSettings()
    quad: QuadSettings = QuadSettings()


@dataclass
class Certificate:
    t0: float
    gains: GainMatrix | None
    times: np.ndarray
    envelope: np.ndarray
    verdict: str
    evidence: dict
    requested_t0: float = np.nan
    a_K: float = 1.0

    @property
    def certified(self) -> bool:
        return self.verdict != "inconclusive"

    def B(self, t):
        """Envelope coefficient at time(s) ``t`` (linear interpolation between samples)."""
        return np.interp(t, self.times, self.envelope)

    def scaled(self, c: float) -> "Certificate":
        """Copy with the envelope multiplied by ``c`` (harness self-tests)."""
        return replace(self, envelope=self.envelope * c)

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "requested_t0": self.requested_t0,
            "verdict": self.verdict,
            "a_K": self.a_K,
            "gains": None if self.gains is None else self.gains.to_dict(),
            "evidence": _jsonable(self.evidence),
            "envelope": [[float(t), float(b)] for t, b in zip(self.times, self.envelope)],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path_or_file, max_norm=None) -> None:
        """Rows ``t,B`` or ``t,B,max_norm`` with simulated maxima per sample."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["t", "B"] + ([] if max_norm is None else ["max_norm"]))
            for k, (t, b) in enumerate(zip(self.times, self.envelope)):
                row = [repr(float(t)), repr(float(b))]
                if max_norm is not None:
                    row.append(repr(float(max_norm[k])))
                w.writerow(row)
        finally:
            if own:
                fh.close()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


# ---------------------------------------------------------------------------
# Envelope B(t, t0)
# ---------------------------------------------------------------------------

class EnvelopeCurve:
    """``B(t, t0)`` with its ingredients sampled on one node set."""

    def __init__(self, sys: InterconnectedSystem, env: EnvelopeSet, weights: WeightSet,
                 gains: GainMatrix, T: float, step: float = 0.05,
                 quad: QuadSettings = QuadSettings(), a_K: float = 1.0,
                 hprofile: HProfile | None = None):
        t0 = gains.t0
        self.t0, self.a_K = t0, a_K
        self.hp = hprofile or HProfile(sys, env, weights, gains, T, step, quad)
        self.phi = {i: TailProfile(env, weights, i, "phi", t0, T, step, quad) for i in (1, 2)}
        q1, q2 = _vec(weights.fn("q", 1)), _vec(weights.fn("q", 2))
        self.q = lambda t: np.minimum(q1(t), q2(t))
        bps = sorted(set(sys.breakpoints(t0, T)) | set(env.breakpoints(t0, T))
                     | set(weights.breakpoints(t0, T)))
        self.nodes = make_nodes(t0, T, step, bps)
        self.rate = TailIntegral(lambda s: self.q(s) / (2.0 * self.hp.h(s)), self.nodes)
        self.h00 = float(self.hp.h(np.asarray(t0)))

    def phi_min(self, t):
        return np.minimum(self.phi[1](t), self.phi[2](t))

    def decay_integral(self, t):
        """``int_{t0}^t q / (2 h) ds``."""
        return self.rate.values[0] - self.rate(t)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return (2.0 * self.a_K * np.sqrt(self.h00 / self.phi_min(t))
                * np.exp(-self.decay_integral(t)))


def certificate_envelope(t: float, t0: float, sys: InterconnectedSystem, env: EnvelopeSet,
                         weights: WeightSet, gains: GainMatrix | None = None,
                         quad: QuadSettings = QuadSettings(), step: float = 0.05) -> float:
    """``B(t, t0)`` at a single time; ``gains`` defaults to ``Pi(t0)``."""
    if gains is None:
        gains = gain_matrix(t0, sys, env, weights)
    return float(EnvelopeCurve(sys, env, weights, gains, max(t, t0), step, quad)(t))


# ---------------------------------------------------------------------------
# Small-gain search and corollary data
# ---------------------------------------------------------------------------

def find_small_gain_t0(t0: float, sys, env, weights, settings: CertifySettings = CertifySettings()):
    """Earliest sampled ``t >= t0`` with ``r_sigma(Pi(t)) < 1``, or ``None``.

    Offsets ``0, 1, 2, 4, ...`` up to ``search_max`` are tried; after the
    first success the preceding gap is bisected to ``search_resolution``.
    """
    offsets = [0.0, 1.0]
    while offsets[-1] < settings.search_max:
        offsets.append(min(2 * offsets[-1], settings.search_max))
    prev = None
    for off in offsets:
        gm = gain_matrix(t0 + off, sys, env, weights, settings.gains)
        if gm.small_gain_ok:
            if prev is None:
                return gm
            lo, hi, best = prev, t0 + off, gm
            while hi - lo > settings.search_resolution:
                mid = 0.5 * (lo + hi)
                g_mid = gain_matrix(mid, sys, env, weights, settings.gains)
                if g_mid.small_gain_ok:
                    hi, best = mid, g_mid
                else:
                    lo = mid
            return best
        prev = t0 + off
    return None


@dataclass
class CorollaryData:
    t0_star: float
    times: np.ndarray
    w: np.ndarray
    coupling_integral: float
    divergence_horizons: list
    divergence_partial: list
    limit_matrix: np.ndarray | None
    limit_radius: float
    limit_converged: bool
    applicable: bool
    stable: bool
    asymptotic: bool
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable({
            "t0_star": self.t0_star,
            "coupling_integral": self.coupling_integral,
            "divergence_horizons": self.divergence_horizons,
            "divergence_partial": self.divergence_partial,
            "limit_matrix": None if self.limit_matrix is None else self.limit_matrix,
            "limit_radius": self.limit_radius,
            "limit_converged": self.limit_converged,
            "applicable": self.applicable,
            "stable": self.stable,
            "asymptotic": self.asymptotic,
            "w_samples": [[float(t), float(v)] for t, v in
                          zip(self.times[::20], self.w[::20])],
            "notes": self.notes,
        })


def _diverges(partials, threshold: float) -> bool:
    """Partial integrals at geometric horizons: large and not flattening."""
    s1, s2, s3 = partials[-3:]
    d1, d2 = s2 - s1, s3 - s2
    return bool(s3 >= threshold and d2 > 0 and d2 >= 0.9 * d1)


def corollary_check(sys: InterconnectedSystem, env: EnvelopeSet, weights: WeightSet,
                    t0_star: float, T: float | None = None,
                    settings: CertifySettings = CertifySettings(),
                    limit: tuple | None = None) -> CorollaryData:
    """Conditions of the limit-matrix route evaluated from ``t0_star``.

    ``w(t) = M1/om1 + M2/om2 + M1/om2 + M2/om1`` with ``M_i`` the running
    weighted norm of ``g_i``.  Reports the coupling integral
    ``int_{t0*}^inf a1 a2 w (||A12|| + ||A21||)``, partial values of the
    divergence integral at ``t0* + horizons``, and the limit matrix.
    """
    hz = list(settings.horizons)
    if T is None:
        T = t0_star + max(hz)
    notes = []
    quad, step = settings.quad, settings.step
    if limit is None:
        try:
            limit = limit_gain_matrix([t0_star + o for o in settings.limit_offsets],
                                      sys, env, weights, settings.gains)
        except GainError as exc:
            limit = (None, None)
            notes.append(f"limit matrix unavailable: {exc}")
    L, rep = limit
    radius = spectral_radius_2x2(L) if L is not None else np.inf
    converged = bool(rep is not None and rep.ok)
    applicable = converged and radius < 1.0
    if L is not None and not converged:
        notes.append("limit matrix entries did not converge")
    if L is not None and radius >= 1.0:
        notes.append(f"limit matrix has spectral radius {radius:.6g} >= 1")

    # tail integrals need a margin beyond T
    T_end = T + 32.0
    gn = RunningGNorm(env, weights, t0_star, T_end, step, quad)
    om1, om2 = _vec(weights.fn("omega", 1)), _vec(weights.fn("omega", 2))
    al1, al2 = _vec(env.fn("alpha", 1)), _vec(env.fn("alpha", 2))
    be1, be2 = _vec(env.fn("beta", 1)), _vec(env.fn("beta", 2))
    ncoup = lambda s: (sys.block_norms("A12", np.ravel(s)).reshape(np.shape(s))
                       + sys.block_norms("A21", np.ravel(s)).reshape(np.shape(s)))

    def w(t):
        m1, m2 = gn(1, t), gn(2, t)
        return m1 / om1(t) + m2 / om2(t) + m1 / om2(t) + m2 / om1(t)

    bps = sorted(set(sys.breakpoints(t0_star, T_end)) | set(env.breakpoints(t0_star, T_end))
                 | set(weights.breakpoints(t0_star, T_end)))
    nodes = make_nodes(t0_star, T_end, step, bps)
    coup_w = TailIntegral(lambda s: al1(s) * al2(s) * w(s) * ncoup(s), nodes)
    coup = TailIntegral(lambda s: al1(s) * al2(s) * ncoup(s), nodes)
    q1, q2 = _vec(weights.fn("q", 1)), _vec(weights.fn("q", 2))

    def integrand(t):
        return np.minimum(q1(t), q2(t)) / (w(t) * (1.0 + be1(t) * be2(t) * coup(t)))

    div = TailIntegral(integrand, nodes)
    partial = [float(div.values[0] - div(t0_star + h)) for h in hz]
    coupling_integral = float(coup_w.values[0])
    phi_vals = np.minimum(TailProfile(env, weights, 1, "phi", t0_star, T, step, quad)(nodes[nodes <= T]),
                          TailProfile(env, weights, 2, "phi", t0_star, T, step, quad)(nodes[nodes <= T]))
    stable = applicable and np.isfinite(coupling_integral) and float(phi_vals.min()) > 0
    phi_grow = _phi_grows(env, weights, t0_star, hz, settings)
    asym = stable and (phi_grow or _diverges(partial, settings.divergence_threshold))
    ts = nodes[nodes <= T]
    return CorollaryData(float(t0_star), ts, w(ts), coupling_integral, hz, partial,
                         L, float(radius), converged, applicable, bool(stable), bool(asym),
                         notes)


def _phi_grows(env, weights, t0, horizons, settings: CertifySettings) -> bool:
    from .envelopes import phi
    vals = [min(phi(env, weights, 1, t0 + h, settings.quad),
                phi(env, weights, 2, t0 + h, settings.quad)) for h in horizons]
    return bool(vals[-1] >= settings.growth_factor * vals[0] and vals[-1] > vals[-2] > vals[0])


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def _inconclusive(t0, reason: str, gains=None, **extra) -> Certificate:
    ev = {"reason": reason, **extra}
    return Certificate(float(t0), gains, np.array([float(t0)]), np.array([np.inf]),
                       "inconclusive", ev, float(t0))


def classify(sys: InterconnectedSystem, env: EnvelopeSet, weights: WeightSet,
             t0: float | None = None, settings: CertifySettings = CertifySettings(),
             with_corollary: bool = True) -> Certificate:
    """Verdict ladder with the evidence that produced it.

    * inconclusive: not a Wazewski system, or no certifying initial time;
    * stable: small gain at the certifying ``t0``, ``inf phi > 0`` on the
      sampled span and ``h(t0, t0)`` finite;
    * asymptotically_stable: additionally ``phi`` grows by ``growth_factor``
      across the horizons, or ``int q / h`` diverges;
    * uniformly_asymptotically_stable: additionally ``h(t, t)`` stays
      bounded at the sampled initial times (direct route only).
    """
    t0 = sys.tau if t0 is None else float(t0)
    hz = list(settings.horizons)
    wz = check_wazewski(sys, analysis_grid(sys, t0, t0 + settings.wazewski_span,
                                           settings.wazewski_step))
    if not wz.ok:
        return _inconclusive(t0, "not a Wazewski system on the sampled grid",
                             wazewski=wz.to_dict())
    try:
        gm = gain_matrix(t0, sys, env, weights, settings.gains)
    except (GainError, DivergenceError) as exc:
        return _inconclusive(t0, f"gains unavailable: {exc}")
    evidence: dict = {"wazewski": wz.to_dict(), "gains_at_requested_t0": gm.to_dict()}
    route = "direct"
    limit = None
    if not gm.small_gain_ok:
        try:
            limit = limit_gain_matrix([t0 + o for o in settings.limit_offsets], sys, env,
                                      weights, settings.gains)
        except GainError as exc:
            return _inconclusive(t0, f"small-gain fails and limit unavailable: {exc}", gm,
                                 **evidence)
        L, rep = limit
        r_lim = spectral_radius_2x2(L)
        evidence["limit_matrix"] = {"matrix": L, "spectral_radius": r_lim, "report": rep}
        if not rep.ok or r_lim >= 1.0:
            return _inconclusive(
                t0, f"spectral radius {gm.spectral_radius:.6g} >= 1 at t0 and limit matrix "
                f"radius {r_lim:.6g}" + ("" if rep.ok else " (not converged)"), gm, **evidence)
        found = find_small_gain_t0(t0, sys, env, weights, settings)
        if found is None:
            return _inconclusive(t0, "no certifying initial time within the search range",
                                 gm, **evidence)
        gm, route = found, "limit"
    t_c = gm.t0
    evidence["route"] = route
    evidence["certifying_t0"] = t_c
    T = t_c + max(settings.envelope_span, max(hz))
    try:
        curve = EnvelopeCurve(sys, env, weights, gm, T, settings.step, settings.quad)
    except (DivergenceError, GainError, FloatingPointError) as exc:
        return _inconclusive(t_c, f"h bounds undefined: {exc}", gm, **evidence)
    nodes = curve.nodes
    phi_vals = curve.phi_min(nodes)
    h00 = curve.h00
    evidence["h_t0_t0"] = h00
    evidence["inf_phi_sampled"] = float(phi_vals.min())
    stable = bool(np.isfinite(h00) and phi_vals.min() > 0)
    if not stable:
        return Certificate(t_c, gm, nodes, curve(nodes), "inconclusive",
                           {**evidence, "reason": "inf phi not positive or h(t0,t0) infinite"},
                           t0)
    verdict = "stable"
    phi_h = [float(curve.phi_min(np.asarray(t_c + h))) for h in hz]
    grows = bool(phi_h[-1] >= settings.growth_factor * phi_h[0] and phi_h[-1] > phi_h[-2] > phi_h[0])
    stab = [float(2.0 * curve.decay_integral(t_c + h)) for h in hz]
    diverges = _diverges(stab, settings.divergence_threshold)
    evidence["phi_at_horizons"] = dict(zip(hz, phi_h))
    evidence["stabC_partial"] = dict(zip(hz, stab))
    fired = []
    if grows:
        fired.append("phi(t)->inf (sampled growth)")
    if diverges:
        fired.append("int q/h -> inf (sampled divergence)")
    if fired:
        verdict = "asymptotically_stable"
    evidence["conditions"] = fired

    if with_corollary:
        try:
            cd = corollary_check(sys, env, weights, t_c, None, settings, limit)
            evidence["corollary"] = cd.to_dict()
            if route == "limit" and verdict == "stable" and cd.asymptotic:
                verdict = "asymptotically_stable"
                fired.append("corollary divergence integral")
        except (GainError, DivergenceError) as exc:
            evidence["corollary"] = {"error": str(exc)}

    if verdict == "asymptotically_stable" and route == "direct":
        uni = _uniform_evidence(sys, env, weights, sys.tau, settings)
        evidence["uniform"] = uni
        if uni["bounded"]:
            verdict = "uniformly_asymptotically_stable"
    if route == "limit":
        evidence["note"] = "limit-matrix route: verdict capped at asymptotically_stable"
    if verdict == "asymptotically_stable":
        evidence["uniformity"] = "non-uniform evidence"
    return Certificate(t_c, gm, nodes, curve(nodes), verdict, evidence, t0)


def _uniform_evidence(sys, env, weights, tau: float, settings: CertifySettings) -> dict:
    samples = []
    for off in settings.uniform_offsets:
        s = tau + off
        try:
            gm = gain_matrix(s, sys, env, weights, settings.gains)
            if not gm.small_gain_ok:
                samples.append({"t0": s, "h": None, "small_gain_ok": False})
                continue
            h = float(HProfile(sys, env, weights, gm, s, settings.step, settings.quad).h(np.asarray(s)))
            samples.append({"t0": s, "h": h, "small_gain_ok": True})
        except (GainError, DivergenceError) as exc:
            samples.append({"t0": s, "h": None, "error": str(exc)})
    hs = [x["h"] for x in samples]
    ok = all(h is not None and np.isfinite(h) for h in hs)
    bounded = bool(ok and max(hs[-2:]) <= settings.growth_factor * max(hs[:2]))
    return {"samples": samples, "bounded": bounded, "note": SAMPLED_NOTE}
