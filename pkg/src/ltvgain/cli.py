"""Command-line front end.

Exit codes: 0 pass or certified, 1 negative or inconclusive analysis,
2 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path

import numpy as np

from . import __version__
from .certify import Certificate, _jsonable, classify
from .config import Config, ConfigError, load_config
from .envelopes import validate_envelopes
from .flow import simulate
from .gains import GainError, gain_matrix
from .system import analysis_grid, check_wazewski
from .validate import simulated_max_norm, validate

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _dump(obj, path: Path | None) -> str:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    return text


def _outdir(args) -> Path | None:
    if not getattr(args, "out", None):
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tag(t0: float) -> str:
    return f"{t0:g}".replace("-", "m").replace(".", "p")


def _verdict_label(cert: Certificate) -> str:
    if cert.verdict == "asymptotically_stable":
        return "asymptotically_stable (non-uniform evidence)"
    if cert.verdict == "uniformly_asymptotically_stable":
        return "uniformly_asymptotically_stable (sampled evidence)"
    return cert.verdict


# ---------------------------------------------------------------------------
# Analyses shared by the subcommands
# ---------------------------------------------------------------------------

def run_check(cfg: Config) -> dict:
    a, t0 = cfg.analysis, cfg.analysis.t0[0]
    wz = check_wazewski(cfg.system, analysis_grid(cfg.system, t0, t0 + a.T_max, 0.01))
    span = min(a.T_max, 10.0)
    env = validate_envelopes(cfg.system, cfg.envelopes,
                             np.linspace(t0, t0 + span, a.envelope_points))
    return {"wazewski": wz.to_dict(), "envelopes": env.to_dict(), "ok": wz.ok and env.ok}


def run_gains(cfg: Config, t0s) -> list[dict]:
    rows = []
    for t0 in t0s:
        try:
            gm = gain_matrix(t0, cfg.system, cfg.envelopes, cfg.weights,
                             cfg.analysis.gain_settings)
            rows.append(gm.to_dict())
        except GainError as exc:
            rows.append({"t0": t0, "error": str(exc), "small_gain_ok": False})
    return rows


def run_certify(cfg: Config, t0: float) -> Certificate:
    return classify(cfg.system, cfg.envelopes, cfg.weights, t0,
                    cfg.analysis.certify_settings)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_check(cfg: Config, args) -> int:
    res = run_check(cfg)
    wz, env = res["wazewski"], res["envelopes"]
    print(f"wazewski: {'PASS' if wz['ok'] else 'FAIL'}")
    if not wz["ok"]:
        v = wz["first_violation"]
        print(f"  first violation: block {v['block']} entry {tuple(v['entry'])} "
              f"at t={v['t']:.6g} value {v['value']:.6g}")
    print(f"envelopes: {'PASS' if env['ok'] else 'FAIL'}")
    for c in env["checks"]:
        if c["violations"]:
            print(f"  subsystem {c['subsystem']} {c['direction']}: {c['violations']} violations, "
                  f"worst ratio {c['worst_ratio']:.6g}")
    out = _outdir(args)
    if out:
        _dump(res, out / "check.json")
    return EXIT_OK if res["ok"] else EXIT_NEGATIVE


def cmd_gains(cfg: Config, args) -> int:
    rows = run_gains(cfg, args.t0 or cfg.analysis.t0)
    print(f"{'t0':>10} {'pi11':>12} {'pi12':>12} {'pi21':>12} {'pi22':>12} "
          f"{'r_sigma':>12} {'tr/det':>7} result")
    ok = True
    for r in rows:
        if "error" in r:
            ok = False
            print(f"{r['t0']:>10.6g} error: {r['error']} FAIL")
            continue
        ok &= r["small_gain_ok"]
        print(f"{r['t0']:>10.6g} {r['pi11']:>12.6g} {r['pi12']:>12.6g} {r['pi21']:>12.6g} "
              f"{r['pi22']:>12.6g} {r['spectral_radius']:>12.6g} "
              f"{'ok' if r['trace_det_ok'] else 'no':>7} {'PASS' if r['small_gain_ok'] else 'FAIL'}")
    out = _outdir(args)
    if out:
        _dump(rows, out / "gains.json")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_certify(cfg: Config, args) -> int:
    out = _outdir(args)
    certified = True
    for t0 in args.t0 or cfg.analysis.t0:
        cert = run_certify(cfg, t0)
        certified &= cert.certified
        line = f"t0={t0:g}: {_verdict_label(cert)}"
        if cert.certified and cert.t0 != t0:
            line += f" (certifying initial time {cert.t0:.6g})"
        if not cert.certified:
            line += f" ({cert.evidence.get('reason', '')})"
        print(line)
        if out:
            cert.to_json(out / f"certificate_t0_{_tag(t0)}.json")
            if cert.certified:
                mx = simulated_max_norm(cfg.system, cert, cfg.analysis.trials, cfg.analysis.seed)
                cert.to_csv(out / f"envelope_t0_{_tag(t0)}.csv", mx)
    return EXIT_OK if certified else EXIT_NEGATIVE


def cmd_simulate(cfg: Config, args) -> int:
    t0 = args.t0[0] if args.t0 else cfg.analysis.t0[0]
    x0 = args.x0 if args.x0 is not None else [1.0] * cfg.system.n
    if len(x0) != cfg.system.n:
        raise UsageError(f"--x0 needs {cfg.system.n} components")
    T = args.T if args.T is not None else t0 + cfg.analysis.T_max
    if T < t0:
        raise UsageError("--T must not precede --t0")
    n = max(1, int(np.ceil((T - t0) / cfg.analysis.grid_step - 1e-9)))
    samples = np.unique(np.concatenate([np.linspace(t0, T, n + 1),
                                        cfg.system.breakpoints(t0, T)]))
    tr = simulate(cfg.system, t0, x0, T, samples=samples)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        tr.to_csv(args.out)
        print(f"wrote {len(tr.t)} rows to {args.out}")
    else:
        tr.to_csv(_sys.stdout)
    return EXIT_OK


def _validation(cfg: Config, t0: float, scale: float | None):
    cert = run_certify(cfg, t0)
    if not cert.certified:
        return cert, None
    if scale is not None:
        cert = cert.scaled(scale)
    a = cfg.analysis
    return cert, validate(cfg.system, cfg.envelopes, cfg.weights, cert, a.trials,
                          min(a.T_max, cert.times[-1] - cert.t0), a.seed)


def cmd_validate(cfg: Config, args) -> int:
    t0 = args.t0[0] if args.t0 else cfg.analysis.t0[0]
    cert, rep = _validation(cfg, t0, args.scale_envelope)
    if rep is None:
        print(f"t0={t0:g}: {cert.verdict}; nothing to validate")
        return EXIT_NEGATIVE
    out = _outdir(args)
    if out:
        rep.to_json(out / "validation.json")
        rep.offenders_csv(out / "offenders.csv")
    print(f"trials: {rep.trials}")
    print(f"max bound violation: {rep.max_bound_violation:.6g}")
    print(f"positivity min: {rep.positivity_min:.6g}")
    print(f"monotonicity failures: {rep.monotonicity_failures}")
    print(f"dv max relative error: {rep.dv_max_rel_error:.6g}")
    for note in rep.notes:
        print(f"note: {note}")
    print("PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_NEGATIVE


def cmd_report(cfg: Config, args) -> int:
    t0s = args.t0 or cfg.analysis.t0
    check = run_check(cfg)
    report = {
        "tool": "ltvgain",
        "version": __version__,
        "config_hash": cfg.hash,
        "config": cfg.resolved(),
        "wazewski": check["wazewski"],
        "envelope_validation": check["envelopes"],
        "gains": run_gains(cfg, t0s),
        "certificates": {},
        "validation": None,
    }
    ok = check["ok"]
    for k, t0 in enumerate(t0s):
        cert, rep = _validation(cfg, t0, None) if k == 0 else (run_certify(cfg, t0), None)
        report["certificates"][f"{t0:g}"] = cert.to_dict()
        ok &= cert.certified
        if rep is not None:
            report["validation"] = rep.to_dict()
            ok &= rep.passed
        print(f"t0={t0:g}: {_verdict_label(cert)}")
    text = _dump(report, (_outdir(args) / "report.json") if args.out else None)
    if not args.out:
        print(text)
    return EXIT_OK if ok else EXIT_NEGATIVE


COMMANDS = {
    "check": (cmd_check, "Wazewski structure and envelope validation"),
    "gains": (cmd_gains, "integral gain matrices and the small-gain test"),
    "certify": (cmd_certify, "stability verdict and solution envelope"),
    "simulate": (cmd_simulate, "trajectory CSV"),
    "validate": (cmd_validate, "Monte-Carlo cross-check of the certificate"),
    "report": (cmd_report, "self-contained JSON report of every analysis"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltvgain", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="JSON configuration file")
        s.add_argument("--t0", type=_floats, help="initial time(s), comma separated")
        s.add_argument("--out", help="output directory (CSV file for simulate)")
        s.add_argument("--quad-tol", type=float, help="quadrature tolerance")
        s.add_argument("--grid-step", type=float, help="grid step for h, P and the envelope")
        s.add_argument("--seed", type=int, help="seed for validation trials")
        if name == "simulate":
            s.add_argument("--x0", type=_floats, help="initial state, comma separated")
            s.add_argument("--T", type=float, help="final time")
        if name == "validate":
            s.add_argument("--scale-envelope", type=float,
                           help="multiply the envelope before validating (self-test)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            quad_tol=args.quad_tol, grid_step=args.grid_step, seed=args.seed)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror or exc}", file=_sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command][0](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
