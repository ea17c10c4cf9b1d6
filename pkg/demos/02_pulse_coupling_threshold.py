"""
Pulse-coupled pair: locating the certification threshold
========================================================

Both couplings are short pulses of height n on [n, n + 1/n).  For equal
couplings a the certificate holds while a^2 stays below
(1 - exp(-2))^2 / 4; a bisection recovers this boundary numerically.
"""

import math

from ltvgain.certify import classify
from ltvgain.config import bundled, load_config

cfg = load_config(bundled("example2"))
env, w = cfg.envelopes, cfg.weights


def certified(a):
    sys = cfg.system.with_params(a1=a, a2=a)
    return classify(sys, env, w, 0.0).certified


threshold = (1 - math.exp(-2)) ** 2 / 4
lo, hi = 0.40, 0.46
print(f"a={lo}: {certified(lo)}   a={hi}: {certified(hi)}")
while hi - lo > 1e-3:
    mid = 0.5 * (lo + hi)
    lo, hi = (mid, hi) if certified(mid) else (lo, mid)
print(f"flip at a1*a2 = {lo * hi:.5f}, closed-form threshold {threshold:.5f}")

# The certifying initial time moves right as a approaches the threshold
for a in (0.40, 0.42, 0.43):
    cert = classify(cfg.system.with_params(a1=a, a2=a), env, w, 0.0)
    print(f"a={a}: {cert.verdict} from t0={cert.t0:.4g}")
