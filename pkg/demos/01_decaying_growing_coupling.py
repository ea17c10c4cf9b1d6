"""
Two scalar equations with one decaying and one growing coupling
===============================================================

The first coupling decays like exp(-t), the second grows like 1 + t.  The
gain matrix is small at every initial time, its limit is nilpotent, and the
lower bound phi grows without bound, so the certificate reports asymptotic
stability that is not uniform in the initial time.
"""

import numpy as np

from ltvgain.certify import classify
from ltvgain.config import bundled, load_config
from ltvgain.gains import gain_matrix, limit_gain_matrix
from ltvgain.validate import validate

cfg = load_config(bundled("example1"))
sys, env, w = cfg.system, cfg.envelopes, cfg.weights

# Gain matrices at a few initial times; the (2, 1) entry stays at 0.5
for t0 in (0.0, 1.0, 5.0):
    gm = gain_matrix(t0, sys, env, w)
    print(f"t0={t0:g}  Pi=\n{np.round(gm.matrix, 6)}  r_sigma={gm.spectral_radius:.4f}")

# Limit of the gain matrix as t0 grows
L, rep = limit_gain_matrix([2.0, 4.0, 8.0, 16.0], sys, env, w)
print("limit matrix:\n", np.round(L, 6), " converged:", rep.ok)

# Verdict with its evidence
cert = classify(sys, env, w, 0.0)
print("verdict:", cert.verdict, cert.evidence["conditions"])
print("B(t, 0) at t = 0, 10, 50:", cert.B([0.0, 10.0, 50.0]))

# Monte-Carlo cross-check of the envelope against simulations
report = validate(sys, env, w, cert, n_trials=50, T=50.0, seed=0)
print(report.to_json())
