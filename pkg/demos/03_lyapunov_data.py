"""
Building the quadratic Lyapunov function
========================================

Picard iteration produces P11, P12, P22 on a grid.  The differential
equations they satisfy are checked by finite differences, and the value of
v along a trajectory is compared with the accumulated cost int q |x|^2.
"""

import numpy as np

from ltvgain.config import bundled, load_config
from ltvgain.flow import simulate
from ltvgain.lyapunov import evaluate_v, picard_solve, residual_check
from ltvgain.validate import dv_check

cfg = load_config(bundled("example1"))
sys, env, w = cfg.system, cfg.envelopes, cfg.weights

P = picard_solve(sys, env, w, 0.0, 10.0)
print(f"{P.iterations} iterations, last update {P.final_update_norm:.2g}, "
      f"smallest entry {P.min_entry():.3g}")
print("residuals:", residual_check(P, sys, w, step=0.01).to_dict())

# v decreases along solutions at rate q1|x1|^2 + q2|x2|^2
tr = simulate(sys, 0.0, [1.0, 1.0], 10.0)
print("dv/dt relative error:", dv_check(sys, P, tr, w))
for t in (0.0, 2.0, 5.0, 10.0):
    x = tr(t)
    print(f"t={t:4.1f}  |x|={np.linalg.norm(x):.4g}  v={evaluate_v(P, t, x[0], x[1]):.4g}")
