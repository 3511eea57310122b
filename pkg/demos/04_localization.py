"""
Measurement, localization and heating
=====================================

Without measurement the packet spreads in the anharmonic well and then
breathes: the width oscillates instead of growing without bound. Position
measurement of strength kappa trims the position width, but it also
diffuses momentum at rate kappa^2/2, so strong measurement heats the packet
and fills the truncated Fock space quickly. The leakage column shows when
the truncation stops being trustworthy.
"""

from dataclasses import replace

import numpy as np

from qsdchaos import SystemParams, run_trajectory

base = SystemParams(beta=0.5, n_max=16, t_end=8.0, seed=3)
vacuum = 1 / np.sqrt(2)

for kappa in (0.0, 0.25, 0.5):
    rec = run_trajectory(replace(base, kappa=kappa))
    print(f"kappa={kappa:4.2f}: max dq/vacuum {rec.dq.max() / vacuum:5.2f}, "
          f"min dp/vacuum {rec.dp.min() / vacuum:5.2f}, min dq*dp {(rec.dq * rec.dp).min():.4f}, "
          f"leakage {rec.leakage.max():.1e}, valid={rec.valid}")

# The closed-system width of mode 1 over time: growth, then breathing.
rec = run_trajectory(replace(base, kappa=0.0))
for k in range(0, len(rec.times), 20):
    print(f"t={rec.times[k]:4.1f}  dq1/vacuum = {rec.dq[k, 0] / vacuum:5.2f}   g2_1 = {rec.g2[k, 0]:6.3f}")

# g2 = 1 for the initial coherent state; a packet stretched along one
# quadrature has super-Poissonian number statistics, g2 > 1.
