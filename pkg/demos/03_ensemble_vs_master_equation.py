"""
Averaging trajectories recovers the master equation
===================================================

Each QSD trajectory is a pure state. Averaging |psi><psi| over many
independent noise realizations reproduces the density matrix obtained by
integrating the Lindblad master equation directly. The statistical error
falls like 1/sqrt(M).
"""

import numpy as np

from qsdchaos import displaced_vacuum, integrate_lindblad, momentum_op, position_op, pure_density, trace_distance, unravel

n = 10
q, p = position_op(n), momentum_op(n)
h = 0.5 * p @ p + (q @ q @ q @ q) / 32
lindblads = [0.1 * q]
psi0 = displaced_vacuum(1.0, 0.0, n)

_, (rho_exact,) = integrate_lindblad(pure_density(psi0), h.toarray(), [L.toarray() for L in lindblads], 1e-4, 1.0, [1.0])
print(f"master equation purity at t=1: {np.trace(rho_exact @ rho_exact).real:.5f}")

for m in (10, 40, 160, 640):
    mean, _ = unravel(psi0, h, lindblads, 1e-3, 1000, m, seed=1, checkpoint_steps=[1000])
    d = trace_distance(mean[1000], rho_exact)
    print(f"M={m:4d}  trace distance {d:.4f}   sqrt(M)*distance {np.sqrt(m) * d:.3f}")
