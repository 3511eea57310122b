"""Classical equations of motion of the three coupled quartic oscillators.

States are length-6 arrays ``(q1, q2, q3, p1, p2, p3)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .observables import classicalized_energy
from .params import REFERENCE_POSITIONS


def reference_state(beta=1.0):
    """Initial condition ``q = (-0.2, 0.05, 0.15)/beta, p = 0``."""
    return np.concatenate([np.asarray(REFERENCE_POSITIONS) / beta, np.zeros(3)])


def _force(q, beta):
    q2 = q * q
    total = q2.sum()
    return -beta**2 * q * (q2 / 8.0 + (total - q2))


def classical_rhs(s, beta):
    s = np.asarray(s, dtype=float)
    return np.concatenate([s[3:], _force(s[:3], beta)])


def classical_energy(s, beta):
    s = np.asarray(s, dtype=float)
    return classicalized_energy(s[..., :3], s[..., 3:], beta)


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class ClassicalTrajectory:
    times: np.ndarray
    states: np.ndarray
    energies: np.ndarray

    @property
    def q(self):
        return self.states[:, :3]

    @property
    def p(self):
        return self.states[:, 3:]

    @property
    def relative_energy_drift(self):
        """``max |E(t) - E(0)| / |E(0)|`` (absolute drift when ``E(0) == 0``)."""
        e0 = self.energies[0]
        dev = np.abs(self.energies - e0).max()
        return float(dev / abs(e0)) if e0 != 0 else float(dev)


def _n_steps(t_end, dt):
    if not dt > 0 or not t_end > 0:
        raise ValueError("dt and t_end must be positive")
    n = int(round(t_end / dt))
    if not np.isclose(n * dt, t_end, rtol=1e-9, atol=0):
        raise ValueError(f"t_end={t_end} is not a multiple of dt={dt}")
    return n


def integrate_classical(s0, beta, t_end, dt, stride=1):
    """Fixed-step RK4; records state and energy every ``stride`` steps."""
    n = _n_steps(t_end, dt)
    f = lambda y: classical_rhs(y, beta)  # noqa: E731
    y = np.array(s0, dtype=float)
    out = [y.copy()]
    for step in range(1, n + 1):
        y = _rk4(f, y, dt)
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite classical state at t={step * dt:g}", time=step * dt)
        if step % stride == 0 or step == n:
            out.append(y.copy())
    steps = np.r_[np.arange(0, n + 1, stride), [n] if n % stride else []]
    states = np.array(out)
    return ClassicalTrajectory(
        times=steps * dt, states=states, energies=classical_energy(states, beta)
    )


def _tangent_rhs(y, beta):
    q, p, dq, dp = y[:3], y[3:6], y[6:9], y[9:]
    q2 = q * q
    total = q2.sum()
    jac = 2.0 * np.outer(q, q)
    np.fill_diagonal(jac, 3.0 * q2 / 8.0 + (total - q2))
    return np.concatenate([p, _force(q, beta), dp, -beta**2 * (jac @ dq)])


@dataclass
class LyapunovResult:
    exponent: float
    times: np.ndarray
    running: np.ndarray

    def running_at(self, t):
        """Running estimate at the last renormalization time ``<= t``."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return float(self.running[idx])


def largest_lyapunov(s0, beta, t_end, dt, renorm_interval=1.0, tangent0=None):
    """Benettin estimate of the largest Lyapunov exponent.

    The tangent vector starts along ``tangent0`` (default: equal weights on the
    position directions), is co-integrated with the linearised flow and
    rescaled to unit length every ``renorm_interval`` time units.
    """
    n = _n_steps(t_end, dt)
    every = max(1, int(round(renorm_interval / dt)))
    if tangent0 is None:
        tangent0 = np.r_[np.ones(3), np.zeros(3)]
    tangent = np.asarray(tangent0, dtype=float)
    y = np.concatenate([np.asarray(s0, dtype=float), tangent / np.linalg.norm(tangent)])
    f = lambda z: _tangent_rhs(z, beta)  # noqa: E731

    log_sum = 0.0
    times, running = [], []
    for step in range(1, n + 1):
        y = _rk4(f, y, dt)
        if step % every == 0 or step == n:
            if not np.all(np.isfinite(y)):
                raise DivergenceError(f"non-finite state at t={step * dt:g}", time=step * dt)
            norm = np.linalg.norm(y[6:])
            log_sum += np.log(norm)
            y[6:] /= norm
            times.append(step * dt)
            running.append(log_sum / (step * dt))
    running = np.array(running)
    return LyapunovResult(exponent=float(running[-1]), times=np.array(times), running=running)
