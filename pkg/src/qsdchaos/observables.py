"""Expectation values, uncertainties, energy and photon statistics."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

G2_FLOOR = 1e-6


def expectation(psi, op, tol=1e-10, hermitian=None):
    """``<psi|A|psi>``.

    If ``hermitian`` is true the imaginary residue is checked against
    ``tol`` and a real number is returned.
    """
    psi = np.asarray(psi)
    if op.shape[1] != psi.shape[-1]:
        raise ValueError(f"operator of shape {op.shape} cannot act on state of length {psi.shape[-1]}")
    value = np.vdot(psi, op @ psi)
    if hermitian:
        if abs(value.imag) > tol:
            raise ValueError(f"Hermitian expectation has imaginary part {value.imag:.3e}")
        return float(value.real)
    return complex(value)


def pair_sum(values):
    """Sum of products over the three unordered pairs."""
    a, b, c = values[..., 0], values[..., 1], values[..., 2]
    return a * b + b * c + a * c


def classicalized_energy(q, p, beta):
    """Classical Hamiltonian evaluated at (expectation) positions and momenta.

    ``q`` and ``p`` have a trailing axis of length three. Each unordered
    pair contributes ``beta**2 q_i**2 q_j**2 / 2`` so the value coincides
    with the potential of the Hamiltonian itself.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    q2 = q * q
    kinetic = 0.5 * np.sum(p * p, axis=-1)
    quartic = beta**2 / 32.0 * np.sum(q2 * q2, axis=-1)
    coupling = beta**2 / 2.0 * pair_sum(q2)
    return kinetic + quartic + coupling


def g2(n_mean, n2_mean, floor=G2_FLOOR):
    """Second-order correlation ``(<n^2> - <n>) / <n>^2``; NaN below ``floor``."""
    n_mean = np.asarray(n_mean, dtype=float)
    n2_mean = np.asarray(n2_mean, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(n_mean > floor, (n2_mean - n_mean) / n_mean**2, np.nan)
    return out if out.ndim else float(out)


@dataclass
class ObservableSet:
    """Per-mode first and second moments; arrays with trailing axis of modes."""

    q: np.ndarray
    p: np.ndarray
    q2: np.ndarray
    p2: np.ndarray
    n: np.ndarray
    n2: np.ndarray

    @property
    def dq(self):
        return np.sqrt(np.maximum(self.q2 - self.q**2, 0.0))

    @property
    def dp(self):
        return np.sqrt(np.maximum(self.p2 - self.p**2, 0.0))

    @property
    def g2(self):
        return g2(self.n, self.n2)

    def energy(self, beta):
        return classicalized_energy(self.q, self.p, beta)


def reduced_density(psi, mode, n_max):
    """Single-mode reduced density matrix of a three-mode pure state."""
    t = np.moveaxis(np.asarray(psi).reshape(n_max, n_max, n_max), mode - 1, 0)
    t = t.reshape(n_max, -1)
    return t @ t.conj().T


class ModeMoments:
    """Dense single-mode operators used to evaluate moments from reduced states."""

    def __init__(self, n_max):
        from .fock import momentum_op, number_op, position_op

        self.n_max = n_max
        self.q = position_op(n_max).toarray()
        self.p = momentum_op(n_max).toarray()
        self.q2 = self.q @ self.q
        self.p2 = self.p @ self.p
        self.num = number_op(n_max).toarray().real.diagonal()

    def _trace(self, rho, op):
        return float(np.real(np.sum(rho * op.T)))

    def from_reduced(self, rho):
        """Moments tuple ``(q, p, q2, p2, n, n2, top_two_population)``."""
        pops = np.real(np.diagonal(rho))
        return (
            self._trace(rho, self.q),
            self._trace(rho, self.p),
            self._trace(rho, self.q2),
            self._trace(rho, self.p2),
            float(pops @ self.num),
            float(pops @ self.num**2),
            float(pops[-2:].sum()),
        )


def three_mode_observables(psi, n_max, moments=None):
    """ObservableSet plus per-mode leakage for a three-mode state."""
    moments = moments or ModeMoments(n_max)
    rows = np.array([moments.from_reduced(reduced_density(psi, m, n_max)) for m in (1, 2, 3)])
    obs = ObservableSet(*(rows[:, k] for k in range(6)))
    return obs, rows[:, 6]


@dataclass
class DivergenceReport:
    times: np.ndarray
    rms_error: np.ndarray
    beta: float

    @property
    def log_time_scale(self):
        return math.log(1.0 / self.beta)

    @property
    def log10_time_scale(self):
        return math.log10(1.0 / self.beta)

    def first_crossing_time(self, threshold):
        """Earliest recorded time with ``rms_error >= threshold``; ``inf`` if none."""
        hit = np.nonzero(self.rms_error >= threshold)[0]
        return float(self.times[hit[0]]) if hit.size else math.inf


def divergence(classical, quantum, beta):
    """Phase-space RMS distance between ``beta * <q, p>`` and a classical orbit.

    ``classical`` needs ``times`` and ``states`` (``(T, 6)``); ``quantum`` needs
    ``times``, ``q`` and ``p`` (``(T, 3)``). The classical orbit is resampled
    on the quantum output times with a cubic spline.
    """
    t_cl = np.asarray(classical.times)
    t_qm = np.asarray(quantum.times)
    lo, hi = max(t_cl[0], t_qm[0]), min(t_cl[-1], t_qm[-1])
    if lo > hi:
        raise ValueError("classical and quantum time ranges do not overlap")
    keep = (t_qm >= lo - 1e-12) & (t_qm <= hi + 1e-12)
    t = t_qm[keep]
    cl = CubicSpline(t_cl, np.asarray(classical.states), axis=0)(t)
    qm = beta * np.hstack([np.asarray(quantum.q)[keep], np.asarray(quantum.p)[keep]])
    sq = (qm - cl) ** 2
    rms = np.sqrt((sq[:, :3] + sq[:, 3:]).mean(axis=1))
    return DivergenceReport(times=t, rms_error=rms, beta=beta)
