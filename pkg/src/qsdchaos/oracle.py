"""Deterministic Lindblad master equation for small Hilbert spaces.

Used as the ensemble reference for QSD: the mean of ``|psi><psi|`` over
unravellings must approach the density matrix integrated here.
"""

import numpy as np
import scipy.sparse as sp

from .errors import DimensionCapError, StepSizeError

MAX_ORACLE_DIM = 512
POSITIVITY_TOL = 1e-10


def _as_op(op):
    return sp.csr_matrix(op, dtype=complex) if sp.issparse(op) else np.asarray(op, dtype=complex)


class _Generator:
    """Master-equation right-hand side with conjugates precomputed.

    With ``hermitian=True`` the input must be Hermitian; right products are
    then obtained as adjoints of left products, roughly halving the cost.
    """

    def __init__(self, hamiltonian, lindblads, hermitian=False):
        self.hermitian = hermitian
        self.ls = [_as_op(L) for L in lindblads]
        self.lds = [L.conj().T for L in self.ls]
        h_eff = None if hamiltonian is None else _as_op(hamiltonian)
        for L, Ld in zip(self.ls, self.lds):
            term = -0.5j * (Ld @ L)
            h_eff = term if h_eff is None else h_eff + term
        self.h_eff = h_eff

    def __call__(self, rho):
        if self.hermitian:
            out = np.zeros_like(rho) if self.h_eff is None else -1j * (self.h_eff @ rho)
            out = out + out.conj().T
            for L in self.ls:
                l_rho = L @ rho
                out += L @ l_rho.conj().T
            return np.asarray(out)
        out = np.zeros_like(rho)
        if self.h_eff is not None:
            out = -1j * (self.h_eff @ rho) + 1j * _right(rho, self.h_eff.conj().T)
        for L, Ld in zip(self.ls, self.lds):
            out += L @ _right(rho, Ld)
        return np.asarray(out)


def _right(rho, op):
    """``rho @ op`` for dense or sparse ``op``."""
    return np.asarray((op.T @ rho.T).T)


def lindblad_rhs(rho, hamiltonian, lindblads=()):
    """``-i[H, rho] + sum_j (L rho L^dag - {L^dag L, rho}/2)``."""
    return _Generator(hamiltonian, lindblads)(np.asarray(rho, dtype=complex))


def integrate_lindblad(rho0, hamiltonian, lindblads, dt, t_end, checkpoint_times=None, check_positivity=True):
    """RK4 on the master equation.

    Returns ``(times, rhos)`` at ``checkpoint_times`` (default: every step).
    Checkpoints are snapped to the nearest step.
    """
    rho = np.array(rho0, dtype=complex)
    dim = rho.shape[0]
    if dim > MAX_ORACLE_DIM:
        raise DimensionCapError(f"oracle dimension {dim} exceeds cap {MAX_ORACLE_DIM}")
    n_steps = int(round(t_end / dt))
    if checkpoint_times is None:
        wanted = set(range(n_steps + 1))
    else:
        wanted = {int(round(t / dt)) for t in checkpoint_times}

    f = _Generator(hamiltonian, lindblads, hermitian=True)
    times, rhos = [], []
    if 0 in wanted:
        times.append(0.0)
        rhos.append(rho.copy())
    for step in range(1, n_steps + 1):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        if step in wanted:
            if check_positivity:
                lowest = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
                if lowest < -POSITIVITY_TOL:
                    raise StepSizeError(
                        f"density matrix eigenvalue {lowest:.2e} at t={step * dt:g}; reduce dt"
                    )
            times.append(step * dt)
            rhos.append(rho.copy())
    return np.array(times), rhos


def trace_distance(rho, sigma):
    diff = np.asarray(rho) - np.asarray(sigma)
    eig = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(0.5 * np.abs(eig).sum())


def pure_density(psi):
    psi = np.asarray(psi)
    return np.outer(psi, psi.conj())
