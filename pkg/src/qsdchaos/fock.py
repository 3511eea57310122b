"""Truncated Fock-space operators and displaced-vacuum states.

Conventions: hbar = 1, ``q = (a + a^dag)/sqrt(2)``, ``p = i(a^dag - a)/sqrt(2)``.
Three-mode operators act on ``C^(n_max**3)`` with mode 1 as the slowest
varying index, i.e. basis state ``|n1, n2, n3>`` sits at
``(n1 * n_max + n2) * n_max + n3``.
"""

import math

import numpy as np
import scipy.sparse as sp

from .errors import DimensionCapError, InvalidDimensionError, TruncationTooSmallError
from .params import SystemParams

N_MODES = 3


def _check_n_max(n_max):
    if int(n_max) != n_max or n_max < 2:
        raise InvalidDimensionError(f"n_max must be an integer >= 2, got {n_max}")
    return int(n_max)


def ladder(n_max):
    """Single-mode annihilation operator, ``a|n> = sqrt(n)|n-1>``."""
    n_max = _check_n_max(n_max)
    return sp.diags(np.sqrt(np.arange(1, n_max, dtype=float)), 1, format="csr", dtype=complex)


def number_op(n_max):
    n_max = _check_n_max(n_max)
    return sp.diags(np.arange(n_max, dtype=float), 0, format="csr", dtype=complex)


def position_op(n_max):
    a = ladder(n_max)
    return ((a + a.T) / math.sqrt(2)).tocsr()


def momentum_op(n_max):
    a = ladder(n_max)
    return (1j * (a.T - a) / math.sqrt(2)).tocsr()


def is_hermitian(op, tol=1e-12):
    """Max-element test ``|A - A^dag| < tol``."""
    diff = op - op.conj().T
    if sp.issparse(diff):
        return diff.nnz == 0 or np.abs(diff.data).max() < tol
    return np.abs(diff).max() < tol


def embed(op, mode_index, n_max):
    """Place a single-mode operator on mode ``mode_index`` (1, 2 or 3)."""
    n_max = _check_n_max(n_max)
    if op.shape != (n_max, n_max):
        raise InvalidDimensionError(
            f"operator shape {op.shape} does not match single-mode dimension {n_max}"
        )
    if mode_index not in (1, 2, 3):
        raise InvalidDimensionError(f"mode_index must be 1, 2 or 3, got {mode_index}")
    eye = sp.identity(n_max, dtype=complex, format="csr")
    factors = [eye] * N_MODES
    factors[mode_index - 1] = sp.csr_matrix(op, dtype=complex)
    return sp.kron(sp.kron(factors[0], factors[1]), factors[2], format="csr")


def single_mode_blocks(n_max, beta):
    """Dense single-mode pieces of the Hamiltonian.

    Returns ``(q, q2, k)`` where ``q2 = q @ q`` and
    ``k = p @ p / 2 + beta**2 (q2 @ q2) / 32``; all powers are taken of the
    truncated matrices so every block stays Hermitian.
    """
    q = position_op(n_max).toarray()
    p = momentum_op(n_max).toarray()
    q2 = q @ q
    k = 0.5 * (p @ p) + beta**2 * (q2 @ q2) / 32.0
    return q, q2, k


def build_hamiltonian(params: SystemParams):
    """Sparse Hamiltonian of the three coupled quartic oscillators."""
    n_max = _check_n_max(params.n_max)
    if n_max**N_MODES > params.max_dim:
        raise DimensionCapError(
            f"n_max={n_max} gives dimension {n_max**N_MODES} above cap {params.max_dim}"
        )
    _, q2, k = single_mode_blocks(n_max, params.beta)
    q2_emb = [embed(sp.csr_matrix(q2), i, n_max) for i in (1, 2, 3)]
    kinetic_quartic = sum(embed(sp.csr_matrix(k), i, n_max) for i in (1, 2, 3))
    pairs = q2_emb[0] @ q2_emb[1] + q2_emb[1] @ q2_emb[2] + q2_emb[0] @ q2_emb[2]
    h = kinetic_quartic + 0.5 * params.beta**2 * pairs
    h.sum_duplicates()
    h.eliminate_zeros()
    return h.tocsr()


def _adequacy_bound(alpha):
    # ~5 sigma of the Poisson distribution plus one spare level; without the
    # spare level <q> misses q0 by up to 3e-6 right at the bound.
    return abs(alpha) ** 2 + 5 * abs(alpha) + 5


def required_n_max(q0, p0=0.0):
    """Smallest truncation passing the adequacy check for this displacement."""
    alpha = complex(q0, p0) / math.sqrt(2)
    return math.floor(_adequacy_bound(alpha)) + 1


def coherent_amplitudes(alpha, n_max):
    """Normalized Poissonian amplitudes of ``D(alpha)|0>`` in ``n_max`` levels."""
    n = np.arange(n_max)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    if alpha == 0:
        amps = np.zeros(n_max, dtype=complex)
        amps[0] = 1.0
        return amps
    log_mag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * log_fact
    amps = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    return amps / np.linalg.norm(amps)


def displaced_vacuum(q0, p0, n_max):
    """Coherent state centred at ``(q0, p0)`` in phase space."""
    n_max = _check_n_max(n_max)
    alpha = complex(q0, p0) / math.sqrt(2)
    if _adequacy_bound(alpha) >= n_max:
        need = required_n_max(q0, p0)
        raise TruncationTooSmallError(
            f"displacement ({q0}, {p0}) needs n_max >= {need}, got {n_max}",
            required_n_max=need,
        )
    return coherent_amplitudes(alpha, n_max)


def product_state(mode_states):
    """Tensor product of three single-mode state vectors (mode 1 slowest)."""
    a, b, c = mode_states
    return np.einsum("i,j,k->ijk", a, b, c).ravel()


def initial_state(params: SystemParams):
    """Product of displaced vacua at ``(positions_i / beta, 0)``."""
    modes = [displaced_vacuum(q0, 0.0, params.n_max) for q0 in params.initial_positions()]
    psi = product_state(modes)
    return psi / np.linalg.norm(psi)


def fock_index(levels, n_max):
    """Flat index of ``|n1, n2, n3>``."""
    n1, n2, n3 = levels
    return (n1 * n_max + n2) * n_max + n3


def basis_state(levels, n_max):
    psi = np.zeros(n_max ** len(levels), dtype=complex)
    if len(levels) == 1:
        psi[levels[0]] = 1.0
    else:
        psi[fock_index(levels, n_max)] = 1.0
    return psi
