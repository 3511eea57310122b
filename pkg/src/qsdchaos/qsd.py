"""Quantum state diffusion under continuous position measurement.

One step advances

    d|psi> = -i H |psi> dt
             + sum_j [<L_j^dag> L_j - L_j^dag L_j / 2 - <L_j^dag><L_j> / 2] |psi> dt
             + sum_j [L_j - <L_j>] |psi> dxi_j

with all expectation values taken on the incoming state, then renormalizes.
The ``-i H psi dt`` term is either the plain Euler increment
(``scheme="euler"``) or its fourth-order Taylor/RK4 counterpart
(``scheme="rk4"``, the default). Renormalizing after plain Euler lets
high-energy components grow like ``exp(n_steps (E dt)**2 / 2)``, so long runs
need the RK4 form; the stochastic terms are Euler-Maruyama in both cases.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionCapError, NumericalBlowupError
from .fock import build_hamiltonian, embed, initial_state, position_op
from .observables import ModeMoments, classicalized_energy, g2, reduced_density
from .params import SystemParams

SCHEMES = ("euler", "rk4")
NORM_TOLERANCE = 1e-3
LEAKAGE_THRESHOLD = 1e-4
DEFAULT_OUTPUT_INTERVAL = 0.05
MAX_DENSITY_DIM = 1024

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def child_seed(master_seed, index):
    """Seed of trajectory ``index`` in an ensemble with ``master_seed``."""
    return splitmix64(splitmix64(master_seed & _MASK64) ^ (index & _MASK64))


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def draw_noise(rng, n_lindblads, dt, size=None):
    """Complex Wiener increments ``(g1 + i g2)/sqrt(2)``, ``g ~ N(0, dt)``.

    Returns shape ``(n_lindblads,)`` or ``(size, n_lindblads)``. Values are
    drawn step-major, so block size never changes the sequence.
    """
    shape = (n_lindblads, 2) if size is None else (size, n_lindblads, 2)
    g = rng.standard_normal(shape) * math.sqrt(dt / 2.0)
    return g[..., 0] + 1j * g[..., 1]


def _apply(op, psi):
    if psi.ndim == 1:
        return op @ psi
    return np.asarray(op @ psi.T).T


def _inner(a, b):
    return np.sum(a.conj() * b, axis=-1, keepdims=a.ndim > 1)


class Stepper:
    """Precomputed operators for repeated QSD steps.

    ``psi`` may be a single state ``(d,)`` or a batch ``(m, d)``; noise then
    has shape ``(n_lindblads,)`` or ``(m, n_lindblads)``.
    """

    def __init__(self, hamiltonian, lindblads=(), scheme="rk4"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
        self.h = hamiltonian
        self.lindblads = [(L, L.conj().T @ L) for L in lindblads]
        self.scheme = scheme

    def _unitary_part(self, psi, dt):
        if self.h is None:
            return psi.copy()
        if self.scheme == "euler":
            return psi - 1j * dt * _apply(self.h, psi)
        out = psi.copy()
        term = psi
        for m in range(1, 5):
            term = (-1j * dt / m) * _apply(self.h, term)
            out += term
        return out

    def advance(self, psi, dt, noise):
        """Return ``(renormalized state, norm before renormalization)``."""
        new = self._unitary_part(psi, dt)
        for j, (L, LdL) in enumerate(self.lindblads):
            l_psi = _apply(L, psi)
            ell = _inner(psi, l_psi)
            dxi = noise[..., j : j + 1] if psi.ndim > 1 else noise[j]
            new += dt * (ell.conj() * l_psi - 0.5 * _apply(LdL, psi) - 0.5 * abs(ell) ** 2 * psi)
            new += dxi * (l_psi - ell * psi)
        norm = np.sqrt(np.sum(np.abs(new) ** 2, axis=-1, keepdims=psi.ndim > 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            return new / norm, norm


def qsd_step(psi, hamiltonian, lindblads, dt, noise, scheme="rk4"):
    """Advance a normalized state by one QSD step and renormalize."""
    new, norm = Stepper(hamiltonian, lindblads, scheme).advance(np.asarray(psi, dtype=complex), dt, noise)
    if not np.all(np.isfinite(norm)) or not np.all(np.isfinite(new)):
        raise NumericalBlowupError("non-finite amplitudes after step 1", step=1)
    return new


def estimate_norm(op, iterations=40, seed=12345):
    """Power-iteration estimate of the spectral norm with a 10% safety margin."""
    rng = make_rng(seed)
    v = rng.standard_normal(op.shape[0]).astype(complex)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iterations):
        w = op @ v
        est = np.linalg.norm(w)
        if est == 0:
            return 0.0
        v = w / est
    return 1.1 * est


def _round_down_nice(x):
    """Largest value of the form {1, 2, 5} x 10**k not exceeding ``x``."""
    exp = math.floor(math.log10(x))
    for mant in (5, 2, 1):
        if mant * 10.0**exp <= x * (1 + 1e-12):
            return mant * 10.0**exp
    return 10.0 ** (exp - 1) * 5


def default_dt(params: SystemParams, hamiltonian=None, measured_modes=(1, 2, 3), scheme="rk4"):
    """Step-size rule.

    ``dt * |H| <= 0.05`` for plain Euler (``0.5`` for RK4, well inside its
    imaginary-axis stability interval) and
    ``dt * max_i kappa_i**2 <q_i**2>_0 <= 1e-3``, rounded down to 1, 2 or 5
    times a power of ten.
    """
    h = build_hamiltonian(params) if hamiltonian is None else hamiltonian
    courant = 0.05 if scheme == "euler" else 0.5
    limits = [courant / estimate_norm(h)]
    q0 = params.initial_positions()
    rates = [params.kappa[i - 1] ** 2 * (q0[i - 1] ** 2 + 0.5) for i in measured_modes]
    if max(rates, default=0.0) > 0:
        limits.append(1e-3 / max(rates))
    return _round_down_nice(min(limits))


def default_stride(dt, interval=DEFAULT_OUTPUT_INTERVAL):
    return max(1, int(round(interval / dt)))


def n_steps_for(t_end, dt):
    return max(1, int(math.ceil(t_end / dt - 1e-9)))


@dataclass
class TrajectoryRecord:
    """Observables of one trajectory at the output times.

    Per-mode arrays have shape ``(T, 3)``; ``g2`` is NaN where ``<n>`` is
    below the floor. ``norm`` is the norm before renormalization of the step
    that produced each row.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    dq: np.ndarray
    dp: np.ndarray
    n: np.ndarray
    n2: np.ndarray
    g2: np.ndarray
    energy: np.ndarray
    norm: np.ndarray
    leakage: np.ndarray
    beta: float
    kappa: tuple
    measured_modes: tuple
    dt: float
    seed: int
    max_norm_deviation: float
    closed_system: bool
    checkpoints: dict = field(default_factory=dict)

    @property
    def norm_valid(self):
        return self.max_norm_deviation < NORM_TOLERANCE

    @property
    def truncation_suspect(self):
        return bool(self.leakage.max() >= LEAKAGE_THRESHOLD)

    @property
    def valid(self):
        return self.norm_valid and not self.truncation_suspect


def active_lindblads(params: SystemParams, measured_modes):
    """``kappa_i q_i`` for every measured mode with nonzero coupling."""
    n_max = params.n_max
    q = position_op(n_max)
    return [
        params.kappa[i - 1] * embed(q, i, n_max)
        for i in sorted(measured_modes)
        if params.kappa[i - 1] > 0
    ]


def _normalize_modes(measured_modes):
    modes = tuple(sorted(set(measured_modes)))
    if any(m not in (1, 2, 3) for m in modes):
        raise ValueError(f"measured modes must be drawn from {{1, 2, 3}}, got {measured_modes}")
    return modes


def run_trajectory(
    params: SystemParams,
    measured_modes=(1, 2, 3),
    checkpoint_times=(),
    noise=None,
    scheme="rk4",
    hamiltonian=None,
):
    """Integrate one QSD trajectory from the displaced-vacuum initial state.

    ``noise`` optionally supplies all increments, shape
    ``(n_steps, n_active_lindblads)``; otherwise they come from ``params.seed``.
    ``checkpoint_times`` selects times whose full state vectors are stored in
    ``record.checkpoints``.
    """
    modes = _normalize_modes(measured_modes)
    psi = initial_state(params)
    h = build_hamiltonian(params) if hamiltonian is None else hamiltonian
    lindblads = active_lindblads(params, modes)
    dt = params.dt or default_dt(params, h, modes, scheme)
    stride = params.output_stride or default_stride(dt)
    n_steps = n_steps_for(params.t_end, dt)
    n_l = len(lindblads)
    if noise is not None:
        noise = np.asarray(noise)
        if noise.shape != (n_steps, n_l):
            raise ValueError(f"noise must have shape {(n_steps, n_l)}, got {noise.shape}")
    rng = make_rng(params.seed)
    stepper = Stepper(h, lindblads, scheme)
    moments = ModeMoments(params.n_max)
    checkpoint_steps = {int(round(t / dt)): t for t in checkpoint_times}

    rows, times, norms = [], [], []
    checkpoints = {}

    def record(step, norm):
        obs = [moments.from_reduced(reduced_density(psi, m, params.n_max)) for m in (1, 2, 3)]
        rows.append(obs)
        times.append(step * dt)
        norms.append(norm)
        if step in checkpoint_steps:
            checkpoints[checkpoint_steps[step]] = psi.copy()

    record(0, 1.0)
    max_dev = 0.0
    step = 0
    while step < n_steps:
        block = min(stride - step % stride, n_steps - step)
        block_noise = noise[step : step + block] if noise is not None else draw_noise(rng, n_l, dt, block)
        for k in range(block):
            psi, norm = stepper.advance(psi, dt, block_noise[k])
            step += 1
            if not math.isfinite(norm):
                raise NumericalBlowupError(f"non-finite amplitudes at step {step}", step=step)
            max_dev = max(max_dev, abs(norm - 1.0))
            if step in checkpoint_steps and step % stride and step != n_steps:
                checkpoints[checkpoint_steps[step]] = psi.copy()
        record(step, norm)

    data = np.array(rows)
    q, p, q2, p2, n, n2, leak = (data[:, :, k] for k in range(7))
    return TrajectoryRecord(
        times=np.array(times),
        q=q,
        p=p,
        dq=np.sqrt(np.maximum(q2 - q**2, 0.0)),
        dp=np.sqrt(np.maximum(p2 - p**2, 0.0)),
        n=n,
        n2=n2,
        g2=g2(n, n2),
        energy=classicalized_energy(q, p, params.beta),
        norm=np.array(norms),
        leakage=leak,
        beta=params.beta,
        kappa=params.kappa,
        measured_modes=modes,
        dt=dt,
        seed=params.seed,
        max_norm_deviation=max_dev,
        closed_system=params.closed_system or not lindblads,
        checkpoints=checkpoints,
    )


@dataclass
class EnsembleResult:
    records: list
    checkpoint_times: tuple
    mean_density: list

    def purity(self, k):
        rho = self.mean_density[k]
        return float(np.real(np.sum(rho * rho.T)))


def _run_child(args):
    params, modes, index, checkpoint_times, scheme = args
    child = replace(params, seed=child_seed(params.seed, index))
    return run_trajectory(child, modes, checkpoint_times=checkpoint_times, scheme=scheme)


def run_ensemble(
    params: SystemParams,
    measured_modes=(1, 2, 3),
    n_traj=1,
    checkpoint_times=(),
    jobs=1,
    scheme="rk4",
    max_density_dim=MAX_DENSITY_DIM,
):
    """Independent trajectories with derived seeds and their mean density matrix.

    Trajectory ``k`` uses seed ``child_seed(params.seed, k)``. The mean
    ``|psi><psi|`` at each checkpoint is accumulated in trajectory order, so
    the result does not depend on ``jobs``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    checkpoint_times = tuple(float(t) for t in checkpoint_times)
    if checkpoint_times and params.dim > max_density_dim:
        raise DimensionCapError(
            f"density accumulation needs dimension <= {max_density_dim}, got {params.dim}"
        )
    modes = _normalize_modes(measured_modes)
    if params.dt is None:
        params = replace(params, dt=default_dt(params, measured_modes=modes, scheme=scheme))
    tasks = [(params, modes, k, checkpoint_times, scheme) for k in range(n_traj)]
    if jobs > 1 and n_traj > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_child, tasks))
    else:
        records = [_run_child(t) for t in tasks]

    mean_density = []
    for t in checkpoint_times:
        rho = np.zeros((params.dim, params.dim), dtype=complex)
        for rec in records:
            psi = rec.checkpoints[t]
            rho += np.outer(psi, psi.conj())
        mean_density.append(rho / n_traj)
    return EnsembleResult(records=records, checkpoint_times=checkpoint_times, mean_density=mean_density)


def unravel(psi0, hamiltonian, lindblads, dt, n_steps, n_traj, seed=0, checkpoint_steps=(), scheme="rk4"):
    """Batched QSD for small Hilbert spaces.

    Trajectory ``k`` draws its noise from ``child_seed(seed, k)`` exactly as
    :func:`run_ensemble` does. Returns ``{step: mean density matrix}`` and
    ``{step: states (n_traj, d)}`` for the requested checkpoint steps.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    psi = np.tile(psi0, (n_traj, 1))
    n_l = len(lindblads)
    noise = np.stack(
        [draw_noise(make_rng(child_seed(seed, k)), n_l, dt, n_steps) for k in range(n_traj)], axis=1
    )
    stepper = Stepper(sp.csr_matrix(hamiltonian), [sp.csr_matrix(L) for L in lindblads], scheme)
    wanted = set(checkpoint_steps)
    states = {}
    if 0 in wanted:
        states[0] = psi.copy()
    for step in range(1, n_steps + 1):
        psi, norm = stepper.advance(psi, dt, noise[step - 1])
        if not np.all(np.isfinite(norm)):
            raise NumericalBlowupError(f"non-finite amplitudes at step {step}", step=step)
        if step in wanted:
            states[step] = psi.copy()
    densities = {s: np.einsum("ki,kj->ij", v, v.conj()) / n_traj for s, v in states.items()}
    return densities, states
