"""Quantum state diffusion of three coupled quartic oscillators.

Classical chaos, stochastic unravellings under continuous position
measurement, a Lindblad reference integrator and the observables used to
compare them.
"""

__version__ = "0.1.0"

from .classical import (
    ClassicalTrajectory,
    classical_rhs,
    integrate_classical,
    largest_lyapunov,
    reference_state,
)
from .errors import (
    ConfigError,
    DimensionCapError,
    DivergenceError,
    InvalidDimensionError,
    NumericalBlowupError,
    QSDChaosError,
    StepSizeError,
    TruncationTooSmallError,
)
from .fock import (
    build_hamiltonian,
    displaced_vacuum,
    embed,
    initial_state,
    ladder,
    momentum_op,
    number_op,
    position_op,
)
from .observables import ObservableSet, classicalized_energy, divergence, expectation, g2
from .oracle import integrate_lindblad, lindblad_rhs, pure_density, trace_distance
from .params import SystemParams
from .qsd import TrajectoryRecord, draw_noise, qsd_step, run_ensemble, run_trajectory, unravel
