"""Experiment parameters for the three coupled quartic oscillators."""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, InvalidDimensionError

# Initial positions of the three oscillators in classical (beta = 1) units.
REFERENCE_POSITIONS = (-0.2, 0.05, 0.15)

# Largest tensor dimension n_max**3 an operator may be built for.
DEFAULT_MAX_DIM = 65536


@dataclass(frozen=True)
class SystemParams:
    """Full definition of one quantum experiment.

    ``dt=None`` and ``output_stride=None`` are resolved by
    :func:`qsdchaos.qsd.default_dt` and :func:`qsdchaos.qsd.default_stride`.
    """

    beta: float = 0.25
    kappa: Tuple[float, float, float] = (0.1, 0.1, 0.1)
    n_max: int = 24
    dt: Optional[float] = None
    t_end: float = 20.0
    output_stride: Optional[int] = None
    seed: int = 0
    max_dim: int = DEFAULT_MAX_DIM
    positions: Tuple[float, float, float] = field(default=REFERENCE_POSITIONS)

    def __post_init__(self):
        kappa = self.kappa
        if np.isscalar(kappa):
            kappa = (kappa,) * 3
        kappa = tuple(float(k) for k in kappa)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "positions", tuple(float(x) for x in self.positions))

        if int(self.n_max) != self.n_max or self.n_max < 2:
            raise InvalidDimensionError(f"n_max must be an integer >= 2, got {self.n_max}")
        if len(kappa) != 3 or len(self.positions) != 3:
            raise ConfigError("kappa and positions need exactly three entries")
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if any(k < 0 for k in kappa):
            raise ConfigError(f"kappa entries must be >= 0, got {kappa}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if self.output_stride is not None and self.output_stride < 1:
            raise ConfigError("output_stride must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def dim(self):
        return self.n_max**3

    @property
    def closed_system(self):
        return all(k == 0 for k in self.kappa)

    def initial_positions(self):
        """Quantum-unit displacements ``q_i / beta``."""
        return np.asarray(self.positions) / self.beta
