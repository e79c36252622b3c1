"""Heat-bath couplings: Andersen collisions, Langevin friction, Nose-Hoover.

The Langevin thermostat is not a separate stepper; it is the friction/noise
pair (gamma, sigma = sqrt(2 gamma / beta)) carried by a SecondOrderSystem.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .state import ParticleState


@dataclass(frozen=True)
class Andersen:
    """Collisions with frequency nu redraw velocities from a Maxwellian at T."""

    nu: float
    temperature: float

    def __post_init__(self):
        if self.nu < 0 or self.temperature <= 0:
            raise ValueError("need nu >= 0 and temperature > 0")


@dataclass(frozen=True)
class Langevin:
    gamma: float
    beta: float

    def __post_init__(self):
        if self.gamma <= 0 or self.beta <= 0:
            raise ValueError("need gamma > 0 and beta > 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(2.0 * self.gamma / self.beta)


@dataclass
class NoseHoover:
    """Deterministic thermostat with thermal mass Q and auxiliary variable xi."""

    Q: float
    beta: float
    xi: float = 0.0

    def __post_init__(self):
        if self.Q <= 0 or self.beta <= 0:
            raise ValueError("need Q > 0 and beta > 0")


Thermostat = Union[Andersen, Langevin, NoseHoover, None]


def apply_andersen(
    state: ParticleState,
    nu: float,
    temperature: float,
    dt: float,
    rng: np.random.Generator,
    masses: Optional[np.ndarray] = None,
) -> ParticleState:
    """Redraw each velocity from N(0, T/m I_d) with probability 1 - exp(-nu dt)."""
    if state.velocities is None:
        raise ValueError("Andersen thermostat needs velocities")
    if nu == 0.0:
        return state
    p_collide = 1.0 - math.exp(-nu * dt)
    hit = rng.random(state.n_particles) < p_collide
    fresh = rng.standard_normal(state.positions.shape) * math.sqrt(temperature)
    if masses is not None:
        fresh /= np.sqrt(np.asarray(masses))[:, None]
    velocities = np.where(hit[:, None], fresh, state.velocities)
    return state.replace(velocities=velocities)


def nose_hoover_step(
    state: ParticleState,
    xi: float,
    Q: float,
    beta: float,
    dt: float,
    forces: np.ndarray,
    masses: Optional[np.ndarray] = None,
) -> Tuple[ParticleState, float]:
    """One explicit Euler step of the real-variable Nose-Hoover ODEs.

    r' = v, v' = F/m - xi v, xi' = (sum m |v|^2 - d N / beta) / Q, with the
    force array supplied by the caller.
    """
    if state.velocities is None:
        raise ValueError("Nose-Hoover thermostat needs velocities")
    v = state.velocities
    m = np.ones(state.n_particles) if masses is None else np.asarray(masses, dtype=np.float64)
    kinetic_sum = float(np.sum(m[:, None] * v * v))
    target = state.dim * state.n_particles / beta
    new_xi = xi + dt / Q * (kinetic_sum - target)
    new_v = v + dt * (forces / m[:, None] - xi * v)
    new_x = state.positions + dt * v
    return state.replace(positions=new_x, velocities=new_v, time=state.time + dt), new_xi
