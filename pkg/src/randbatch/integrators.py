"""Euler-Maruyama time steppers: full-batch reference, RBM variants, splitting.

Every stepper is a pure function of (state, rng streams) and returns a new
state.  The full-batch ``direct_step`` and the random-batch steppers share the
same update expression and the same per-step noise draw, so a random-batch
step with p = N reproduces the direct step bit for bit under identical
streams; that coupling also underlies the strong-error measurements.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .forces import (
    batch_prefactor,
    division_forces,
    full_force_all,
    short_range_force_all,
)
from .batching import random_division, sample_batch_with_replacement
from .rng import SimStreams
from .state import KernelSpec, ParticleState, minimum_image, wrap_positions


class IntegrationError(RuntimeError):
    """Raised when a step produces non-finite coordinates."""


@dataclass
class FirstOrderSystem:
    """dx = [b(x) + alpha_N sum K] dt + noise."""

    kernel: object
    alpha_N: float
    drift: Optional[Callable[[np.ndarray], np.ndarray]] = None
    sigma: float = 0.0
    noise_mode: str = "additive"  # "additive" | "multiplicative"
    noise_scale: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.noise_mode not in ("additive", "multiplicative"):
            raise ValueError("noise_mode must be additive or multiplicative")
        if self.noise_mode == "multiplicative" and self.noise_scale is None:
            raise ValueError("multiplicative noise needs a noise_scale function")


@dataclass
class SecondOrderSystem:
    """dr = v dt, dv = [(b + alpha_N sum K)/m - gamma v] dt + (sigma/sqrt(m)) dW.

    With ``enforce_fluctuation_dissipation`` the pair (sigma, gamma, beta) is
    required to satisfy sigma = sqrt(2 gamma / beta), which makes the Gibbs
    measure at inverse temperature beta invariant.
    """

    kernel: object
    alpha_N: float
    drift: Optional[Callable[[np.ndarray], np.ndarray]] = None
    gamma: float = 0.0
    sigma: float = 0.0
    masses: Optional[np.ndarray] = None
    beta: Optional[float] = None
    enforce_fluctuation_dissipation: bool = False

    def __post_init__(self):
        if self.gamma < 0 or self.sigma < 0:
            raise ValueError("gamma and sigma must be nonnegative")
        if self.masses is not None:
            self.masses = np.asarray(self.masses, dtype=np.float64)
            if np.any(self.masses <= 0):
                raise ValueError("masses must be positive")
        if self.enforce_fluctuation_dissipation:
            if self.beta is None or self.beta <= 0:
                raise ValueError("fluctuation-dissipation check needs beta > 0")
            if abs(self.sigma - math.sqrt(2 * self.gamma / self.beta)) > 1e-12:
                raise ValueError("sigma does not satisfy sigma = sqrt(2 gamma / beta)")


@dataclass
class StepSchedule:
    """Step sizes: constant dt, c/log(k+1) decay, or 1/(k+k0)."""

    kind: str = "constant"
    dt: float = 1e-3
    c: float = 1e-3
    k0: float = 1.0

    def __call__(self, k: int) -> float:
        """Step size for 1-based step index k."""
        if self.kind == "constant":
            return self.dt
        if self.kind == "log_decay":
            return self.c / math.log(k + 1)
        if self.kind == "inverse":
            return 1.0 / (k + self.k0)
        raise ValueError(f"unknown schedule kind {self.kind!r}")


def _check_finite(positions: np.ndarray, velocities: Optional[np.ndarray], label: str):
    if not np.all(np.isfinite(positions)) or (
        velocities is not None and not np.all(np.isfinite(velocities))
    ):
        raise IntegrationError(f"non-finite state after {label}")


def _drift_term(system, x: np.ndarray) -> np.ndarray:
    return system.drift(x) if system.drift is not None else np.zeros_like(x)


def _noise_increment(system: FirstOrderSystem, x: np.ndarray, dt: float, noise_rng) -> np.ndarray:
    if system.sigma == 0.0:
        return np.zeros_like(x)
    dW = math.sqrt(dt) * noise_rng.standard_normal(x.shape)
    if system.noise_mode == "multiplicative":
        return system.sigma * system.noise_scale(x) * dW
    return system.sigma * dW


def _advance_first_order(state, system, force, dt, noise_rng) -> ParticleState:
    x = state.positions
    new = x + dt * (_drift_term(system, x) + force) + _noise_increment(system, x, dt, noise_rng)
    _check_finite(new, None, "first-order step")
    if state.box_length is not None:
        new = wrap_positions(new, state.box_length)
    return state.replace(positions=new, time=state.time + dt)


def _advance_second_order(state, system, force, dt, noise_rng) -> ParticleState:
    x, v = state.positions, state.velocities
    if v is None:
        raise ValueError("second-order step needs velocities")
    inv_m = 1.0
    if system.masses is not None:
        inv_m = 1.0 / system.masses[:, None]
    accel = (_drift_term(system, x) + force) * inv_m - system.gamma * v
    if system.sigma > 0.0:
        dW = math.sqrt(dt) * noise_rng.standard_normal(v.shape)
        noise = system.sigma * np.sqrt(inv_m) * dW if system.masses is not None else system.sigma * dW
    else:
        noise = 0.0
    new_v = v + dt * accel + noise
    new_x = x + dt * v
    _check_finite(new_x, new_v, "second-order step")
    if state.box_length is not None:
        new_x = wrap_positions(new_x, state.box_length)
    return state.replace(positions=new_x, velocities=new_v, time=state.time + dt)


def direct_step(state: ParticleState, system, dt: float, streams: SimStreams) -> ParticleState:
    """Full-batch Euler-Maruyama step with exact O(N^2) forces."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    force = full_force_all(state, system.kernel, system.alpha_N)
    if isinstance(system, FirstOrderSystem):
        return _advance_first_order(state, system, force, dt, streams.noise)
    return _advance_second_order(state, system, force, dt, streams.noise)


def rbm_step_first_order(
    state: ParticleState, system: FirstOrderSystem, p: int, dt: float, streams: SimStreams
) -> ParticleState:
    """One random division, then an Euler-Maruyama substep with batch forces."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    division = random_division(state.n_particles, p, streams.division)
    force = division_forces(state, division, system.kernel, system.alpha_N)
    return _advance_first_order(state, system, force, dt, streams.noise)


def rbm_step_second_order(
    state: ParticleState, system: SecondOrderSystem, p: int, dt: float, streams: SimStreams
) -> ParticleState:
    """Second-order RBM step: batch force in the velocity drift."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    division = random_division(state.n_particles, p, streams.division)
    force = division_forces(state, division, system.kernel, system.alpha_N)
    return _advance_second_order(state, system, force, dt, streams.noise)


def rbmr_step(state: ParticleState, system, p: int, dt: float, streams: SimStreams) -> ParticleState:
    """Random batches with replacement: ceil(N/p) sequential inner updates.

    Each inner update draws a fresh p-subset and advances only those particles
    by dt, writing the result back before the next draw; a particle picked
    twice in one outer step therefore moves twice.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    N = state.n_particles
    n_inner = -(-N // p)
    current = state
    for _ in range(n_inner):
        batch = sample_batch_with_replacement(N, p, streams.division)
        sub = ParticleState(
            positions=current.positions[batch],
            velocities=None if current.velocities is None else current.velocities[batch],
            box_length=current.box_length,
            time=current.time,
        )
        pref = batch_prefactor(system.alpha_N, N, batch.size)
        force = full_force_all(sub, system.kernel, pref)
        if isinstance(system, FirstOrderSystem):
            advanced = _advance_first_order(sub, system, force, dt, streams.noise)
        else:
            sub_system = system
            if system.masses is not None:
                sub_system = SecondOrderSystem(
                    kernel=system.kernel,
                    alpha_N=system.alpha_N,
                    drift=system.drift,
                    gamma=system.gamma,
                    sigma=system.sigma,
                    masses=system.masses[batch],
                    beta=system.beta,
                )
            advanced = _advance_second_order(sub, sub_system, force, dt, streams.noise)
        positions = current.positions.copy()
        positions[batch] = advanced.positions
        velocities = current.velocities
        if velocities is not None:
            velocities = velocities.copy()
            velocities[batch] = advanced.velocities
        current = current.replace(positions=positions, velocities=velocities)
    return current.replace(time=state.time + dt)


def rbm_split_step(
    state: ParticleState, system: SecondOrderSystem, p: int, dt: float, streams: SimStreams
) -> ParticleState:
    """Kernel-splitting RBM: exact short-range sum plus random-batch smooth part."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    kernel = system.kernel
    if not isinstance(kernel, KernelSpec) or not kernel.has_split:
        raise ValueError("rbm_split_step needs a kernel with a declared split")
    if state.box_length is None:
        raise ValueError("rbm_split_step needs a periodic box")
    short = short_range_force_all(state, kernel.short_part, kernel.split_radius, system.alpha_N)
    division = random_division(state.n_particles, p, streams.division)
    smooth = division_forces(state, division, kernel.smooth_part, system.alpha_N)
    return _advance_second_order(state, system, short + smooth, dt, streams.noise)


def full_pair_sum_displacement(state: ParticleState, i: int, j: int) -> np.ndarray:
    """Minimum-image displacement x_i - x_j; exposed for tests."""
    return minimum_image(state.positions[i] - state.positions[j], state.box_length)
