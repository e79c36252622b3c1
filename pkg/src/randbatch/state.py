"""Particle state, interaction kernels and batch divisions."""

from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

Kernel = Callable[[np.ndarray], np.ndarray]
"""Vectorized pair kernel: maps an (M, d) array of displacements to (M, d) forces."""


def wrap_positions(positions: np.ndarray, box_length: float) -> np.ndarray:
    """Map coordinates into the primary box [0, L)."""
    return np.mod(positions, box_length)


def minimum_image(disp: np.ndarray, box_length: Optional[float]) -> np.ndarray:
    """Wrap displacement components into [-L/2, L/2)."""
    if box_length is None:
        return disp
    half = 0.5 * box_length
    return np.mod(disp + half, box_length) - half


@dataclass
class ParticleState:
    """Positions (and optionally velocities) of N particles in d dimensions."""

    positions: np.ndarray
    velocities: Optional[np.ndarray] = None
    box_length: Optional[float] = None
    time: float = 0.0

    def __post_init__(self):
        pos = np.ascontiguousarray(np.atleast_2d(np.asarray(self.positions, dtype=np.float64)))
        if pos.ndim != 2:
            raise ValueError("positions must be an (N, d) array")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if self.box_length is not None:
            if self.box_length <= 0:
                raise ValueError("box_length must be positive")
            pos = wrap_positions(pos, self.box_length)
        self.positions = pos
        if self.velocities is not None:
            vel = np.ascontiguousarray(np.asarray(self.velocities, dtype=np.float64))
            if vel.shape != pos.shape:
                raise ValueError("velocities must have the same shape as positions")
            self.velocities = vel
        if self.time < 0:
            raise ValueError("time must be nonnegative")

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def displacement(self, xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
        """xi - xj under the minimum-image convention when periodic."""
        return minimum_image(xi - xj, self.box_length)

    def replace(self, positions=None, velocities=None, time=None) -> "ParticleState":
        return ParticleState(
            positions=self.positions if positions is None else positions,
            velocities=self.velocities if velocities is None else velocities,
            box_length=self.box_length,
            time=self.time if time is None else time,
        )


@dataclass
class KernelSpec:
    """Pairwise force kernel, optionally split into short + smooth parts.

    When a split is declared, ``short_part`` must vanish for |x| >= split_radius
    and ``short_part + smooth_part`` must reproduce ``force``.
    """

    force: Kernel
    split_radius: Optional[float] = None
    short_part: Optional[Kernel] = None
    smooth_part: Optional[Kernel] = None

    def __post_init__(self):
        if self.split_radius is not None:
            if self.split_radius <= 0:
                raise ValueError("split_radius must be positive")
            if self.short_part is None or self.smooth_part is None:
                raise ValueError("a split kernel needs both short_part and smooth_part")

    @property
    def has_split(self) -> bool:
        return self.split_radius is not None

    def check_split(self, rng: np.random.Generator, dim: int = 1, n_samples: int = 200):
        """Verify the split identities on random sample points; raises on failure."""
        if not self.has_split:
            return
        r0 = self.split_radius
        # short part must vanish outside the cutoff
        radii = rng.uniform(r0, 2 * r0, size=n_samples)
        dirs = rng.standard_normal((n_samples, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        x = radii[:, None] * dirs
        k1 = np.asarray(self.short_part(x))
        if np.max(np.abs(k1)) > 1e-12:
            raise ValueError("short_part does not vanish beyond split_radius")
        # K = K1 + K2 on points spanning both ranges
        radii = rng.uniform(0.05 * r0, 2 * r0, size=n_samples)
        x = radii[:, None] * dirs
        total = np.asarray(self.force(x))
        recomposed = np.asarray(self.short_part(x)) + np.asarray(self.smooth_part(x))
        bound = 1e-12 * (1.0 + np.abs(total))
        if np.any(np.abs(total - recomposed) > bound):
            raise ValueError("short_part + smooth_part does not reproduce force")


@dataclass
class BatchDivision:
    """A random partition of {0..N-1} into batches of (nominal) size p."""

    assignment: np.ndarray
    batch_size: int
    n_batches: int = field(init=False)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        self.n_batches = int(self.assignment.max()) + 1 if self.assignment.size else 0

    @property
    def n_particles(self) -> int:
        return self.assignment.shape[0]

    def batch_of(self, i: int) -> np.ndarray:
        """Sorted indices of the batch containing particle i."""
        return np.flatnonzero(self.assignment == self.assignment[i])

    def iter_batches(self) -> Iterator[np.ndarray]:
        """Yield each batch as a sorted index array."""
        order = np.argsort(self.assignment, kind="stable")
        sorted_ids = self.assignment[order]
        boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
        for chunk in np.split(order, boundaries):
            yield np.sort(chunk)

    def validate(self):
        """Check the partition property; raises on violation."""
        counts = np.bincount(self.assignment, minlength=self.n_batches)
        small = np.flatnonzero(counts != self.batch_size)
        # at most one remainder batch, and it must be the last one
        if small.size > 1 or (small.size == 1 and small[0] != self.n_batches - 1):
            raise ValueError("batches are not of uniform size p (plus one remainder)")
        if small.size == 1 and not (2 <= counts[small[0]] <= self.batch_size + 1):
            raise ValueError("remainder batch has invalid size")
