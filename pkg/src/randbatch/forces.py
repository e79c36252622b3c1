"""Pairwise-force evaluation: exact sums, random-batch estimators, cell lists.

All kernels are vectorized callables mapping an (M, d) displacement array to
(M, d) force rows; displacements use the minimum-image convention whenever the
state carries a periodic box.  Summation within a batch always runs in
ascending particle order so that the p = N random-batch step reproduces the
full-batch step bit for bit.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .batching import batch_index_matrices
from .state import BatchDivision, Kernel, KernelSpec, ParticleState, minimum_image

_OFFSETS_CACHE: dict = {}


def _kernel_fn(kernel) -> Kernel:
    return kernel.force if isinstance(kernel, KernelSpec) else kernel


def batch_prefactor(alpha_N: float, N: int, batch_size: int) -> float:
    """Unbiased random-batch weight alpha_N (N-1)/(q-1) for a batch of size q."""
    return alpha_N * (N - 1) / (batch_size - 1)


def pair_sum(i: int, others: np.ndarray, state: ParticleState, kernel) -> np.ndarray:
    """Sum of K(x_i - x_j) over the given indices (self excluded)."""
    K = _kernel_fn(kernel)
    others = np.asarray(others)
    others = others[others != i]
    if others.size == 0:
        return np.zeros(state.dim)
    disp = minimum_image(state.positions[i] - state.positions[others], state.box_length)
    return np.asarray(K(disp)).sum(axis=0)


def batch_force(i: int, state: ParticleState, batch: np.ndarray, kernel, alpha_N: float) -> np.ndarray:
    """Random-batch force alpha_N (N-1)/(p-1) * sum over the batch."""
    batch = np.sort(np.asarray(batch))
    if i not in batch:
        raise ValueError("particle must belong to its batch")
    if batch.size < 2:
        raise ValueError("batch must contain at least 2 particles")
    pref = batch_prefactor(alpha_N, state.n_particles, batch.size)
    return pref * pair_sum(i, batch, state, kernel)


def full_force(i: int, state: ParticleState, kernel, alpha_N: float) -> np.ndarray:
    """Exact interaction force alpha_N * sum over all j != i."""
    if state.n_particles < 2:
        raise ValueError("need at least 2 particles")
    return alpha_N * pair_sum(i, np.arange(state.n_particles), state, kernel)


def full_force_all(state: ParticleState, kernel, alpha_N: float) -> np.ndarray:
    """Exact forces on every particle, one vectorized O(N^2) evaluation."""
    K = _kernel_fn(kernel)
    pos = state.positions
    N, d = pos.shape
    diffs = minimum_image(pos[:, None, :] - pos[None, :, :], state.box_length)
    mask = ~np.eye(N, dtype=bool)
    values = np.asarray(K(diffs[mask].reshape(N * (N - 1), d)))
    return alpha_N * values.reshape(N, N - 1, d).sum(axis=1)


def division_forces(state: ParticleState, division: BatchDivision, kernel, alpha_N: float) -> np.ndarray:
    """Random-batch forces on every particle for one shared division.

    Batches of equal size are processed as a single vectorized block; the
    remainder batch (if any) gets its own size-matched prefactor.
    """
    K = _kernel_fn(kernel)
    pos = state.positions
    N, d = pos.shape
    out = np.zeros((N, d))
    for size, idx in batch_index_matrices(division.assignment):
        if size < 2:
            raise ValueError("degenerate batch of size < 2")
        x = pos[idx]
        diffs = minimum_image(x[:, :, None, :] - x[:, None, :, :], state.box_length)
        offdiag = ~np.eye(size, dtype=bool)
        rows = diffs[:, offdiag].reshape(-1, d)
        values = np.asarray(K(rows)).reshape(idx.shape[0], size, size - 1, d)
        pref = batch_prefactor(alpha_N, N, size)
        out[idx] = pref * values.sum(axis=2)
    return out


def chi(i: int, state: ParticleState, batch: np.ndarray, kernel) -> np.ndarray:
    """Force-estimator error: batch average minus full average of K around i."""
    batch = np.asarray(batch)
    if i not in batch:
        raise ValueError("particle must belong to its batch")
    N = state.n_particles
    batch_avg = pair_sum(i, batch, state, kernel) / (batch.size - 1)
    full_avg = pair_sum(i, np.arange(N), state, kernel) / (N - 1)
    return batch_avg - full_avg


def interaction_spread(i: int, state: ParticleState, kernel) -> float:
    """Spread of the pair forces around their mean: the Lambda_i factor.

    (1/(N-2)) sum_{j != i} |K(x_i - x_j) - mean_l K(x_i - x_l)|^2.
    """
    K = _kernel_fn(kernel)
    N = state.n_particles
    if N < 3:
        raise ValueError("need at least 3 particles")
    others = np.delete(np.arange(N), i)
    disp = minimum_image(state.positions[i] - state.positions[others], state.box_length)
    values = np.asarray(K(disp))
    mean = values.mean(axis=0)
    return float(np.sum((values - mean) ** 2) / (N - 2))


def chi_variance_exact(i: int, state: ParticleState, p: int, kernel) -> float:
    """Closed-form scalar variance of chi_i over a uniform random division.

    (1/(p-1) - 1/(N-1)) * Lambda_i; for d > 1 this is the trace of the
    covariance.  Valid for configurations independent of the division.
    """
    N = state.n_particles
    if not 2 <= p <= N:
        raise ValueError("need 2 <= p <= N")
    if p == N:
        return 0.0
    return (1.0 / (p - 1) - 1.0 / (N - 1)) * interaction_spread(i, state, kernel)


class ClampedKernel:
    """Guard for singular kernels used without a declared split.

    Displacement rows with |x| below ``eps`` are rescaled to length ``eps``
    before evaluation, and every clamp is counted; the counter makes silent
    regularization impossible.
    """

    def __init__(self, kernel: Kernel, eps: float):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.kernel = kernel
        self.eps = eps
        self.clamp_count = 0

    def __call__(self, disp: np.ndarray) -> np.ndarray:
        disp = np.atleast_2d(np.asarray(disp, dtype=np.float64))
        norms = np.linalg.norm(disp, axis=1)
        small = norms < self.eps
        if np.any(small):
            self.clamp_count += int(small.sum())
            disp = disp.copy()
            zero = small & (norms == 0.0)
            if np.any(zero):
                disp[zero, 0] = self.eps  # direction undefined at 0; pick axis 0
            grow = small & (norms > 0.0)
            disp[grow] *= (self.eps / norms[grow])[:, None]
        return self.kernel(disp)


def suggested_clamp_eps(state: ParticleState) -> float:
    """1e-6 times the typical inter-particle distance."""
    if state.box_length is not None:
        typical = state.box_length / state.n_particles ** (1.0 / state.dim)
    else:
        span = np.ptp(state.positions, axis=0).max()
        typical = span / max(state.n_particles ** (1.0 / state.dim), 1.0)
    return 1e-6 * float(typical)


@dataclass
class CellList:
    """Uniform grid over a periodic box; cell edge >= the query cutoff."""

    box_length: float
    n_cells: int
    cell_ids: np.ndarray
    order: np.ndarray
    starts: np.ndarray

    @classmethod
    def build(cls, positions: np.ndarray, box_length: float, cutoff: float) -> "CellList":
        N, d = positions.shape
        m = max(int(box_length // cutoff), 1)
        coords = np.floor(positions / (box_length / m)).astype(np.int64)
        coords = np.clip(coords, 0, m - 1)
        flat = np.zeros(N, dtype=np.int64)
        for axis in range(d):
            flat = flat * m + coords[:, axis]
        order = np.argsort(flat, kind="stable")
        starts = np.searchsorted(flat[order], np.arange(m**d + 1))
        return cls(box_length=box_length, n_cells=m, cell_ids=flat, order=order, starts=starts)

    def _neighbor_cells(self, cell: int, dim: int) -> np.ndarray:
        m = self.n_cells
        key = (m, dim)
        if key not in _OFFSETS_CACHE:
            grids = np.meshgrid(*([np.array([-1, 0, 1])] * dim), indexing="ij")
            _OFFSETS_CACHE[key] = np.stack([g.ravel() for g in grids], axis=1)
        offsets = _OFFSETS_CACHE[key]
        coords = np.empty(dim, dtype=np.int64)
        c = cell
        for axis in range(dim - 1, -1, -1):
            coords[axis] = c % m
            c //= m
        neigh = np.mod(coords[None, :] + offsets, m)
        flat = np.zeros(len(neigh), dtype=np.int64)
        for axis in range(dim):
            flat = flat * m + neigh[:, axis]
        return np.unique(flat)

    def candidates(self, i: int, dim: int) -> np.ndarray:
        """Particles in the cell of i and its adjacent cells (i excluded)."""
        cells = self._neighbor_cells(self.cell_ids[i], dim)
        chunks = [self.order[self.starts[c]: self.starts[c + 1]] for c in cells]
        cand = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        return cand[cand != i]


def short_range_force(
    i: int,
    state: ParticleState,
    K1: Kernel,
    r0: float,
    alpha_N: float,
    cell_list: Optional[CellList] = None,
) -> np.ndarray:
    """alpha_N * sum of K1 over neighbors within r0, found through a cell list."""
    if state.box_length is None:
        raise ValueError("short-range force requires a periodic box")
    if r0 >= state.box_length / 2:
        raise ValueError("cutoff must be below half the box length")
    if cell_list is None:
        cell_list = CellList.build(state.positions, state.box_length, r0)
    cand = cell_list.candidates(i, state.dim)
    if cand.size == 0:
        return np.zeros(state.dim)
    disp = minimum_image(state.positions[i] - state.positions[cand], state.box_length)
    within = np.einsum("ij,ij->i", disp, disp) < r0 * r0
    if not np.any(within):
        return np.zeros(state.dim)
    return alpha_N * np.asarray(K1(disp[within])).sum(axis=0)


def short_range_force_all(state: ParticleState, K1: Kernel, r0: float, alpha_N: float) -> np.ndarray:
    """Short-range forces on all particles; one shared cell list per call."""
    cl = CellList.build(state.positions, state.box_length, r0)
    out = np.empty_like(state.positions)
    for i in range(state.n_particles):
        out[i] = short_range_force(i, state, K1, r0, alpha_N, cell_list=cl)
    return out
