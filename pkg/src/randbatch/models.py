"""Built-in models binding the generic machinery to concrete systems.

Each model carries its analytic reference (semicircle law, inverse-Gamma
wealth equilibrium, Debye-Hueckel screening line) so simulations can be
checked quantitatively without external data.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaincc

from .backend import njit
from .batching import batch_index_matrices, random_division
from .integrators import FirstOrderSystem, rbm_step_first_order, direct_step
from .rng import SimStreams
from .samplers import GibbsTarget, log_kernel_split
from .state import ParticleState

ETA_WEALTH = math.sqrt(2.0 / math.pi)  # mean of |N(0,1)| initial wealth


# --- Dyson Brownian motion ----------------------------------------------------


@dataclass(frozen=True)
class DysonModel:
    """Eigenvalue gas: drift -x, kernel 1/x, noise 1/sqrt(N-1), d = 1."""

    N: int
    split_radius: float = 0.01

    def gibbs_target(self) -> GibbsTarget:
        """Invariant Gibbs measure exp(-[(N-1)/2 sum x^2 - sum_{i<j} ln|x_i-x_j|]).

        In the (beta, w) normal form this is w = 1/(N-1), beta = (N-1)^2 with
        V(x) = x^2/2 and phi(r) = -ln|r| split at the model's radius.
        """
        phi1, grad_phi1, phi2 = log_kernel_split(self.split_radius)
        N = self.N
        return GibbsTarget(
            V=lambda x: 0.5 * np.sum(x * x, axis=1),
            grad_V=lambda x: x,
            phi1=phi1,
            grad_phi1=grad_phi1,
            phi2=phi2,
            phi2_cutoff=self.split_radius,
            beta=float((N - 1) ** 2),
            w=1.0 / (N - 1),
            N=N,
        )

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.2, 1.2, size=self.N)


def semicircle_density(x) -> np.ndarray:
    """Equilibrium eigenvalue density (1/pi) sqrt(2 - x^2) on |x| <= sqrt(2)."""
    x = np.asarray(x, dtype=np.float64)
    inside = 2.0 - x * x
    return np.where(inside > 0, np.sqrt(np.maximum(inside, 0.0)) / math.pi, 0.0)


def semicircle_cdf(x) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), -math.sqrt(2.0), math.sqrt(2.0))
    inside = np.maximum(2.0 - x * x, 0.0)
    return 0.5 + (x * np.sqrt(inside) + 2.0 * np.arcsin(np.clip(x / math.sqrt(2.0), -1, 1))) / (
        2.0 * math.pi
    )


# --- wealth exchange ----------------------------------------------------------


@dataclass(frozen=True)
class WealthModel:
    """Homogeneous trading dY = -kappa mean_k (Y_i - Y_k) dt + sqrt(2D) Y dW.

    The quadratic trading potential gives the linear exchange drift; the noise
    is multiplicative, so the mean wealth is conserved.  Starting from
    |N(0,1)| wealth the conserved mean is sqrt(2/pi), which fixes the
    inverse-Gamma equilibrium completely.
    """

    N: int
    kappa: float = 1.0
    D: float = 0.5

    def __post_init__(self):
        if self.kappa <= 0 or self.D <= 0:
            raise ValueError("kappa and D must be positive")

    def system(self) -> FirstOrderSystem:
        kappa = self.kappa
        return FirstOrderSystem(
            kernel=lambda y: -kappa * y,
            alpha_N=1.0 / (self.N - 1),
            sigma=math.sqrt(2.0 * self.D),
            noise_mode="multiplicative",
            noise_scale=lambda y: y,
        )

    @property
    def shape(self) -> float:
        return self.kappa / self.D + 1.0

    @property
    def scale(self) -> float:
        return self.kappa * ETA_WEALTH / self.D

    @property
    def mode(self) -> float:
        return self.kappa * ETA_WEALTH / (self.kappa + 2.0 * self.D)

    def equilibrium_density(self, y) -> np.ndarray:
        """Inverse-Gamma density with shape kappa/D + 1 and scale kappa eta / D."""
        y = np.asarray(y, dtype=np.float64)
        a, b = self.shape, self.scale
        out = np.zeros_like(y)
        pos = y > 0
        yp = y[pos]
        out[pos] = np.exp(a * math.log(b) - math.lgamma(a) - (a + 1) * np.log(yp) - b / yp)
        return out

    def equilibrium_cdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros_like(y)
        pos = y > 0
        out[pos] = gammaincc(self.shape, self.scale / y[pos])
        return out

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        return np.abs(rng.standard_normal(self.N))


@dataclass
class WealthRunResult:
    wealth: np.ndarray
    reflections: int
    positive_fraction: float


def simulate_wealth(
    model: WealthModel,
    p: int,
    dt: float,
    T: float,
    streams: SimStreams,
    method: str = "rbm",
) -> WealthRunResult:
    """Run the wealth SDE to time T; zero crossings are reflected and counted."""
    system = model.system()
    state = ParticleState(positions=model.initial(streams.init)[:, None])
    steps = int(round(T / dt))
    reflections = 0
    for _ in range(steps):
        if method == "rbm":
            state = rbm_step_first_order(state, system, p, dt, streams)
        else:
            state = direct_step(state, system, dt, streams)
        neg = state.positions <= 0
        if np.any(neg):
            reflections += int(neg.sum())
            state = state.replace(positions=np.abs(state.positions))
    wealth = state.positions[:, 0]
    return WealthRunResult(
        wealth=wealth,
        reflections=reflections,
        positive_fraction=float(np.mean(wealth > 0)),
    )


def wealth_equilibrium_density(y, kappa: float, D: float) -> np.ndarray:
    return WealthModel(N=2, kappa=kappa, D=D).equilibrium_density(y)


# --- Cucker-Smale flocking ----------------------------------------------------


@dataclass(frozen=True)
class CuckerSmaleModel:
    """Velocity alignment with communication psi(r) = (1 + r^2)^(-beta/2)."""

    N: int
    kappa: float = 1.0
    beta: float = 0.4
    dim: int = 3

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    def psi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        return (1.0 + r * r) ** (-self.beta / 2.0)

    def initial(self, rng: np.random.Generator):
        x = rng.standard_normal((self.N, self.dim))
        v = rng.standard_normal((self.N, self.dim))
        return x, v


def cs_rhs(
    positions: np.ndarray,
    velocities: np.ndarray,
    model: CuckerSmaleModel,
    assignment: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Velocity derivatives (kappa / (n-1)) sum psi(|x_j - x_i|) (v_j - v_i).

    Full-batch over all pairs, or batch-restricted with the kappa/(p-1)
    weight when a division assignment is given.
    """

    def block(x, v, weight):
        dx = x[..., None, :, :] - x[..., :, None, :]
        dv = v[..., None, :, :] - v[..., :, None, :]
        w = model.psi(np.sqrt(np.einsum("...ijk,...ijk->...ij", dx, dx)))
        return weight * np.einsum("...ij,...ijk->...ik", w, dv)

    if assignment is None:
        return block(positions, velocities, model.kappa / (positions.shape[0] - 1))
    out = np.empty_like(velocities)
    for size, idx in batch_index_matrices(assignment):
        out[idx] = block(positions[idx], velocities[idx], model.kappa / (size - 1))
    return out


def flocking_functionals(positions: np.ndarray, velocities: np.ndarray):
    """Mean-square spreads (1/N^2) sum_{ij} |x_i - x_j|^2 and same for v."""

    def spread(a):
        mean = a.mean(axis=0)
        return 2.0 * float(np.mean(np.sum((a - mean) ** 2, axis=1)))

    return spread(positions), spread(velocities)


@dataclass
class FlockingRunResult:
    times: np.ndarray
    x_spread: np.ndarray
    v_spread: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray


def simulate_flocking(
    model: CuckerSmaleModel,
    p: int,
    dt: float,
    steps: int,
    streams: SimStreams,
    record_every: int = 1,
) -> FlockingRunResult:
    """RBM-Euler run of the Cucker-Smale dynamics, recording both spreads."""
    x, v = model.initial(streams.init)
    times, xs, vs = [], [], []
    for k in range(steps + 1):
        if k % record_every == 0:
            sx, sv = flocking_functionals(x, v)
            times.append(k * dt)
            xs.append(sx)
            vs.append(sv)
        if k == steps:
            break
        division = random_division(model.N, p, streams.division)
        dv = cs_rhs(x, v, model, division.assignment)
        x = x + dt * v
        v = v + dt * dv
    return FlockingRunResult(
        times=np.array(times),
        x_spread=np.array(xs),
        v_spread=np.array(vs),
        positions=x,
        velocities=v,
    )


# --- consensus dynamics -------------------------------------------------------


@dataclass
class ConsensusModel:
    """Agents with intrinsic velocities nu_i seeking consensus through Gamma.

    The dispersion term is decomposed as antisymmetric nu_bar with
    (kappa/(N-1)) sum_j nu_bar[i, j] = nu_i, so random batching can sample
    dispersion and interaction proportionally.  The default decomposition is
    nu_bar[i, j] = (N-1) (nu_i - nu_j) / (kappa N), valid when sum nu = 0.
    """

    N: int
    kappa: float = 1.0
    nu: Optional[np.ndarray] = None
    adjacency: Optional[np.ndarray] = None
    gamma: Callable = field(default=lambda q: q)
    nu_bar: Optional[np.ndarray] = None
    dim: int = 1

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.nu is None:
            self.nu = np.zeros((self.N, self.dim))
        self.nu = np.asarray(self.nu, dtype=np.float64).reshape(self.N, -1)
        self.dim = self.nu.shape[1]
        if abs(self.nu.sum(axis=0)).max() > 1e-10:
            raise ValueError("intrinsic velocities must sum to zero")
        if self.adjacency is None:
            self.adjacency = np.ones((self.N, self.N)) - np.eye(self.N)
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if not np.allclose(self.adjacency, self.adjacency.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(self.adjacency < 0):
            raise ValueError("adjacency must be nonnegative")
        if self.nu_bar is None:
            self.nu_bar = (
                (self.N - 1) * (self.nu[:, None, :] - self.nu[None, :, :]) / (self.kappa * self.N)
            )
        self.nu_bar = np.asarray(self.nu_bar, dtype=np.float64)

    def check_decomposition(self, atol_antisym=1e-12, atol_recon=1e-10):
        """Verify antisymmetry and the reconstruction identity of nu_bar."""
        skew = self.nu_bar + np.transpose(self.nu_bar, (1, 0, 2))
        if np.max(np.abs(skew)) > atol_antisym:
            raise ValueError("dispersion decomposition is not antisymmetric")
        recon = self.kappa / (self.N - 1) * self.nu_bar.sum(axis=1)
        if np.max(np.abs(recon - self.nu)) > atol_recon:
            raise ValueError("dispersion decomposition does not reconstruct nu")

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        """Centered Gaussian start (zero mean, so consensus targets the origin)."""
        q = rng.standard_normal((self.N, self.dim))
        return q - q.mean(axis=0)


def consensus_rhs(
    q: np.ndarray,
    model: ConsensusModel,
    assignment: Optional[np.ndarray] = None,
) -> np.ndarray:
    """dq_i = weight * sum_j (nu_bar_ij + a_ij Gamma(q_j - q_i)), j in scope.

    Full form uses kappa/(N-1) over all j; the batched form samples both the
    dispersion and the interaction with weight kappa/(p-1).
    """
    q = np.atleast_2d(q)

    def block(idx):
        qi = q[idx]
        dq = qi[None, :, :] - qi[:, None, :]
        inter = model.adjacency[np.ix_(idx, idx)][:, :, None] * model.gamma(dq)
        disp = model.nu_bar[np.ix_(idx, idx)]
        return (disp + inter).sum(axis=1)

    if assignment is None:
        return model.kappa / (model.N - 1) * block(np.arange(model.N))
    out = np.empty_like(q)
    for size, matrices in batch_index_matrices(assignment):
        for idx in matrices:
            out[idx] = model.kappa / (size - 1) * block(idx)
    return out


def consensus_functionals(q: np.ndarray):
    """(M2, D): mean squared norm and maximal pairwise distance."""
    q = np.atleast_2d(q)
    m2 = float(np.mean(np.sum(q * q, axis=1)))
    dq = q[:, None, :] - q[None, :, :]
    diam = float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", dq, dq))))
    return m2, diam


@dataclass
class ConsensusRunResult:
    times: np.ndarray
    m2: np.ndarray
    diameter: np.ndarray
    q: np.ndarray


def simulate_consensus(
    model: ConsensusModel,
    p: int,
    dt: float,
    steps: int,
    streams: SimStreams,
    q0: Optional[np.ndarray] = None,
    record_every: int = 1,
) -> ConsensusRunResult:
    q = model.initial(streams.init) if q0 is None else np.atleast_2d(np.asarray(q0, dtype=np.float64)).reshape(model.N, -1)
    times, m2s, ds = [], [], []
    for k in range(steps + 1):
        if k % record_every == 0:
            m2, diam = consensus_functionals(q)
            times.append(k * dt)
            m2s.append(m2)
            ds.append(diam)
        if k == steps:
            break
        division = random_division(model.N, p, streams.division)
        q = q + dt * consensus_rhs(q, model, division.assignment)
    return ConsensusRunResult(times=np.array(times), m2=np.array(m2s), diameter=np.array(ds), q=q)


# --- electrolyte --------------------------------------------------------------


@njit
def _lj_kernel(pos, L, sigma, eps, r_cut, forces):
    """Truncated (unshifted) Lennard-Jones forces and energy, Newton pairs."""
    N = pos.shape[0]
    rc2 = r_cut * r_cut
    energy = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            dx -= L * math.floor(dx / L + 0.5)
            dy -= L * math.floor(dy / L + 0.5)
            dz -= L * math.floor(dz / L + 0.5)
            r2 = dx * dx + dy * dy + dz * dz
            if r2 >= rc2:
                continue
            s2 = sigma * sigma / r2
            s6 = s2 * s2 * s2
            energy += 4.0 * eps * (s6 * s6 - s6)
            fmag = 24.0 * eps * (2.0 * s6 * s6 - s6) / r2
            forces[i, 0] += fmag * dx
            forces[i, 1] += fmag * dy
            forces[i, 2] += fmag * dz
            forces[j, 0] -= fmag * dx
            forces[j, 1] -= fmag * dy
            forces[j, 2] -= fmag * dz
    return energy


@dataclass(frozen=True)
class ElectrolyteModel:
    """Monovalent binary electrolyte: +-1 charges with a Lennard-Jones core.

    Reduced units with dielectric 1/(4 pi), so a unit charge has potential
    q/r.  The LJ diameter plays the role of the effective ion size.
    """

    N: int
    L: float
    lj_sigma: float = 0.2
    lj_epsilon: float = 1.0
    lj_cutoff_factor: float = 2.5
    temperature: float = 1.0

    def __post_init__(self):
        if self.N % 2 != 0:
            raise ValueError("need an even particle count (half cations, half anions)")

    @property
    def rho_r(self) -> float:
        return self.N / self.L**3

    @property
    def lj_cutoff(self) -> float:
        return self.lj_cutoff_factor * self.lj_sigma

    def charges(self) -> np.ndarray:
        q = np.empty(self.N)
        q[0::2] = 1.0
        q[1::2] = -1.0
        return q

    def initial_state(self, rng: np.random.Generator) -> ParticleState:
        """Charges alternating on a cubic lattice with a small jitter."""
        n_side = math.ceil(self.N ** (1.0 / 3.0))
        spacing = self.L / n_side
        coords = np.stack(
            np.meshgrid(*([np.arange(n_side)] * 3), indexing="ij"), axis=-1
        ).reshape(-1, 3)[: self.N]
        pos = (coords + 0.5) * spacing
        pos = pos + 0.05 * spacing * rng.standard_normal(pos.shape)
        vel = math.sqrt(self.temperature) * rng.standard_normal(pos.shape)
        vel -= vel.mean(axis=0)
        return ParticleState(positions=pos, velocities=vel, box_length=self.L)

    def lj_force(self, state: ParticleState):
        forces = np.zeros_like(state.positions)
        energy = _lj_kernel(
            state.positions, self.L, self.lj_sigma, self.lj_epsilon, self.lj_cutoff, forces
        )
        return forces, float(energy)


def dh_reference(r) -> np.ndarray:
    """Debye-Hueckel screening line ln(r rho(r)) = -1.941 r - 1.144."""
    return -1.941 * np.asarray(r, dtype=np.float64) - 1.144


def dh_kappa(rho_r: float, beta: float = 1.0, q: float = 1.0) -> float:
    """Inverse screening length kappa = sqrt(4 pi beta q^2 rho_r)."""
    return math.sqrt(4.0 * math.pi * beta * q * q * rho_r)


def split_radial_force(h: Callable, h_prime: Callable, r0: float) -> "KernelSpec":
    """Split a radial force K(x) = x h(|x|) at r0 into short + smooth parts.

    The smooth part continues h inside r0 as h(r0) (a + b (r/r0)^2) with value
    and slope matched at r0, so it is C^1, bounded and free of the core
    singularity; the short part K - K2 vanishes identically beyond r0.
    """
    from .state import KernelSpec

    h0 = float(h(r0))
    b = r0 * float(h_prime(r0)) / (2.0 * h0)
    a = 1.0 - b

    def radial(x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = np.sqrt(np.einsum("ij,ij->i", x, x))[:, None]
        return x, r

    def force(x):
        x, r = radial(x)
        return x * h(np.maximum(r, 1e-300))

    def smooth(x):
        x, r = radial(x)
        outer = h(np.maximum(r, r0))
        inner = h0 * (a + b * (r / r0) ** 2)
        return x * np.where(r >= r0, outer, inner)

    def short(x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return force(x) - smooth(x)

    return KernelSpec(force=force, split_radius=r0, short_part=short, smooth_part=smooth)


def lj_kernel_spec(sigma: float = 1.0, epsilon: float = 1.0, r0: float = 1.6):
    """Lennard-Jones pair force split for the kernel-splitting RBM."""
    s6 = sigma**6
    s12 = s6 * s6

    def h(r):
        return 24.0 * epsilon * (2.0 * s12 / r**14 - s6 / r**8)

    def h_prime(r):
        return 24.0 * epsilon * (-28.0 * s12 / r**15 + 8.0 * s6 / r**9)

    return split_radial_force(h, h_prime, r0)


# --- toy benchmark system -----------------------------------------------------


def toy_lipschitz_system(N: int, sigma: float = 0.5) -> FirstOrderSystem:
    """dx = [-x + mean_j sin(x_i - x_j)] dt + sigma dW; Lipschitz throughout."""
    return FirstOrderSystem(
        kernel=np.sin,
        alpha_N=1.0 / (N - 1),
        drift=lambda x: -x,
        sigma=sigma,
    )
