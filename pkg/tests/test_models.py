"""Model zoo: analytic references and right-hand sides."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from randbatch.batching import random_division
from randbatch.models import (
    ConsensusModel,
    CuckerSmaleModel,
    DysonModel,
    ElectrolyteModel,
    WealthModel,
    consensus_functionals,
    consensus_rhs,
    cs_rhs,
    dh_reference,
    dh_kappa,
    flocking_functionals,
    lj_kernel_spec,
    semicircle_cdf,
    semicircle_density,
    wealth_equilibrium_density,
)
from randbatch.rng import RngStream, SimStreams
from randbatch.state import ParticleState


def test_semicircle_values():
    assert semicircle_density(0.0) == pytest.approx(math.sqrt(2) / math.pi)
    assert semicircle_density(math.sqrt(2)) == 0.0
    assert semicircle_density(-math.sqrt(2)) == 0.0
    assert semicircle_density(2.0) == 0.0


def test_semicircle_normalization_by_quadrature():
    val, _ = quad(lambda x: float(semicircle_density(x)), -math.sqrt(2), math.sqrt(2))
    assert abs(val - 1.0) < 1e-8
    assert semicircle_cdf(-math.sqrt(2)) == pytest.approx(0.0, abs=1e-14)
    assert semicircle_cdf(math.sqrt(2)) == pytest.approx(1.0)
    # CDF derivative is the density
    h = 1e-6
    mid = (semicircle_cdf(0.3 + h) - semicircle_cdf(0.3 - h)) / (2 * h)
    assert mid == pytest.approx(semicircle_density(0.3), abs=1e-8)


def test_wealth_density_support_and_normalization():
    model = WealthModel(N=100, kappa=1.0, D=0.5)
    np.testing.assert_array_equal(model.equilibrium_density(np.array([-1.0, 0.0])), [0.0, 0.0])
    val, _ = quad(lambda y: float(model.equilibrium_density(y)), 0, 200, limit=200)
    assert abs(val - 1.0) < 1e-6
    assert wealth_equilibrium_density(0.5, 1.0, 0.5) == pytest.approx(
        float(model.equilibrium_density(np.array([0.5]))[0]))


def test_wealth_mode_matches_numeric_maximization():
    model = WealthModel(N=100, kappa=1.3, D=0.4)
    res = minimize_scalar(lambda y: -float(model.equilibrium_density(y)),
                          bounds=(1e-3, 10), method="bounded",
                          options={"xatol": 1e-10})
    assert abs(res.x - model.mode) < 1e-6


def test_wealth_cdf_consistent_with_density():
    model = WealthModel(N=100, kappa=1.0, D=0.5)
    for y in (0.3, 0.8, 2.0):
        val, _ = quad(lambda u: float(model.equilibrium_density(u)), 0, y, limit=200)
        assert abs(val - float(model.equilibrium_cdf(np.array([y]))[0])) < 1e-8


def test_wealth_stability_band():
    # Y stays finite under the RBM update at dt = 1e-3, kappa = D = 1
    gen = RngStream(1).generator()
    N, dt, steps = 16, 1e-3, 1_000_000
    kappa, D = 1.0, 1.0
    y = np.abs(gen.standard_normal(N))
    sq = math.sqrt(2 * D * dt)
    for _ in range(steps):
        perm = gen.permutation(N).reshape(-1, 2)
        partner = np.empty(N, dtype=int)
        partner[perm[:, 0]] = perm[:, 1]
        partner[perm[:, 1]] = perm[:, 0]
        y = y - dt * kappa * (y - y[partner]) + sq * y * gen.standard_normal(N)
        y = np.abs(y)
    assert np.all(np.isfinite(y))


def test_cs_rhs_flocked_fixed_point():
    model = CuckerSmaleModel(N=5, kappa=1.0, beta=0.4, dim=2)
    x = RngStream(2).generator().standard_normal((5, 2))
    v = np.tile([0.3, -0.7], (5, 1))
    np.testing.assert_allclose(cs_rhs(x, v, model), 0.0, atol=1e-14)


def test_cs_rhs_two_body_linear_alignment():
    model = CuckerSmaleModel(N=2, kappa=1.5, beta=0.0, dim=1)
    x = np.array([[0.0], [5.0]])
    v = np.array([[1.0], [-1.0]])
    dv = cs_rhs(x, v, model)
    np.testing.assert_allclose(dv[0], [1.5 * (-1.0 - 1.0)], atol=1e-14)
    np.testing.assert_allclose(dv[1], [1.5 * (1.0 + 1.0)], atol=1e-14)


def test_cs_rhs_momentum_conservation_batchwise():
    model = CuckerSmaleModel(N=12, kappa=1.0, beta=0.4, dim=3)
    gen = RngStream(3).generator()
    x, v = gen.standard_normal((12, 3)), gen.standard_normal((12, 3))
    np.testing.assert_allclose(cs_rhs(x, v, model).sum(axis=0), 0.0, atol=1e-12)
    division = random_division(12, 3, gen)
    dv = cs_rhs(x, v, model, division.assignment)
    for batch in division.iter_batches():
        np.testing.assert_allclose(dv[batch].sum(axis=0), 0.0, atol=1e-12)


def test_cs_psi_monotone():
    model = CuckerSmaleModel(N=2, beta=0.7)
    r = RngStream(4).generator().uniform(0, 10, size=(50, 2))
    vals = model.psi(r)
    sign = (vals[:, 0] - vals[:, 1]) * (r[:, 0] - r[:, 1])
    assert np.all(sign <= 1e-15)
    assert np.all(vals > 0) and np.all(vals <= 1.0)


def test_flocking_functionals_values():
    x = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    v = np.zeros((2, 3))
    sx, sv = flocking_functionals(x, v)
    assert sx == pytest.approx(0.5)
    assert sv == 0.0
    same = np.tile([1.0, 2.0, 3.0], (4, 1))
    assert flocking_functionals(same, same) == (pytest.approx(0.0, abs=1e-12),
                                                pytest.approx(0.0, abs=1e-12))


def test_flocking_functionals_match_double_loop():
    gen = RngStream(5).generator()
    x = gen.standard_normal((7, 3))
    v = gen.standard_normal((7, 3))
    sx, sv = flocking_functionals(x, v)
    brute_x = np.mean([[np.sum((x[i] - x[j]) ** 2) for j in range(7)] for i in range(7)])
    brute_v = np.mean([[np.sum((v[i] - v[j]) ** 2) for j in range(7)] for i in range(7)])
    assert sx == pytest.approx(brute_x, rel=1e-12)
    assert sv == pytest.approx(brute_v, rel=1e-12)


def test_consensus_decomposition_reconstruction():
    gen = RngStream(6).generator()
    nu = gen.standard_normal((8, 1))
    nu -= nu.mean(axis=0)
    model = ConsensusModel(N=8, kappa=1.7, nu=nu)
    model.check_decomposition(atol_antisym=1e-12, atol_recon=1e-12)


def test_consensus_full_form_reproduces_original_equation():
    gen = RngStream(7).generator()
    nu = gen.standard_normal((6, 2))
    nu -= nu.mean(axis=0)
    model = ConsensusModel(N=6, kappa=0.9, nu=nu, gamma=lambda q: np.tanh(q), dim=2)
    q = gen.standard_normal((6, 2))
    rhs = consensus_rhs(q, model)
    direct = np.empty_like(q)
    for i in range(6):
        acc = np.zeros(2)
        for j in range(6):
            if j != i:
                acc += model.adjacency[i, j] * np.tanh(q[j] - q[i])
        direct[i] = nu[i] + model.kappa / 5 * acc
    np.testing.assert_allclose(rhs, direct, atol=1e-12)


def test_consensus_zero_fixed_point():
    model = ConsensusModel(N=4, kappa=1.0)
    q = np.ones((4, 1)) * 2.5
    np.testing.assert_allclose(consensus_rhs(q, model), 0.0, atol=1e-14)


def test_consensus_functionals():
    m2, diam = consensus_functionals(np.array([[1.0], [-1.0]]))
    assert m2 == pytest.approx(1.0)
    assert diam == pytest.approx(2.0)
    assert consensus_functionals(np.zeros((5, 2))) == (0.0, 0.0)
    gen = RngStream(8).generator()
    q = gen.standard_normal((6, 2))
    perm = gen.permutation(6)
    assert consensus_functionals(q)[1] == pytest.approx(consensus_functionals(q[perm])[1])


def test_consensus_requires_zero_sum_nu():
    with pytest.raises(ValueError):
        ConsensusModel(N=3, nu=np.array([[1.0], [1.0], [1.0]]))


def test_dh_reference_line():
    assert dh_reference(1.0) == pytest.approx(-3.085)
    assert dh_reference(2.0) == pytest.approx(-5.026)
    r = np.linspace(0.5, 2.5, 9)
    slope = np.polyfit(r, dh_reference(r), 1)[0]
    assert slope == pytest.approx(-1.941)
    # the stated slope is the Debye constant sqrt(4 pi beta rho) at rho = 0.3
    assert dh_kappa(0.3) == pytest.approx(1.941, abs=1e-3)


def test_electrolyte_construction():
    model = ElectrolyteModel(N=64, L=8.0)
    q = model.charges()
    assert q.sum() == 0.0
    state = model.initial_state(RngStream(9).generator())
    assert np.all((state.positions >= 0) & (state.positions < 8.0))
    assert state.velocities.shape == (64, 3)
    with pytest.raises(ValueError):
        ElectrolyteModel(N=63, L=8.0)


def test_electrolyte_lj_matches_brute_force():
    model = ElectrolyteModel(N=16, L=4.0, lj_sigma=0.4)
    state = model.initial_state(RngStream(10).generator())
    F, energy = model.lj_force(state)
    sig, eps, rc = model.lj_sigma, model.lj_epsilon, model.lj_cutoff
    expected = np.zeros((16, 3))
    e_expected = 0.0
    for i in range(16):
        for j in range(i + 1, 16):
            d = state.positions[i] - state.positions[j]
            d -= 4.0 * np.floor(d / 4.0 + 0.5)
            r2 = float(d @ d)
            if r2 >= rc * rc:
                continue
            s6 = (sig * sig / r2) ** 3
            e_expected += 4 * eps * (s6 * s6 - s6)
            fmag = 24 * eps * (2 * s6 * s6 - s6) / r2
            expected[i] += fmag * d
            expected[j] -= fmag * d
    np.testing.assert_allclose(F, expected, atol=1e-12)
    assert energy == pytest.approx(e_expected, abs=1e-12)


def test_dyson_target_drift_symmetry():
    model = DysonModel(N=6)
    target = model.gibbs_target()
    gen = RngStream(11).generator()
    x = gen.standard_normal((6, 1))
    perm = gen.permutation(6)

    def drift(cfg, i):
        others = np.delete(np.arange(6), i)
        return (
            target.grad_V(cfg[i][None, :])[0] / (target.w * 5)
            + target.grad_phi1(cfg[i][None, :] - cfg[others]).sum(axis=0) / 5
        )

    for i in range(6):
        orig = drift(x, i)
        relabeled = drift(x[perm], int(np.flatnonzero(perm == i)[0]))
        np.testing.assert_allclose(orig, relabeled, atol=1e-12)


def test_lj_kernel_split_is_c1_and_bounded():
    spec = lj_kernel_spec(sigma=1.0, epsilon=1.0, r0=1.6)
    eps = 1e-7
    inner = spec.smooth_part(np.array([[1.6 - eps, 0.0, 0.0]]))
    outer = spec.smooth_part(np.array([[1.6 + eps, 0.0, 0.0]]))
    np.testing.assert_allclose(inner, outer, atol=1e-5)
    tiny = spec.smooth_part(np.array([[1e-4, 0.0, 0.0]]))
    assert np.all(np.abs(tiny) < 1.0)  # no core singularity in the smooth part
