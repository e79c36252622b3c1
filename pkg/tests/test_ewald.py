"""Ewald splitting: exact sums, discrete-Gaussian sampling, RBE estimator."""

import cmath
import math

import numpy as np
import pytest

from randbatch.ewald import (
    EwaldParams,
    PeriodicChargeSystem,
    discrete_gaussian_moments,
    ewald_energy,
    fourier_energy,
    fourier_force_exact,
    fourier_force_exact_all,
    kvectors_in_ball,
    mh_sample_kvectors,
    rbe_force_all,
    real_space_force,
    real_space_force_all,
    self_energy,
    structure_factor,
    structure_factors,
    sum_S,
    rbe_md_step,
)
from randbatch.rng import RngStream, SimStreams
from randbatch.state import ParticleState


def _random_electroneutral(N, L, seed, velocities=False):
    gen = RngStream(seed).generator()
    pos = gen.uniform(0, L, size=(N, 3))
    vel = gen.standard_normal((N, 3)) if velocities else None
    charges = np.tile([1.0, -1.0], N // 2)
    state = ParticleState(positions=pos, velocities=vel, box_length=L)
    return PeriodicChargeSystem(state=state, charges=charges)


def test_sum_s_matches_poisson_form():
    S = sum_S(1.0, 10.0)
    H = (S + 1.0) ** (1 / 3)
    assert abs(H - math.sqrt(100 / math.pi) * (1 + 2 * math.e**-100)) < 1e-4
    assert abs(H - 5.64190) < 1e-4


def test_sum_s_matches_brute_lattice_sum():
    m = np.arange(-20, 21)
    mm = np.stack(np.meshgrid(m, m, m, indexing="ij"), -1).reshape(-1, 3)
    mm = mm[np.any(mm != 0, axis=1)]
    brute = np.exp(-np.pi**2 * (mm**2).sum(1) / 100.0).sum()
    assert abs(sum_S(1.0, 10.0) - brute) < 1e-10


def test_sum_s_positive():
    for alpha, L in [(0.1, 3.0), (2.0, 8.0), (5.0, 20.0)]:
        assert sum_S(alpha, L) > 0


def test_mh_sampler_statistics():
    bank = mh_sample_kvectors(1.0, 10.0, 100_000, RngStream(17))
    m = np.rint(bank.samples * 10.0 / (2 * np.pi))
    assert not np.any(np.all(m == 0, axis=1))
    _, var_exact = discrete_gaussian_moments(1.0, 10.0)
    sigma_mean = math.sqrt(var_exact / len(m))
    assert np.all(np.abs(m.mean(axis=0)) < 3 * sigma_mean * 1.5)
    assert np.all(np.abs(m.var(axis=0) - var_exact) / var_exact < 0.05)


def test_bank_determinism_and_ordered_consumption():
    a = mh_sample_kvectors(0.8, 9.0, 2000, RngStream(5))
    b = mh_sample_kvectors(0.8, 9.0, 2000, RngStream(5))
    np.testing.assert_array_equal(a.samples, b.samples)
    first = a.draw(100)
    np.testing.assert_array_equal(first, b.samples[:100])
    second = a.draw(100)
    np.testing.assert_array_equal(second, b.samples[100:200])


def test_bank_refills_instead_of_reusing():
    bank = mh_sample_kvectors(0.8, 9.0, 64, RngStream(6))
    bank.draw(50)
    out = bank.draw(50)  # forces a refill
    assert len(bank.samples) > 64
    assert bank.cursor == 100
    assert out.shape == (50, 3)
    assert not np.any(np.all(out == 0.0, axis=1))


def test_structure_factor_point_charges():
    st = ParticleState(positions=np.zeros((2, 3)), box_length=5.0)
    sys_one = PeriodicChargeSystem(
        state=ParticleState(positions=np.array([[0.0, 0, 0], [2.0, 0, 0]]), box_length=5.0),
        charges=np.array([1.0, -1.0]),
    )
    k = np.array([2 * np.pi / 5, 0, 0])
    # single positive charge at the origin plus canceling partner far away
    sys_cancel = PeriodicChargeSystem(state=st, charges=np.array([1.0, -1.0]))
    assert abs(structure_factor(sys_cancel, k)) < 1e-14
    rho = structure_factor(sys_one, k)
    expected = 1.0 - cmath.exp(1j * k[0] * 2.0)
    assert abs(rho - expected) < 1e-13


def test_structure_factor_against_independent_loop():
    system = _random_electroneutral(10, 7.0, seed=21)
    kvecs = kvectors_in_ball(7.0, 3.0)[:50]
    fast = structure_factors(system, kvecs)
    for idx in range(len(kvecs)):
        slow = sum(
            system.charges[i] * cmath.exp(1j * float(np.dot(kvecs[idx], system.state.positions[i])))
            for i in range(10)
        )
        assert abs(fast[idx] - slow) < 1e-13


def test_structure_factor_conjugate_symmetry():
    system = _random_electroneutral(8, 6.0, seed=22)
    k = np.array([2 * np.pi / 6, -4 * np.pi / 6, 2 * np.pi / 6])
    assert abs(structure_factor(system, k) - structure_factor(system, -k).conjugate()) < 1e-12


def test_fourier_force_zero_charges():
    st = ParticleState(positions=RngStream(1).generator().uniform(0, 5, (6, 3)), box_length=5.0)
    system = PeriodicChargeSystem(state=st, charges=np.zeros(6))
    params = EwaldParams.for_system(6, 5.0)
    np.testing.assert_array_equal(fourier_force_exact_all(system, params), np.zeros((6, 3)))


def test_fourier_forces_sum_to_zero():
    system = _random_electroneutral(16, 8.0, seed=23)
    params = EwaldParams.for_system(16, 8.0)
    F = fourier_force_exact_all(system, params)
    np.testing.assert_allclose(F.sum(axis=0), 0.0, atol=1e-10)


def test_fourier_force_matches_energy_gradient():
    system = _random_electroneutral(6, 6.0, seed=24)
    params = EwaldParams(alpha=1.0, r_c=2.5, k_c=2 * np.pi / 6.0 * 8, p=10)
    F = fourier_force_exact_all(system, params)
    h = 1e-5
    for i in (0, 3):
        for c in range(3):
            shifted_plus = system.state.positions.copy()
            shifted_plus[i, c] += h
            shifted_minus = system.state.positions.copy()
            shifted_minus[i, c] -= h
            up = fourier_energy(PeriodicChargeSystem(
                state=ParticleState(positions=shifted_plus, box_length=6.0),
                charges=system.charges), params)
            down = fourier_energy(PeriodicChargeSystem(
                state=ParticleState(positions=shifted_minus, box_length=6.0),
                charges=system.charges), params)
            assert abs(F[i, c] - (-(up - down) / (2 * h))) < 1e-6


def test_fourier_force_pair_attraction():
    # +1 and -1 separated along x: force on + points toward -
    st = ParticleState(positions=np.array([[1.0, 3.0, 3.0], [3.0, 3.0, 3.0]]), box_length=6.0)
    system = PeriodicChargeSystem(state=st, charges=np.array([1.0, -1.0]))
    params = EwaldParams.for_system(2, 6.0, alpha=1.0)
    F = fourier_force_exact(0, system, params)
    assert F[0] > 0  # toward the negative charge at larger x
    np.testing.assert_allclose(F[1:], 0.0, atol=1e-12)


def test_rbe_forces_sum_to_zero_any_batch():
    system = _random_electroneutral(12, 7.0, seed=25)
    bank = mh_sample_kvectors(1.0, 7.0, 64, RngStream(7))
    S = sum_S(1.0, 7.0)
    F = rbe_force_all(system, bank.draw(10), S)
    np.testing.assert_allclose(F.sum(axis=0), 0.0, atol=1e-10)


def test_rbe_exhaustive_weighting_is_unbiased():
    # weight every lattice vector |m| <= 6 by its target probability: the
    # weighted mean of single-frequency estimates must equal the exact force
    alpha, L = 1.0, 4.0
    system = _random_electroneutral(6, L, seed=26)
    S = sum_S(alpha, L)
    m = np.arange(-6, 7)
    mm = np.stack(np.meshgrid(m, m, m, indexing="ij"), -1).reshape(-1, 3)
    mm = mm[np.any(mm != 0, axis=1)]
    kvecs = 2 * np.pi * mm / L
    k2 = np.einsum("ij,ij->i", kvecs, kvecs)
    probs = np.exp(-k2 / (4 * alpha)) / S
    assert abs(probs.sum() - 1.0) < 1e-8  # |m| <= 6 carries all the mass here
    expectation = np.zeros((6, 3))
    for kvec, prob in zip(kvecs, probs):
        expectation += prob * rbe_force_all(system, kvec[None, :], S)
    exact = fourier_force_exact_all(
        system, EwaldParams(alpha=alpha, r_c=1.9, k_c=2 * np.pi / L * 13, p=1)
    )
    np.testing.assert_allclose(expectation, exact, atol=1e-8)


def test_rbe_monte_carlo_mean_approaches_exact():
    alpha, L = 1.0, 6.0
    system = _random_electroneutral(8, L, seed=27)
    S = sum_S(alpha, L)
    n_batches, p = 100_000, 10
    bank = mh_sample_kvectors(alpha, L, n_batches * p, RngStream(8))
    kall = bank.samples
    k2 = np.einsum("ij,ij->i", kall, kall)
    coef = S * 4 * np.pi / system.volume / k2
    pos, q = system.state.positions, system.charges
    i = 0
    phase = pos @ kall.T
    eikr = np.exp(1j * phase)
    rho = eikr.T @ q
    per_sample = -q[i] * (np.imag(np.conj(eikr[i]) * rho) * coef)[:, None] * kall
    batch_means = per_sample.reshape(n_batches, p, 3).mean(axis=1)
    mean = batch_means.mean(axis=0)
    se = batch_means.std(axis=0) / math.sqrt(n_batches)
    params = EwaldParams.for_system(8, L, alpha=alpha, tail=1e-12)
    exact = fourier_force_exact(i, system, params)
    assert np.all(np.abs(mean - exact) < 3 * se + 1e-12)


def test_real_space_far_pair_negligible():
    st = ParticleState(positions=np.array([[0.0, 0, 0], [4.0, 0, 0]]), box_length=10.0)
    system = PeriodicChargeSystem(state=st, charges=np.array([1.0, -1.0]))
    params = EwaldParams(alpha=4.0, r_c=4.9, k_c=1.0, p=1)
    F, _ = real_space_force_all(system, params)
    assert np.max(np.abs(F)) < 1e-10


def test_real_space_matches_brute_double_loop():
    system = _random_electroneutral(32, 8.0, seed=28)
    params = EwaldParams(alpha=0.7, r_c=3.5, k_c=1.0, p=1)
    F, energy = real_space_force_all(system, params)

    expected = np.zeros((32, 3))
    e_expected = 0.0
    sa = math.sqrt(params.alpha)
    pref = 2 * math.sqrt(params.alpha / math.pi)
    for i in range(32):
        for j in range(32):
            if i == j:
                continue
            d = system.state.positions[i] - system.state.positions[j]
            d -= 8.0 * np.floor(d / 8.0 + 0.5)
            r = np.linalg.norm(d)
            if r >= params.r_c:
                continue
            qq = system.charges[i] * system.charges[j]
            e_expected += 0.5 * qq * math.erfc(sa * r) / r
            expected[i] += qq * (math.erfc(sa * r) / r + pref * math.exp(-params.alpha * r * r)) / r**2 * d
    np.testing.assert_allclose(F, expected, atol=1e-13)
    assert abs(energy - e_expected) < 1e-12


def test_real_space_newton_and_single_particle_path():
    system = _random_electroneutral(20, 6.0, seed=29)
    params = EwaldParams(alpha=1.0, r_c=2.5, k_c=1.0, p=1)
    F_all, _ = real_space_force_all(system, params)
    np.testing.assert_allclose(F_all.sum(axis=0), 0.0, atol=1e-13)
    for i in range(0, 20, 5):
        np.testing.assert_allclose(real_space_force(i, system, params), F_all[i], atol=1e-13)


def test_real_space_rejects_wide_cutoff():
    system = _random_electroneutral(4, 6.0, seed=30)
    with pytest.raises(ValueError):
        real_space_force_all(system, EwaldParams(alpha=1.0, r_c=3.0, k_c=1.0, p=1))


def test_total_energy_alpha_invariance():
    st = ParticleState(positions=np.array([[2.0, 5.0, 5.0], [4.0, 5.0, 5.0]]), box_length=10.0)
    system = PeriodicChargeSystem(state=st, charges=np.array([1.0, -1.0]))
    energies = []
    for alpha in (0.5, 1.0, 2.0):
        m_max = math.ceil(10.0 * math.sqrt(alpha * math.log(1e12)) / math.pi)
        params = EwaldParams(alpha=alpha, r_c=4.9, k_c=2 * np.pi / 10.0 * m_max, p=1)
        energies.append(ewald_energy(system, params))
    spread = max(energies) - min(energies)
    assert spread / abs(np.mean(energies)) < 1e-4


def test_total_energy_zero_charges():
    st = ParticleState(positions=RngStream(34).generator().uniform(0, 5, (4, 3)), box_length=5.0)
    system = PeriodicChargeSystem(state=st, charges=np.zeros(4))
    params = EwaldParams.for_system(4, 5.0)
    assert ewald_energy(system, params) == pytest.approx(0.0, abs=1e-14)


def test_pair_energy_free_space_limit():
    # two opposite charges separated by 1 in a huge box: U ~ -1/r
    L = 40.0
    st = ParticleState(positions=np.array([[20.0, 20, 20], [21.0, 20, 20]]), box_length=L)
    system = PeriodicChargeSystem(state=st, charges=np.array([1.0, -1.0]))
    m_max = math.ceil(L * math.sqrt(0.05 * math.log(1e10)) / math.pi)
    params = EwaldParams(alpha=0.05, r_c=19.5, k_c=2 * np.pi / L * m_max, p=1)
    U = ewald_energy(system, params)
    assert abs(U - (-1.0)) < 0.01


def test_electroneutrality_enforced():
    st = ParticleState(positions=np.zeros((2, 3)), box_length=4.0)
    with pytest.raises(ValueError):
        PeriodicChargeSystem(state=st, charges=np.array([1.0, 1.0]))


def test_md_step_exact_mode_matches_manual_direct_step():
    system = _random_electroneutral(8, 6.0, seed=31, velocities=True)
    params = EwaldParams.for_system(8, 6.0, alpha=1.0, tail=1e-10)
    dt = 1e-3
    stepped, info = rbe_md_step(system, params, None, None, dt, SimStreams(9),
                                exact_fourier=True)
    F = real_space_force_all(system, params)[0] + fourier_force_exact_all(system, params)
    v_new = system.state.velocities + dt * F
    x_new = np.mod(system.state.positions + dt * v_new, 6.0)
    np.testing.assert_allclose(stepped.state.velocities, v_new, atol=1e-14)
    np.testing.assert_allclose(stepped.state.positions, x_new, atol=1e-14)
    assert {"U_real", "U_fourier", "U_self", "kinetic", "T_inst"} <= info.keys()


def test_md_step_conserves_momentum_before_thermostat():
    system = _random_electroneutral(16, 7.0, seed=32, velocities=True)
    params = EwaldParams.for_system(16, 7.0, p=8)
    bank = mh_sample_kvectors(params.alpha, 7.0, 256, RngStream(10))
    before = system.state.velocities.sum(axis=0)
    stepped, _ = rbe_md_step(system, params, None, bank, 1e-3, SimStreams(11))
    after = stepped.state.velocities.sum(axis=0)
    np.testing.assert_allclose(after, before, atol=1e-10)


def test_self_energy_value():
    system = _random_electroneutral(4, 5.0, seed=33)
    params = EwaldParams(alpha=2.0, r_c=2.0, k_c=1.0, p=1)
    assert self_energy(system, params) == pytest.approx(-math.sqrt(2 / math.pi) * 4)
