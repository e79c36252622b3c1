"""Time steppers: reference coupling, RBM variants, splitting, schedules."""

import numpy as np
import pytest

from randbatch.integrators import (
    FirstOrderSystem,
    IntegrationError,
    SecondOrderSystem,
    StepSchedule,
    direct_step,
    rbm_split_step,
    rbm_step_first_order,
    rbm_step_second_order,
    rbmr_step,
)
from randbatch.models import lj_kernel_spec
from randbatch.rng import SimStreams
from randbatch.state import KernelSpec, ParticleState

ZERO = lambda x: np.zeros_like(x)


def _state1(N=8, d=1, seed=0, box=None):
    gen = SimStreams(seed).init
    return ParticleState(positions=gen.standard_normal((N, d)), box_length=box)


def _state2(N=8, d=1, seed=0, box=None):
    gen = SimStreams(seed).init
    pos = gen.standard_normal((N, d))
    if box is not None:
        pos = gen.uniform(0, box, size=(N, d))
    return ParticleState(positions=pos, velocities=gen.standard_normal((N, d)), box_length=box)


def test_direct_step_identity_when_everything_vanishes():
    state = _state1()
    system = FirstOrderSystem(kernel=ZERO, alpha_N=1.0)
    out = direct_step(state, system, 0.1, SimStreams(1))
    np.testing.assert_array_equal(out.positions, state.positions)
    assert out.time == pytest.approx(0.1)


def test_direct_step_free_flight():
    state = _state2(seed=2)
    system = SecondOrderSystem(kernel=ZERO, alpha_N=1.0)
    out = direct_step(state, system, 0.25, SimStreams(1))
    np.testing.assert_array_equal(out.positions, state.positions + 0.25 * state.velocities)
    np.testing.assert_array_equal(out.velocities, state.velocities)


def test_direct_step_explicit_euler_decay():
    state = ParticleState(positions=np.array([[1.0], [2.0]]))
    system = FirstOrderSystem(kernel=ZERO, alpha_N=1.0, drift=lambda x: -x)
    out = direct_step(state, system, 0.1, SimStreams(1))
    np.testing.assert_allclose(out.positions, [[0.9], [1.8]], atol=1e-15)


@pytest.mark.parametrize("sigma", [0.0, 0.4])
def test_rbm_full_batch_is_bit_identical_to_direct(sigma):
    N = 8
    system = FirstOrderSystem(kernel=np.sin, alpha_N=1 / (N - 1), drift=lambda x: -x, sigma=sigma)
    a = _state1(N, seed=5)
    b = _state1(N, seed=5)
    sa, sb = SimStreams(42), SimStreams(42)
    for _ in range(5):
        a = direct_step(a, system, 0.05, sa)
        b = rbm_step_first_order(b, system, N, 0.05, sb)
    np.testing.assert_array_equal(a.positions, b.positions)


def test_rbm_second_order_full_batch_matches_direct():
    N = 6
    system = SecondOrderSystem(kernel=np.sin, alpha_N=1 / (N - 1), drift=lambda x: -x,
                               gamma=0.5, sigma=0.3)
    a = _state2(N, seed=7)
    b = _state2(N, seed=7)
    sa, sb = SimStreams(3), SimStreams(3)
    for _ in range(4):
        a = direct_step(a, system, 0.02, sa)
        b = rbm_step_second_order(b, system, N, 0.02, sb)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.velocities, b.velocities)


def test_rbm_zero_kernel_matches_direct_under_same_noise():
    N = 8
    system = FirstOrderSystem(kernel=ZERO, alpha_N=1.0, drift=lambda x: -x, sigma=0.7)
    a = _state1(N, seed=6)
    b = _state1(N, seed=6)
    out_a = direct_step(a, system, 0.1, SimStreams(9))
    out_b = rbm_step_first_order(b, system, 2, 0.1, SimStreams(9))
    np.testing.assert_array_equal(out_a.positions, out_b.positions)


def test_rbmr_full_batch_is_single_inner_update():
    N = 6
    system = FirstOrderSystem(kernel=np.sin, alpha_N=1 / (N - 1), sigma=0.2)
    a = _state1(N, seed=8)
    b = _state1(N, seed=8)
    out_r = rbmr_step(a, system, N, 0.05, SimStreams(4))
    out_b = rbm_step_first_order(b, system, N, 0.05, SimStreams(4))
    np.testing.assert_array_equal(out_r.positions, out_b.positions)


def test_rbmr_updates_average_one_per_particle():
    gen = SimStreams(13).division
    N, p, outer = 12, 3, 10_000
    counts = np.zeros(N)
    from randbatch.batching import sample_batch_with_replacement

    for _ in range(outer):
        for _ in range(N // p):
            counts[sample_batch_with_replacement(N, p, gen)] += 1
    np.testing.assert_allclose(counts / outer, 1.0, atol=0.02)


def test_rbmr_zero_kernel_moves_only_selected():
    N = 9
    system = FirstOrderSystem(kernel=ZERO, alpha_N=1.0, drift=lambda x: -x)
    state = _state1(N, seed=10)
    out = rbmr_step(state, system, 3, 0.1, SimStreams(5))
    moved = ~np.isclose(out.positions, state.positions).all(axis=1)
    decayed = np.isclose(out.positions, 0.9 * state.positions).all(axis=1)
    # every moved particle took plain Euler steps; possibly several of them
    for i in range(N):
        if moved[i] and not decayed[i]:
            assert np.allclose(out.positions[i], 0.81 * state.positions[i]) or np.allclose(
                out.positions[i], 0.729 * state.positions[i]
            )


def test_split_step_with_zero_smooth_part_is_deterministic():
    spec = KernelSpec(
        force=lambda x: x * np.exp(-np.sum(x**2, -1, keepdims=True)),
        split_radius=1.5,
        short_part=lambda x: np.where(
            (np.sum(x**2, -1, keepdims=True) < 1.5**2),
            x * np.exp(-np.sum(x**2, -1, keepdims=True)), 0.0),
        smooth_part=ZERO,
    )
    state = _state2(N=16, d=3, seed=11, box=6.0)
    system = SecondOrderSystem(kernel=spec, alpha_N=1.0)
    out1 = rbm_split_step(state, system, 4, 0.01, SimStreams(1))
    out2 = rbm_split_step(state, system, 4, 0.01, SimStreams(2))  # different division stream
    np.testing.assert_array_equal(out1.positions, out2.positions)
    np.testing.assert_array_equal(out1.velocities, out2.velocities)


def test_split_step_with_zero_short_part_matches_plain_rbm():
    smooth = lambda x: np.sin(x)
    spec = KernelSpec(force=smooth, split_radius=1.0, short_part=ZERO, smooth_part=smooth)
    state = _state2(N=8, d=3, seed=12, box=7.0)
    system = SecondOrderSystem(kernel=spec, alpha_N=1 / 7, gamma=0.1, sigma=0.2)
    plain_system = SecondOrderSystem(kernel=smooth, alpha_N=1 / 7, gamma=0.1, sigma=0.2)
    a = rbm_split_step(state, system, 2, 0.01, SimStreams(21))
    b = rbm_step_second_order(state, plain_system, 2, 0.01, SimStreams(21))
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.velocities, b.velocities)


def test_lj_split_reconstructs_total_force():
    spec = lj_kernel_spec(sigma=1.0, epsilon=1.0, r0=1.6)
    gen = SimStreams(14).init
    radii = gen.uniform(0.8, 3.0, size=100)
    dirs = gen.standard_normal((100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x = radii[:, None] * dirs
    total = spec.force(x)
    recomposed = spec.short_part(x) + spec.smooth_part(x)
    assert np.all(np.abs(recomposed - total) <= 1e-10 * (1 + np.abs(total)))
    far = x[radii >= 1.6]
    np.testing.assert_allclose(spec.short_part(far), 0.0, atol=1e-15)


def test_schedules():
    const = StepSchedule(kind="constant", dt=0.01)
    assert const(1) == const(100) == 0.01
    log = StepSchedule(kind="log_decay", c=0.001)
    vals = [log(k) for k in range(1, 50)]
    assert all(v > 0 for v in vals)
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert log(1) == pytest.approx(0.001 / np.log(2))
    inv = StepSchedule(kind="inverse", k0=2.0)
    assert inv(1) == pytest.approx(1 / 3)


def test_non_finite_state_raises():
    state = ParticleState(positions=np.array([[0.0], [0.0]]))  # overlapping pair

    def singular(x):
        with np.errstate(divide="ignore"):
            return 1.0 / x

    system = FirstOrderSystem(kernel=singular, alpha_N=1.0)
    with pytest.raises(IntegrationError):
        direct_step(state, system, 0.1, SimStreams(1))


def test_fluctuation_dissipation_flag():
    import math

    SecondOrderSystem(kernel=ZERO, alpha_N=1.0, gamma=2.0, sigma=math.sqrt(4.0), beta=1.0,
                      enforce_fluctuation_dissipation=True)
    with pytest.raises(ValueError):
        SecondOrderSystem(kernel=ZERO, alpha_N=1.0, gamma=2.0, sigma=1.9, beta=1.0,
                          enforce_fluctuation_dissipation=True)


def test_multiplicative_noise_uses_state_scale():
    state = ParticleState(positions=np.full((4, 1), 2.0))
    system = FirstOrderSystem(kernel=ZERO, alpha_N=1.0, sigma=1.0,
                              noise_mode="multiplicative", noise_scale=lambda x: x)
    reference = FirstOrderSystem(kernel=ZERO, alpha_N=1.0, sigma=2.0)
    a = direct_step(state, system, 0.04, SimStreams(33))
    b = direct_step(state, reference, 0.04, SimStreams(33))
    np.testing.assert_allclose(a.positions, b.positions, atol=1e-15)
