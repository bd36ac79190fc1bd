import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _reference import mp_rc_standard_gaussian, mp_step_moments
from rculmc.oracles import (
    GaussianLaw,
    MomentTriple,
    gaussian_w2,
    prop5_initial_law,
    prop5_initial_triple,
    prop5_lower_bound,
    prop5_moment_lower_bound,
    propagate_ulmc_gaussian,
    rc_mean_map,
    rc_moment_step,
    rc_second_moment_step,
    rc_triple_fixed_point,
    rc_triple_trajectory,
    second_moment_w2_lower_bound,
    stationary_law,
    theorem1_rhs,
    theorem3_rhs,
    ulmc_laws,
)
from rculmc.potentials import QuadraticTarget
from rculmc.samplers import CoordinateSchedule, PhaseState, SamplerConfig, ulmc_step


def random_cov(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + 0.05 * np.eye(n)


def random_law(rng, d):
    return GaussianLaw(rng.standard_normal(2 * d), random_cov(rng, 2 * d))


class ZeroNoise:
    def standard_normal(self, size=None):
        return 0.0 if size is None else np.zeros(size)


# --- ULMC law propagation --------------------------------------------------------


def test_zero_step_leaves_law_unchanged():
    rng = np.random.default_rng(0)
    law = random_law(rng, 3)
    out = propagate_ulmc_gaussian(law, np.diag([1.0, 2.0, 3.0]), 0.0, 1.0)
    np.testing.assert_allclose(out.mean, law.mean, rtol=0, atol=0)
    np.testing.assert_allclose(out.cov, law.cov, rtol=1e-15, atol=1e-15)


def test_zero_mean_is_preserved():
    law = stationary_law(np.eye(4), 0.7)
    out = propagate_ulmc_gaussian(law, np.eye(4), 0.05, 0.7)
    np.testing.assert_array_equal(out.mean, 0.0)


def test_one_dimensional_fixed_point_is_close_to_target():
    law = GaussianLaw.product([3.0], 0.1, 1.0)
    out = propagate_ulmc_gaussian(law, [[1.0]], 0.01, 1.0, steps=100_000)
    assert abs(out.cov[0, 0] + out.mean[0] ** 2 - 1.0) <= 0.05
    assert abs(out.mean[0]) < 1e-12


def test_mean_propagation_matches_the_sampler_drift():
    rng = np.random.default_rng(4)
    A = random_cov(rng, 3)
    law = random_law(rng, 3)
    out = propagate_ulmc_gaussian(law, A, 0.03, 0.4)
    state = PhaseState(law.mean[:3].copy(), law.mean[3:].copy())
    stepped = ulmc_step(state, QuadraticTarget(A), SamplerConfig(gamma=0.4, h=0.03), ZeroNoise())
    np.testing.assert_allclose(out.mean, np.concatenate([stepped.x, stepped.v]), rtol=1e-13, atol=1e-15)


def test_law_iterator_matches_repeated_propagation():
    rng = np.random.default_rng(1)
    A = random_cov(rng, 2)
    law = random_law(rng, 2)
    laws = list(ulmc_laws(law, A, 0.1, 0.5, 5))
    assert len(laws) == 6
    final = propagate_ulmc_gaussian(law, A, 0.1, 0.5, steps=5)
    np.testing.assert_allclose(laws[-1].cov, final.cov, rtol=1e-14)


def test_propagation_dimension_mismatch():
    with pytest.raises(ValueError):
        propagate_ulmc_gaussian(stationary_law(np.eye(2), 1.0), np.eye(3), 0.1, 1.0)


@pytest.mark.parametrize(
    "mean, cov",
    [
        (np.zeros(3), np.eye(3)),
        (np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]])),
        (np.zeros(2), np.diag([1.0, -1.0])),
    ],
    ids=["odd", "asymmetric", "indefinite"],
)
def test_invalid_laws(mean, cov):
    with pytest.raises(ValueError):
        GaussianLaw(mean, cov)


# --- RC-ULMC moments on the standard Gaussian ------------------------------------


def test_initial_triple_of_the_shifted_example():
    for d in (1, 10, 100):
        m = prop5_initial_triple(d)
        assert m.ex2 == pytest.approx(160001 / 160000 * d, rel=1e-15)
        assert m.ew2 == pytest.approx(320001 / 160000 * d, rel=1e-15)
        law = prop5_initial_law(d)
        S = law.second_moment()
        assert np.trace(S[:d, :d]) == pytest.approx(m.ex2, rel=1e-15)


def test_stationary_moments_change_by_o_h_squared():
    d = 4
    stat = MomentTriple(d, d, 2 * d)
    ratios = []
    for h in (1e-3, 1e-4, 1e-5):
        new = rc_second_moment_step(stat, d, h).as_array()
        ratios.append(np.max(np.abs(new - stat.as_array())) / h)
    # per-step change over h shrinks at least linearly in h
    assert ratios[1] <= 0.2 * ratios[0] and ratios[2] <= 0.2 * ratios[1]
    assert ratios[0] < 1.0


def test_triple_recursion_matches_high_precision_reference():
    d, h, steps = 5, 1e-9, 1000
    traj = rc_triple_trajectory(prop5_initial_triple(d), d, h, steps)
    ref = mp_rc_standard_gaussian(d, h, steps, 1 / 400)
    for m in (0, 1, 10, 500, 1000):
        np.testing.assert_allclose(traj[m], [float(v) for v in ref[m]], rtol=1e-12)


def test_triple_recursion_matches_reference_at_larger_steps():
    d, h, steps = 3, 1e-2, 300
    start = MomentTriple(3 * (1 + 0.25), 3 * (1 + 0.25), 3 * (1 + 0.25) + 3 * 0.5)
    traj = rc_triple_trajectory(start, d, h, steps, gamma=0.5)
    ref = mp_rc_standard_gaussian(d, h, steps, 0.5, gamma=0.5)
    np.testing.assert_allclose(traj, [[float(v) for v in row] for row in ref], rtol=1e-12)


def test_single_step_agrees_with_trajectory():
    m0 = prop5_initial_triple(7)
    step = rc_second_moment_step(m0, 7, 1e-3).as_array()
    np.testing.assert_allclose(step, rc_triple_trajectory(m0, 7, 1e-3, 1)[1], rtol=1e-13)


def test_general_moment_step_reduces_to_the_triple():
    d, h, gamma = 4, 2e-3, 0.8
    sched = CoordinateSchedule.uniform(d, h)
    law = GaussianLaw.product(np.full(d, 0.3), 1.0, gamma)
    mean, second = law.mean, law.second_moment()
    triple = MomentTriple(d * 1.09, d * 1.09, d * 1.09 + d * gamma)
    for _ in range(20):
        mean, second = rc_moment_step(mean, second, np.eye(d), sched, gamma)
        triple = rc_second_moment_step(triple, d, h, gamma)
    xx = np.trace(second[:d, :d])
    xv = np.trace(second[:d, d:])
    vv = np.trace(second[d:, d:])
    np.testing.assert_allclose([xx, xx + xv, xx + 2 * xv + vv], triple.as_array(), rtol=1e-13)
    mx, mw = mean[0], mean[0] + mean[d]
    expected = np.linalg.matrix_power(rc_mean_map(d, h, gamma), 20) @ [0.3, 0.3]
    np.testing.assert_allclose([mx, mw], expected, rtol=1e-13)


def test_fixed_point_is_near_the_target():
    fp = rc_triple_fixed_point(6, 1e-6)
    np.testing.assert_allclose(fp, [6, 6, 12], rtol=1e-4)


def test_non_uniform_schedule_rejected():
    with pytest.raises(ValueError):
        rc_second_moment_step(prop5_initial_triple(2), 2, 1e-9, phi=[0.3, 0.7])
    with pytest.raises(ValueError):
        rc_triple_trajectory(prop5_initial_triple(2), 2, 1e-9, 5, phi=[0.3, 0.7])


def test_cauchy_schwarz_is_enforced():
    with pytest.raises(ValueError):
        MomentTriple(1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        MomentTriple(-1.0, 0.0, 1.0)


def test_exact_moments_stay_in_the_taylor_remainder_envelope():
    # e^{-2dh} = 1 - 2dh + 2d^2h^2 + D1 h^3 and e^{-4dh} = 1 - 4dh + 8d^2h^2 + D2 h^3
    d, h = 10, 1e-9
    with mp.workdps(60):
        dh = mp.mpf(d) * mp.mpf(h)
        h3 = mp.mpf(h) ** 3
        D1 = (mp.exp(-2 * dh) - 1 + 2 * dh - 2 * dh**2) / h3
        D2 = (mp.exp(-4 * dh) - 1 + 4 * dh - 8 * dh**2) / h3
        assert D1 < 0 and D2 < 0
        assert abs(D1) < 10 * d**3 and abs(D2) < 100 * d**3
        ref = mp_step_moments(dh)
        assert mp.almosteq(ref["var_x"], (D1 - D2 / 4) * h3, rel_eps=mp.mpf(10) ** -40)
        assert mp.almosteq(ref["var_v"], 4 * dh - 8 * dh**2 - D2 * h3, rel_eps=mp.mpf(10) ** -40)
        assert mp.almosteq(ref["cov_xv"], 2 * dh**2 + (D2 - 2 * D1) * h3 / 2, rel_eps=mp.mpf(10) ** -40)


# --- lower bounds ----------------------------------------------------------------


def test_stated_lower_bound_example():
    expected = 1.0 / 800**2 + 8**1.5 * 1e-10 / (320 - 464 * 8e-10)
    assert prop5_lower_bound(8, 1e-10, 0) == pytest.approx(expected, rel=1e-15)
    assert expected == pytest.approx(1.5625e-6 + 7.07e-12, rel=1e-6)


def test_stated_lower_bound_limit_and_monotonicity():
    d, h = 8, 1e-10
    tail = d**1.5 * h / (320 - 464 * d * h)
    values = [prop5_lower_bound(d, h, m) for m in (0, 10**6, 10**9, 10**11, 10**13)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(tail, rel=1e-12)


@pytest.mark.parametrize("d, h", [(10, 2e-9), (1, 0.0), (1, -1e-9), (100, 1.1e-10)])
def test_lower_bound_regime_is_enforced(d, h):
    with pytest.raises(ValueError):
        prop5_lower_bound(d, h, 0)
    with pytest.raises(ValueError):
        prop5_moment_lower_bound(d, h, 0)


def test_boundary_step_is_accepted():
    assert prop5_lower_bound(10, 1e-9, 0) > 0


def test_envelope_decays_no_faster_than_the_stated_exponential():
    h = 1e-9
    for m in (0, 10**3, 10**6, 10**8):
        assert math.exp(m * math.log1p(-2 * h)) >= math.exp(-4 * h * m)


def test_recursion_stays_above_envelope_on_a_short_horizon():
    d, h = 10, 1e-9
    traj = rc_triple_trajectory(prop5_initial_triple(d), d, h, 20000)
    env = np.array([prop5_moment_lower_bound(d, h, m) for m in range(0, 20001, 500)])
    assert np.all(traj[::500, 2] >= env)


def test_second_moment_w2_bound_examples():
    assert second_moment_w2_lower_bound(20.0, 10) == 0.0
    assert second_moment_w2_lower_bound(20.5, 10) == pytest.approx(math.sqrt(20.5) - math.sqrt(20), rel=1e-15)
    assert second_moment_w2_lower_bound(3.0, 10) == 0.0
    ew2 = 320001 / 160000 * 100
    assert second_moment_w2_lower_bound(ew2, 100) == pytest.approx(math.sqrt(ew2) - math.sqrt(200), rel=1e-12)
    with pytest.raises(ValueError):
        second_moment_w2_lower_bound(-1.0, 1)


# --- W2 ------------------------------------------------------------------------


def test_w2_identical_gaussians():
    rng = np.random.default_rng(2)
    c = random_cov(rng, 4)
    m = rng.standard_normal(4)
    assert gaussian_w2(m, c, m, c) == pytest.approx(0.0, abs=1e-7)


def test_w2_of_the_shifted_start():
    law = prop5_initial_law(16)
    target = stationary_law(np.eye(16), 1.0)
    assert law.w2_to(target) == pytest.approx(0.01, rel=1e-12)


def test_w2_diagonal_formula():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a, b = rng.uniform(0.1, 5, 3), rng.uniform(0.1, 5, 3)
        expected = math.sqrt(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))
        assert gaussian_w2(np.zeros(3), np.diag(a), np.zeros(3), np.diag(b)) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5))
def test_w2_is_symmetric_and_satisfies_the_triangle_inequality(seed, n):
    rng = np.random.default_rng(seed)
    laws = [(rng.standard_normal(n), random_cov(rng, n)) for _ in range(3)]
    (m1, c1), (m2, c2), (m3, c3) = laws
    d12 = gaussian_w2(m1, c1, m2, c2)
    assert d12 == pytest.approx(gaussian_w2(m2, c2, m1, c1), abs=1e-10)
    assert d12 <= gaussian_w2(m1, c1, m3, c3) + gaussian_w2(m3, c3, m2, c2) + 1e-8


def test_w2_rejects_non_psd():
    with pytest.raises(ValueError):
        gaussian_w2(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        gaussian_w2(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))


def test_w2_accepts_singular_covariances():
    assert gaussian_w2(np.zeros(2), np.zeros((2, 2)), np.zeros(2), np.eye(2)) == pytest.approx(math.sqrt(2), rel=1e-12)


# --- bound right-hand sides ------------------------------------------------------


def test_rc_bound_examples():
    assert theorem3_rhs(0.7, 0, 0.0, 1.0, 1.0, np.ones(3), np.full(3, 1 / 3)) == pytest.approx(2.8)
    disc = theorem3_rhs(0.0, 0, 1e-3, 1.0, 1.0, np.ones(4), np.full(4, 0.25))
    assert disc == pytest.approx(0.32, rel=1e-14)


def test_rc_bound_grows_when_the_largest_kappa_loses_weight():
    kappa = np.array([1.0, 2.0, 5.0])
    phi = np.array([0.3, 0.3, 0.4])
    moved = phi.copy()
    moved[2] /= 2
    moved /= moved.sum()
    base = theorem3_rhs(0.0, 0, 1e-3, 1.0, 1.0, kappa, phi)
    assert theorem3_rhs(0.0, 0, 1e-3, 1.0, 1.0, kappa, moved) > base


def test_ulmc_bound_examples():
    assert theorem1_rhs(1.0, 0, 0.0, 2.0, 1.0, 1.0, 4) == pytest.approx(math.sqrt(2))
    assert theorem1_rhs(0.0, 10, 0.1, 2.0, 1.0, 3.0, 8) == pytest.approx(4 * 3 * 0.1, rel=1e-14)
    assert theorem1_rhs(1.0, 10**6, 0.1, 1.0, 1.0, 1.0, 2) == pytest.approx(2 * 0.1, rel=1e-12)
