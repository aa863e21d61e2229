import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cv_sampled, rollout_loop, ub_loop, ub_pair, vm_loop
from vformation.errors import (
    ConfigurationError,
    DegenerateGeometryError,
    DomainError,
    SamplingError,
)
from vformation.flock import (
    ActionPlan,
    Disturbance,
    FlockParams,
    FlockState,
    InitBounds,
    _ub_terms,
    batch_cost,
    batch_cost_reference,
    clear_view,
    cost,
    rollout_cost,
    sample_initial,
    step,
    upwash_benefit,
    velocity_matching,
)
from vformation.formation import pinned_v

P3 = FlockParams(bird_count=3)
PHI = 1e-3


def state(x, v):
    return FlockState(np.array(x, float), np.array(v, float))


def rotate(a, ang):
    c, s = math.cos(ang), math.sin(ang)
    return a @ np.array([[c, s], [-s, c]])


seeds = st.integers(min_value=0, max_value=2**32 - 1)


# -- step ---------------------------------------------------------------------


def test_step_zero_input():
    s = step(state([[0, 0]], [[1, 0]]), [[0, 0]], Disturbance(np.zeros((1, 2))))
    assert s.positions.tolist() == [[1, 0]]
    assert s.velocities.tolist() == [[1, 0]]


def test_step_substitution():
    s = step(state([[0, 0]], [[1, 0]]), [[0, 1]], Disturbance(np.array([[0.5, 0.0]])))
    assert s.positions.tolist() == [[1.5, 0]]
    assert s.velocities.tolist() == [[1, 1]]


@given(seeds)
def test_step_twice_drifts_by_two_velocities(seed):
    s = sample_initial(seed, P3)
    z = np.zeros((3, 2))
    s2 = step(step(s, z), z)
    np.testing.assert_allclose(s2.positions, s.positions + 2 * s.velocities, rtol=0, atol=1e-12)


@given(seeds)
def test_step_velocity_is_linear_in_acceleration(seed):
    rng = np.random.default_rng(seed)
    s = sample_initial(seed, P3)
    a1, a2 = rng.normal(size=(2, 3, 2))
    joint = step(s, a1 + a2).velocities
    chained = step(s, a1).velocities + a2
    np.testing.assert_allclose(joint, chained, rtol=0, atol=1e-12)


def test_step_dimension_mismatch():
    s = sample_initial(0, P3)
    with pytest.raises(ConfigurationError):
        step(s, np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        step(s, np.zeros((3, 2)), params=FlockParams(bird_count=4))


def test_removed_bird_is_frozen_and_ignored():
    s = sample_initial(1, P3)
    d = Disturbance(np.ones((3, 2)), np.array([False, True, False]))
    s2 = step(s, np.ones((3, 2)), d)
    assert s2.removed.tolist() == [False, True, False]
    np.testing.assert_array_equal(s2.positions[1], s.positions[1])
    np.testing.assert_array_equal(s2.velocities[1], s.velocities[1])
    two = FlockState(s2.positions[[0, 2]], s2.velocities[[0, 2]])
    assert cost(s2, P3) == cost(two, P3)


# -- clear view ---------------------------------------------------------------


def test_cv_single_bird():
    assert clear_view(state([[0, 0]], [[1, 0]]), P3) == 0


def test_cv_occluder_behind():
    s = state([[0, 0], [-5, 0]], [[1, 0], [1, 0]])
    # bird 0 sees nothing behind it; bird 1 sees bird 0 ahead
    x, v = s.positions, s.velocities
    from vformation.flock import _cv_terms

    terms = _cv_terms(x, v, P3)
    assert terms[0] == 0
    assert terms[1] > 0


def test_cv_bird_directly_ahead_matches_sampling():
    s = state([[0, 0], [2, 0], [0, 3]], [[1, 0], [1, 0], [0.5, 0.1]])
    exact = clear_view(s, P3)
    # wing of half-length 0.5 at distance 2 subtends 2*atan(0.25)
    assert exact >= 2 * math.atan(0.25) / P3.view_angle
    assert abs(exact - cv_sampled(s.positions, s.velocities, P3.view_angle, 1.0)) < 1e-3


def test_cv_coincident_birds():
    with pytest.raises(DegenerateGeometryError):
        clear_view(state([[0, 0], [0, 0]], [[1, 0], [1, 0]]), P3)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 5))
def test_cv_matches_sampling_oracle(seed, B):
    p = FlockParams(bird_count=B)
    s = sample_initial(seed, p)
    ref = cv_sampled(s.positions, s.velocities, p.view_angle, p.wing_span, rays=20_000)
    # coarser grid than the acceptance check: ~B^2 cell edges of 1/20000 each
    assert abs(clear_view(s, p) - ref) < B * B * 1e-4
    assert 0 <= clear_view(s, p) <= B


# -- velocity matching --------------------------------------------------------


def test_vm_equal_velocities():
    s = state([[0, 0], [1, 0], [0, 1]], [[1, 1]] * 3)
    assert velocity_matching(s) == 0


def test_vm_antiparallel():
    assert velocity_matching(state([[0, 0], [1, 0]], [[1, 0], [-1, 0]])) == 1.0


@given(seeds, st.integers(1, 7))
def test_vm_matches_loop_exactly(seed, B):
    s = sample_initial(seed, FlockParams(bird_count=B))
    assert velocity_matching(s) == vm_loop(s.velocities.tolist())


@given(seeds)
def test_vm_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.2, 1, size=2)
    x = np.array([[0, 0], [1, 0], [2, 1.0]])
    assert velocity_matching(FlockState(x, np.tile(v, (3, 1)))) == 0
    w = np.tile(v, (3, 1))
    w[2, 0] += 1e-9
    assert velocity_matching(FlockState(x, w)) > 0


def test_vm_zero_speed():
    with pytest.raises(DomainError):
        velocity_matching(state([[0, 0], [1, 0]], [[0, 0], [1, 0]]))


# -- upwash -------------------------------------------------------------------


def test_ub_single_bird():
    assert upwash_benefit(state([[0, 0]], [[1, 0]]), P3) == 1


def test_ub_g_gate():
    # bird 1 directly behind bird 0: bird 0 gets nothing from the bird behind it
    x = [[0, 0], [-1, 0]]
    v = [[1, 0], [1, 0]]
    assert ub_pair(x[0], v[0], x[1], 1.0, P3.upwash_mean, P3.upwash_cov, 1.0) == 0
    terms = _ub_terms(np.array(x, float), np.array(v, float), P3)
    assert terms[0] == 1


def test_ub_at_peak_offset():
    mu = P3.upwash_mean
    x = np.array([[0, 0], [-mu[1], mu[0]]])
    v = np.array([[1.0, 0], [1.0, 0]])
    S = math.erf(2 * math.sqrt(2) * (mu[0] - P3.upwash_threshold))
    terms = _ub_terms(x, v, P3)
    # G at its mean is 1, so the trailing bird receives exactly S(mu_x)
    assert abs((1 - terms[1]) - S) < 1e-12
    assert abs(upwash_benefit(FlockState(x, v), P3) - ub_loop(x, v)) < 1e-12


@given(seeds, st.integers(1, 7))
def test_ub_matches_scalar_oracle(seed, B):
    s = sample_initial(seed, FlockParams(bird_count=B))
    assert abs(upwash_benefit(s, P3) - ub_loop(s.positions, s.velocities)) < 1e-12


@given(seeds, st.integers(2, 7))
def test_ub_terms_nonnegative(seed, B):
    s = sample_initial(seed, FlockParams(bird_count=B))
    assert np.all(_ub_terms(s.positions, s.velocities, P3) >= 0)


@given(seeds, st.integers(2, 7))
def test_ub_terms_at_most_one_without_downwash(seed, B):
    # a term exceeds 1 only when some bird sits in another's downwash band
    s = sample_initial(seed, FlockParams(bird_count=B))
    x, v = s.positions, s.velocities
    u = v / np.linalg.norm(v, axis=1, keepdims=True)
    rel = x[None, :, :] - x[:, None, :]
    g = np.einsum("ik,ijk->ij", u, rel)
    h = u[:, None, 0] * rel[..., 1] - u[:, None, 1] * rel[..., 0]
    band = (g > 0) & (np.abs(h) < P3.upwash_threshold)
    terms = _ub_terms(x, v, P3)
    assert np.all(terms[~band.any(axis=1)] <= 1)


def test_ub_alpha_branch():
    p = FlockParams(bird_count=2, upwash_scale=0.5)
    mu = p.upwash_mean
    x = np.array([[0, 0], [-mu[1], mu[0]]])
    v = np.array([[1.0, 0], [1.0, 0]])
    got = upwash_benefit(FlockState(x, v), p)
    assert abs(got - ub_loop(x, v, alpha=0.5)) < 1e-12


# -- cost ---------------------------------------------------------------------


def test_cost_all_optima():
    # a lone bird is its own leader: CV = 0, VM = 0, UB = 1
    assert cost(state([[0, 0]], [[1, 0]]), FlockParams(bird_count=1)) == 0


@pytest.mark.parametrize("B", [3, 5, 7])
def test_pinned_v_is_a_formation(B):
    assert cost(pinned_v(B), FlockParams(bird_count=B)) <= PHI


@given(seeds)
def test_cost_is_composition_of_metrics(seed):
    s = sample_initial(seed, P3)
    cv, vm, ub = clear_view(s, P3), velocity_matching(s), upwash_benefit(s, P3)
    assert abs(cost(s, P3) - (cv**2 + vm**2 + (ub - 1) ** 2)) < 1e-12


@given(seeds, st.integers(2, 7))
def test_compiled_cost_agrees_with_reference(seed, B):
    p = FlockParams(bird_count=B)
    xs, vs = [], []
    for k in range(4):
        s = sample_initial(seed + k, p)
        xs.append(s.positions)
        vs.append(s.velocities)
    x, v = np.array(xs), np.array(vs)
    np.testing.assert_allclose(batch_cost(x, v, p), batch_cost_reference(x, v, p), rtol=1e-12, atol=1e-13)


def test_compiled_cost_errors():
    x = np.array([[[0, 0], [1, 0]]], float)
    with pytest.raises(DomainError):
        batch_cost(x, np.array([[[0, 0], [1, 0]]], float), P3)
    with pytest.raises(DegenerateGeometryError):
        batch_cost(np.zeros((1, 2, 2)), np.ones((1, 2, 2)), P3)


@given(seeds)
def test_cost_nonnegative(seed):
    assert cost(sample_initial(seed, P3), P3) >= 0


@settings(max_examples=50)
@given(seeds, st.floats(0, 2 * math.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_metrics_invariant_under_rigid_motion(seed, ang, tx, ty):
    p = FlockParams(bird_count=4)
    s = sample_initial(seed, p)
    moved = FlockState(rotate(s.positions, ang) + [tx, ty], rotate(s.velocities, ang))
    assert abs(clear_view(s, p) - clear_view(moved, p)) < 1e-9
    assert abs(velocity_matching(s) - velocity_matching(moved)) < 1e-9
    assert abs(upwash_benefit(s, p) - upwash_benefit(moved, p)) < 1e-9


@settings(max_examples=50)
@given(seeds, st.integers(0, 3), st.integers(0, 1))
def test_cost_is_locally_lipschitz(seed, bird, axis):
    p = FlockParams(bird_count=4)
    s = sample_initial(seed, p)
    J = cost(s, p)
    for eps in (1e-6, 1e-7):
        x = s.positions.copy()
        x[bird, axis] += eps
        # birds are >= d_min apart, so every metric has bounded slope here
        assert abs(cost(FlockState(x, s.velocities), p) - J) <= 200 * eps


# -- rollouts -----------------------------------------------------------------


def test_rollout_from_v_keeps_formation():
    s = pinned_v(5)
    p = FlockParams(bird_count=5)
    assert rollout_cost(s, ActionPlan(np.zeros((1, 5, 2))), p) <= PHI


@given(seeds)
def test_rollout_two_steps_is_composition(seed):
    rng = np.random.default_rng(seed)
    s = sample_initial(seed, P3)
    a = rng.uniform(-0.1, 0.1, size=(2, 3, 2))
    assert rollout_cost(s, ActionPlan(a), P3) == cost(step(step(s, a[0]), a[1]), P3)


@given(seeds, st.integers(1, 5))
def test_rollout_matches_loop(seed, h):
    rng = np.random.default_rng(seed)
    s = sample_initial(seed, P3)
    a = rng.uniform(-0.1, 0.1, size=(h, 3, 2))
    x, v = rollout_loop(s.positions, s.velocities, a)
    expected = cost(FlockState(x, v), P3)
    assert abs(rollout_cost(s, ActionPlan(a), P3) - expected) < 1e-12


# -- initial states -----------------------------------------------------------


@given(seeds)
def test_sample_initial_bounds(seed):
    s = sample_initial(seed, FlockParams(bird_count=7))
    assert np.all((s.positions >= 0) & (s.positions <= 3))
    assert np.all((s.velocities >= 0.25) & (s.velocities <= 0.75))


def test_sample_initial_deterministic():
    assert sample_initial(42, P3) == sample_initial(42, P3)


def test_sample_initial_min_distance():
    p = FlockParams(bird_count=7)
    iu = np.triu_indices(7, 1)
    for seed in range(1000):
        x = sample_initial(seed, p).positions
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)[iu]
        assert d.min() > p.min_distance


def test_sample_initial_budget():
    p = FlockParams(bird_count=7, min_distance=5.0)
    with pytest.raises(SamplingError):
        sample_initial(0, p, max_attempts=20)


def test_bad_bounds():
    with pytest.raises(ConfigurationError):
        InitBounds(position=(1.0, 0.0))


@pytest.mark.parametrize(
    "kw",
    [dict(accel_ratio=1.2), dict(accel_ratio=0.0), dict(view_angle=0.0), dict(wing_span=-1.0),
     dict(upwash_cov=((1.0, 2.0), (2.0, 1.0))), dict(bird_count=0)],
)
def test_params_validation(kw):
    with pytest.raises(ConfigurationError):
        FlockParams(**kw)


def test_state_record_round_trip():
    s = sample_initial(3, P3)
    assert FlockState.from_record(s.to_record()) == s
