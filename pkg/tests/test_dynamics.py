import math

import numpy as np
import pytest

from dynamics import (
    CABLE_DOMAIN,
    UNIT_INTERVAL,
    CableSystem,
    Domain,
    PiecewiseLinearMap,
    Trajectory,
    branch_switches,
    cable_step,
    cable_tensions,
    clamp_rate,
    classify_region,
    count_bounces,
    equilibrium_state,
    eval_map,
    eval_map_batch,
    piecewise_region,
    simulate_reference,
    simulate_truth,
)
from errors import ArgumentError, NumericalError
from observables import sample_trajectories


def test_domain_rejects_inverted_bounds():
    with pytest.raises(ArgumentError, match="axis 0"):
        Domain((1.0,), (0.0,))


def test_domain_rejects_mismatched_bounds():
    with pytest.raises(ArgumentError):
        Domain((0.0, 0.0), (1.0,))


def test_domain_geometry():
    assert CABLE_DOMAIN.dimension == 4
    assert CABLE_DOMAIN.volume == pytest.approx(3.0 * 2.0 * 14.0 * 14.0)
    assert UNIT_INTERVAL.is_unit_interval
    grid = Domain((0.0, 0.0), (1.0, 2.0)).grid(4)
    assert grid.shape == (16, 2)
    assert grid[:, 1].max() == pytest.approx(1.75)


def test_piecewise_at_jump_is_zero(piecewise):
    assert eval_map(piecewise, 0.4)[0] == 0.0


def test_piecewise_right_endpoint_matches_second_branch(piecewise):
    a, b, x_star = piecewise.a, piecewise.b, piecewise.x_star
    assert eval_map(piecewise, 1.0)[0] == pytest.approx(b + a - b * x_star, abs=1e-15)


def test_identity_returns_input(identity):
    assert eval_map(identity, 0.37)[0] == 0.37


def test_eval_map_dimension_mismatch(piecewise):
    with pytest.raises(ArgumentError):
        eval_map(piecewise, [0.1, 0.2])


def test_eval_map_non_finite(piecewise):
    with pytest.raises(NumericalError):
        eval_map(piecewise, float("nan"))


def test_piecewise_requires_jump():
    with pytest.raises(ArgumentError, match="discontinuity"):
        PiecewiseLinearMap(a=0.0)


def test_piecewise_requires_self_map():
    with pytest.raises(ArgumentError, match="into itself"):
        PiecewiseLinearMap(c=-3.0)


def test_piecewise_self_map_has_no_clamps(piecewise):
    grid = UNIT_INTERVAL.grid(10_000)
    assert clamp_rate(piecewise, grid) == 0.0


def test_clamp_flag_outside_image(cable):
    x = np.array([1.5, 0.3, 7.0, 7.0])
    y, clamped = eval_map(cable, x, with_flag=True)
    assert clamped
    assert np.all(CABLE_DOMAIN.contains(y))


def test_cable_box_clamp_rate_is_bounded(cable):
    # corners of the box with high speed or deep stretch leave it in one step
    rate = clamp_rate(cable, CABLE_DOMAIN.grid(10))
    assert 0.0 < rate < 0.1


def test_cable_releases_never_clamp(cable):
    runs = sample_trajectories(cable, count=20, steps=500, seed=0, verbose=False)
    assert all(run.clamped == 0 for run in runs)


def test_region_midway_is_slack(cable):
    assert classify_region(cable, (0.0, 0.0)) == "D1"


def test_region_at_anchor_is_slack():
    system = CableSystem(length_b=2.5)
    assert classify_region(system, system.anchor_a) == "D1"


def test_region_far_below_is_both_taut(cable):
    pos = (0.0, -1.6)
    assert math.dist(pos, cable.anchor_a) > cable.length_a
    assert math.dist(pos, cable.anchor_b) > cable.length_b
    assert classify_region(cable, pos) == "D4"


def test_region_single_cable(cable):
    assert classify_region(cable, (1.0, -0.5)) == "D2"
    assert classify_region(cable, (-1.0, -0.5)) == "D3"


def test_region_partition_matches_distances(cable):
    rng = np.random.default_rng(7)
    positions = rng.uniform((-1.5, -1.7), (1.5, 0.3), size=(10_000, 2))
    for pos in positions:
        taut_a = np.linalg.norm(pos - cable.anchor_a) > cable.length_a
        taut_b = np.linalg.norm(pos - cable.anchor_b) > cable.length_b
        expected = {(False, False): "D1", (True, False): "D2", (False, True): "D3", (True, True): "D4"}
        assert classify_region(cable, pos) == expected[(taut_a, taut_b)]


def test_tensions_never_negative(cable):
    rng = np.random.default_rng(3)
    states = rng.uniform(CABLE_DOMAIN.lo, CABLE_DOMAIN.hi, size=(2000, 4))
    T, _ell, _units = cable.tensions(states[:, :2], states[:, 2:])
    assert np.all(T >= 0.0)
    assert cable_tensions(cable, [0.0, 0.0, 0.0, 0.0]) == (0.0, 0.0)


def test_free_fall_step_is_ballistic(cable):
    x = np.array([0.0, -0.2, 0.3, 0.5])
    h, g = cable.step, cable.gravity[1]
    expected = [
        x[0] + x[2] * h,
        x[1] + x[3] * h + 0.5 * g * h**2,
        x[2],
        x[3] + g * h,
    ]
    np.testing.assert_allclose(cable_step(cable, x), expected, atol=1e-8)


def test_equilibrium_is_a_fixed_point(cable):
    eq = equilibrium_state(cable)
    assert eq[0] == pytest.approx(0.0, abs=1e-9)
    assert eq[1] == pytest.approx(-1.161, abs=0.01)
    assert classify_region(cable, eq[:2]) == "D4"
    np.testing.assert_allclose(cable_step(cable, eq), eq, atol=1e-8)


@pytest.mark.parametrize("stiffness", [200.0, 500.0])
def test_equilibrium_residual_is_tiny(stiffness):
    cable = CableSystem(stiffness=stiffness)
    eq = equilibrium_state(cable)
    acc = cable.acceleration(eq[None, :2], np.zeros((1, 2)))[0]
    assert np.max(np.abs(acc)) < 1e-9
    assert np.max(np.abs(cable_step(cable, eq) - eq)) < 1e-8


def test_release_bounces_like_fine_step_reference(cable):
    x0 = [0.3, -0.5, 0.0, 0.0]
    truth = simulate_truth(cable, x0, 100)
    reference = simulate_reference(cable, x0, 100, refine=100)
    assert count_bounces(truth) >= 1
    assert count_bounces(reference) >= 1
    np.testing.assert_allclose(truth.values[:, :2], reference.values[:, :2], atol=1e-2)


def test_default_release_bounces_three_times(cable):
    truth = simulate_truth(cable, [0.3, -0.5, 0.0, 0.0], 500)
    assert count_bounces(truth) >= 3
    assert truth.regions[0] == "D1"
    assert set(truth.regions) - {"D1"}


def test_simulate_zero_steps(piecewise):
    traj = simulate_truth(piecewise, 0.93, 0)
    assert traj.values.tolist() == [[0.93]]


def test_simulate_identity_repeats(identity):
    traj = simulate_truth(identity, 0.25, 5)
    assert traj.values.shape == (6, 1)
    assert np.all(traj.values == 0.25)
    assert traj.times.tolist() == [0, 1, 2, 3, 4, 5]


def test_default_orbit_switches_branches(piecewise):
    traj = simulate_truth(piecewise, 0.93, 100)
    assert len(traj) == 101
    assert traj.regions[0] == "R"
    assert branch_switches(traj) >= 1
    assert traj.clamped == 0
    # orbit settles on the neutral period-4 cycle through 0.12
    np.testing.assert_allclose(traj.values[10:14, 0], [0.12, 0.56, 0.18, 0.44], atol=1e-12)
    assert piecewise_region(piecewise, 0.12) == "L"


def test_simulation_is_deterministic(cable):
    a = simulate_truth(cable, [0.3, -0.5, 0.0, 0.0], 50)
    b = simulate_truth(cable, [0.3, -0.5, 0.0, 0.0], 50)
    assert np.array_equal(a.values, b.values)


def test_batch_matches_pointwise(piecewise):
    X = np.linspace(0.0, 1.0, 11)[:, None]
    Y, clamped = eval_map_batch(piecewise, X)
    assert clamped == 0
    for x, y in zip(X, Y):
        assert eval_map(piecewise, x)[0] == y[0]


def test_count_bounces_counts_down_to_up():
    vy = np.array([0.0, -1.0, -0.5, 0.3, 0.1, -0.2, 0.4])
    values = np.zeros((len(vy), 4))
    values[:, 3] = vy
    traj = Trajectory(kind="state", values=values, provenance="truth")
    assert count_bounces(traj) == 2


def test_trajectory_validates_kind():
    with pytest.raises(ArgumentError):
        Trajectory(kind="other", values=np.zeros((2, 1)), provenance="truth")
