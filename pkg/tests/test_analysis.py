import dataclasses
import math

import numpy as np
import pytest

from analysis import (
    KERNEL_OBSERVABLES,
    MARGINAL,
    STABLE,
    UNSTABLE,
    basis_index,
    compare_trajectories,
    decode,
    fit_decoder,
    kernel_check,
    kernel_grid,
    lifted_to_state,
    membership_residuals,
    phase_decode,
    predict,
    rmse_sweep,
    spectrum,
    sweep_point,
)
from dynamics import UNIT_INTERVAL, Trajectory, count_bounces, simulate_truth
from encoding import direct_encode
from errors import ArgumentError, DivergenceError, NumericalError
from experiment import (
    build_dictionary,
    build_quadrature,
    build_system,
    initial_state,
    initial_states,
    load_config,
    truth_trajectory,
)
from observables import build_exp_trig, build_rbf, build_real_fourier, evaluate, evaluate_batch
from quadrature import build_rule, default_panel_count


def circular_distance(a, b):
    d = np.mod(np.asarray(a) - np.asarray(b), 1.0)
    return np.minimum(d, 1.0 - d)


@pytest.fixture
def piecewise_model(piecewise, unit_rule):
    return direct_encode(build_real_fourier(8), piecewise, unit_rule)


def test_predict_with_identity_matrix_stays_put(piecewise_model):
    model = dataclasses.replace(piecewise_model, A=np.eye(piecewise_model.m))
    lifted = predict(model, 0.3, 10)
    assert lifted.kind == "lifted" and lifted.provenance == "predicted"
    np.testing.assert_array_equal(lifted.values, np.tile(evaluate(model.dictionary, 0.3), (11, 1)))


def test_rotation_prediction_decodes_exactly(rotation, unit_rule):
    d = build_real_fourier(4)
    model = direct_encode(d, rotation, unit_rule)
    decoded = phase_decode(d, predict(model, 0.05, 50))
    expected = np.mod(0.05 + 0.1 * np.arange(51), 1.0)
    assert np.max(circular_distance(decoded.values[:, 0], expected)) < 1e-6


def test_rotation_lifted_state_rotates_phases(rotation, unit_rule):
    d = build_exp_trig(3)
    lifted = predict(direct_encode(d, rotation, unit_rule), 0.2, 7)
    np.testing.assert_allclose(lifted.values[7], evaluate(d, np.mod(0.2 + 0.7, 1.0)), atol=1e-8)


def test_prediction_is_matrix_power(piecewise_model):
    lifted = predict(piecewise_model, 0.93, 5)
    chi = evaluate(piecewise_model.dictionary, 0.93)
    for t in range(6):
        np.testing.assert_allclose(
            lifted.values[t], np.linalg.matrix_power(piecewise_model.A, t) @ chi, rtol=1e-10, atol=1e-12
        )


def test_prediction_divergence_is_reported(piecewise_model):
    model = dataclasses.replace(piecewise_model, A=2.0 * np.eye(piecewise_model.m))
    with pytest.raises(DivergenceError, match="step 20"):
        predict(model, 0.5, 30)


def test_prediction_rejects_outside_start(piecewise_model):
    with pytest.raises(ArgumentError, match="outside"):
        predict(piecewise_model, 1.5, 3)
    with pytest.raises(ArgumentError):
        predict(piecewise_model, 0.5, -1)


def test_decoder_recovers_appended_state():
    d = build_rbf([[0.2], [0.5], [0.8]], 0.3, UNIT_INTERVAL, augment_state=True)
    rule = build_rule(UNIT_INTERVAL)
    decoder = fit_decoder(d, rule, lam=0.0)
    np.testing.assert_allclose(decoder.D, [[0.0, 0.0, 0.0, 1.0]], atol=1e-8)
    assert decoder.residual < 1e-8


def test_sawtooth_decoder_residual_is_fourier_tail(unit_rule):
    decoder = fit_decoder(build_real_fourier(8), unit_rule)
    tail = (math.pi**2 / 6 - sum(1 / n**2 for n in range(1, 9))) / (2 * math.pi**2)
    assert decoder.residual == pytest.approx(math.sqrt(tail), rel=1e-8)


def test_decode_checks_shapes(unit_rule):
    decoder = fit_decoder(build_real_fourier(2), unit_rule)
    lifted = Trajectory(kind="lifted", values=np.zeros((3, 7)), provenance="predicted")
    with pytest.raises(ArgumentError):
        decode(decoder, lifted)
    with pytest.raises(ArgumentError):
        decode(decoder, Trajectory(kind="state", values=np.zeros((3, 1)), provenance="truth"))


def test_lifted_to_state_matches_model(piecewise_model, unit_rule):
    lifted = predict(piecewise_model, 0.15, 4)
    decoder = fit_decoder(piecewise_model.dictionary, unit_rule)
    states = lifted_to_state(piecewise_model, decoder, lifted)
    assert states.kind == "state"
    np.testing.assert_array_equal(states.values, decode(decoder, lifted).values)
    with pytest.raises(ArgumentError, match="decoder shape"):
        lifted_to_state(piecewise_model, fit_decoder(build_real_fourier(2), unit_rule), lifted)


def test_phase_decoder_needs_a_harmonic():
    lifted = Trajectory(kind="lifted", values=np.ones((2, 1)), provenance="predicted")
    with pytest.raises(ArgumentError):
        phase_decode(build_real_fourier(0), lifted)


@pytest.mark.slow
def test_phase_and_linear_decoders_agree_away_from_wrap():
    d = build_real_fourier(512)
    rule = build_rule(UNIT_INTERVAL, panel_count=default_panel_count(512))
    x = np.linspace(0.25, 0.75, 101)
    lifted = Trajectory(kind="lifted", values=evaluate_batch(d, x[:, None]).T, provenance="predicted")
    linear = decode(fit_decoder(d, rule), lifted).values[:, 0]
    phase = phase_decode(d, lifted).values[:, 0]
    np.testing.assert_allclose(phase, x, atol=1e-12)
    assert np.max(np.abs(linear - phase)) < 1e-3


def test_rotation_sweep_is_exact(rotation):
    rows = rmse_sweep(rotation, "real_fourier", [3, 9, 17], 0.05, 50, verbose=False)
    assert [m for m, _ in rows] == [3, 9, 17]
    assert all(rmse < 1e-6 for _, rmse in rows)


def test_identity_sweep_error_does_not_grow_with_horizon(identity):
    short = sweep_point(identity, "real_fourier", 17, 0.3, 5, decoder="linear")
    long = sweep_point(identity, "real_fourier", 17, 0.3, 40, decoder="linear")
    assert short == pytest.approx(long, abs=1e-8)
    assert sweep_point(identity, "exp_trig", 17, 0.3, 40) < 1e-10


def test_sweep_argument_errors(piecewise):
    with pytest.raises(ArgumentError, match="odd"):
        rmse_sweep(piecewise, "real_fourier", [17, 32], 0.93, 10, verbose=False)
    with pytest.raises(ArgumentError):
        rmse_sweep(piecewise, "rbf", [17], 0.93, 10, verbose=False)
    with pytest.raises(ArgumentError, match="decoder"):
        sweep_point(piecewise, "real_fourier", 17, 0.93, 10, decoder="nearest")


def test_ensemble_sweep_pools_squared_errors(piecewise):
    starts = [[0.13], [0.15], [0.17]]
    pooled = sweep_point(piecewise, "real_fourier", 17, starts, 10)
    single = [sweep_point(piecewise, "real_fourier", 17, s, 10) for s in starts]
    assert pooled == pytest.approx(np.sqrt(np.mean(np.square(single))), rel=1e-12)
    with pytest.raises(ArgumentError, match="initial states"):
        sweep_point(piecewise, "real_fourier", 17, [[0.1, 0.2]], 10)


@pytest.mark.slow
def test_rmse_falls_with_dictionary_size(config_dir):
    config = load_config(config_dir / "sweep.json")
    system = build_system(config.system)
    starts = initial_states(config, system)
    rows = rmse_sweep(system, "real_fourier", config.analysis.sweep_m, starts, config.scenario.steps, verbose=False)
    assert [m for m, _ in rows] == [17, 33, 257, 1025]
    rmse = [r for _, r in rows]
    assert all(a > b for a, b in zip(rmse, rmse[1:]))
    assert rmse[-1] < 0.1 * rmse[0]


def test_spectrum_classification():
    assert spectrum(np.eye(3)).classification == MARGINAL
    assert spectrum(0.5 * np.eye(3)).classification == STABLE
    assert spectrum(np.diag([1.1, 0.2])).classification == UNSTABLE
    assert spectrum(np.diag([1.005, 0.2])).classification == MARGINAL


def test_spectrum_sorted_by_modulus():
    result = spectrum(np.diag([0.1, -0.9, 0.5j]))
    np.testing.assert_allclose(np.abs(result.eigenvalues), [0.9, 0.5, 0.1])
    assert result.max_abs == pytest.approx(0.9)
    assert result.near_unit_circle() == 0
    assert result.near_unit_circle(0.2) == 1


def test_spectrum_errors():
    with pytest.raises(ArgumentError):
        spectrum(np.zeros((2, 3)))
    with pytest.raises(NumericalError):
        spectrum(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_rotation_spectrum_is_on_unit_circle(rotation, unit_rule):
    result = spectrum(direct_encode(build_real_fourier(5), rotation, unit_rule))
    assert result.near_unit_circle(1e-8) == 11
    assert result.classification == MARGINAL


@pytest.mark.slow
def test_piecewise_spectrum_is_marginally_stable(piecewise):
    d = build_real_fourier(128)
    rule = build_rule(UNIT_INTERVAL, panel_count=default_panel_count(128), breakpoints=piecewise.breakpoints)
    result = spectrum(direct_encode(d, piecewise, rule))
    assert result.max_abs <= 1.02
    assert result.near_unit_circle(0.01) >= 5
    assert result.classification == MARGINAL


@pytest.mark.parametrize("system_name", ["identity", "rotation"])
def test_membership_of_exactly_represented_maps(system_name, request, unit_rule):
    system = request.getfixturevalue(system_name)
    d = build_exp_trig(8)
    k = basis_index(d, 2)
    norm_sq, rows = membership_residuals(d, system, unit_rule, 2, [k, k + 1, d.size], grid_size=200)
    assert norm_sq == pytest.approx(1.0, abs=1e-12)
    assert rows[0].J_N == pytest.approx(0.0, abs=1e-12)
    assert rows[1].J_N == pytest.approx(1.0, abs=1e-10)
    assert rows[2].I_N_error < 1e-10


def test_membership_argument_errors(piecewise, unit_rule):
    d = build_exp_trig(4)
    with pytest.raises(ArgumentError):
        membership_residuals(d, piecewise, unit_rule, 5, [3])
    with pytest.raises(ArgumentError):
        membership_residuals(d, piecewise, unit_rule, 1, [10])
    with pytest.raises(ArgumentError):
        membership_residuals(build_real_fourier(4), piecewise, unit_rule, 1, [3])


@pytest.mark.parametrize("i", [1, 2, 5])
def test_membership_residuals_of_piecewise_map(piecewise, i):
    d = build_exp_trig(256)
    rule = build_rule(UNIT_INTERVAL, panel_count=default_panel_count(256), breakpoints=piecewise.breakpoints)
    norm_sq, rows = membership_residuals(d, piecewise, rule, i, [17, 33, 65, 129, 257, 513])
    J = [r.J_N for r in rows]
    errors = [r.I_N_error for r in rows]
    assert all(a <= b for a, b in zip(J, J[1:]))
    assert J[-1] <= norm_sq + 1e-6
    assert J[-1] >= 0.95 * norm_sq
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_compare_against_one_step_shift(rotation):
    truth = simulate_truth(rotation, 0.05, 9)
    ahead = Trajectory(kind="state", values=truth.values[1:], provenance="predicted")
    behind = Trajectory(kind="state", values=truth.values[:-1], provenance="truth")
    comparison = compare_trajectories(behind, ahead)
    assert comparison.rmse == pytest.approx(0.1, abs=1e-12)
    assert comparison.max_error == pytest.approx(0.1, abs=1e-12)
    np.testing.assert_allclose(comparison.per_step, 0.1, atol=1e-12)


def test_compare_component_profiles():
    truth = Trajectory(kind="state", values=np.zeros((4, 2)), provenance="truth")
    predicted = Trajectory(kind="state", values=np.tile([3.0, 0.0], (4, 1)), provenance="predicted")
    comparison = compare_trajectories(truth, predicted)
    np.testing.assert_allclose(comparison.component_rmse, [3.0, 0.0])
    assert comparison.rmse_of([0]) == 3.0
    assert comparison.rmse == pytest.approx(3.0 / math.sqrt(2))


def test_compare_rejects_mismatches():
    a = Trajectory(kind="state", values=np.zeros((4, 1)), provenance="truth")
    with pytest.raises(ArgumentError):
        compare_trajectories(a, Trajectory(kind="state", values=np.zeros((5, 1)), provenance="predicted"))
    with pytest.raises(ArgumentError):
        compare_trajectories(a, Trajectory(kind="lifted", values=np.zeros((4, 1)), provenance="predicted"))


def test_kernel_grid_skips_jump(piecewise, identity):
    x = kernel_grid(piecewise)
    assert np.all(np.abs(x - 0.4) >= 0.02)
    assert len(kernel_grid(identity)) == 200


def test_kernel_check_reproduces_compositions(piecewise):
    profiles = kernel_check(piecewise, [8, 16, 128])
    assert len(profiles) == 3 * len(KERNEL_OBSERVABLES)
    by_name = {name: [p for p in profiles if p.name == name] for name in KERNEL_OBSERVABLES}
    for name, runs in by_name.items():
        assert [p.m for p in runs] == [17, 33, 257]
        errors = [p.rms_error for p in runs]
        if name == "cos(2 pi x)":
            assert max(errors) < 1e-10
        else:
            assert errors[-1] < 1e-2
            assert all(a > b for a, b in zip(errors, errors[1:]))


@pytest.mark.slow
def test_cable_model_tracks_bounces(config_dir):
    config = load_config(config_dir / "cable.json")
    system = build_system(config.system)
    dictionary = build_dictionary(config, system, verbose=False)
    rule = build_quadrature(config, system, dictionary)
    model = direct_encode(dictionary, system, rule)
    x0 = initial_state(config, system)
    predicted = decode(fit_decoder(dictionary, rule), predict(model, x0, config.scenario.steps))
    truth = truth_trajectory(config, system, x0)
    assert count_bounces(truth) >= 3
    comparison = compare_trajectories(truth, predicted)
    assert comparison.rmse_of([0, 1]) < 0.05 * system.domain.diagonal
