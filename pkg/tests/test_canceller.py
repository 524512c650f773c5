import numpy as np
import pytest

from aecctl.canceller import (
    AdaptationController,
    CancellerConfig,
    ControlOutput,
    ControllerError,
    CtfFilterState,
    form_error,
    predict_echo,
    run_canceller,
)
from aecctl.control import EaNlms
from aecctl.scenes import Scene, SceneConfig, sample_random_scene
from aecctl.stft import StftConfig

from reference import ctf_convolve_reference


def test_predict_zero_coeffs():
    state = CtfFilterState(4, 3)
    out = predict_echo(state, np.ones(4, dtype=complex))
    assert np.all(out == 0.0)


def test_predict_identity_filter():
    state = CtfFilterState(4, 1)
    state.coeffs[:, 0] = 1.0
    u = np.arange(4) + 1j
    np.testing.assert_array_equal(predict_echo(state, u), u)


def test_predict_one_frame_delay():
    state = CtfFilterState(3, 2)
    state.coeffs[:, 1] = 1.0
    u0 = np.array([1.0, 2.0, 3.0], dtype=complex)
    u1 = np.array([4.0, 5.0, 6.0], dtype=complex)
    assert np.all(predict_echo(state, u0) == 0.0)
    np.testing.assert_array_equal(predict_echo(state, u1), u0)


def test_predict_matches_brute_force():
    rng = np.random.default_rng(0)
    num_bands, filter_length, frames = 16, 8, 20
    state = CtfFilterState(num_bands, filter_length)
    state.coeffs = rng.standard_normal((num_bands, filter_length)) \
        + 1j * rng.standard_normal((num_bands, filter_length))
    history = []
    for _ in range(frames):
        u = rng.standard_normal(num_bands) + 1j * rng.standard_normal(num_bands)
        history.append(u)
        got = predict_echo(state, u)
        want = ctf_convolve_reference(state.coeffs, history)
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_form_error_identities():
    rng = np.random.default_rng(1)
    y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    d = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    assert np.all(form_error(y, y) == 0.0)
    np.testing.assert_array_equal(form_error(y, np.zeros(8)), y)
    np.testing.assert_allclose(form_error(y, d) + d, y, atol=1e-15)
    with pytest.raises(ValueError):
        form_error(y, d[:4])


def test_update_zero_step_freezes():
    state = CtfFilterState(4, 2)
    state.coeffs[:] = 1.0 + 1.0j
    before = state.coeffs.copy()
    state.push(np.ones(4, dtype=complex))
    state.update(np.zeros((4, 2)), np.ones(4, dtype=complex))
    np.testing.assert_array_equal(state.coeffs, before)


def test_one_step_exact_identification():
    # single tap, h=0, mu=1, u=1, y=d=2: error 2, updated coefficient 2
    state = CtfFilterState(1, 1)
    d_hat = predict_echo(state, np.array([1.0 + 0.0j]))
    err = form_error(np.array([2.0 + 0.0j]), d_hat)
    assert err[0] == 2.0 + 0.0j
    state.update(np.array([[1.0]]), err)
    assert state.coeffs[0, 0] == 2.0 + 0.0j
    assert predict_echo(state, np.array([1.0 + 0.0j]))[0] == 2.0 + 0.0j


def test_nlms_misalignment_decreases_in_expectation():
    rng = np.random.default_rng(2)
    num_runs, frames = 30, 100
    misalignment = np.zeros((num_runs, frames))
    for run in range(num_runs):
        h_true = rng.standard_normal() + 1j * rng.standard_normal()
        state = CtfFilterState(1, 1)
        for t in range(frames):
            u = rng.standard_normal(1) + 1j * rng.standard_normal(1)
            y = h_true * u
            err = form_error(y, predict_echo(state, u))
            mu = 0.3 / np.abs(u[0]) ** 2
            state.update(np.array([[mu]]), err)
            misalignment[run, t] = np.abs(state.coeffs[0, 0] - h_true)
    mean_curve = misalignment.mean(axis=0)
    assert np.all(np.diff(mean_curve) < 1e-6)
    assert mean_curve[-1] < 0.05 * mean_curve[0]


def test_update_direction_contraction():
    rng = np.random.default_rng(3)
    for _ in range(200):
        filter_length = rng.integers(1, 6)
        state = CtfFilterState(1, filter_length)
        state.coeffs = (rng.standard_normal((1, filter_length))
                        + 1j * rng.standard_normal((1, filter_length)))
        state.taps = (rng.standard_normal((1, filter_length))
                      + 1j * rng.standard_normal((1, filter_length)))
        y = rng.standard_normal(1) + 1j * rng.standard_normal(1)
        err = form_error(y, state.predict())
        tap_energy = np.sum(np.abs(state.taps) ** 2)
        mu = rng.uniform(0.0, 1.0) / tap_energy
        state.update(np.full((1, filter_length), mu), err)
        post = np.abs(y - np.sum(state.coeffs * state.taps, axis=1))
        assert post[0] <= np.abs(err[0]) + 1e-12


def test_update_rejects_bad_step_sizes():
    state = CtfFilterState(2, 2)
    state.push(np.ones(2, dtype=complex))
    with pytest.raises(ControllerError, match="band 1, tap 0"):
        state.update(np.array([[0.1, 0.1], [-1.0, 0.1]]),
                     np.ones(2, dtype=complex))
    with pytest.raises(ControllerError, match="band 0"):
        state.update(np.array([[np.nan, 0.1], [0.1, 0.1]]),
                     np.ones(2, dtype=complex))


def test_update_reports_nonfinite_coefficients():
    state = CtfFilterState(1, 1)
    state.push(np.array([1e300 + 0j]))
    with pytest.raises(ControllerError, match="non-finite coefficient"):
        state.update(np.array([[1e300]]), np.array([1e300 + 0j]))


def _silent_far_scene(duration_s=0.5):
    n = int(duration_s * 16000)
    rng = np.random.default_rng(4)
    near = rng.standard_normal(n)
    cfg = SceneConfig(duration_s=duration_s, ir_a=[1.0])
    return Scene(far_end=np.zeros(n), echo=np.zeros(n), near_end=near,
                 noise=np.zeros(n), mic=near, config=cfg)


def test_zero_far_end_passes_mic_through():
    scene = _silent_far_scene()
    trace = run_canceller(scene, EaNlms(), CancellerConfig())
    assert np.all(trace.echo_est_spec == 0.0)
    from aecctl.stft import analyze

    np.testing.assert_array_equal(trace.error_spec,
                                  analyze(scene.mic, StftConfig()))


def test_run_determinism():
    scene = sample_random_scene(9, duration_s=1.0)
    cfg = CancellerConfig()
    a = run_canceller(scene, EaNlms(), cfg)
    b = run_canceller(scene, EaNlms(), cfg)
    np.testing.assert_array_equal(a.error_spec, b.error_spec)
    np.testing.assert_array_equal(a.step_sizes, b.step_sizes)
    np.testing.assert_array_equal(a.error_td, b.error_td)


class _FrozenController(AdaptationController):
    name = "frozen"

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        self.shape = (num_bands, filter_length)

    def step(self, frame):
        return ControlOutput(np.zeros(self.shape))


def test_frozen_controller_predicts_nothing():
    scene = sample_random_scene(10, duration_s=1.0)
    trace = run_canceller(scene, _FrozenController(), CancellerConfig())
    assert np.all(trace.echo_est_spec == 0.0)
    assert np.all(trace.step_sizes == 0.0)


class _ExplodingController(AdaptationController):
    name = "exploding"

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        self.shape = (num_bands, filter_length)

    def step(self, frame):
        if frame.index == 3:
            raise RuntimeError("boom")
        return ControlOutput(np.zeros(self.shape))


def test_controller_failure_carries_frame_index():
    scene = sample_random_scene(11, duration_s=1.0)
    with pytest.raises(ControllerError, match="frame 3"):
        run_canceller(scene, _ExplodingController(), CancellerConfig())
