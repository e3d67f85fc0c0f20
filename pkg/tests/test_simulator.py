import numpy as np
import pytest
from scipy.integrate import solve_ivp

from darklab.core import benchmark
from darklab.core.simulator import (
    PiecewiseDrive,
    SinusoidDrive,
    ZeroDrive,
    closed_form_dark,
    dark_decoupling_test,
    kick_response,
    run_concurrently,
    simulate_mean,
    trajectory_difference,
)
from darklab.core.symplectic import j_matrix
from darklab.core.system import ExponentialKernel, GaussianKernel, SystemSpec, TableKernel
from darklab.errors import DimensionMismatch, MethodKernelMismatch, StepTooLarge


def single_mode(kernel=None) -> SystemSpec:
    kernel = kernel or ExponentialKernel(1.0, 1.0)
    return SystemSpec(n=1, m=1, omega=np.zeros((2, 2)), v=np.eye(2), kernels=(kernel,))


class TestDrives:
    def test_sinusoid_on_selected_channels(self):
        drive = SinusoidDrive(amplitude=2.0, frequency=3.0, phase=0.5, channels=(1,))
        u = drive.sample(np.array([0.0, 1.0]), 4)
        assert np.allclose(u[:, 1], 2.0 * np.sin(3.0 * np.array([0.0, 1.0]) + 0.5))
        assert np.array_equal(u[:, [0, 2, 3]], np.zeros((2, 3)))

    def test_sinusoid_channel_out_of_range(self):
        with pytest.raises(DimensionMismatch):
            SinusoidDrive(1.0, 1.0, channels=(4,)).sample(np.zeros(1), 4)

    def test_piecewise_interpolates(self):
        drive = PiecewiseDrive(times=[0.0, 1.0], values=[[0.0, 2.0], [1.0, 0.0]])
        assert np.allclose(drive.sample(np.array([0.5, 3.0]), 2), [[0.5, 1.0], [1.0, 0.0]])
        with pytest.raises(DimensionMismatch):
            drive.sample(np.zeros(1), 4)


class TestSimulateMean:
    @pytest.mark.parametrize("method", ["TrapezoidVolterra", "ExpEmbed"])
    def test_uncoupled_system_is_constant(self, method):
        spec = SystemSpec(
            n=2, m=1, omega=np.zeros((4, 4)), v=np.zeros((2, 4)), kernels=(ExponentialKernel(1.0, 1.0),)
        )
        x0 = np.array([1.0, -2.0, 0.5, 3.0])
        trajectory = simulate_mean(spec, x0, SinusoidDrive(5.0, 2.0), 1.0, 0.01, method)
        assert np.allclose(trajectory.states, x0, atol=1e-14)
        assert trajectory.times.shape == (101,)
        assert trajectory.outputs.shape == (101, 2)

    def test_output_includes_feedthrough(self):
        drive = SinusoidDrive(1.0, 1.0, phase=np.pi / 2)
        trajectory = simulate_mean(single_mode(), np.zeros(2), drive, 0.1, 0.01)
        assert np.allclose(trajectory.outputs[0], [1.0, 1.0])

    def test_integrators_agree_on_single_mode(self):
        x0 = np.array([1.0, 0.0])
        volterra = simulate_mean(single_mode(), x0, ZeroDrive(), 2.0, 1e-3, "TrapezoidVolterra")
        embedded = simulate_mean(single_mode(), x0, ZeroDrive(), 2.0, 1e-3, "ExpEmbed")
        state_err, output_err = trajectory_difference(volterra, embedded)
        assert state_err <= 5e-6
        assert output_err <= 5e-6

    def test_trapezoid_converges_at_second_order(self, three_mode_spec):
        x0 = np.ones(6) / np.sqrt(6.0)
        errors = []
        for h in (4e-3, 2e-3, 1e-3):
            volterra = simulate_mean(three_mode_spec, x0, ZeroDrive(), 1.0, h, "TrapezoidVolterra")
            embedded = simulate_mean(three_mode_spec, x0, ZeroDrive(), 1.0, h, "ExpEmbed")
            errors.append(trajectory_difference(volterra, embedded)[0])
        for coarse, fine in zip(errors, errors[1:]):
            assert 3.0 <= coarse / fine <= 5.0

    def test_linearity(self, three_mode_spec, rng):
        times = np.linspace(0.0, 2.0, 21)
        u_a, u_b = rng.normal(size=(2, 21, 4))
        x_a, x_b = rng.normal(size=(2, 6))

        def run(x0, values):
            return simulate_mean(three_mode_spec, x0, PiecewiseDrive(times, values), 2.0, 1e-2)

        total = run(x_a + x_b, u_a + u_b)
        parts = [run(x_a, u_a), run(x_b, u_b)]
        assert np.allclose(total.states, parts[0].states + parts[1].states, atol=1e-9)
        assert np.allclose(total.outputs, parts[0].outputs + parts[1].outputs, atol=1e-9)

    def test_complex_table_kernel(self):
        kernel = TableKernel(times=[0.0, 10.0], values=[1.0, 0.0], imag_values=[0.5, 0.0])
        trajectory = simulate_mean(single_mode(kernel), np.array([1.0, 0.0]), ZeroDrive(), 1.0, 0.01, "TrapezoidVolterra")
        assert np.all(np.isfinite(trajectory.states))
        with pytest.raises(MethodKernelMismatch):
            simulate_mean(single_mode(kernel), np.zeros(2), ZeroDrive(), 1.0, 0.01, "ExpEmbed")

    def test_exp_embed_needs_exponential_kernels(self):
        with pytest.raises(MethodKernelMismatch):
            simulate_mean(single_mode(GaussianKernel(1.0, 1.0)), np.zeros(2), ZeroDrive(), 1.0, 0.1, "ExpEmbed")

    @pytest.mark.parametrize("h", [0.0, -0.1, 2.0])
    def test_bad_steps(self, h):
        with pytest.raises(StepTooLarge):
            simulate_mean(single_mode(), np.zeros(2), ZeroDrive(), 1.0, h)

    @pytest.mark.parametrize("h", [0.6, 0.4, 0.3])
    def test_step_must_divide_horizon(self, h):
        with pytest.raises(StepTooLarge):
            simulate_mean(single_mode(), np.zeros(2), ZeroDrive(), 1.0, h)

    def test_grid_ends_at_horizon(self):
        trajectory = simulate_mean(single_mode(), np.zeros(2), ZeroDrive(), 1.0, 0.25)
        assert np.allclose(trajectory.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert trajectory.t_final == 1.0

    def test_initial_state_length(self):
        with pytest.raises(DimensionMismatch):
            simulate_mean(single_mode(), np.zeros(3), ZeroDrive(), 1.0, 0.1)


class TestClosedFormDark:
    def test_zero_generator(self):
        states = closed_form_dark(np.zeros((2, 2)), np.array([1.0, 2.0]), np.linspace(0.0, 3.0, 4))
        assert np.allclose(states, [1.0, 2.0])

    def test_harmonic_oscillator(self):
        a_d = j_matrix(1) @ np.diag([4.0, 1.0])
        times = np.linspace(0.0, 10.0, 101)
        states = closed_form_dark(a_d, np.array([1.0, 0.0]), times)
        assert np.allclose(states[:, 0], np.cos(2.0 * times), atol=1e-12)
        assert np.allclose(states[:, 1], -2.0 * np.sin(2.0 * times), atol=1e-12)

    def test_matches_ode_solution(self, rng):
        s = rng.normal(size=(2, 2))
        a_d = j_matrix(1) @ (s + s.T)
        times = np.linspace(0.0, 2.0, 21)
        reference = solve_ivp(lambda t, y: a_d @ y, (0.0, 2.0), [1.0, -0.5], t_eval=times, rtol=1e-12, atol=1e-12, method="DOP853")
        assert np.allclose(closed_form_dark(a_d, [1.0, -0.5], times), reference.y.T, atol=1e-9)


class TestDarkDecoupling:
    def test_dark_mode_evolves_in_closed_form(self, three_mode_spec, three_mode_certificate):
        cert = three_mode_certificate
        x0 = cert.s_d.T @ np.array([1.0, 0.0])
        trajectory = simulate_mean(three_mode_spec, x0, ZeroDrive(), 10.0, 1e-3)
        dark = trajectory.dark_projection(cert.s_d)
        reference = closed_form_dark(cert.a_d, np.array([1.0, 0.0]), trajectory.times)
        error = np.max(np.linalg.norm(dark - reference, axis=1)) / np.max(np.linalg.norm(reference, axis=1))
        assert error <= 1e-6
        assert np.allclose(dark[:, 0], np.cos(2.0 * trajectory.times), atol=1e-6)

    def test_decoupling_under_strong_drive(self, three_mode_spec, three_mode_certificate):
        report = dark_decoupling_test(
            three_mode_spec, three_mode_certificate, SinusoidDrive(amplitude=10.0, frequency=1.0), 10.0, 1e-3
        )
        assert report["input_decoupling_err"] <= 1e-8
        assert report["output_decoupling_err"] <= 1e-8
        assert report["autonomy_err"] <= 1e-8

    def test_drive_amplitude_sweep(self, three_mode_spec, three_mode_certificate):
        x0 = np.ones(6) / np.sqrt(6.0)
        runs = run_concurrently(
            [
                (lambda amp=amp: simulate_mean(three_mode_spec, x0, SinusoidDrive(amp, 1.3), 5.0, 1e-3))
                for amp in (0.0, 1.0, 10.0)
            ]
        )
        dark = [run.dark_projection(three_mode_certificate.s_d) for run in runs]
        assert np.max(np.abs(dark[1] - dark[0])) <= 1e-8
        assert np.max(np.abs(dark[2] - dark[0])) <= 1e-8

    def test_kicks(self, three_mode_spec, three_mode_certificate):
        dark_kick = three_mode_certificate.s_d.T @ np.array([0.0, 1.0])
        bright_kick = benchmark.reference_transform()[2]
        assert kick_response(three_mode_spec, dark_kick, 2.0, 1e-3) <= 1e-8
        assert kick_response(three_mode_spec, bright_kick, 2.0, 1e-3) >= 1e-2

    def test_uncoupled_state_ignores_drive(self):
        spec = SystemSpec(
            n=1, m=1, omega=np.eye(2), v=np.zeros((2, 2)), kernels=(ExponentialKernel(1.0, 1.0),)
        )
        x0 = np.array([0.3, 0.1])
        driven, free = run_concurrently(
            [
                lambda: simulate_mean(spec, x0, SinusoidDrive(10.0, 1.0), 2.0, 1e-2),
                lambda: simulate_mean(spec, x0, ZeroDrive(), 2.0, 1e-2),
            ]
        )
        assert np.array_equal(driven.states, free.states)


class TestConcurrency:
    def test_order_is_preserved(self):
        runs = run_concurrently(
            [
                (lambda t=t: simulate_mean(single_mode(), np.array([1.0, 0.0]), ZeroDrive(), t, 0.05))
                for t in (0.5, 1.0, 1.5, 2.0)
            ],
            workers=3,
        )
        assert [run.t_final for run in runs] == pytest.approx([0.5, 1.0, 1.5, 2.0])

    def test_difference_requires_matching_grids(self):
        a = simulate_mean(single_mode(), np.zeros(2), ZeroDrive(), 1.0, 0.1)
        b = simulate_mean(single_mode(), np.zeros(2), ZeroDrive(), 1.0, 0.05)
        with pytest.raises(DimensionMismatch):
            trajectory_difference(a, b)
