"""First-moment simulation of the time-convoluted dynamics.

Two integrators are provided:

* ``TrapezoidVolterra``: Heun predictor-corrector on the integro-differential
  equation, memory and output integrals by the composite trapezoid rule on the
  same grid. Works for any kernel; global order 2; O(N^2) work.
* ``ExpEmbed``: for Exponential kernels a_j exp(-lambda_j t) the auxiliary
  states z_j(t) = int_0^t exp(-lambda_j (t - s)) x(s) ds obey
  z_j' = -lambda_j z_j + x, turning the system into a memoryless linear ODE
  that is integrated with classical RK4.

The drive u(t) stands for the mean of the input field; the output carries the
instantaneous feedthrough u(t), including at t = 0.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal, TypedDict

import numpy as np
import scipy.linalg

from darklab.core.analysis import DarkModeCertificate
from darklab.core.system import ExponentialKernel, SystemSpec, channel_operators, derived_matrices
from darklab.errors import DimensionMismatch, MethodKernelMismatch, StepTooLarge
from darklab.services.environment import get_settings

logger = logging.getLogger(__name__)

Method = Literal["TrapezoidVolterra", "ExpEmbed"]
METHODS: tuple[Method, ...] = ("TrapezoidVolterra", "ExpEmbed")


# ==================== DRIVES ====================


@dataclass(frozen=True)
class ZeroDrive:
    """Vacuum input: zero mean on every quadrature."""

    def sample(self, times: np.ndarray, width: int) -> np.ndarray:
        return np.zeros((np.size(times), width))


@dataclass(frozen=True)
class SinusoidDrive:
    """u_i(t) = amplitude * sin(frequency * t + phase) on the listed quadratures.

    ``channels`` indexes the 2M input quadratures (Q_1, P_1, ..., Q_M, P_M);
    None drives all of them.
    """

    amplitude: float
    frequency: float
    phase: float = 0.0
    channels: tuple[int, ...] | None = None

    def sample(self, times: np.ndarray, width: int) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        channels = range(width) if self.channels is None else self.channels
        u = np.zeros((times.size, width))
        wave = self.amplitude * np.sin(self.frequency * times + self.phase)
        for channel in channels:
            if not 0 <= channel < width:
                raise DimensionMismatch(f"drive channel {channel} outside 0..{width - 1}")
            u[:, channel] = wave
        return u


@dataclass(frozen=True, eq=False)
class PiecewiseDrive:
    """Tabulated drive, linearly interpolated and held constant past the ends."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        values = np.atleast_2d(np.array(self.values, dtype=float))
        if values.shape[0] != times.size:
            raise DimensionMismatch(f"drive table has {times.size} times but {values.shape[0]} rows")
        if np.any(np.diff(times) <= 0):
            raise DimensionMismatch("drive table times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def sample(self, times: np.ndarray, width: int) -> np.ndarray:
        if self.values.shape[1] != width:
            raise DimensionMismatch(f"drive table has {self.values.shape[1]} columns, system needs {width}")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.column_stack([np.interp(times, self.times, self.values[:, i]) for i in range(width)])


DriveSignal = ZeroDrive | SinusoidDrive | PiecewiseDrive


# ==================== TRAJECTORIES ====================


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Mean state and output on a uniform grid."""

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    method: Method
    h: float
    t_final: float

    def dark_projection(self, s_d: np.ndarray) -> np.ndarray:
        """x_D(t) = S_D <x>(t) at every grid point."""
        return self.states @ np.asarray(s_d, dtype=float).T


def trajectory_difference(a: Trajectory, b: Trajectory) -> tuple[float, float]:
    """Largest state and output deviation between two runs on one grid."""
    if a.states.shape != b.states.shape or a.outputs.shape != b.outputs.shape:
        raise DimensionMismatch("trajectories live on different grids")
    state_err = float(np.max(np.linalg.norm(a.states - b.states, axis=1)))
    output_err = float(np.max(np.linalg.norm(a.outputs - b.outputs, axis=1)))
    return state_err, output_err


def _grid(t_final: float, h: float) -> np.ndarray:
    if not t_final > 0:
        raise StepTooLarge(f"horizon must be positive, got {t_final}")
    if not 0 < h <= t_final:
        raise StepTooLarge(f"step {h} must lie in (0, {t_final}]")
    steps = int(round(t_final / h))
    if abs(steps * h - t_final) > 1e-9 * t_final:
        raise StepTooLarge(f"step {h} does not divide the horizon {t_final}")
    return h * np.arange(steps + 1)


def _trapezoid_volterra(spec: SystemSpec, x0: np.ndarray, u: np.ndarray, times: np.ndarray, h: float):
    derived = derived_matrices(spec)
    a_re, a_im, c_re, c_im = channel_operators(spec)
    kernel = np.atleast_2d(spec.kernel_values(times)).reshape(spec.m, times.size)
    g_re, g_im = np.real(kernel), np.imag(kernel)
    steps = times.size - 1

    states = np.zeros((times.size, spec.size))
    outputs = np.zeros((times.size, 2 * spec.m))
    states[0] = x0

    def history(k: int) -> tuple[np.ndarray, np.ndarray]:
        # Trapezoid weights over s_0..s_{k-1}; the endpoint s_k is added by rhs.
        if k == 0:
            zero = np.zeros((spec.m, spec.size))
            return zero, zero
        weights = np.full(k, h)
        weights[0] = h / 2
        lags = slice(k, 0, -1)
        return (g_re[:, lags] * weights) @ states[:k], (g_im[:, lags] * weights) @ states[:k]

    def rhs(k: int, x: np.ndarray, past: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        conv_re, conv_im = past
        if k > 0:
            conv_re = conv_re + (h / 2) * np.outer(g_re[:, 0], x)
            conv_im = conv_im + (h / 2) * np.outer(g_im[:, 0], x)
        memory = np.einsum("jab,jb->a", a_re, conv_re) + np.einsum("jab,jb->a", a_im, conv_im)
        output = np.einsum("jab,jb->a", c_re, conv_re) + np.einsum("jab,jb->a", c_im, conv_im) + u[k]
        return derived.a_h @ x + memory + derived.b @ u[k], output

    past = history(0)
    slope, outputs[0] = rhs(0, states[0], past)
    for k in range(steps):
        predictor = states[k] + h * slope
        past = history(k + 1)
        predicted_slope, _ = rhs(k + 1, predictor, past)
        states[k + 1] = states[k] + (h / 2) * (slope + predicted_slope)
        slope, outputs[k + 1] = rhs(k + 1, states[k + 1], past)
    return states, outputs


def _exp_embed(spec: SystemSpec, x0: np.ndarray, drive: DriveSignal, times: np.ndarray, h: float):
    derived = derived_matrices(spec)
    a_re, _, c_re, _ = channel_operators(spec)
    size, m = spec.size, spec.m
    amplitudes = np.array([kernel.a for kernel in spec.kernels])
    rates = np.array([kernel.lam for kernel in spec.kernels])

    # Augmented state (x, z_1, ..., z_M).
    dim = size * (m + 1)
    generator = np.zeros((dim, dim))
    generator[:size, :size] = derived.a_h
    readout = np.zeros((2 * m, dim))
    for j in range(m):
        block = slice(size * (j + 1), size * (j + 2))
        generator[:size, block] = amplitudes[j] * a_re[j]
        generator[block, :size] = np.eye(size)
        generator[block, block] = -rates[j] * np.eye(size)
        readout[:, block] = amplitudes[j] * c_re[j]
    forcing = np.zeros((dim, 2 * m))
    forcing[:size] = derived.b

    width = 2 * m
    u = drive.sample(times, width)
    u_half = drive.sample(times[:-1] + h / 2, width)
    state = np.zeros(dim)
    state[:size] = x0
    states = np.zeros((times.size, size))
    outputs = np.zeros((times.size, width))
    states[0], outputs[0] = x0, readout @ state + u[0]
    for k in range(times.size - 1):
        f0, fh, f1 = forcing @ u[k], forcing @ u_half[k], forcing @ u[k + 1]
        k1 = generator @ state + f0
        k2 = generator @ (state + (h / 2) * k1) + fh
        k3 = generator @ (state + (h / 2) * k2) + fh
        k4 = generator @ (state + h * k3) + f1
        state = state + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        states[k + 1] = state[:size]
        outputs[k + 1] = readout @ state + u[k + 1]
    return states, outputs


def simulate_mean(
    spec: SystemSpec,
    x0: np.ndarray,
    drive: DriveSignal,
    t_final: float,
    h: float,
    method: Method = "ExpEmbed",
) -> Trajectory:
    """Integrate the mean dynamics from x0 under ``drive`` up to ``t_final``.

    Raises:
        StepTooLarge: if h is not in (0, t_final] or t_final is not a whole number of steps.
        MethodKernelMismatch: if ExpEmbed is asked for non-Exponential kernels.
    """
    if method not in METHODS:
        raise MethodKernelMismatch(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != spec.size:
        raise DimensionMismatch(f"x0 must have {spec.size} entries, got {x0.size}")
    times = _grid(t_final, h)
    if method == "ExpEmbed":
        foreign = [type(kernel).__name__ for kernel in spec.kernels if not isinstance(kernel, ExponentialKernel)]
        if foreign:
            raise MethodKernelMismatch(f"ExpEmbed needs Exponential kernels, got {', '.join(foreign)}")
        states, outputs = _exp_embed(spec, x0, drive, times, h)
    else:
        states, outputs = _trapezoid_volterra(spec, x0, drive.sample(times, 2 * spec.m), times, h)
    logger.debug("%s: %s steps of h = %s", method, times.size - 1, h)
    return Trajectory(times=times, states=states, outputs=outputs, method=method, h=h, t_final=float(t_final))


def run_concurrently(jobs: list[Callable[[], Trajectory]], workers: int | None = None) -> list[Trajectory]:
    """Run independent simulations on a thread pool, keeping job order."""
    if workers is None:
        workers = get_settings().workers
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda job: job(), jobs))


# ==================== DARK-MODE CHECKS ====================


def closed_form_dark(a_d: np.ndarray, xd0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """exp(A_D t) x_D(0) at each time, one row per time."""
    a_d = np.atleast_2d(np.asarray(a_d, dtype=float))
    if a_d.shape[0] != a_d.shape[1]:
        raise DimensionMismatch(f"A_D must be square, got {a_d.shape}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    propagators = scipy.linalg.expm(times[:, None, None] * a_d)
    return propagators @ np.asarray(xd0, dtype=float)


def kick_response(
    spec: SystemSpec,
    direction: np.ndarray,
    t_final: float,
    h: float,
    method: Method = "ExpEmbed",
    x0: np.ndarray | None = None,
) -> float:
    """Largest output change caused by adding ``direction`` to x0 (zero drive)."""
    if x0 is None:
        x0 = np.zeros(spec.size)
    base, kicked = run_concurrently(
        [
            lambda: simulate_mean(spec, x0, ZeroDrive(), t_final, h, method),
            lambda: simulate_mean(spec, x0 + np.asarray(direction, dtype=float), ZeroDrive(), t_final, h, method),
        ]
    )
    return trajectory_difference(base, kicked)[1]


class DecouplingReport(TypedDict):
    input_decoupling_err: float
    output_decoupling_err: float
    autonomy_err: float


def dark_decoupling_test(
    spec: SystemSpec,
    cert: DarkModeCertificate,
    drive: DriveSignal,
    t_final: float,
    h: float,
    method: Method = "ExpEmbed",
    x0: np.ndarray | None = None,
) -> DecouplingReport:
    """Empirical check that the certified dark mode ignores input and output.

    input_decoupling_err compares S_D<x> with and without the drive;
    output_decoupling_err is the output change after a unit kick along the
    first dark direction; autonomy_err compares the driven S_D<x> with
    exp(A_D t) S_D x0.
    """
    if x0 is None:
        x0 = np.ones(spec.size) / np.sqrt(spec.size)
    x0 = np.asarray(x0, dtype=float)
    kick = cert.s_d.T @ np.eye(cert.s_d.shape[0])[0]
    driven, free, kicked = run_concurrently(
        [
            lambda: simulate_mean(spec, x0, drive, t_final, h, method),
            lambda: simulate_mean(spec, x0, ZeroDrive(), t_final, h, method),
            lambda: simulate_mean(spec, x0 + kick, ZeroDrive(), t_final, h, method),
        ]
    )
    dark_driven = driven.dark_projection(cert.s_d)
    reference = closed_form_dark(cert.a_d, cert.s_d @ x0, driven.times)
    return {
        "input_decoupling_err": float(np.max(np.linalg.norm(dark_driven - free.dark_projection(cert.s_d), axis=1))),
        "output_decoupling_err": trajectory_difference(free, kicked)[1],
        "autonomy_err": float(np.max(np.linalg.norm(dark_driven - reference, axis=1))),
    }
