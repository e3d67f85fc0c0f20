"""Data model for a non-Markovian linear system (Omega, V, Gamma(t)).

The first-moment dynamics are

    x'(t) = A_H x(t) + int_0^t A_Gamma(t - s) x(s) ds + B u(t)
    y(t)  = int_0^t Gamma_o(t - s) V x(s) ds + u(t)

with A_H = J_n Omega, B = J_n V^T J_M,
A_Gamma(t) = J_n V^T Gamma_K(t) V, Gamma_K = Im Gamma (x) I_2 + Re Gamma (x) J
and Gamma_o = Re Gamma (x) I_2 - Im Gamma (x) J.

Each channel j has a memory kernel gamma_j(t), the Fourier transform of the
squared coupling strength kappa_j(omega)^2. A Lorentzian kappa_j^2 centred at
zero gives the Exponential family.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, TypedDict

import numpy as np

from darklab.core.symplectic import J, j_matrix
from darklab.errors import DimensionMismatch, KernelError
from darklab.services.environment import get_settings

logger = logging.getLogger(__name__)

KernelFamily = Literal["exponential", "gaussian", "table"]

# Families that describe white-noise couplings; they have no function value.
MARKOVIAN_FAMILIES = {"dirac", "delta", "markovian", "white"}


# ==================== MEMORY KERNELS ====================


@dataclass(frozen=True)
class ExponentialKernel:
    """gamma(t) = a * exp(-lambda * t)."""

    a: float
    lam: float
    family: KernelFamily = field(default="exponential", init=False)

    def __post_init__(self):
        if not np.isfinite(self.a):
            raise KernelError(f"exponential amplitude must be finite, got {self.a}")
        if not self.lam > 0 or not np.isfinite(self.lam):
            raise KernelError(f"exponential rate lambda must be positive, got {self.lam}")

    @property
    def is_complex(self) -> bool:
        return False

    def __call__(self, t):
        return self.a * np.exp(-self.lam * np.asarray(t, dtype=float))

    def to_dict(self) -> dict:
        return {"family": self.family, "a": float(self.a), "lambda": float(self.lam)}


@dataclass(frozen=True)
class GaussianKernel:
    """gamma(t) = a * exp(-t^2 / (2 sigma^2))."""

    a: float
    sigma: float
    family: KernelFamily = field(default="gaussian", init=False)

    def __post_init__(self):
        if not np.isfinite(self.a):
            raise KernelError(f"gaussian amplitude must be finite, got {self.a}")
        if not self.sigma > 0 or not np.isfinite(self.sigma):
            raise KernelError(f"gaussian width sigma must be positive, got {self.sigma}")

    @property
    def is_complex(self) -> bool:
        return False

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * np.exp(-(t**2) / (2.0 * self.sigma**2))

    def to_dict(self) -> dict:
        return {"family": self.family, "a": float(self.a), "sigma": float(self.sigma)}


@dataclass(frozen=True, eq=False)
class TableKernel:
    """Tabulated gamma(t) with linear interpolation, held constant past the ends.

    ``imag_values`` makes the kernel complex; complex kernels are experimental.
    """

    times: np.ndarray
    values: np.ndarray
    imag_values: np.ndarray | None = None
    interpolation: str = "linear"
    family: KernelFamily = field(default="table", init=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        values = np.array(self.values, dtype=float).ravel()
        if times.size == 0 or times.size != values.size:
            raise KernelError(f"table needs matching nonempty times/values, got {times.size} and {values.size}")
        if np.any(np.diff(times) <= 0):
            raise KernelError("table times must be strictly increasing")
        if times[0] > 0:
            raise KernelError(f"table must start at t <= 0, starts at {times[0]}")
        if self.interpolation != "linear":
            raise KernelError(f"unsupported interpolation {self.interpolation!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.imag_values is not None:
            imag = np.array(self.imag_values, dtype=float).ravel()
            if imag.size != times.size:
                raise KernelError(f"imag_values has {imag.size} entries, expected {times.size}")
            object.__setattr__(self, "imag_values", imag)

    @property
    def is_complex(self) -> bool:
        return self.imag_values is not None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        real = np.interp(t, self.times, self.values)
        if self.imag_values is None:
            return real
        return real + 1j * np.interp(t, self.times, self.imag_values)

    def to_dict(self) -> dict:
        data = {
            "family": self.family,
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "interpolation": self.interpolation,
        }
        if self.imag_values is not None:
            data["imag_values"] = self.imag_values.tolist()
        return data


KernelSpec = ExponentialKernel | GaussianKernel | TableKernel


def kernel_from_dict(data: dict) -> KernelSpec:
    """Build a kernel from its JSON form.

    Raises:
        KernelError: for unknown or Markovian families and missing parameters.
    """
    family = str(data.get("family", "")).lower()
    if family in MARKOVIAN_FAMILIES:
        raise KernelError(f"kernel family {family!r} is Markovian and has no function value")
    try:
        if family == "exponential":
            return ExponentialKernel(a=float(data["a"]), lam=float(data["lambda"]))
        if family == "gaussian":
            return GaussianKernel(a=float(data["a"]), sigma=float(data["sigma"]))
        if family == "table":
            return TableKernel(
                times=data["times"],
                values=data["values"],
                imag_values=data.get("imag_values"),
                interpolation=data.get("interpolation", "linear"),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise KernelError(f"{family} kernel is missing or has a bad parameter: {e}") from e
    raise KernelError(f"unknown kernel family {data.get('family')!r}")


# ==================== SYSTEM SPECIFICATION ====================


def build_v(coupling: np.ndarray) -> np.ndarray:
    """Real 2M x 2n matrix V from M complex coupling vectors v_j.

    Rows 2j and 2j+1 (zero-based) are sqrt(2) Re(v_j)^T and sqrt(2) Im(v_j)^T.
    """
    coupling = np.atleast_2d(np.asarray(coupling, dtype=complex))
    m, size = coupling.shape
    v = np.empty((2 * m, size))
    v[0::2] = np.sqrt(2.0) * coupling.real
    v[1::2] = np.sqrt(2.0) * coupling.imag
    return v


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """The triple (Omega, V, Gamma) that completely specifies the system.

    Omega is symmetrised on construction; an asymmetry above ``tol`` is logged
    as a warning.
    """

    n: int
    m: int
    omega: np.ndarray
    v: np.ndarray
    kernels: tuple[KernelSpec, ...]
    tol: float | None = None
    coupling_vectors: np.ndarray | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DimensionMismatch(f"n must be a positive integer, got {self.n}")
        if int(self.m) != self.m or self.m < 1:
            raise DimensionMismatch(f"M must be a positive integer, got {self.m}")
        size = 2 * self.n
        omega = np.array(self.omega, dtype=float)
        if omega.shape != (size, size):
            raise DimensionMismatch(f"omega must be {size}x{size}, got {omega.shape}")
        v = np.array(self.v, dtype=float)
        if v.shape != (2 * self.m, size):
            raise DimensionMismatch(f"V must be {2 * self.m}x{size}, got {v.shape}")
        kernels = tuple(self.kernels)
        if len(kernels) != self.m:
            raise DimensionMismatch(f"expected {self.m} kernels, got {len(kernels)}")

        asymmetry = float(np.linalg.norm(omega - omega.T))
        tol = self.tol if self.tol is not None else get_settings().tol
        if asymmetry > tol:
            logger.warning("omega is not symmetric (||Omega - Omega^T|| = %.3e); symmetrising", asymmetry)
        omega = (omega + omega.T) / 2.0

        omega.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "kernels", kernels)
        if self.coupling_vectors is not None:
            vectors = np.atleast_2d(np.array(self.coupling_vectors, dtype=complex))
            mismatch = float(np.linalg.norm(build_v(vectors) - v)) if vectors.shape == (self.m, size) else np.inf
            if mismatch > tol:
                raise DimensionMismatch(f"coupling vectors and V disagree (mismatch {mismatch:.3e})")
            vectors.setflags(write=False)
            object.__setattr__(self, "coupling_vectors", vectors)

    @classmethod
    def from_coupling_vectors(
        cls,
        omega: np.ndarray,
        coupling: np.ndarray,
        kernels: list[KernelSpec],
        tol: float | None = None,
    ) -> "SystemSpec":
        """Build a spec from M complex 2n-vectors instead of V."""
        coupling = np.atleast_2d(np.asarray(coupling, dtype=complex))
        m, size = coupling.shape
        if size % 2:
            raise DimensionMismatch(f"coupling vectors must have even length, got {size}")
        return cls(
            n=size // 2,
            m=m,
            omega=omega,
            v=build_v(coupling),
            kernels=tuple(kernels),
            tol=tol,
            coupling_vectors=coupling,
        )

    @property
    def size(self) -> int:
        return 2 * self.n

    @property
    def has_complex_kernels(self) -> bool:
        return any(kernel.is_complex for kernel in self.kernels)

    def with_omega(self, omega: np.ndarray) -> "SystemSpec":
        """Same coupling and kernels, different Hamiltonian."""
        return SystemSpec(
            n=self.n,
            m=self.m,
            omega=omega,
            v=self.v,
            kernels=self.kernels,
            tol=self.tol,
            coupling_vectors=self.coupling_vectors,
        )

    def kernel_values(self, t) -> np.ndarray:
        """gamma_j(t) for every channel; shape (M,) for scalar t, (M, len(t)) otherwise."""
        values = [np.asarray(kernel(t)) for kernel in self.kernels]
        dtype = complex if self.has_complex_kernels else float
        return np.array(values, dtype=dtype)


# ==================== DERIVED MATRICES ====================


def gamma_k_matrix(values: np.ndarray) -> np.ndarray:
    """Gamma_K = Im Gamma (x) I_2 + Re Gamma (x) J for diagonal Gamma."""
    values = np.asarray(values)
    return np.kron(np.diag(np.imag(values)), np.eye(2)) + np.kron(np.diag(np.real(values)), J)


def gamma_o_matrix(values: np.ndarray) -> np.ndarray:
    """Gamma_o = Re Gamma (x) I_2 - Im Gamma (x) J for diagonal Gamma."""
    values = np.asarray(values)
    return np.kron(np.diag(np.real(values)), np.eye(2)) - np.kron(np.diag(np.imag(values)), J)


@dataclass(frozen=True, eq=False)
class DerivedMatrices:
    """A_H, B and V plus time evaluators for A_Gamma, Gamma_o and Gamma_K."""

    a_h: np.ndarray
    b: np.ndarray
    v: np.ndarray
    kernel_values: Callable[[float], np.ndarray]

    def gamma_k(self, t: float) -> np.ndarray:
        return gamma_k_matrix(self._values(t))

    def gamma_o(self, t: float) -> np.ndarray:
        return gamma_o_matrix(self._values(t))

    def a_gamma(self, t: float) -> np.ndarray:
        n = self.a_h.shape[0] // 2
        return j_matrix(n) @ self.v.T @ self.gamma_k(t) @ self.v

    def _values(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError(f"kernels are defined for t >= 0, got {t}")
        return self.kernel_values(t)


def derived_matrices(spec: SystemSpec) -> DerivedMatrices:
    """All matrices of the first-moment equations for ``spec``."""
    jn = j_matrix(spec.n)
    jm = j_matrix(spec.m)
    return DerivedMatrices(
        a_h=jn @ spec.omega,
        b=jn @ spec.v.T @ jm,
        v=np.array(spec.v),
        kernel_values=spec.kernel_values,
    )


def channel_operators(spec: SystemSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-channel pieces of A_Gamma and Gamma_o V, each of shape (M, ., 2n).

    A_Gamma(t) = sum_j Re g_j(t) A_re[j] + Im g_j(t) A_im[j] and
    Gamma_o(t) V = sum_j Re g_j(t) C_re[j] + Im g_j(t) C_im[j].
    """
    jn = j_matrix(spec.n)
    a_re, a_im, c_re, c_im = [], [], [], []
    for j in range(spec.m):
        unit = np.zeros(spec.m)
        unit[j] = 1.0
        a_re.append(jn @ spec.v.T @ gamma_k_matrix(unit) @ spec.v)
        a_im.append(jn @ spec.v.T @ gamma_k_matrix(1j * unit) @ spec.v)
        c_re.append(gamma_o_matrix(unit) @ spec.v)
        c_im.append(gamma_o_matrix(1j * unit) @ spec.v)
    return np.array(a_re), np.array(a_im), np.array(c_re), np.array(c_im)


# ==================== CHECKS ====================


class ChannelReport(TypedDict):
    channel: int
    t1: float | None
    value: float
    flagged: bool


class Assumption1Report(TypedDict):
    channels: list[ChannelReport]
    t1: float | None  # common time where every |gamma_j| clears tol
    satisfied: bool


def assumption1_check(
    spec: SystemSpec,
    horizon: float,
    samples: int,
    tol: float | None = None,
) -> Assumption1Report:
    """Look for t1 in [0, horizon] where every kernel is nonzero.

    Each channel reports the first sample where |gamma_j| is largest and is
    flagged when that value does not exceed ``tol``. The common t1 is the
    first sample maximising min_j |gamma_j(t)|.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    if tol is None:
        tol = get_settings().tol
    times = np.linspace(0.0, horizon, samples) if samples > 1 else np.zeros(1)
    magnitudes = np.abs(spec.kernel_values(times)).reshape(spec.m, times.size)

    channels: list[ChannelReport] = []
    for j in range(spec.m):
        k = int(np.argmax(magnitudes[j]))
        value = float(magnitudes[j, k])
        flagged = not value > tol
        channels.append(
            {"channel": j, "t1": None if flagged else float(times[k]), "value": value, "flagged": flagged}
        )
        if flagged:
            logger.warning("kernel of channel %s never exceeds %.1e on [0, %s]", j, tol, horizon)

    floor = magnitudes.min(axis=0)
    k = int(np.argmax(floor))
    satisfied = bool(floor[k] > tol)
    return {"channels": channels, "t1": float(times[k]) if satisfied else None, "satisfied": satisfied}


def ccr_matrix_check(s: np.ndarray) -> float:
    """||S J_n S^T - J_l||_F for transformation rows S of shape 2l x 2n."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    rows, cols = s.shape
    if rows % 2 or cols % 2 or rows == 0:
        raise DimensionMismatch(f"CCR rows must be 2l x 2n with l, n >= 1, got {s.shape}")
    return float(np.linalg.norm(s @ j_matrix(cols // 2) @ s.T - j_matrix(rows // 2), "fro"))
