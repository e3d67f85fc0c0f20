import numpy as np
import pytest

from darklab.core import benchmark
from darklab.core.symplectic import j_matrix
from darklab.core.system import ExponentialKernel, SystemSpec
from darklab.services.environment import reset_settings

ENV_VARS = ("DARKLAB_TOL", "DARKLAB_RANK_TOL", "DARKLAB_TOL_GROWTH", "DARKLAB_WORKERS", "DARKLAB_LOG_LEVEL")


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def three_mode_result():
    return benchmark.synthesize(1.0, 2.0)


@pytest.fixture(scope="session")
def three_mode_spec(three_mode_result):
    return SystemSpec.from_coupling_vectors(
        three_mode_result.omega, benchmark.coupling_vectors(), list(benchmark.kernels())
    )


@pytest.fixture(scope="session")
def three_mode_certificate(three_mode_result):
    return three_mode_result.certificate


@pytest.fixture
def dark_coupling():
    """V = R (I - P_H) annihilating the J_n-invariant plane H = span{w, J_n w}."""

    def make(n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        w = rng.normal(size=2 * n)
        w /= np.linalg.norm(w)
        jw = j_matrix(n) @ w
        plane = np.outer(w, w) + np.outer(jw, jw)
        v = rng.normal(size=(2 * m, 2 * n)) @ (np.eye(2 * n) - plane)
        return v, plane

    return make


@pytest.fixture
def dark_system(dark_coupling):
    """Random system whose plane H is a dark mode: Omega is block diagonal on H and H^perp."""

    def make(n: int, m: int, rng: np.random.Generator) -> SystemSpec:
        v, plane = dark_coupling(n, m, rng)
        rest = np.eye(2 * n) - plane
        a = rng.normal(size=(2 * n, 2 * n))
        b = rng.normal(size=(2 * n, 2 * n))
        omega = plane @ (a + a.T) @ plane + rest @ (b + b.T) @ rest
        kernels = tuple(ExponentialKernel(a=1.0, lam=1.0 + j) for j in range(m))
        return SystemSpec(n=n, m=m, omega=omega, v=v, kernels=kernels)

    return make


@pytest.fixture
def generic_system():
    def make(n: int, m: int, rng: np.random.Generator) -> SystemSpec:
        a = rng.normal(size=(2 * n, 2 * n))
        v = rng.normal(size=(2 * m, 2 * n))
        kernels = tuple(ExponentialKernel(a=0.5, lam=1.0) for _ in range(m))
        return SystemSpec(n=n, m=m, omega=a + a.T, v=v, kernels=kernels)

    return make


@pytest.fixture
def tier3_system():
    """Ker(V J_n) is invariant with a nonzero radical; Omega J_n acts there as one nilpotent Jordan block."""
    omega = np.zeros((4, 4))
    omega[0, 0] = 1.0
    omega[1, 3] = omega[3, 1] = 1.0
    v = np.array([[0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]])
    return SystemSpec(n=2, m=1, omega=omega, v=v, kernels=(ExponentialKernel(a=1.0, lam=1.0),))
