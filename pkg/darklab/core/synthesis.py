"""Hamiltonian engineering: implant a dark mode with prescribed closed dynamics.

Given V and the kernels, any symmetric 2k x 2k Omega_Dark with
2k <= dim H_D, H_D = Ker(V J_n) ∩ Ker(V), is realised by

    Omega = sum_j lambda_j S_D^T beta_j beta_j^T S_D + sum_j mu_j alpha_j alpha_j^T

where Omega_Dark = sum_j lambda_j beta_j beta_j^T, S_D has rows
(J_n v_1, v_1, ..., J_n v_k, v_k) built from an orthonormal J_n-adapted basis
of H_D, and the alpha_j are orthogonal to col(S_D^T). The dark mode
x_D = S_D x then obeys dx_D = J_k Omega_Dark x_D dt.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from darklab.core.analysis import DarkModeCertificate, Residuals, certificate_from_rows, verify_certificate
from darklab.core.symplectic import (
    SubspaceBasis,
    j_matrix,
    null_space,
    orthonormal_jn_adapted_basis,
    pairs_matrix,
    rank_tolerance,
)
from darklab.core.system import KernelSpec, SystemSpec
from darklab.errors import DimensionMismatch, InsufficientDarkCapacity, NonSymmetricTarget
from darklab.services.environment import get_settings

logger = logging.getLogger(__name__)

# Components below this magnitude are skipped when fixing eigenvector signs.
SIGN_FLOOR = 1e-12


class SynthesisResiduals(Residuals):
    dark_generator: float
    intertwining: float


@dataclass(frozen=True, eq=False)
class SynthesisTarget:
    """Requested dark Hamiltonian Omega_Dark and the free parameters mu_j, alpha_j.

    ``free_directions`` holds the alpha_j as columns.
    """

    omega_dark: np.ndarray
    free_spectrum: np.ndarray | None = None
    free_directions: np.ndarray | None = None

    def __post_init__(self):
        omega_dark = np.atleast_2d(np.array(self.omega_dark, dtype=float))
        rows, cols = omega_dark.shape
        if rows != cols or rows % 2 or rows == 0:
            raise DimensionMismatch(f"omega_dark must be 2k x 2k with k >= 1, got {omega_dark.shape}")
        asymmetry = float(np.max(np.abs(omega_dark - omega_dark.T)))
        if asymmetry > get_settings().tol * max(1.0, float(np.max(np.abs(omega_dark)))):
            raise NonSymmetricTarget(f"omega_dark is not symmetric (max asymmetry {asymmetry:.3e})")
        object.__setattr__(self, "omega_dark", (omega_dark + omega_dark.T) / 2.0)
        if self.free_spectrum is not None:
            mu = np.array(self.free_spectrum, dtype=float).ravel()
            if not np.all(np.isfinite(mu)):
                raise DimensionMismatch("free spectrum mu must be finite")
            object.__setattr__(self, "free_spectrum", mu)
        if self.free_directions is not None:
            object.__setattr__(self, "free_directions", np.atleast_2d(np.array(self.free_directions, dtype=float)))

    @property
    def k(self) -> int:
        return self.omega_dark.shape[0] // 2


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    omega: np.ndarray
    s_d: np.ndarray
    certificate: DarkModeCertificate
    h_d_dim: int
    target: SynthesisTarget

    def system(self, v: np.ndarray, kernels: list[KernelSpec]) -> SystemSpec:
        """The engineered system as a full spec, carrying the synthesis tolerance."""
        v = np.asarray(v, dtype=float)
        return SystemSpec(
            n=v.shape[1] // 2,
            m=v.shape[0] // 2,
            omega=self.omega,
            v=v,
            kernels=tuple(kernels),
            tol=self.certificate.tol,
        )


def compute_h_d(v: np.ndarray) -> SubspaceBasis:
    """H_D = Ker(V J_n) ∩ Ker(V), which is J_n-invariant and even-dimensional."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[0] % 2 or v.shape[1] % 2:
        raise DimensionMismatch(f"V must be 2M x 2n, got shape {v.shape}")
    jn = j_matrix(v.shape[1] // 2)
    stacked = np.vstack([v @ jn, v])
    tol = rank_tolerance(stacked)
    basis = null_space(stacked, tol)
    if basis.shape[1] == 0:
        return SubspaceBasis.zero(v.shape[1])
    h_d = SubspaceBasis(basis, tol)
    leak = h_d.residual_of(jn @ h_d.orthonormal)
    if leak > get_settings().tol:
        logger.warning("H_D is not J_n-invariant to tolerance (residual %.3e)", leak)
    return h_d


def dark_capacity(v: np.ndarray) -> int:
    """Largest k for which a 2k-operator dark mode can be synthesised."""
    return compute_h_d(v).dim // 2


def spectral_decomposition(omega_dark: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and orthonormal eigenvectors as columns.

    Each eigenvector's first component above SIGN_FLOOR is made positive.
    """
    eigenvalues, eigenvectors = scipy.linalg.eigh(omega_dark)
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    for j in range(eigenvectors.shape[1]):
        leading = np.flatnonzero(np.abs(eigenvectors[:, j]) > SIGN_FLOOR)
        if leading.size and eigenvectors[leading[0], j] < 0:
            eigenvectors[:, j] = -eigenvectors[:, j]
    return eigenvalues, eigenvectors


def _free_part(s_d: np.ndarray, target: SynthesisTarget, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """mu_j and alpha_j (columns), defaulting to a QR completion of col(S_D^T)."""
    size = s_d.shape[1]
    room = size - s_d.shape[0]
    alpha = target.free_directions
    if alpha is None:
        q, _ = scipy.linalg.qr(s_d.T, mode="full")
        alpha = q[:, s_d.shape[0] :]
    elif alpha.shape[0] != size:
        raise DimensionMismatch(f"free directions must have {size} rows, got {alpha.shape[0]}")

    mu = target.free_spectrum
    if mu is None:
        mu = np.zeros(alpha.shape[1])
    if mu.size > room:
        raise DimensionMismatch(f"at most {room} free eigenvalues fit, got {mu.size}")
    if target.free_directions is None:
        alpha = alpha[:, : mu.size]
    elif mu.size != alpha.shape[1]:
        raise DimensionMismatch(f"{mu.size} free eigenvalues for {alpha.shape[1]} free directions")

    scale = max(1.0, float(np.max(np.abs(alpha)))) if alpha.size else 1.0
    overlap = float(np.max(np.abs(s_d @ alpha))) if alpha.size else 0.0
    if overlap > tol * scale:
        raise DimensionMismatch(f"free directions overlap col(S_D^T) (max {overlap:.3e})")
    gram = alpha.T @ alpha
    off_diagonal = gram - np.diag(np.diag(gram))
    if off_diagonal.size and float(np.max(np.abs(off_diagonal))) > tol * scale**2:
        raise DimensionMismatch("free directions are not mutually orthogonal")
    return mu, alpha


def synthesize_omega(
    v: np.ndarray,
    kernels: list[KernelSpec],
    target: SynthesisTarget,
    tol: float | None = None,
) -> SynthesisResult:
    """Engineer a symmetric Omega implanting the dark mode requested by ``target``.

    Raises:
        InsufficientDarkCapacity: if 2k exceeds dim H_D.
    """
    if tol is None:
        tol = get_settings().tol
    v = np.atleast_2d(np.asarray(v, dtype=float))
    h_d = compute_h_d(v)
    k = target.k
    if 2 * k > h_d.dim:
        raise InsufficientDarkCapacity(
            f"a dark mode with {2 * k} operators needs dim H_D >= {2 * k}, but dim H_D = {h_d.dim}"
        )
    logger.info("dim H_D = %s; implanting a dark mode with %s operators", h_d.dim, 2 * k)

    pairs = orthonormal_jn_adapted_basis(h_d)[:k]
    s_d = pairs_matrix([(jv, vector) for vector, jv in pairs]).T

    eigenvalues, eigenvectors = spectral_decomposition(target.omega_dark)
    lifted = s_d.T @ eigenvectors
    omega = np.zeros((v.shape[1], v.shape[1]))
    for value, column in zip(eigenvalues, lifted.T):
        omega += value * np.outer(column, column)
    mu, alpha = _free_part(s_d, target, tol)
    for value, column in zip(mu, alpha.T):
        omega += value * np.outer(column, column)

    spec = SystemSpec(n=v.shape[1] // 2, m=v.shape[0] // 2, omega=omega, v=v, kernels=tuple(kernels), tol=tol)
    certificate = certificate_from_rows(spec, s_d, tol=tol)
    if not certificate.verified:
        logger.warning("synthesised certificate did not verify: %s", certificate.residuals)
    return SynthesisResult(omega=spec.omega, s_d=s_d, certificate=certificate, h_d_dim=h_d.dim, target=target)


def verify_synthesis(result: SynthesisResult, v: np.ndarray, kernels: list[KernelSpec]) -> SynthesisResiduals:
    """Certificate residuals on the engineered system plus the two synthesis identities.

    dark_generator = ||A_D - J_k Omega_Dark||, intertwining = ||S_D J_n - J_k S_D||.
    """
    spec = result.system(v, kernels)
    certificate = result.certificate
    residuals = verify_certificate(spec, certificate)
    jk = j_matrix(result.target.k)
    jn = j_matrix(spec.n)
    a_d = -result.s_d @ jn @ spec.omega @ jn @ result.s_d.T @ jk
    return {
        **residuals,
        "dark_generator": float(np.linalg.norm(a_d - jk @ result.target.omega_dark)),
        "intertwining": float(np.linalg.norm(result.s_d @ jn - jk @ result.s_d)),
    }
