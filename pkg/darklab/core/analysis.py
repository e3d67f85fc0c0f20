"""Dark-mode existence, certificates and the decoupled decomposition.

A dark mode exists iff some Omega J_n-invariant symplectic subspace W_D of
positive dimension lies in Ker(V J_n). ``detect_dark_modes`` decides this in
tiers and only ever answers "exists" with a certificate that has been checked
against the four defining residuals.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Literal, TypedDict

import numpy as np
import scipy.linalg

from darklab.core.symplectic import (
    SubspaceBasis,
    composite_tolerance,
    is_symplectic_matrix,
    j_matrix,
    null_space,
    radical,
    rank_tolerance,
    symplectic_complement,
    symplectic_gram_schmidt,
    symplectic_inverse,
)
from darklab.core.system import (
    SystemSpec,
    assumption1_check,
    ccr_matrix_check,
    derived_matrices,
    gamma_k_matrix,
    gamma_o_matrix,
)
from darklab.errors import DegenerateSubspace, DimensionMismatch, NotSymplectic, OddDimension
from darklab.services.environment import get_settings

logger = logging.getLogger(__name__)

# Eigenvalues closer than this are treated as one cluster in the spectral search.
CLUSTER_TOL = 1e-8
# Window searched for the time t1 at which Gamma_o(t1) is invertible.
T1_HORIZON = 10.0
T1_SAMPLES = 1001
MAX_CANDIDATES = 4096

VerdictKind = Literal["exists", "none", "inconclusive"]
NoneReason = Literal["FullRowRank", "EmptyInvariant", "TotallyIsotropic"]


class Residuals(TypedDict):
    ccr: float
    noise_decoupling: float
    invariance: float
    output_decoupling: float


class Diagnostics(TypedDict):
    tier: int
    rank_vjn: int
    dim_kernel: int
    dim_u: int
    dim_radical: int
    radical_leak: float
    candidates_tried: int


class ForbiddenCouplingReport(TypedDict):
    d0: int
    d_s: int | None
    required: int | None
    satisfied: bool | None


# ==================== CERTIFICATES ====================


@dataclass(frozen=True, eq=False)
class DarkModeCertificate:
    """Witness (S_D, S_B, A_D) for the dark mode x_D = S_D x, with its residuals."""

    s_d: np.ndarray
    s_b: np.ndarray
    a_d: np.ndarray
    residuals: Residuals
    tol: float
    t1: float = 0.0

    @property
    def verified(self) -> bool:
        return all(value <= self.tol for value in self.residuals.values())

    @property
    def pairs(self) -> int:
        return self.s_d.shape[0] // 2

    @property
    def transform(self) -> np.ndarray:
        """S = [S_D; S_B], symplectic by construction."""
        return np.vstack([self.s_d, self.s_b])


def default_t1(spec: SystemSpec) -> float:
    """First sample where all kernels are jointly largest; 0 if none clears tol."""
    report = assumption1_check(spec, T1_HORIZON, T1_SAMPLES)
    if report["t1"] is None:
        logger.warning("no t1 with all kernels nonzero on [0, %s]; using t1 = 0", T1_HORIZON)
        return 0.0
    return report["t1"]


def verify_certificate(spec: SystemSpec, cert: DarkModeCertificate) -> Residuals:
    """Residuals of the three dark-mode conditions for ``cert``.

    ccr: ||S_D J_n S_D^T - J_l||; noise_decoupling: ||V J_n S_D^T||;
    invariance: ||(I - P) Omega J_n S_D^T|| with P the projector onto
    col(S_D^T); output_decoupling: ||Gamma_o(t1) V J_n S_D^T||.
    """
    s_d = np.asarray(cert.s_d, dtype=float)
    if s_d.ndim != 2 or s_d.shape[1] != spec.size:
        raise DimensionMismatch(f"S_D must have {spec.size} columns, got shape {s_d.shape}")
    jn = j_matrix(spec.n)
    dark_columns = jn @ s_d.T
    coupled = spec.v @ dark_columns
    projector = SubspaceBasis.span(s_d.T).projector
    moved = spec.omega @ dark_columns
    gamma_o = derived_matrices(spec).gamma_o(cert.t1)
    return {
        "ccr": ccr_matrix_check(s_d),
        "noise_decoupling": float(np.linalg.norm(coupled)),
        "invariance": float(np.linalg.norm(moved - projector @ moved)),
        "output_decoupling": float(np.linalg.norm(gamma_o @ coupled)),
    }


def witness_residuals(spec: SystemSpec, cert: DarkModeCertificate) -> dict[str, float]:
    """Agreement of the stored A_D and S_B with S_D.

    a_d: ||A_D + S_D J_n Omega J_n S_D^T J_l||; transform: ||S J_n S^T - J_n||
    for S = [S_D; S_B]. A part stored as an empty array is skipped.
    """
    s_d = np.asarray(cert.s_d, dtype=float)
    if s_d.ndim != 2 or s_d.shape[1] != spec.size or s_d.shape[0] % 2 or s_d.shape[0] == 0:
        raise DimensionMismatch(f"S_D must be 2l x {spec.size}, got shape {s_d.shape}")
    rows = s_d.shape[0]
    residuals: dict[str, float] = {}
    if cert.a_d.size:
        if cert.a_d.shape != (rows, rows):
            raise DimensionMismatch(f"A_D must be {rows}-square, got {cert.a_d.shape}")
        jn = j_matrix(spec.n)
        expected = -s_d @ jn @ spec.omega @ jn @ s_d.T @ j_matrix(rows // 2)
        residuals["a_d"] = float(np.linalg.norm(cert.a_d - expected))
    if cert.s_b.shape[0]:
        if cert.s_b.shape != (spec.size - rows, spec.size):
            raise DimensionMismatch(f"S_B must be {spec.size - rows} x {spec.size}, got {cert.s_b.shape}")
        residuals["transform"] = is_symplectic_matrix(cert.transform)
    return residuals


def certificate_from_rows(
    spec: SystemSpec,
    s_d: np.ndarray,
    tol: float | None = None,
    t1: float | None = None,
) -> DarkModeCertificate:
    """Certificate for explicit dark rows S_D, completing S_B symplectically.

    A_D = -S_D J_n Omega J_n S_D^T J_l.
    """
    s_d = np.atleast_2d(np.asarray(s_d, dtype=float))
    if s_d.shape[1] != spec.size or s_d.shape[0] % 2 or s_d.shape[0] == 0:
        raise DimensionMismatch(f"S_D must be 2l x {spec.size}, got shape {s_d.shape}")
    if tol is None:
        tol = spec.tol if spec.tol is not None else get_settings().tol
    if t1 is None:
        t1 = default_t1(spec)
    jn = j_matrix(spec.n)
    jl = j_matrix(s_d.shape[0] // 2)

    complement = symplectic_complement(SubspaceBasis.from_columns(s_d.T))
    if complement.dim:
        s_b = symplectic_gram_schmidt(complement).matrix.T
    else:
        s_b = np.zeros((0, spec.size))
    a_d = -s_d @ jn @ spec.omega @ jn @ s_d.T @ jl

    cert = DarkModeCertificate(
        s_d=s_d,
        s_b=s_b,
        a_d=a_d,
        residuals={"ccr": np.inf, "noise_decoupling": np.inf, "invariance": np.inf, "output_decoupling": np.inf},
        tol=tol,
        t1=t1,
    )
    return replace(cert, residuals=verify_certificate(spec, cert))


def build_certificate(
    spec: SystemSpec,
    w_d: SubspaceBasis,
    tol: float | None = None,
    t1: float | None = None,
) -> DarkModeCertificate:
    """Certificate for an invariant symplectic W_D inside Ker(V J_n).

    S_D comes from the pivoted symplectic Gram-Schmidt of W_D, S_B from that
    of its symplectic complement.

    Raises:
        DegenerateSubspace: if W_D is not symplectic.
    """
    s_d = symplectic_gram_schmidt(w_d).matrix.T
    return certificate_from_rows(spec, s_d, tol=tol, t1=t1)


def reframe_certificate(
    spec: SystemSpec,
    cert: DarkModeCertificate,
    s_tilde: np.ndarray,
) -> DarkModeCertificate:
    """Certificate for the dark mode S~ x_D, for a symplectic 2l x 2l matrix S~.

    Raises:
        NotSymplectic: if S~ is not symplectic.
        DimensionMismatch: if S~ does not act on x_D.
    """
    s_tilde = np.asarray(s_tilde, dtype=float)
    if s_tilde.shape != (cert.s_d.shape[0],) * 2:
        raise DimensionMismatch(f"S~ must be {cert.s_d.shape[0]}-square, got {s_tilde.shape}")
    symplectic_inverse(s_tilde, cert.tol)
    return certificate_from_rows(spec, s_tilde @ cert.s_d, tol=cert.tol, t1=cert.t1)


# ==================== INVARIANT SUBSPACES ====================


def kernel_of_vjn(spec: SystemSpec) -> SubspaceBasis:
    """Ker(V J_n) at the default rank tolerance."""
    vjn = spec.v @ j_matrix(spec.n)
    tol = rank_tolerance(vjn)
    basis = null_space(vjn, tol)
    if basis.shape[1] == 0:
        return SubspaceBasis.zero(spec.size)
    return SubspaceBasis(basis, tol)


def largest_invariant_subspace_in(
    k: SubspaceBasis,
    a: np.ndarray,
    tol: float | None = None,
) -> SubspaceBasis:
    """Largest U with U ⊆ K and A U ⊆ U.

    Iterates V_0 = K, V_{i+1} = V_i ∩ A^{-1}(V_i); the dimension drops at every
    non-final step, so at most dim K + 1 passes are needed.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (k.ambient, k.ambient):
        raise DimensionMismatch(f"operator must be {k.ambient}-square, got {a.shape}")
    if tol is None:
        tol = composite_tolerance(k.ambient, scale=max(1.0, float(np.linalg.norm(a, 2))))

    current = k
    for _ in range(k.ambient + 1):
        if current.dim == 0:
            return current
        q = current.orthonormal
        image = a @ q
        # Coefficients c with A q c back inside span(q).
        coefficients = null_space(image - q @ (q.T @ image), tol)
        if coefficients.shape[1] == current.dim:
            return current
        if coefficients.shape[1] == 0:
            return SubspaceBasis.zero(k.ambient)
        current = SubspaceBasis(q @ coefficients, current.tol)
    return current


def group_eigenvalues(eigenvalues: np.ndarray, cluster_tol: float = CLUSTER_TOL) -> list[list[int]]:
    """Index groups closed under clustering, conjugation and negation.

    The spectrum of Omega J_n comes in quadruples (λ, -λ, λ̄, -λ̄), and a
    symplectic invariant subspace must carry the λ and -λ parts together.
    """
    count = len(eigenvalues)
    parent = list(range(count))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(count), 2):
        a, b = eigenvalues[i], eigenvalues[j]
        images = (b, np.conj(b), -b, -np.conj(b))
        if min(abs(a - image) for image in images) <= cluster_tol:
            parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(count):
        groups.setdefault(find(i), []).append(i)

    def key(group: list[int]) -> tuple:
        values = eigenvalues[group]
        return (float(np.min(np.abs(values.real))), float(np.min(np.abs(values.imag))), len(group), group[0])

    return sorted(groups.values(), key=key)


def spectral_candidates(u: SubspaceBasis, a: np.ndarray) -> list[SubspaceBasis]:
    """Sums of real spectral subspaces of A restricted to the invariant U.

    Ordered by dimension (largest first), then by group index, so the search
    is deterministic.
    """
    q = u.orthonormal
    a_u = q.T @ a @ q
    eigenvalues = scipy.linalg.eigvals(a_u)
    groups = group_eigenvalues(eigenvalues)

    pieces: list[np.ndarray] = []
    for group in groups:
        factor = np.eye(u.dim, dtype=complex)
        for index in group:
            factor = factor @ (a_u - eigenvalues[index] * np.eye(u.dim))
        _, _, vt = np.linalg.svd(factor.real)
        pieces.append(vt[u.dim - len(group) :].T)

    subsets = [
        subset
        for size in range(len(groups), 0, -1)
        for subset in itertools.combinations(range(len(groups)), size)
    ]
    subsets.sort(key=lambda subset: (-sum(len(groups[g]) for g in subset), subset))
    if len(subsets) > MAX_CANDIDATES:
        logger.warning("spectral search truncated to %s of %s candidates", MAX_CANDIDATES, len(subsets))
        subsets = subsets[:MAX_CANDIDATES]

    candidates = []
    for subset in subsets:
        coefficients = np.hstack([pieces[g] for g in subset])
        candidates.append(SubspaceBasis.span(q @ coefficients))
    return candidates


# ==================== DECISION PROCEDURE ====================


@dataclass(frozen=True, eq=False)
class Verdict:
    """Outcome of the dark-mode decision.

    ``exists`` always carries a verified certificate, ``none`` its rejection
    tier, ``inconclusive`` only diagnostics.
    """

    kind: VerdictKind
    diagnostics: Diagnostics
    certificate: DarkModeCertificate | None = None
    reason: NoneReason | None = None
    u: SubspaceBasis | None = None


def _try_candidate(spec: SystemSpec, candidate: SubspaceBasis, tol: float, t1: float) -> DarkModeCertificate | None:
    if candidate.dim == 0 or candidate.dim % 2 or radical(candidate).dim:
        return None
    try:
        cert = build_certificate(spec, candidate, tol=tol, t1=t1)
    except (DegenerateSubspace, OddDimension):
        return None
    return cert if cert.verified else None


def detect_dark_modes(
    spec: SystemSpec,
    tol: float | None = None,
    workers: int | None = None,
) -> Verdict:
    """Decide whether ``spec`` admits dark modes.

    Tier 0 rejects when Ker(V J_n) = {0}. Tier 1 computes U, the largest
    Omega J_n-invariant subspace of Ker(V J_n); every admissible W_D is
    invariant and inside Ker(V J_n), hence inside U, so U = {0} rejects.
    Tier 2 looks at the radical R of U: R = {0} makes U itself the answer,
    R = U rejects (a symplectic subspace of an isotropic one is {0}).
    Tier 3 searches sums of spectral subspaces of Omega J_n on U and answers
    "inconclusive" when none verifies.
    """
    settings = get_settings()
    if tol is None:
        tol = spec.tol if spec.tol is not None else settings.tol
    if workers is None:
        workers = settings.workers
    a = spec.omega @ j_matrix(spec.n)
    vjn = spec.v @ j_matrix(spec.n)

    kernel = kernel_of_vjn(spec)
    diagnostics: Diagnostics = {
        "tier": 0,
        "rank_vjn": spec.size - kernel.dim,
        "dim_kernel": kernel.dim,
        "dim_u": 0,
        "dim_radical": 0,
        "radical_leak": 0.0,
        "candidates_tried": 0,
    }
    if kernel.dim == 0:
        logger.info("tier 0: V J_n has trivial kernel (rank %s)", np.linalg.matrix_rank(vjn))
        return Verdict("none", diagnostics, reason="FullRowRank")

    diagnostics["tier"] = 1
    u = largest_invariant_subspace_in(kernel, a)
    diagnostics["dim_u"] = u.dim
    if u.dim == 0:
        logger.info("tier 1: no Omega J_n-invariant subspace inside Ker(V J_n)")
        return Verdict("none", diagnostics, reason="EmptyInvariant", u=u)

    diagnostics["tier"] = 2
    rad = radical(u)
    diagnostics["dim_radical"] = rad.dim
    if rad.dim:
        diagnostics["radical_leak"] = rad.residual_of(a @ rad.orthonormal)
        if diagnostics["radical_leak"] > tol:
            logger.warning("radical is not Omega J_n-invariant (residual %.3e)", diagnostics["radical_leak"])
    t1 = default_t1(spec)
    if rad.dim == 0:
        cert = build_certificate(spec, u, tol=tol, t1=t1)
        if cert.verified:
            logger.info("tier 2: U (dim %s) is symplectic; dark mode with %s pairs", u.dim, cert.pairs)
            return Verdict("exists", diagnostics, certificate=cert, u=u)
        logger.warning("tier 2: certificate for U failed verification %s; searching candidates", cert.residuals)
    elif rad.dim == u.dim:
        logger.info("tier 2: U (dim %s) is isotropic", u.dim)
        return Verdict("none", diagnostics, reason="TotallyIsotropic", u=u)

    diagnostics["tier"] = 3
    candidates = spectral_candidates(u, a)
    diagnostics["candidates_tried"] = len(candidates)
    logger.info("tier 3: dim U = %s, dim R = %s, %s spectral candidates", u.dim, rad.dim, len(candidates))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(lambda c: _try_candidate(spec, c, tol, t1), candidates))
    for cert in results:
        if cert is not None:
            logger.info("tier 3: candidate with %s pairs verified", cert.pairs)
            return Verdict("exists", diagnostics, certificate=cert, u=u)
    return Verdict("inconclusive", diagnostics, u=u)


# ==================== EQUIVALENT SYSTEMS ====================


@dataclass(frozen=True, eq=False)
class TransformedSystem:
    """Blocks of the system in the coordinates y = S x."""

    a_h: np.ndarray
    b: np.ndarray
    output_map: Callable[[float], np.ndarray]
    a_gamma: Callable[[float], np.ndarray]


def transform_system(spec: SystemSpec, s: np.ndarray, tol: float | None = None) -> TransformedSystem:
    """S A_H S^{-1}, S B, Gamma_o(t) V S^{-1} and S A_Gamma(t) S^{-1}.

    Raises:
        NotSymplectic: if S is not symplectic.
    """
    s = np.asarray(s, dtype=float)
    if s.shape != (spec.size, spec.size):
        raise DimensionMismatch(f"S must be {spec.size}-square, got {s.shape}")
    s_inv = symplectic_inverse(s, tol)
    derived = derived_matrices(spec)
    return TransformedSystem(
        a_h=s @ derived.a_h @ s_inv,
        b=s @ derived.b,
        output_map=lambda t: derived.gamma_o(t) @ derived.v @ s_inv,
        a_gamma=lambda t: s @ derived.a_gamma(t) @ s_inv,
    )


@dataclass(frozen=True, eq=False)
class BrightSubsystem:
    """Closed description of x_B = S_B x and the output it alone drives."""

    a_b: np.ndarray
    b_2: np.ndarray
    c_2: Callable[[float], np.ndarray]
    a_gamma_b: Callable[[float], np.ndarray]


def bright_subsystem(spec: SystemSpec, cert: DarkModeCertificate) -> BrightSubsystem:
    """Bright-block data: x_B' = A_B x_B + int A_Gamma^B x_B + B_2 u, y = int C_2 x_B + u."""
    jn = j_matrix(spec.n)
    jm = j_matrix(spec.m)
    jb = j_matrix(cert.s_b.shape[0] // 2) if cert.s_b.shape[0] else np.zeros((0, 0))
    s_b = cert.s_b
    right = jn @ s_b.T @ jb
    derived = derived_matrices(spec)
    return BrightSubsystem(
        a_b=-s_b @ jn @ spec.omega @ right,
        b_2=s_b @ jn @ spec.v.T @ jm,
        c_2=lambda t: -gamma_o_matrix(derived.kernel_values(t)) @ spec.v @ right,
        a_gamma_b=lambda t: -s_b @ jn @ spec.v.T @ gamma_k_matrix(derived.kernel_values(t)) @ spec.v @ right,
    )


def forbidden_coupling_report(spec: SystemSpec, cert: DarkModeCertificate | None = None) -> ForbiddenCouplingReport:
    """Necessary-condition check on the coupling.

    d0 = dim(Ker(V J_n) ∩ Ker(V)); with a certificate, d_S is the same
    dimension for V_S = V J_n S^T and a dark mode with 2l operators needs
    d_S >= 2l.
    """
    jn = j_matrix(spec.n)

    def joint_kernel_dim(v_s: np.ndarray) -> int:
        stacked = np.vstack([v_s @ jn, v_s])
        return int(null_space(stacked, rank_tolerance(stacked)).shape[1])

    d0 = joint_kernel_dim(spec.v)
    if cert is None:
        return {"d0": d0, "d_s": None, "required": None, "satisfied": None}
    s = cert.transform
    if is_symplectic_matrix(s) > cert.tol * max(1.0, float(np.linalg.norm(s, 2)) ** 2):
        raise NotSymplectic("certificate transform [S_D; S_B] is not symplectic")
    d_s = joint_kernel_dim(spec.v @ jn @ s.T)
    required = cert.s_d.shape[0]
    return {"d0": d0, "d_s": d_s, "required": required, "satisfied": d_s >= required}
