"""Symplectic linear algebra over R^{2n} with explicit numerical tolerances.

Vectors are ordered as canonical pairs (q_1, p_1, ..., q_n, p_n) and the
symplectic form is omega(x, y) = x^T J_n y with J_n = I_n (x) [[0, 1], [-1, 0]].
Subspaces are carried as column bases; equality of subspaces is always
decided by mutual projection residuals, never by comparing basis matrices.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from darklab.errors import (
    DegenerateSubspace,
    DimensionMismatch,
    NotInvariant,
    NotSymplectic,
    OddDimension,
)
from darklab.services.environment import get_settings

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps

# Two Gram entries within this relative distance count as a tie when pivoting.
PIVOT_TIE = 1e-12

J = np.array([[0.0, 1.0], [-1.0, 0.0]])


# ==================== TOLERANCES AND KERNELS ====================


def rank_tolerance(
    matrix: np.ndarray,
    scale: float | None = None,
    growth: float = 1.0,
) -> float:
    """Singular-value threshold for rank decisions on ``matrix``.

    Args:
        matrix: The matrix whose rank is being decided.
        scale: Magnitude the threshold is relative to. Defaults to the largest
            singular value of ``matrix``; callers thresholding a residual pass
            the scale of the operator the residual came from.
        growth: Extra factor for matrices built from already-rounded products.

    Returns:
        ``max(shape) * eps * scale * growth``, or DARKLAB_RANK_TOL when set.
    """
    settings = get_settings()
    if settings.rank_tol is not None:
        return settings.rank_tol
    if matrix.size == 0:
        return 0.0
    if scale is None:
        scale = float(np.linalg.norm(matrix, 2))
    return max(matrix.shape) * EPS * scale * growth


def composite_tolerance(ambient: int, scale: float = 1.0) -> float:
    """Threshold for Gram and residual matrices of orthonormal bases."""
    settings = get_settings()
    if settings.rank_tol is not None:
        return settings.rank_tol
    return ambient * EPS * scale * settings.tol_growth


def null_space(matrix: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of Ker(matrix) by singular-value thresholding."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    rows, cols = matrix.shape
    if rows == 0:
        return np.eye(cols)
    if tol is None:
        tol = rank_tolerance(matrix)
    _, s, vt = np.linalg.svd(matrix, full_matrices=True)
    rank = int(np.sum(s > tol))
    return vt[rank:].T.copy()


def orthonormal_columns(matrix: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of col(matrix) by singular-value thresholding."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.shape[1] == 0:
        return np.zeros((matrix.shape[0], 0))
    if tol is None:
        tol = rank_tolerance(matrix)
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    rank = int(np.sum(s > tol))
    return u[:, :rank].copy()


# ==================== DOMAIN TYPES ====================


@dataclass(frozen=True)
class SymplecticDim:
    """Half-dimension n of the ambient space R^{2n}."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DimensionMismatch(f"half-dimension must be a positive integer, got {self.n}")

    @property
    def size(self) -> int:
        return 2 * self.n


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """A subspace of R^{2n} given by a full-column-rank basis matrix.

    The columns are kept exactly as supplied; ``orthonormal`` and
    ``projector`` are derived lazily.
    """

    columns: np.ndarray
    tol: float

    def __post_init__(self):
        columns = np.array(self.columns, dtype=float)
        if columns.ndim == 1:
            columns = columns[:, None]
        if columns.ndim != 2:
            raise DimensionMismatch(f"basis must be a matrix, got shape {columns.shape}")
        if columns.shape[1] > columns.shape[0]:
            raise DimensionMismatch(
                f"{columns.shape[1]} basis vectors cannot be independent in R^{columns.shape[0]}"
            )
        if self.tol < 0:
            raise ValueError(f"tolerance must be nonnegative, got {self.tol}")
        if columns.shape[1] > 0:
            s = np.linalg.svd(columns, compute_uv=False)
            if s[-1] <= self.tol:
                raise DegenerateSubspace(
                    f"basis is rank deficient: smallest singular value {s[-1]:.3e} <= tol {self.tol:.3e}"
                )
        columns.setflags(write=False)
        object.__setattr__(self, "columns", columns)

    @classmethod
    def from_columns(cls, columns: np.ndarray, tol: float | None = None) -> "SubspaceBasis":
        """Wrap independent columns, choosing the default rank tolerance."""
        columns = np.asarray(columns, dtype=float)
        if columns.ndim == 1:
            columns = columns[:, None]
        if tol is None:
            tol = rank_tolerance(columns)
        return cls(columns, tol)

    @classmethod
    def span(cls, vectors: np.ndarray, tol: float | None = None) -> "SubspaceBasis":
        """Orthonormal basis of the span of possibly dependent columns."""
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if tol is None:
            tol = rank_tolerance(vectors)
        return cls(orthonormal_columns(vectors, tol), tol)

    @classmethod
    def zero(cls, ambient: int) -> "SubspaceBasis":
        return cls(np.zeros((ambient, 0)), 0.0)

    @classmethod
    def full(cls, ambient: int) -> "SubspaceBasis":
        return cls(np.eye(ambient), ambient * EPS)

    @property
    def ambient(self) -> int:
        return self.columns.shape[0]

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    @cached_property
    def orthonormal(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((self.ambient, 0))
        u, _, _ = np.linalg.svd(self.columns, full_matrices=False)
        return u[:, : self.dim]

    @cached_property
    def projector(self) -> np.ndarray:
        q = self.orthonormal
        return q @ q.T

    def residual_of(self, vectors: np.ndarray) -> float:
        """Norm of the part of ``vectors`` lying outside this subspace."""
        vectors = np.asarray(vectors, dtype=float)
        if vectors.size == 0:
            return 0.0
        return float(np.linalg.norm(vectors - self.projector @ vectors))

    def contains(self, other: "SubspaceBasis", tol: float | None = None) -> bool:
        if tol is None:
            tol = composite_tolerance(self.ambient, scale=max(1.0, float(np.sqrt(other.dim))))
        return self.residual_of(other.orthonormal) <= tol

    def same_as(self, other: "SubspaceBasis", tol: float | None = None) -> bool:
        """Mutual containment test; bases may differ."""
        return self.dim == other.dim and self.contains(other, tol) and other.contains(self, tol)

    def intersect(self, other: "SubspaceBasis", tol: float | None = None) -> "SubspaceBasis":
        """W1 ∩ W2 from the kernel of the stacked constraint [Q1, -Q2]."""
        if self.ambient != other.ambient:
            raise DimensionMismatch(f"ambient spaces differ: {self.ambient} vs {other.ambient}")
        if self.dim == 0 or other.dim == 0:
            return SubspaceBasis.zero(self.ambient)
        if tol is None:
            tol = composite_tolerance(self.ambient)
        q1, q2 = self.orthonormal, other.orthonormal
        coefficients = null_space(np.hstack([q1, -q2]), tol)
        if coefficients.shape[1] == 0:
            return SubspaceBasis.zero(self.ambient)
        return SubspaceBasis.span(q1 @ coefficients[: self.dim], tol)


@dataclass(frozen=True, eq=False)
class SymplecticBasis:
    """Columns (e_1, f_1, ..., e_l, f_l) with T^T J_n T = J_l."""

    matrix: np.ndarray

    @property
    def pairs(self) -> int:
        return self.matrix.shape[1] // 2

    def gram_residual(self) -> float:
        n = self.matrix.shape[0] // 2
        gram = self.matrix.T @ j_matrix(n) @ self.matrix
        return float(np.linalg.norm(gram - j_matrix(self.pairs), "fro")) if self.pairs else 0.0


# ==================== FORMS AND MATRICES ====================


def j_matrix(dim: SymplecticDim | int) -> np.ndarray:
    """J_n = I_n (x) J for n >= 1."""
    n = dim.n if isinstance(dim, SymplecticDim) else SymplecticDim(dim).n
    return np.kron(np.eye(int(n)), J)


def sympl_form(x: np.ndarray, y: np.ndarray) -> float:
    """omega_n(x, y) = x^T J_n y."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DimensionMismatch(f"vector lengths differ: {x.size} vs {y.size}")
    if x.size % 2:
        raise DimensionMismatch(f"vectors must have even length, got {x.size}")
    return float(x @ j_matrix(x.size // 2) @ y)


def is_symplectic_matrix(s: np.ndarray) -> float:
    """Residual ||S J_n S^T - J_n||_F; the caller decides the threshold."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
        raise DimensionMismatch(f"expected an even square matrix, got shape {s.shape}")
    jn = j_matrix(s.shape[0] // 2)
    return float(np.linalg.norm(s @ jn @ s.T - jn, "fro"))


def is_hamiltonian_matrix(a: np.ndarray) -> float:
    """Residual ||A^T J_n + J_n A||_F."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] % 2:
        raise DimensionMismatch(f"expected an even square matrix, got shape {a.shape}")
    jn = j_matrix(a.shape[0] // 2)
    return float(np.linalg.norm(a.T @ jn + jn @ a, "fro"))


def symplectic_inverse(s: np.ndarray, tol: float | None = None) -> np.ndarray:
    """S^{-1} = -J_n S^T J_n for a symplectic S.

    Raises:
        NotSymplectic: if ||S J_n S^T - J_n|| exceeds ``tol`` (relative to ||S||^2).
    """
    s = np.asarray(s, dtype=float)
    residual = is_symplectic_matrix(s)
    if tol is None:
        tol = get_settings().tol
    scale = max(1.0, float(np.linalg.norm(s, 2)) ** 2)
    if residual > tol * scale:
        raise NotSymplectic(f"||S J S^T - J|| = {residual:.3e} exceeds {tol * scale:.3e}")
    jn = j_matrix(s.shape[0] // 2)
    return -jn @ s.T @ jn


# ==================== SUBSPACE CONSTRUCTIONS ====================


def symplectic_complement(w: SubspaceBasis) -> SubspaceBasis:
    """W^⊥̃ = {v : omega(u, v) = 0 for all u in W}, the kernel of Q_W^T J_n."""
    ambient = w.ambient
    if w.dim == 0:
        return SubspaceBasis.full(ambient)
    constraint = w.orthonormal.T @ j_matrix(ambient // 2)
    # Rows of Q^T J_n are orthonormal, so the threshold sits far from both 0 and 1.
    basis = null_space(constraint, composite_tolerance(ambient))
    return SubspaceBasis(basis, w.tol) if basis.shape[1] else SubspaceBasis.zero(ambient)


def radical(w: SubspaceBasis) -> SubspaceBasis:
    """W ∩ W^⊥̃, the kernel of the restricted Gram matrix Q^T J_n Q."""
    if w.dim == 0:
        return SubspaceBasis.zero(w.ambient)
    q = w.orthonormal
    gram = q.T @ j_matrix(w.ambient // 2) @ q
    coefficients = null_space(gram, composite_tolerance(w.ambient))
    if coefficients.shape[1] == 0:
        return SubspaceBasis.zero(w.ambient)
    return SubspaceBasis(q @ coefficients, w.tol)


def symplectic_gram_schmidt(w: SubspaceBasis) -> SymplecticBasis:
    """Symplectic basis of a symplectic subspace, pivoting on the largest |omega|.

    At each step the pair of remaining vectors with the largest |omega(u, v)|
    becomes (e, f), scaled so omega(e, f) = 1; the rest are projected onto the
    symplectic complement of span{e, f}. Ties go to the earliest pair, so a
    basis that is already symplectic comes back unchanged.

    Raises:
        OddDimension: if dim W is odd.
        DegenerateSubspace: if W is empty or its radical is nontrivial.
    """
    if w.dim == 0:
        raise DegenerateSubspace("the zero subspace has no symplectic basis")
    if w.dim % 2:
        raise OddDimension(f"subspace dimension {w.dim} is odd")
    rad = radical(w)
    if rad.dim:
        raise DegenerateSubspace(f"radical of the subspace has dimension {rad.dim}")

    jn = j_matrix(w.ambient // 2)
    remaining = np.array(w.columns, dtype=float)
    scale = float(np.max(np.sum(remaining**2, axis=0)))
    floor = composite_tolerance(w.ambient, scale)
    columns: list[np.ndarray] = []

    while remaining.shape[1]:
        gram = np.triu(remaining.T @ jn @ remaining, k=1)
        best = float(np.max(np.abs(gram)))
        if best <= floor:
            raise DegenerateSubspace(f"no symplectic pair left (max |omega| = {best:.3e})")
        rows, cols = np.nonzero(np.abs(gram) >= best * (1.0 - PIVOT_TIE))
        i, j = min(zip(rows.tolist(), cols.tolist()))
        value = gram[i, j]
        root = np.sqrt(abs(value))
        e = remaining[:, i] / root
        f = np.sign(value) * remaining[:, j] / root
        rest = np.delete(remaining, [i, j], axis=1)
        if rest.shape[1]:
            # u <- u + omega(f, u) e - omega(e, u) f kills both pairings.
            rest = rest + np.outer(e, f @ jn @ rest) - np.outer(f, e @ jn @ rest)
        columns.extend([e, f])
        remaining = rest

    basis = SymplecticBasis(np.column_stack(columns))
    logger.debug("symplectic basis with %s pairs, Gram residual %.3e", basis.pairs, basis.gram_residual())
    return basis


def orthonormal_jn_adapted_basis(
    h: SubspaceBasis,
    tol: float | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Euclidean-orthonormal pairs (v_i, J_n v_i) spanning a J_n-invariant H.

    Each v_i is the normalised projection of the standard basis vector with the
    largest projection onto what is left of H (earliest index on ties); the
    plane span{v_i, J_n v_i} is then removed before the next pick.

    Raises:
        NotInvariant: if J_n H is not contained in H within ``tol``.
        OddDimension: if dim H is odd.
    """
    if tol is None:
        tol = get_settings().tol
    if h.dim % 2:
        raise OddDimension(f"subspace dimension {h.dim} is odd")
    jn = j_matrix(h.ambient // 2)
    q = h.orthonormal
    leak = h.residual_of(jn @ q)
    if leak > tol:
        raise NotInvariant(f"subspace is not J_n-invariant: residual {leak:.3e}")

    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    remaining = q
    while remaining.shape[1]:
        norms = np.linalg.norm(remaining, axis=1)
        seed = int(np.flatnonzero(norms >= norms.max() - PIVOT_TIE)[0])
        v = remaining @ remaining[seed]
        v = v / np.linalg.norm(v)
        jv = jn @ v
        pairs.append((v, jv))
        left = remaining - np.outer(v, v @ remaining) - np.outer(jv, jv @ remaining)
        u, _, _ = np.linalg.svd(left, full_matrices=False)
        remaining = u[:, : remaining.shape[1] - 2]
    return pairs


def pairs_matrix(pairs: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Stack the pairs (a_1, b_1, ..., a_l, b_l) as columns."""
    if not pairs:
        return np.zeros((0, 0))
    return np.column_stack([vector for pair in pairs for vector in pair])


def random_symplectic(n: int, rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
    """exp(J_n X) for a random symmetric X, which is symplectic."""
    x = rng.normal(scale=scale, size=(2 * n, 2 * n))
    return scipy.linalg.expm(j_matrix(n) @ (x + x.T) / 2)
