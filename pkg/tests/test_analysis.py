import itertools
from dataclasses import replace

import numpy as np
import pytest

from darklab.core import benchmark
from darklab.core.analysis import (
    bright_subsystem,
    build_certificate,
    certificate_from_rows,
    detect_dark_modes,
    forbidden_coupling_report,
    group_eigenvalues,
    kernel_of_vjn,
    largest_invariant_subspace_in,
    reframe_certificate,
    spectral_candidates,
    transform_system,
    verify_certificate,
    witness_residuals,
)
from darklab.core.symplectic import SubspaceBasis, is_hamiltonian_matrix, j_matrix, radical, random_symplectic
from darklab.core.system import ExponentialKernel, SystemSpec
from darklab.errors import DegenerateSubspace, DimensionMismatch, NotSymplectic

RESIDUAL_KEYS = {"ccr", "noise_decoupling", "invariance", "output_decoupling"}


def real_eigenspaces(a: np.ndarray) -> list[np.ndarray]:
    """Real bases of the eigenlines of ``a``, a complex eigenvector and its conjugate taken together."""
    eigenvalues, eigenvectors = np.linalg.eig(a)
    used: set[int] = set()
    spaces = []
    for i, value in enumerate(eigenvalues):
        if i in used:
            continue
        used.add(i)
        vector = eigenvectors[:, i]
        if abs(value.imag) <= 1e-10:
            spaces.append(np.real(vector)[:, None])
            continue
        partner = min(
            (j for j in range(len(eigenvalues)) if j not in used),
            key=lambda j: abs(eigenvalues[j] - np.conj(value)),
        )
        used.add(partner)
        spaces.append(np.column_stack([vector.real, vector.imag]))
    return spaces


def eigen_sums(a: np.ndarray) -> list[np.ndarray]:
    """Orthonormal bases of every sum of real eigenspaces of ``a``."""
    spaces = real_eigenspaces(a)
    sums = []
    for size in range(1, len(spaces) + 1):
        for subset in itertools.combinations(spaces, size):
            q, _ = np.linalg.qr(np.hstack(subset))
            sums.append(q)
    return sums


def outside(q: np.ndarray, basis: np.ndarray) -> float:
    """Norm of the part of the orthonormal columns ``q`` outside col(basis)."""
    if basis.shape[1] == 0:
        return float(np.linalg.norm(q))
    coefficients = np.linalg.lstsq(basis, q, rcond=None)[0]
    return float(np.linalg.norm(q - basis @ coefficients))


def brute_force_dark_mode(spec: SystemSpec) -> bool:
    """True if some eigenspace sum of Omega J_n is symplectic and annihilated by V J_n."""
    jn = j_matrix(spec.n)
    vjn = spec.v @ jn
    for q in eigen_sums(spec.omega @ jn):
        if q.shape[1] % 2 or np.linalg.norm(vjn @ q) > 1e-8:
            continue
        if np.linalg.svd(q.T @ jn @ q, compute_uv=False)[-1] > 1e-6:
            return True
    return False


def random_diagonalisable(size: int, rng: np.random.Generator) -> tuple[np.ndarray, list[np.ndarray]]:
    """A = P D P^-1 with well separated real and complex eigenvalues, and its real eigenspaces."""
    q1, _ = np.linalg.qr(rng.normal(size=(size, size)))
    q2, _ = np.linalg.qr(rng.normal(size=(size, size)))
    p = q1 @ np.diag(rng.uniform(0.5, 2.0, size=size)) @ q2
    d = np.zeros((size, size))
    blocks = []
    centres = rng.permutation(np.arange(-6.0, 7.0))
    column = 0
    for centre in centres:
        if column == size:
            break
        if column + 2 <= size and rng.random() < 0.5:
            d[column : column + 2, column : column + 2] = [[centre, 1.0], [-1.0, centre]]
            blocks.append(p[:, column : column + 2])
            column += 2
        else:
            d[column, column] = centre
            blocks.append(p[:, column : column + 1])
            column += 1
    return p @ d @ np.linalg.inv(p), blocks


class TestCertificates:
    def test_three_mode_certificate(self, three_mode_spec, three_mode_certificate):
        residuals = verify_certificate(three_mode_spec, three_mode_certificate)
        assert set(residuals) == RESIDUAL_KEYS
        assert all(value <= 1e-12 for value in residuals.values())
        assert three_mode_certificate.verified

    def test_build_from_dark_span(self, three_mode_spec):
        w_d = SubspaceBasis.from_columns(np.column_stack([benchmark.U1, benchmark.U2]))
        cert = build_certificate(three_mode_spec, w_d)
        assert cert.verified
        assert cert.s_b.shape == (4, 6)

    def test_build_from_isotropic_span(self, three_mode_spec):
        with pytest.raises(DegenerateSubspace):
            build_certificate(three_mode_spec, SubspaceBasis.from_columns(np.eye(6)[:, [0, 2]]))

    def test_witness_parts_agree_with_dark_rows(self, three_mode_spec, three_mode_certificate):
        residuals = witness_residuals(three_mode_spec, three_mode_certificate)
        assert set(residuals) == {"a_d", "transform"}
        assert all(value <= 1e-12 for value in residuals.values())
        assert is_hamiltonian_matrix(three_mode_certificate.a_d) <= 1e-12

    def test_forged_generator_is_caught(self, three_mode_spec, three_mode_certificate):
        forged = replace(three_mode_certificate, a_d=np.diag([123.0, -7.0]))
        assert witness_residuals(three_mode_spec, forged)["a_d"] > 1.0
        scaled = replace(three_mode_certificate, s_b=2.0 * three_mode_certificate.s_b)
        assert witness_residuals(three_mode_spec, scaled)["transform"] > 1.0

    def test_missing_witness_parts_are_skipped(self, three_mode_spec, three_mode_certificate):
        bare = replace(three_mode_certificate, a_d=np.zeros((0, 0)), s_b=np.zeros((0, 6)))
        assert witness_residuals(three_mode_spec, bare) == {}

    def test_witness_shapes(self, three_mode_spec, three_mode_certificate):
        with pytest.raises(DimensionMismatch):
            witness_residuals(three_mode_spec, replace(three_mode_certificate, a_d=np.eye(4)))
        with pytest.raises(DimensionMismatch):
            witness_residuals(three_mode_spec, replace(three_mode_certificate, s_b=np.eye(2, 6)))

    def test_perturbed_rows_fail(self, three_mode_spec, three_mode_certificate):
        s_d = three_mode_certificate.s_d + 1e-3 * np.eye(2, 6)
        assert not certificate_from_rows(three_mode_spec, s_d).verified

    def test_identity_rows_fail(self, three_mode_spec):
        cert = certificate_from_rows(three_mode_spec, np.eye(6))
        assert cert.residuals["noise_decoupling"] > 1.0
        assert not cert.verified

    def test_wrong_width(self, three_mode_spec):
        with pytest.raises(DimensionMismatch):
            certificate_from_rows(three_mode_spec, np.eye(2, 4))

    def test_transform_is_symplectic(self, three_mode_spec, three_mode_certificate):
        s = three_mode_certificate.transform
        assert s.shape == (6, 6)
        assert np.allclose(s @ j_matrix(3) @ s.T, j_matrix(3), atol=1e-10)

    def test_reframing_keeps_the_mode_dark(self, three_mode_spec, three_mode_certificate, rng):
        s_tilde = random_symplectic(1, rng)
        cert = reframe_certificate(three_mode_spec, three_mode_certificate, s_tilde)
        assert cert.verified
        expected = s_tilde @ three_mode_certificate.a_d @ np.linalg.inv(s_tilde)
        assert np.allclose(cert.a_d, expected, atol=1e-10)

    def test_reframing_rejects_non_symplectic(self, three_mode_spec, three_mode_certificate):
        with pytest.raises(NotSymplectic):
            reframe_certificate(three_mode_spec, three_mode_certificate, np.diag([2.0, 1.0]))


class TestInvariantSubspaces:
    def test_whole_space_is_invariant(self, rng):
        a = rng.normal(size=(4, 4))
        assert largest_invariant_subspace_in(SubspaceBasis.full(4), a).dim == 4

    def test_no_invariant_line(self):
        k = SubspaceBasis.from_columns(np.eye(2)[:, :1])
        assert largest_invariant_subspace_in(k, j_matrix(1)).dim == 0

    def test_finds_eigenvector_inside(self):
        a = np.diag([1.0, 2.0, 3.0, 4.0])
        k = SubspaceBasis.from_columns(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))
        u = largest_invariant_subspace_in(k, a)
        assert u.dim == 1
        assert u.same_as(SubspaceBasis.from_columns(np.eye(4)[:, :1]))

    def test_eigenvalue_quadruples_are_grouped(self):
        eigenvalues = np.array([1 + 2j, 1 - 2j, -1 + 2j, -1 - 2j, 3j, -3j])
        groups = group_eigenvalues(eigenvalues)
        assert sorted(len(group) for group in groups) == [2, 4]

    def test_random_fixed_point_and_maximality(self, rng):
        for _ in range(500):
            size = 2 * int(rng.integers(1, 4))
            a, blocks = random_diagonalisable(size, rng)
            chosen = [block for block in blocks if rng.random() < 0.5]
            extra = rng.normal(size=(size, int(rng.integers(1, 3))))
            k = SubspaceBasis.span(np.hstack(chosen + [extra]))
            u = largest_invariant_subspace_in(k, a)
            q = u.orthonormal
            assert k.residual_of(q) <= 1e-8
            assert outside(a @ q, q) <= 1e-8 * np.linalg.norm(a, 2)
            for block in chosen:
                assert outside(np.linalg.qr(block)[0], q) <= 1e-6
            for eigen_sum in eigen_sums(a):
                if outside(eigen_sum, k.orthonormal) <= 1e-8:
                    assert outside(eigen_sum, q) <= 1e-6

    def test_kernel_of_vjn(self, three_mode_spec):
        kernel = kernel_of_vjn(three_mode_spec)
        assert kernel.same_as(SubspaceBasis.from_columns(np.column_stack([benchmark.U1, benchmark.U2])))

    def test_spectral_candidates_are_invariant(self, three_mode_spec):
        a = three_mode_spec.omega @ j_matrix(3)
        u = largest_invariant_subspace_in(kernel_of_vjn(three_mode_spec), a)
        candidates = spectral_candidates(u, a)
        assert [candidate.dim for candidate in candidates] == [2]
        assert candidates[0].same_as(u)


class TestDetection:
    def test_three_mode_system(self, three_mode_spec):
        verdict = detect_dark_modes(three_mode_spec)
        assert verdict.kind == "exists"
        assert verdict.diagnostics["tier"] == 2
        assert verdict.diagnostics["dim_kernel"] == 2
        assert verdict.certificate.pairs == 1
        assert verdict.certificate.verified

    def test_full_row_rank(self):
        spec = SystemSpec(n=1, m=1, omega=np.eye(2), v=np.eye(2), kernels=(ExponentialKernel(1.0, 1.0),))
        verdict = detect_dark_modes(spec)
        assert (verdict.kind, verdict.reason) == ("none", "FullRowRank")
        assert verdict.diagnostics["tier"] == 0

    def test_empty_invariant(self):
        v = np.array([[1.0, 0.0], [0.0, 0.0]])
        spec = SystemSpec(n=1, m=1, omega=np.eye(2), v=v, kernels=(ExponentialKernel(1.0, 1.0),))
        verdict = detect_dark_modes(spec)
        assert (verdict.kind, verdict.reason) == ("none", "EmptyInvariant")

    def test_totally_isotropic(self):
        v = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
        spec = SystemSpec(n=2, m=1, omega=np.zeros((4, 4)), v=v, kernels=(ExponentialKernel(1.0, 1.0),))
        verdict = detect_dark_modes(spec)
        assert (verdict.kind, verdict.reason) == ("none", "TotallyIsotropic")
        assert verdict.diagnostics["dim_u"] == 2

    def test_degenerate_radical_is_inconclusive(self, tier3_system):
        verdict = detect_dark_modes(tier3_system)
        assert verdict.kind == "inconclusive"
        assert verdict.certificate is None
        assert verdict.diagnostics["tier"] == 3
        assert verdict.diagnostics["dim_u"] == 3
        assert verdict.diagnostics["dim_radical"] == 1
        assert verdict.diagnostics["candidates_tried"] >= 1

    def test_radical_is_invariant(self, tier3_system):
        verdict = detect_dark_modes(tier3_system)
        a = tier3_system.omega @ j_matrix(2)
        rad = radical(verdict.u)
        assert rad.dim == 1
        assert verdict.diagnostics["radical_leak"] <= 1e-10
        assert verdict.u.residual_of(a @ rad.orthonormal) <= 1e-10
        assert rad.residual_of(a @ rad.orthonormal) <= 1e-10

    def test_soundness_on_random_systems(self, rng, dark_system, generic_system):
        shapes = [(2, 1), (3, 1), (3, 2)]
        seen = {"exists": 0, "none": 0}
        for index in range(200):
            n, m = shapes[index % len(shapes)]
            planted = index % 2 == 0
            spec = dark_system(n, m, rng) if planted else generic_system(n, m, rng)
            verdict = detect_dark_modes(spec, workers=2)
            if planted:
                assert verdict.kind == "exists"
            if verdict.diagnostics["tier"] >= 2:
                assert verdict.diagnostics["radical_leak"] <= 1e-9
            if verdict.kind == "exists":
                cert = verdict.certificate
                assert all(value <= 1e-9 for value in cert.residuals.values())
                assert is_hamiltonian_matrix(cert.a_d) <= 1e-9 * max(1.0, float(np.linalg.norm(cert.a_d)))
            elif verdict.kind == "none":
                assert not brute_force_dark_mode(spec)
            seen[verdict.kind] = seen.get(verdict.kind, 0) + 1
        assert seen["exists"] >= 100
        assert seen["none"] >= 1


class TestDecomposition:
    def test_three_mode_blocks(self, three_mode_spec):
        blocks = transform_system(three_mode_spec, benchmark.reference_transform())
        a_h = np.zeros((6, 6))
        a_h[:2, :2] = [[0.0, 1.0], [-4.0, 0.0]]
        assert np.allclose(blocks.a_h, a_h, atol=1e-12)
        assert np.allclose(blocks.b[:2], 0.0, atol=1e-12)
        assert np.allclose(blocks.b[2:], benchmark.expected_bright_input(), atol=1e-12)
        for t in np.linspace(0.0, 5.0, 10):
            f1, f2, f3 = benchmark.bright_memory_coefficients(t)
            g1, g2 = np.exp(-t), 0.5 * np.exp(-2 * t)
            assert f1 == pytest.approx(-1.5 * (g1 + g2))
            assert np.allclose(blocks.a_gamma(t)[2:, 2:], benchmark.expected_bright_memory(t), atol=1e-10)
            assert np.allclose(blocks.output_map(t)[:, :2], 0.0, atol=1e-12)

    def test_certificate_transform_zero_blocks(self, three_mode_spec, dark_system, rng):
        specs = [three_mode_spec] + [dark_system(3, 1, rng) for _ in range(5)]
        for spec in specs:
            cert = detect_dark_modes(spec).certificate
            dark = cert.s_d.shape[0]
            blocks = transform_system(spec, cert.transform)
            scale = max(1.0, float(np.linalg.norm(blocks.a_h)))
            assert np.linalg.norm(blocks.a_h[:dark, dark:]) <= 1e-10 * scale
            assert np.linalg.norm(blocks.a_h[dark:, :dark]) <= 1e-10 * scale
            assert np.linalg.norm(blocks.b[:dark]) <= 1e-10 * max(1.0, float(np.linalg.norm(blocks.b)))
            for t in np.linspace(0.0, 5.0, 10):
                a_gamma = blocks.a_gamma(t)
                output_map = blocks.output_map(t)
                memory_scale = max(1.0, float(np.linalg.norm(a_gamma)))
                assert np.linalg.norm(a_gamma[:dark]) <= 1e-10 * memory_scale
                assert np.linalg.norm(a_gamma[:, :dark]) <= 1e-10 * memory_scale
                assert np.linalg.norm(output_map[:, :dark]) <= 1e-10 * max(1.0, float(np.linalg.norm(output_map)))

    def test_transform_rejects_non_symplectic(self, three_mode_spec):
        with pytest.raises(NotSymplectic):
            transform_system(three_mode_spec, 2.0 * np.eye(6))

    def test_bright_subsystem_matches_transform(self, three_mode_spec, three_mode_certificate):
        bright = bright_subsystem(three_mode_spec, three_mode_certificate)
        blocks = transform_system(three_mode_spec, three_mode_certificate.transform)
        assert np.allclose(bright.a_b, blocks.a_h[2:, 2:], atol=1e-10)
        assert np.allclose(bright.b_2, blocks.b[2:], atol=1e-10)
        for t in (0.0, 0.7, 2.5):
            assert np.allclose(bright.a_gamma_b(t), blocks.a_gamma(t)[2:, 2:], atol=1e-10)
            assert np.allclose(bright.c_2(t), blocks.output_map(t)[:, 2:], atol=1e-10)

    def test_forbidden_coupling_report(self, three_mode_spec, three_mode_certificate):
        assert forbidden_coupling_report(three_mode_spec)["d0"] == 2
        report = forbidden_coupling_report(three_mode_spec, three_mode_certificate)
        assert report["required"] == 2
        assert report["satisfied"] == (report["d_s"] >= 2)
