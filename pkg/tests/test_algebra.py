import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import null_space, subspace_angles

from bcpdyn.algebra import (
    AlgebraError,
    RankAmbiguityWarning,
    Subspace,
    algebra_closure,
    certify,
    conditional_expectation,
    contained_residual,
    grassmann_distance,
    intersect,
    is_abelian,
    load_subspace,
    multiplicative_domain,
    peripheral_algebra,
    save_subspace,
    subspaces_equal,
    verify_algebra,
)
from bcpdyn.channels import (
    Channel,
    completely_depolarizing,
    dephasing,
    identity_channel,
    pinching,
    random_mixed_unitary,
    unitary_channel,
    validate_bcp,
    vec,
)

from conftest import PAULI


def span(*mats, d=None):
    d = d or mats[0].shape[0]
    return Subspace.span(d, np.stack([vec(m) for m in mats], axis=1))


def diagonal(d):
    return span(*[np.diag(np.eye(d)[k]) for k in range(d)])


def random_subspace(d, k, rng):
    g = rng.normal(size=(d * d, k)) + 1j * rng.normal(size=(d * d, k))
    return Subspace(d, np.linalg.qr(g)[0])


class TestMultiplicativeDomain:
    def test_unitary_gives_full_algebra(self):
        u = np.linalg.qr(np.arange(9).reshape(3, 3) + 1j * np.eye(3))[0]
        assert multiplicative_domain(unitary_channel(u)).dim == 9

    def test_depolarizing_gives_scalars(self):
        alg = multiplicative_domain(completely_depolarizing(3))
        assert alg.dim == 1
        assert grassmann_distance(alg, Subspace.scalars(3)) < 1e-12

    def test_z_dephasing_gives_diagonal(self):
        ch = dephasing(2, p=0.75)
        # oracle: S^dag S is diagonal on the Pauli basis with entries 1, 1, 1/4, 1/4
        paulis = np.stack([vec(PAULI[n]) / np.sqrt(2) for n in "IZXY"], axis=1)
        g = paulis.conj().T @ ch.superop.conj().T @ ch.superop @ paulis
        assert np.allclose(g, np.diag([1, 1, 0.25, 0.25]), atol=1e-14)
        alg = multiplicative_domain(ch)
        assert alg.dim == 2
        assert grassmann_distance(alg, span(PAULI["I"], PAULI["Z"])) < 1e-12
        assert is_abelian(alg)

    def test_ambiguous_rank_warns(self):
        # a singular value pushed just below 1 puts 1 - s^2 inside (tol, 10 tol]
        ch = dephasing(2, p=0.5 + 0.5 * np.sqrt(1 - 5e-9))
        with pytest.warns(RankAmbiguityWarning):
            alg = multiplicative_domain(ch, tol=1e-9)
        assert alg.notes

    def test_no_warning_on_clean_input(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            multiplicative_domain(dephasing(3, p=0.6))

    def test_non_bcp_input_fails_certification(self):
        # a "kernel" spanned by a single traceless matrix has no unit
        s = np.eye(4, dtype=complex) * 0.5
        s[:, 1] = vec(PAULI["X"]) / np.sqrt(2)
        s[1, :] = 0
        s[1, 1] = 1.0
        with pytest.raises(AlgebraError):
            multiplicative_domain(Channel(2, s))


class TestVerifyAlgebra:
    def test_scalars(self):
        assert verify_algebra(Subspace.scalars(2)).ok

    def test_missing_unit(self):
        assert not verify_algebra(span(PAULI["X"])).ok

    def test_diagonal_closed(self):
        cert = verify_algebra(diagonal(3))
        assert cert.ok and cert.worst_residual <= 1e-12


def test_abelian_flags():
    assert is_abelian(diagonal(4))
    assert not is_abelian(Subspace.full(2))


class TestConditionalExpectation:
    def test_scalars_give_depolarizing(self):
        e = conditional_expectation(certify(Subspace.scalars(3)))
        assert np.allclose(e.superop, completely_depolarizing(3).superop, atol=1e-14)

    def test_full_gives_identity(self):
        e = conditional_expectation(certify(Subspace.full(2)))
        assert np.allclose(e.superop, identity_channel(2).superop, atol=1e-14)

    def test_diagonal_gives_pinching(self):
        e = conditional_expectation(certify(diagonal(2)))
        assert np.allclose(e.superop, pinching(2).superop, atol=1e-14)

    @pytest.mark.parametrize("blocks", [[1, 2], [2, 2], [1, 1, 1]])
    def test_projection_properties(self, blocks):
        d = sum(blocks)
        alg = multiplicative_domain(random_mixed_unitary(d, 3, seed=3, block_sizes=blocks))
        e = conditional_expectation(alg).superop
        assert np.allclose(e @ e, e, atol=1e-12)
        assert np.allclose(e, e.conj().T, atol=1e-12)
        assert validate_bcp(Channel(d, e)).ok


class TestGrassmann:
    def test_zero_on_self(self, rng):
        v = random_subspace(2, 3, rng)
        assert grassmann_distance(v, v) < 1e-14

    def test_orthogonal_lines_mesh_oracle(self):
        v, w = span(PAULI["I"]), span(PAULI["X"])
        # sup over the unit circle of V (a single phase) of inf over W: mesh the phase and
        # minimize ||v - c w|| over c on a fine complex grid
        bv, bw = v.frame[:, 0], w.frame[:, 0]
        grid = np.linspace(-1.5, 1.5, 301)
        cs = (grid[:, None] + 1j * grid[None, :]).ravel()
        best = 0.0
        for phase in np.exp(1j * np.linspace(0, 2 * np.pi, 13)):
            x = phase * bv
            best = max(best, np.min(np.linalg.norm(x[None, :] - cs[:, None] * bw[None, :], axis=1)))
        assert abs(best - 1.0) < 1e-6
        assert abs(grassmann_distance(v, w) - 1.0) < 1e-12

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_equal_dims_match_principal_angles(self, rng, k):
        v, w = random_subspace(2, k, rng), random_subspace(2, k, rng)
        largest = np.max(subspace_angles(v.frame, w.frame))
        assert abs(grassmann_distance(v, w) - np.sin(largest)) < 1e-10

    def test_unequal_dims_are_distance_one(self, rng):
        assert abs(grassmann_distance(random_subspace(2, 1, rng), random_subspace(2, 2, rng)) - 1) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
    def test_metric_axioms(self, seed, a, b, c):
        rng = np.random.default_rng(seed)
        u, v, w = (random_subspace(2, k, rng) for k in (a, b, c))
        duv, dvw, duw = grassmann_distance(u, v), grassmann_distance(v, w), grassmann_distance(u, w)
        assert 0 <= duv <= 1 + 1e-12
        assert abs(duv - grassmann_distance(v, u)) < 1e-14
        assert duw <= duv + dvw + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_isometric_maps_are_lipschitz(self, seed, k):
        """An operator isometric on a subspace V0 moves subspaces of V0 no further apart."""
        rng = np.random.default_rng(seed)
        d2 = 9
        v0 = np.linalg.qr(rng.normal(size=(d2, 5)) + 1j * rng.normal(size=(d2, 5)))[0]
        q1 = np.linalg.qr(rng.normal(size=(d2, d2)) + 1j * rng.normal(size=(d2, d2)))[0]
        a = rng.normal(size=(d2, d2)) * 0.3
        p = v0 @ v0.conj().T
        op = q1 @ p + a @ (np.eye(d2) - p)
        v = Subspace(3, v0 @ np.linalg.qr(rng.normal(size=(5, k)))[0])
        w = Subspace(3, v0 @ np.linalg.qr(rng.normal(size=(5, k)))[0])
        assert grassmann_distance(Subspace.span(3, op @ v.frame), Subspace.span(3, op @ w.frame)) <= (
            grassmann_distance(v, w) + 1e-10
        )


class TestIntersect:
    def test_self(self, rng):
        v = random_subspace(3, 4, rng)
        assert grassmann_distance(intersect(v, v), v) < 1e-10

    def test_complement(self, rng):
        v = random_subspace(2, 2, rng)
        assert intersect(v, v.complement()).k == 0

    def test_diagonal_and_x_line(self):
        got = intersect(diagonal(2), span(PAULI["I"], PAULI["X"]))
        v, w = diagonal(2), span(PAULI["I"], PAULI["X"])
        eye = np.eye(4)
        stacked = np.vstack([eye - v.projector(), eye - w.projector()])
        oracle = Subspace(2, null_space(stacked))
        assert got.k == 1
        assert grassmann_distance(got, oracle) < 1e-10
        assert grassmann_distance(got, Subspace.scalars(2)) < 1e-10

    def test_random_pair_matches_nullspace(self, rng):
        common = rng.normal(size=(16, 2)) + 1j * rng.normal(size=(16, 2))
        v = Subspace.span(4, np.hstack([common, rng.normal(size=(16, 3))]))
        w = Subspace.span(4, np.hstack([common, rng.normal(size=(16, 4))]))
        stacked = np.vstack([np.eye(16) - v.projector(), np.eye(16) - w.projector()])
        oracle = Subspace(4, null_space(stacked))
        assert oracle.k == 2
        assert grassmann_distance(intersect(v, w), oracle) < 1e-8


class TestClosure:
    def test_unit(self):
        assert algebra_closure(Subspace.scalars(3)).dim == 1

    def test_x_generates_two_dim_algebra(self):
        alg = algebra_closure(span(PAULI["X"]))
        assert alg.dim == 2
        assert grassmann_distance(alg, span(PAULI["I"], PAULI["X"])) < 1e-12

    def test_matrix_unit_generates_everything(self):
        e12 = np.array([[0, 1], [0, 0]], dtype=complex)
        assert algebra_closure(span(e12)).dim == 4

    def test_block_structure(self):
        # closure of a single block-diagonal Hermitian with distinct blocks
        h = np.zeros((3, 3), dtype=complex)
        h[0, 0] = 2.0
        h[1:, 1:] = PAULI["X"]
        alg = algebra_closure(span(h))
        assert alg.dim == 3
        assert is_abelian(alg)


class TestPeripheral:
    def test_irrational_phase_unitary(self):
        u = np.diag([1.0, np.exp(1j * np.pi * np.sqrt(2))])
        alg = peripheral_algebra(unitary_channel(u))
        assert alg.dim == 4

    def test_depolarizing(self):
        assert peripheral_algebra(completely_depolarizing(2)).dim == 1

    def test_z_dephasing(self):
        ch = dephasing(2, p=0.75)
        assert np.allclose(np.sort(np.abs(np.linalg.eigvals(ch.superop))), [0.5, 0.5, 1, 1])
        alg = peripheral_algebra(ch)
        assert grassmann_distance(alg, diagonal(2)) < 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_contained_in_multiplicative_domain(self, seed):
        ch = random_mixed_unitary(3, 2, seed=seed, block_sizes=[1, 2] if seed % 2 else None)
        assert contained_residual(peripheral_algebra(ch), multiplicative_domain(ch)) < 1e-8


def test_subspace_round_trip(tmp_path):
    alg = multiplicative_domain(random_mixed_unitary(3, 2, seed=1, block_sizes=[1, 2]))
    save_subspace(alg, tmp_path / "s.json")
    back = load_subspace(tmp_path / "s.json")
    assert back.frame.tobytes() == alg.frame.tobytes()
    assert subspaces_equal(back, alg)


def test_subspace_rejects_non_orthonormal_frame():
    with pytest.raises(ValueError):
        Subspace(2, np.ones((4, 2)))
