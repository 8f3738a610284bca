import numpy as np
import pytest

from bcpdyn.algebra import Subspace, certify, conditional_expectation
from bcpdyn.channels import (
    Channel,
    completely_depolarizing,
    dephasing,
    identity_channel,
    pinching,
    random_mixed_unitary,
    unitary_channel,
    vec,
)
from bcpdyn.cocycle import RunOptions, run
from bcpdyn.drivers import ChannelFamily, periodic_driver
from bcpdyn.entanglement import (
    UnsupportedDimensionError,
    asymptotic_eb_report,
    ball_distance,
    choi,
    eb_distance_upper,
    eb_sufficient_ball,
    first_eb_time,
    is_eb,
    is_eb_qubit,
    is_ppt,
    partial_transpose,
    ppt_margin,
    separable_ball_radius,
)

from conftest import PAULI


def single(ch, n):
    return run(ChannelFamily.of(ch.with_label("c")), periodic_driver([0]), n)


def pauli_block(ch):
    """3 x 3 correlation block T_ij = tr(sigma_i psi(sigma_j)) / 2 of a unital qubit map."""
    names = "XYZ"
    return np.array([[np.trace(PAULI[a] @ ch(PAULI[b])).real / 2 for b in names] for a in names])


def unital_qubit_eb_oracle(ch):
    return np.sum(np.linalg.svd(pauli_block(ch), compute_uv=False)) <= 1 + 1e-9


class TestChoi:
    def test_identity_is_rank_one(self):
        c = choi(identity_channel(3))
        ev = c.eigenvalues()
        assert abs(ev[-1] - 3) < 1e-12 and np.allclose(ev[:-1], 0, atol=1e-12)

    def test_depolarizing_is_scalar(self):
        assert np.allclose(choi(completely_depolarizing(3)).matrix, np.eye(9) / 3, atol=1e-15)

    @pytest.mark.parametrize("p", [0.75, 0.9, 0.3])
    def test_dephasing_spectrum(self, p):
        ev = np.sort(choi(dephasing(2, p=p)).eigenvalues())
        assert np.allclose(ev, np.sort([2 * p, 2 * (1 - p), 0, 0]), atol=1e-14)

    def test_partial_traces_of_bcp_map(self):
        c = choi(random_mixed_unitary(3, 4, seed=2))
        assert np.allclose(c.partial_trace_first(), np.eye(3), atol=1e-12)
        assert np.allclose(c.partial_trace_second(), np.eye(3), atol=1e-12)

    def test_partial_transpose_is_an_involution(self, rng):
        m = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
        assert np.array_equal(partial_transpose(partial_transpose(m, 3), 3), m)

    def test_partial_transpose_on_products(self, rng):
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        b = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        assert np.allclose(partial_transpose(np.kron(a, b), 2), np.kron(a, b.T), atol=1e-15)


class TestPpt:
    def test_depolarizing(self):
        assert is_ppt(completely_depolarizing(3))

    def test_identity_is_npt(self):
        assert not is_ppt(identity_channel(2))
        # PT of the unnormalized maximally entangled projector is the swap: eigenvalue -1
        assert abs(ppt_margin(identity_channel(2)) + 1) < 1e-12

    def test_pinching(self):
        assert is_ppt(pinching(2)) and is_ppt(pinching(3))


class TestQubitEb:
    def test_known_cases(self):
        assert is_eb_qubit(completely_depolarizing(2))
        assert not is_eb_qubit(identity_channel(2))
        assert is_eb_qubit(pinching(2))

    def test_rejects_other_dimensions(self):
        with pytest.raises(UnsupportedDimensionError):
            is_eb_qubit(identity_channel(3))

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_unital_qubit_criterion(self, seed):
        rng = np.random.default_rng(seed)
        t = rng.uniform()
        mix = random_mixed_unitary(2, int(rng.integers(1, 5)), seed)
        s = (1 - t) * completely_depolarizing(2).superop + t * mix.superop
        ch = Channel(2, s)
        assert is_eb_qubit(ch) == unital_qubit_eb_oracle(ch)

    def test_dephasing_boundary(self):
        # dephasing is EB exactly at p = 1/2
        assert is_eb_qubit(dephasing(2, p=0.5))
        assert not is_eb_qubit(dephasing(2, p=0.5 + 1e-6))


class TestBall:
    def test_radius(self):
        assert abs(separable_ball_radius(2) - 1 / np.sqrt(12)) < 1e-15
        assert separable_ball_radius(1) == np.inf

    def test_center_and_identity(self):
        assert eb_sufficient_ball(completely_depolarizing(2))
        assert ball_distance(completely_depolarizing(3)) < 1e-15
        assert not eb_sufficient_ball(identity_channel(2))

    def test_is_eb_routes_by_dimension(self):
        assert is_eb(pinching(2)) == (True, "qubit-ppt")
        assert is_eb(completely_depolarizing(3)) == (True, "ball")
        assert is_eb(identity_channel(3)) == (False, "npt")
        assert is_eb(pinching(3)) == (False, "undecided")


class TestRunLevel:
    def test_single_pinching_bound_is_zero(self):
        r = single(pinching(2), 10)
        rows = eb_distance_upper(r)
        assert rows[0][0] == 1 and rows[0][1] < 1e-15

    def test_pair_bound_decays_like_esp(self, zx_pair):
        r = run(ChannelFamily.of(*zx_pair), periodic_driver([0, 1]), 40, RunOptions(domain_every=2))
        rows = eb_distance_upper(r)
        ns = np.array([n for n, _ in rows], dtype=float)
        ys = np.log([v for _, v in rows])
        assert abs(np.exp(np.polyfit(ns, ys, 1)[0]) - np.sqrt(0.5)) < 1e-6

    def test_identity_is_not_asymptotically_eb(self):
        r = single(identity_channel(2), 10)
        assert eb_distance_upper(r) is None
        rep = asymptotic_eb_report(r)
        assert not rep.abelian_core and rep.verdict == "not asymptotically EB"
        assert all(row["dist_upper"] is None for row in rep.rows)

    def test_depolarizing_certified(self):
        rep = asymptotic_eb_report(single(completely_depolarizing(2), 10))
        assert rep.abelian_core and rep.verdict == "asymptotically EB (certified)"
        assert all(row["dist_upper"] < 1e-15 and row["eb_sufficient"] for row in rep.rows)

    def test_eb_implies_ppt_on_every_row(self, zx_pair):
        r = run(ChannelFamily.of(*zx_pair), periodic_driver([0, 1]), 60)
        for row in asymptotic_eb_report(r).rows:
            if row["eb_sufficient"]:
                assert row["ppt"]

    def test_first_eb_time_depolarizing(self):
        assert first_eb_time(single(completely_depolarizing(2), 5)).n == 1

    def test_first_eb_time_dephasing_scan(self):
        ch = dephasing(2, p=0.75)
        res = first_eb_time(single(ch, 60))
        # oracle: Z-dephasing^n is dephasing with 2 q_n - 1 = 0.5^n; assemble its Choi matrix
        # from matrix units, partially transpose with kron, and scan for the first PPT power
        units = [np.outer(np.eye(2)[i], np.eye(2)[j]) for i in range(2) for j in range(2)]
        n_oracle = None
        for n in range(1, 61):
            q = 0.5 * (1 + 0.5**n)
            psi = lambda a: q * a + (1 - q) * PAULI["Z"] @ a @ PAULI["Z"]
            pt = sum(np.kron(psi(e), e.T) for e in units)
            if np.linalg.eigvalsh(pt)[0] >= -1e-9:
                n_oracle = n
                break
        assert res.exact and res.n == n_oracle == 30

    def test_first_eb_time_identity_pending(self):
        assert first_eb_time(single(identity_channel(2), 10)).pending

    def test_first_eb_time_ball_mode(self):
        res = first_eb_time(single(completely_depolarizing(3), 3))
        assert res.n == 1 and not res.exact


def test_abelian_core_projection_is_eb():
    e = certify(Subspace.span(2, np.stack([vec(np.eye(2)), vec(PAULI["Z"])], axis=1)))
    assert is_eb_qubit(conditional_expectation(e))
    assert not is_eb_qubit(unitary_channel(np.array([[0, 1], [1, 0]])))
