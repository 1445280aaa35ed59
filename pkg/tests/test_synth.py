import numpy as np
import pytest
from scipy.stats import chi2_contingency

from statecompress.errors import StructuralError, ValidationError
from statecompress.markov import mixing_time, simulate_trajectory, stationary_distribution, validate_transition
from statecompress.spectral import truncated_svd
from statecompress.synth import (
    LowRankFactorization,
    augment_with_latent,
    gen_aggregatable_chain,
    gen_fano_subspace_instances,
    gen_fano_transition_instances,
    gen_imbalanced_chain,
    gen_low_rank_chain,
    gen_lumpable_chain,
    is_aggregatable,
    is_lumpable,
    kernel_power,
    latent_posterior,
    lumped_transition,
)


def _check_chain(chain):
    assert validate_transition(chain.P)
    pi = chain.pi.probs
    assert np.abs(pi @ chain.P - pi).sum() < 1e-10
    np.testing.assert_allclose(chain.F, pi[:, None] * chain.P, atol=1e-12)


class TestLowRank:
    def test_rank_one_rows_identical(self):
        P = gen_low_rank_chain(8, 1, seed=0).P
        np.testing.assert_allclose(P, np.tile(P[0], (8, 1)), atol=1e-15)

    def test_rank_three(self):
        chain = gen_low_rank_chain(200, 3, seed=0)
        _check_chain(chain)
        s = np.linalg.svd(chain.P, compute_uv=False)
        assert s[3] / s[2] < 1e-10

    def test_factorization(self):
        chain = gen_low_rank_chain(30, 3, seed=1)
        f = chain.factorization
        np.testing.assert_allclose(f.transition(), chain.P, atol=1e-14)
        np.testing.assert_allclose(f.g.sum(axis=0), 1.0, atol=1e-14)
        assert abs(np.linalg.det(f.C)) > 1e-12

    def test_seeds(self):
        a, b, c = (gen_low_rank_chain(10, 2, s).P for s in (1, 1, 2))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_bad_rank(self):
        with pytest.raises(ValidationError):
            gen_low_rank_chain(3, 4, seed=0)


class TestImbalanced:
    def test_delta_one_is_base(self):
        np.testing.assert_array_equal(gen_imbalanced_chain(20, 2, 1, seed=3).P, gen_low_rank_chain(20, 2, 3).P)

    def test_pi_min_on_I_shrinks(self):
        base = gen_low_rank_chain(100, 3, seed=4)
        chain = gen_imbalanced_chain(100, 3, 4, seed=4)
        _check_chain(chain)
        I = chain.metadata["I"]
        assert I.size == 50
        assert chain.pi.probs[I].sum() < 0.75 * base.pi.probs[I].sum()
        assert chain.pi.probs[I].min() < base.pi.probs[I].min()

    def test_rank_at_most_2r(self):
        chain = gen_imbalanced_chain(60, 3, 4, seed=5)
        assert 3 < chain.rank <= 6

    def test_delta_below_one(self):
        with pytest.raises(ValidationError):
            gen_imbalanced_chain(10, 2, 0.5, seed=0)


class TestAggregatable:
    def test_structure(self):
        chain = gen_aggregatable_chain(40, 4, seed=0)
        _check_chain(chain)
        assert is_aggregatable(chain.P, chain.partition)
        assert np.bincount(chain.partition.labels, minlength=4).min() > 0
        s = np.linalg.svd(chain.P, compute_uv=False)
        assert s[4] < 1e-10

    def test_left_features_blockwise(self):
        for seed in range(5):
            chain = gen_aggregatable_chain(30, 3, seed)
            U = truncated_svd(chain.P, 3).U
            blocks = chain.partition.blocks()
            for b in blocks:
                assert np.abs(U[b] - U[b[0]]).max() < 1e-10
            for k in range(3):
                for l in range(k + 1, 3):
                    gap = np.linalg.norm(U[blocks[k][0]] - U[blocks[l][0]])
                    assert gap >= np.sqrt(1 / blocks[k].size + 1 / blocks[l].size) - 1e-10


class TestLumpable:
    def test_split(self):
        for seed in range(5):
            chain = gen_lumpable_chain(50, 3, seed)
            _check_chain(chain)
            P1, P2 = chain.metadata["P1"], chain.metadata["P2"]
            np.testing.assert_allclose(P1 @ P2.T, 0, atol=1e-10)
            np.testing.assert_allclose(P1 + P2, chain.P, atol=1e-15)
            F1, F2 = chain.F1_F2
            np.testing.assert_allclose(F1 + F2, chain.F, atol=1e-12)
            assert is_lumpable(chain.P, chain.partition)

    def test_p1_formula(self):
        chain = gen_lumpable_chain(20, 2, seed=1)
        Z = chain.partition.membership()
        expected = Z @ chain.metadata["Pbar"] @ np.diag(1 / Z.sum(axis=0)) @ Z.T
        np.testing.assert_allclose(chain.metadata["P1"], expected, atol=1e-15)
        np.testing.assert_allclose(lumped_transition(chain.P, chain.partition), chain.metadata["Pbar"], atol=1e-12)

    def test_p1_features_blockwise(self):
        chain = gen_lumpable_chain(30, 3, seed=2)
        res = truncated_svd(chain.metadata["P1"], 3)
        for b in chain.partition.blocks():
            assert np.abs(res.U[b] - res.U[b[0]]).max() < 1e-10
            assert np.abs(res.V[b] - res.V[b[0]]).max() < 1e-10

    def test_not_low_rank(self):
        chain = gen_lumpable_chain(50, 3, seed=3)
        assert chain.rank > 3

    def test_needs_r_at_most_half_p(self):
        with pytest.raises(ValidationError):
            gen_lumpable_chain(5, 3, seed=0)


class TestFano:
    def test_transition_instances(self):
        p, r, eta = 24, 3, 0.5
        for P in gen_fano_transition_instances(p, r, eta, m=20, seed=0):
            assert validate_transition(P)
            np.testing.assert_allclose(stationary_distribution(P).probs, 1 / p, atol=1e-12)
            s = np.linalg.svd(P, compute_uv=False)
            assert s[r] < 1e-10
            assert P.min() >= 1 / p - eta / (2 * p) - 1e-15
            assert P.max() <= 1 / p + eta / (2 * p) + 1e-15
            assert mixing_time(P, 0.25) == 1

    def test_transition_too_small(self):
        with pytest.raises(ValidationError):
            gen_fano_transition_instances(4, 3, 0.5, 1, seed=0)

    def test_subspace_instances(self):
        p, zeta = 16, 0.7
        delta = 1 / (4 * np.sqrt(2))
        for P in gen_fano_subspace_instances(p, zeta, m=10, seed=1):
            assert validate_transition(P)
            s = np.linalg.svd(P, compute_uv=False)
            assert s[0] == pytest.approx(1.0, abs=1e-12)
            assert s[1] == pytest.approx(delta * np.sqrt(1 + zeta**2), rel=1e-12)
            assert s[2] < 1e-12
            u1 = truncated_svd(P, 1).U[:, 0]
            np.testing.assert_allclose(u1, 1 / np.sqrt(p), atol=1e-12)
            assert 3 / (4 * p) - 1e-15 <= P.min() and P.max() <= 5 / (4 * p) + 1e-15
            np.testing.assert_allclose(stationary_distribution(P).probs, 1 / p, atol=1e-12)

    def test_subspace_needs_multiple_of_four(self):
        with pytest.raises(ValidationError):
            gen_fano_subspace_instances(10, 0.5, 1, seed=0)


class TestKernelPower:
    def test_powers_match_dense(self):
        for seed in range(10):
            fact = gen_low_rank_chain(25, 3, seed).factorization
            P = fact.transition()
            np.testing.assert_allclose(kernel_power(fact, 1), P, atol=1e-15)
            np.testing.assert_allclose(kernel_power(fact, 2), P @ P, atol=1e-10)
            np.testing.assert_allclose(kernel_power(fact, 5), np.linalg.matrix_power(P, 5), atol=1e-9)

    def test_bad_n(self):
        fact = gen_low_rank_chain(5, 2, 0).factorization
        with pytest.raises(ValidationError):
            kernel_power(fact, 0)


class TestLatent:
    def test_rank_one(self):
        chain = gen_low_rank_chain(6, 1, seed=0)
        traj = simulate_trajectory(chain.P, 0, 200, seed=0)
        np.testing.assert_array_equal(augment_with_latent(chain.factorization, traj, seed=0), 0)

    def test_posterior_rows_sum_to_one(self):
        chain = gen_low_rank_chain(10, 3, seed=1)
        traj = simulate_trajectory(chain.P, 0, 500, seed=1)
        np.testing.assert_allclose(latent_posterior(chain.factorization, traj).sum(axis=1), 1.0, atol=1e-12)

    def test_memoryless_given_latent(self):
        # given Z_t = k, X_{t+1} ~ g_k regardless of X_t: a contingency test of X_t vs X_{t+1} per k
        chain = gen_low_rank_chain(5, 2, seed=2)
        traj = simulate_trajectory(chain.P, chain.pi.probs, 10**5, seed=3)
        Z = augment_with_latent(chain.factorization, traj, seed=4)
        X = traj.states
        for k in range(2):
            sel = Z == k
            table = np.zeros((5, 5))
            np.add.at(table, (X[:-1][sel], X[1:][sel]), 1)
            table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
            assert chi2_contingency(table)[1] > 1e-3
            freq = table.sum(axis=0) / table.sum()
            np.testing.assert_allclose(freq, chain.factorization.g[:, k], atol=0.02)

    def test_zero_denominator(self):
        f = np.array([[1.0, 0.0], [0.0, 1.0]])
        g = np.array([[1.0, 0.0], [0.0, 1.0]])
        fact = LowRankFactorization(f, g)
        with pytest.raises(StructuralError):
            augment_with_latent(fact, [0, 1], seed=0)
