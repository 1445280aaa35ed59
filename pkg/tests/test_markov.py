import math
import warnings

import numpy as np
import pytest

from statecompress.errors import (
    DimensionError,
    InsufficientDataError,
    MixingCapError,
    ReversibilityError,
    StructuralError,
    ValidationError,
)
from statecompress.markov import (
    Trajectory,
    chain_diagnostics,
    eigengap_mixing_bound,
    empirical_counts,
    empirical_distribution,
    empirical_frequency,
    empirical_transition,
    frequency_from_transition,
    is_reversible,
    mixing_distance,
    mixing_time,
    second_eigenvalue,
    simulate_trajectory,
    stationary_distribution,
    to_stochastic,
    validate_transition,
)
from statecompress.synth import gen_low_rank_chain

from conftest import lazy_reversible_chain


class TestTrajectory:
    def test_transition_count(self):
        assert Trajectory([0, 1, 0, 1], 2).n_transitions == 3

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            Trajectory([0, 2], 2)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            Trajectory([], 2)

    def test_states_are_read_only(self):
        t = Trajectory([0, 1], 2)
        with pytest.raises(ValueError):
            t.states[0] = 1


class TestValidateTransition:
    def test_uniform_two_state(self):
        rep = validate_transition([[0.5, 0.5], [0.5, 0.5]])
        assert rep.is_stochastic and rep.is_ergodic_class

    def test_identity_not_ergodic(self):
        rep = validate_transition(np.eye(2))
        assert rep.is_stochastic and not rep.is_ergodic_class

    def test_row_sum_violation(self):
        rep = validate_transition([[0.9, 0.2], [0.2, 0.8]])
        assert not rep.is_stochastic
        assert rep.failing_rows == (0,)
        assert "rows [0]" in rep.describe()

    def test_non_square(self):
        with pytest.raises(DimensionError):
            validate_transition(np.ones((2, 3)) / 3)

    def test_closed_subset_detected(self):
        # {0, 1} is closed, state 2 leaks into it
        P = [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.3, 0.3, 0.4]]
        assert not validate_transition(P).is_ergodic_class

    def test_renormalize_within_tolerance(self):
        M = np.array([[0.5, 0.5 + 5e-9], [0.5, 0.5]])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            P, flag = to_stochastic(M)
        assert flag and caught
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-15)

    def test_renormalize_refuses_large_error(self):
        with pytest.raises(ValidationError, match="row 0"):
            to_stochastic([[0.9, 0.2], [0.2, 0.8]])


class TestEmpirical:
    def test_frequency_alternating(self):
        np.testing.assert_array_equal(empirical_frequency([0, 1, 0, 1], 2), [[0, 2 / 3], [1 / 3, 0]])

    def test_frequency_repeated(self):
        np.testing.assert_array_equal(empirical_frequency([0, 0, 0], 2), [[1, 0], [0, 0]])

    def test_frequency_needs_two_states(self):
        with pytest.raises(InsufficientDataError):
            empirical_frequency([0], 2)

    def test_transition_uniform_fallback(self):
        P = empirical_transition([0, 1, 1], 3)
        np.testing.assert_array_equal(P, [[0, 1, 0], [0, 1, 0], [1 / 3, 1 / 3, 1 / 3]])

    def test_transition_alternating(self):
        np.testing.assert_array_equal(empirical_transition([0, 1, 0, 1], 2), [[0, 1], [1, 0]])

    def test_distribution_skips_first_state(self):
        np.testing.assert_allclose(empirical_distribution([0, 1, 0, 1], 2), [1 / 3, 2 / 3])

    def test_distribution_all_zero(self):
        np.testing.assert_array_equal(empirical_distribution([0, 0, 0, 0], 3), [1, 0, 0])

    def test_frequency_sums_to_one_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            traj = rng.integers(0, 7, size=rng.integers(2, 50))
            assert empirical_frequency(traj, 7).sum() == pytest.approx(1.0, abs=1e-15)

    def test_long_run_matches_truth(self):
        chain = gen_low_rank_chain(10, 2, seed=4)
        traj = simulate_trajectory(chain.P, chain.pi.probs, 10**5, seed=5)
        assert np.abs(empirical_frequency(traj) - chain.F).sum() < 0.05
        assert np.abs(empirical_transition(traj) - chain.P).sum(axis=1).max() / 2 < 0.05
        assert np.abs(empirical_distribution(traj) - chain.pi.probs).max() < 0.02


class TestStationary:
    def test_uniform(self):
        np.testing.assert_allclose(stationary_distribution([[0.5, 0.5], [0.5, 0.5]]).probs, [0.5, 0.5])

    def test_two_state(self, two_state):
        # balance: pi_1 * 0.1 = pi_2 * 0.2
        np.testing.assert_allclose(stationary_distribution(two_state).probs, [2 / 3, 1 / 3], atol=1e-14)

    def test_non_ergodic(self):
        with pytest.raises(StructuralError):
            stationary_distribution(np.eye(3))

    @pytest.mark.parametrize("method", ["solve", "power"])
    def test_residual_on_generated_chains(self, method):
        for seed in range(5):
            P = gen_low_rank_chain(40, 3, seed).P
            pi = stationary_distribution(P, method=method).probs
            assert np.abs(pi @ P - pi).sum() < 1e-10
            assert pi.sum() == pytest.approx(1.0, abs=1e-12)

    def test_frequency_from_transition(self, two_state):
        F = frequency_from_transition(two_state, [2 / 3, 1 / 3])
        np.testing.assert_allclose(F, [[0.6, 1 / 15], [1 / 15, 4 / 15]], atol=1e-15)
        np.testing.assert_allclose(F.sum(axis=1), F.sum(axis=0), atol=1e-12)

    def test_frequency_dimension_mismatch(self, two_state):
        with pytest.raises(DimensionError):
            frequency_from_transition(two_state, [1.0])


class TestMixing:
    def test_rank_one_uniform(self):
        p = 6
        assert mixing_time(np.full((p, p), 1 / p), 0.25) == 1

    def test_two_state(self, two_state):
        # distance after k steps is (2/3) 0.7^k: 0.467, 0.327, 0.229
        assert mixing_time(two_state, 0.25) == 3
        for k in range(1, 6):
            assert mixing_distance(two_state, [2 / 3, 1 / 3], k) == pytest.approx((2 / 3) * 0.7**k, rel=1e-12)

    def test_monotone_in_epsilon(self, two_state):
        eps = [0.01, 0.05, 0.1, 0.2, 0.3, 0.45]
        taus = [mixing_time(two_state, e) for e in eps]
        assert taus == sorted(taus, reverse=True)

    def test_cap(self):
        P = np.array([[0.999999, 0.000001], [0.000001, 0.999999]])
        with pytest.raises(MixingCapError) as info:
            mixing_time(P, 0.25, max_steps=50)
        assert info.value.last_distance > 0.25

    def test_eigengap_two_state(self, two_state):
        # lambda_2 = trace - 1 = 0.7, pi_min = 1/3
        assert eigengap_mixing_bound(two_state, 0.25) == pytest.approx(math.log(12) / 0.3, rel=1e-12)
        assert second_eigenvalue(two_state) == pytest.approx(0.7, abs=1e-12)

    def test_eigengap_rank_one(self):
        p = 5
        assert eigengap_mixing_bound(np.full((p, p), 1 / p), 0.25) == pytest.approx(math.log(p / 0.25), rel=1e-10)

    def test_eigengap_requires_reversibility(self):
        P = np.array([[0.1, 0.6, 0.3], [0.3, 0.1, 0.6], [0.6, 0.3, 0.1]])
        assert not is_reversible(P)
        with pytest.raises(ReversibilityError) as info:
            eigengap_mixing_bound(P)
        assert info.value.max_violation > 0

    def test_eigengap_dominates_on_lazy_chains(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            P = lazy_reversible_chain(int(rng.integers(2, 12)), rng)
            eps = float(rng.uniform(0.05, 0.45))
            assert mixing_time(P, eps) <= eigengap_mixing_bound(P, eps)


class TestSimulate:
    def test_deterministic_chain(self):
        traj = simulate_trajectory([[0, 1], [1, 0]], 0, 3, seed=0)
        np.testing.assert_array_equal(traj.states, [0, 1, 0, 1])
        assert traj.n_transitions == 3

    def test_seed_determinism(self, two_state):
        a = simulate_trajectory(two_state, 0, 500, seed=9).states
        b = simulate_trajectory(two_state, 0, 500, seed=9).states
        np.testing.assert_array_equal(a, b)

    def test_bad_initial(self, two_state):
        with pytest.raises(ValidationError):
            simulate_trajectory(two_state, 5, 10, seed=0)

    def test_million_steps_frequency(self, two_state):
        traj = simulate_trajectory(two_state, 0, 10**6, seed=2)
        F = frequency_from_transition(two_state, [2 / 3, 1 / 3])
        np.testing.assert_allclose(empirical_frequency(traj), F, atol=0.01)

    def test_counts_total(self, two_state):
        traj = simulate_trajectory(two_state, 1, 1000, seed=1)
        assert empirical_counts(traj).sum() == 1000


class TestDiagnostics:
    def test_invariants(self):
        chain = gen_low_rank_chain(30, 3, seed=1)
        d = chain_diagnostics(chain.P, 3)
        assert d.kappa >= 1
        assert d.r_tilde >= 3
        assert d.tau_star >= 1
        assert d.sigma_r_plus_1 < 1e-10 * d.sigma_r
        assert not d.gap_degenerate

    def test_lambda2_for_reversible(self, two_state):
        d = chain_diagnostics(two_state, 1)
        assert d.lambda2 == pytest.approx(0.7)
        assert d.tau_star == 3
