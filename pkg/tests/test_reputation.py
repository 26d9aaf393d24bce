import math
import tracemalloc
from dataclasses import replace

import numpy as np
import pytest

from analysis.assessment import AttackPattern
from analysis.errors import EmptyCohort, InvalidParameter
from analysis.reputation import (DynamicWeights, VarianceTracker, anomaly_distance, anomaly_distances,
                                 anomaly_score, anomaly_scores, cohort_consistency, composite_score,
                                 composite_scores, compute_dynamic_weights, consistency_score,
                                 normalize_importance, normalized_anomaly_distance, reference_members,
                                 score_cohort, temporal_score, update_variance)


class TestConsistencyScore:

    def test_first_participation_is_neutral(self, make_client):
        update = np.array([1.0, -2.0, 0.5])
        r1, ema = consistency_score(make_client(), update, 0.7)
        assert r1 == 0.5
        assert np.array_equal(ema, update)
        assert ema is not update

    def test_aligned_update_raises_score(self, make_client):
        client = make_client()
        client.update_ema = np.array([1.0, 1.0])
        r1, ema = consistency_score(client, np.array([2.0, 2.0]), 0.7)
        # raw = 0.7 * 0 + 0.3 * 1
        assert r1 == pytest.approx(0.65)
        assert np.allclose(ema, [1.3, 1.3])

    def test_opposite_update_lowers_score(self, make_client):
        client = make_client()
        client.update_ema = np.array([1.0, 0.0])
        r1, _ = consistency_score(client, np.array([-1.0, 0.0]), 0.7)
        assert r1 == pytest.approx(0.35)

    def test_recursion_uses_previous_raw_value(self, make_client):
        client = make_client()
        client.update_ema = np.array([1.0, 0.0])
        client.set_components(1.0, 0.5, 0.5)
        r1, _ = consistency_score(client, np.array([0.0, 1.0]), 0.5)
        # raw_prev = 1, cos = 0 -> raw = 0.5 -> stored 0.75
        assert r1 == pytest.approx(0.75)

    def test_stays_in_unit_interval(self, make_client, rng):
        client = make_client()
        for _ in range(200):
            r1, ema = consistency_score(client, rng.normal(size=8), 0.3)
            assert 0.0 <= r1 <= 1.0
            client.set_components(r1, 0.5, 0.5)
            client.update_ema = ema


class TestVariance:

    def test_first_update(self):
        tracker = update_variance(VarianceTracker(), [np.array([1.0, 0.0]), np.array([3.0, 0.0])], 0.9)
        assert tracker.initialized
        assert np.allclose(tracker.variance, [0.1, 0.0])

    def test_decays_previous_estimate(self):
        updates = [np.array([1.0, 0.0]), np.array([3.0, 0.0])]
        tracker = update_variance(update_variance(VarianceTracker(), updates, 0.9), updates, 0.9)
        assert np.allclose(tracker.variance, [0.19, 0.0])

    def test_empty_cohort(self):
        with pytest.raises(EmptyCohort):
            update_variance(VarianceTracker(), [], 0.9)

    def test_matches_batch_formula(self, rng):
        updates = [rng.normal(size=6) for _ in range(7)]
        tracker = update_variance(VarianceTracker(), updates, 0.8)
        expected = 0.2 * np.var(np.vstack(updates), axis=0)
        assert np.allclose(tracker.variance, expected, atol=1e-14)


class TestAnomalyDistance:

    def test_matches_naive_formula(self, rng):
        for _ in range(50):
            dim = int(rng.integers(1, 30))
            update = rng.normal(size=dim)
            mean = rng.normal(size=dim)
            variance = rng.uniform(0.01, 2.0, size=dim)
            tracker = VarianceTracker(variance=variance, initialized=True)
            naive = math.sqrt(sum((update[p] - mean[p]) ** 2 / variance[p] for p in range(dim)))
            assert anomaly_distance(update, mean, tracker) == pytest.approx(naive, abs=1e-10)

    def test_zero_variance_uses_floor(self):
        tracker = VarianceTracker(variance=np.array([0.0, 1.0]), initialized=True)
        assert anomaly_distance(np.array([0.0, 2.0]), np.zeros(2), tracker) == pytest.approx(2.0)
        assert math.isfinite(anomaly_distance(np.array([1.0, 0.0]), np.zeros(2), tracker))

    def test_requires_initialized_tracker(self):
        with pytest.raises(InvalidParameter):
            anomaly_distance(np.zeros(2), np.zeros(2), VarianceTracker())

    def test_normalized_divides_by_sqrt_dim(self, rng):
        update = rng.normal(size=16)
        tracker = VarianceTracker(variance=np.ones(16), initialized=True)
        assert normalized_anomaly_distance(update, np.zeros(16), tracker) == pytest.approx(
            anomaly_distance(update, np.zeros(16), tracker) / 4.0)


class TestAnomalyAndTemporalScore:

    def test_below_threshold_is_one(self):
        assert anomaly_score(2.5, 2.5, 0.5) == 1.0
        assert anomaly_score(0.0, 2.5, 0.5) == 1.0

    def test_exponential_penalty(self):
        assert anomaly_score(4.5, 2.5, 0.5) == pytest.approx(math.exp(-1.0))

    @pytest.mark.parametrize("beta", [0.0, 0.3, 0.7, 1.0])
    def test_perfect_client_scores_one(self, make_client, beta):
        client = make_client()
        for _ in range(10):
            client.record_participation(True)
            client.record_response_time(1.0)
        assert temporal_score(client, beta) == pytest.approx(1.0)

    def test_new_client_only_has_stability(self, make_client):
        assert temporal_score(make_client(), 0.7) == pytest.approx(0.3)


class TestDynamicWeights:

    def test_softmax_ignores_common_shift(self):
        eta = np.array([0.1, 0.5, -0.2])
        assert np.allclose(normalize_importance(eta), normalize_importance(eta + 3.0))

    def test_no_suspicious_group_gives_uniform_weights(self):
        components = np.array([[0.2, 0.9, 0.4], [0.8, 0.1, 0.6]])
        weights = compute_dynamic_weights(components, DynamicWeights.initial(), [0.5, 0.5], 0.5,
                                          0.0, AttackPattern.NONE, 0.8, round_index=1)
        assert np.allclose(weights.w, 1.0 / 3.0)

    def test_separating_dimension_gains_weight(self):
        components = np.array([[0.5, 0.1, 0.5], [0.5, 0.9, 0.5]])
        weights = compute_dynamic_weights(components, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                          0.0, AttackPattern.NONE, 0.8, round_index=1)
        assert int(np.argmax(weights.w)) == 1
        assert weights.w[0] == pytest.approx(weights.w[2])

    def test_smoothing_from_round_two(self):
        components = np.array([[0.5, 0.1, 0.5], [0.5, 0.9, 0.5]])
        raw = compute_dynamic_weights(components, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                      0.0, AttackPattern.NONE, 0.8, round_index=1)
        smoothed = compute_dynamic_weights(components, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                           0.0, AttackPattern.NONE, 0.8, round_index=2)
        expected = 0.7 * raw.w + 0.3 / 3.0
        assert np.allclose(smoothed.w, expected / expected.sum())

    def test_weights_sum_to_one_on_random_cohorts(self, rng):
        previous = DynamicWeights.initial()
        patterns = list(AttackPattern)
        for i in range(10_000):
            size = int(rng.integers(1, 12))
            weights = compute_dynamic_weights(rng.random((size, 3)), previous, rng.random(size),
                                              float(rng.uniform(0.1, 0.9)), float(rng.random()),
                                              patterns[i % len(patterns)], 0.8, round_index=i + 1)
            assert weights.w.sum() == pytest.approx(1.0)
            assert np.all(weights.w > 0.0)
            previous = weights

    def test_empty_cohort(self):
        with pytest.raises(EmptyCohort):
            compute_dynamic_weights(np.empty((0, 3)), DynamicWeights.initial(), [], 0.5,
                                    0.0, AttackPattern.NONE, 0.8, round_index=1)


class TestCompositeScore:

    def test_endpoints(self):
        weights = DynamicWeights(w=np.array([0.2, 0.5, 0.3]))
        assert composite_score([1.0, 1.0, 1.0], weights) == pytest.approx(1.0)
        assert composite_score([0.0, 0.0, 0.0], weights) == 0.0

    def test_convex_combination(self, rng):
        for _ in range(1000):
            w = rng.random(3)
            weights = DynamicWeights(w=w / w.sum())
            components = rng.random(3)
            score = composite_score(components, weights)
            assert components.min() - 1e-12 <= score <= components.max() + 1e-12


class TestScoringProperties:

    def test_variance_memory_grows_linearly_with_dimension(self, rng):
        peaks = {}
        for dim in (1000, 4000):
            updates = rng.normal(size=(10, dim))
            tracemalloc.start()
            update_variance(VarianceTracker(), updates, 0.9)
            _, peaks[dim] = tracemalloc.get_traced_memory()
            tracemalloc.stop()
        assert peaks[4000] / peaks[1000] < 6.0

    def test_distance_ignores_common_shift(self, rng):
        update = rng.normal(size=12)
        mean = rng.normal(size=12)
        tracker = VarianceTracker(variance=rng.uniform(0.1, 2.0, size=12), initialized=True)
        shift = rng.normal(size=12) * 5.0
        assert anomaly_distance(update + shift, mean + shift, tracker) == pytest.approx(
            anomaly_distance(update, mean, tracker), rel=1e-12)

    def test_distance_example(self):
        tracker = VarianceTracker(variance=np.array([1.0, 4.0]), initialized=True)
        assert anomaly_distance(np.array([1.0, 2.0]), np.zeros(2), tracker) == pytest.approx(1.41421356)

    def test_softmax_example(self):
        assert np.allclose(normalize_importance(np.array([2.0, 1.0, 1.0])),
                           [0.57612, 0.21194, 0.21194], atol=1e-5)

    def test_weights_ignore_cohort_order(self, rng):
        components = rng.random((7, 3))
        reputations = np.array([0.1, 0.8, 0.15, 0.9, 0.7, 0.05, 0.6])
        order = rng.permutation(7)
        original = compute_dynamic_weights(components, DynamicWeights.initial(), reputations, 0.5, 0.3,
                                           AttackPattern.NONE, 0.8, round_index=3)
        shuffled = compute_dynamic_weights(components[order], DynamicWeights.initial(), reputations[order], 0.5, 0.3,
                                           AttackPattern.NONE, 0.8, round_index=3)
        assert np.allclose(original.w, shuffled.w, atol=1e-12)


class TestCohortScoring:

    def test_cohort_consistency_matches_single_client_rule(self, make_client, rng):
        clients = [make_client(i) for i in range(5)]
        for client in clients[1:]:
            client.update_ema = rng.normal(size=6)
            client.set_components(float(rng.random()), 0.5, 0.5)
        updates = rng.normal(size=(5, 6))
        r1, emas = cohort_consistency(clients, updates, 0.7)
        for i, client in enumerate(clients):
            expected_r1, expected_ema = consistency_score(client, updates[i], 0.7)
            assert r1[i] == pytest.approx(expected_r1, abs=1e-12)
            assert np.allclose(emas[i], expected_ema, atol=1e-12)

    def test_zero_update_scores_like_orthogonal(self, make_client):
        client = make_client()
        client.update_ema = np.array([1.0, 0.0])
        r1, _ = cohort_consistency([client], np.zeros((1, 2)), 0.7)
        assert r1[0] == pytest.approx(consistency_score(client, np.array([0.0, 1.0]), 0.7)[0])

    def test_row_distances_match_single_distance(self, rng):
        updates = rng.normal(size=(6, 9))
        mean = updates.mean(axis=0)
        tracker = VarianceTracker(variance=rng.uniform(0.1, 1.0, size=9), initialized=True)
        distances = anomaly_distances(updates, mean, tracker)
        normalized = anomaly_distances(updates, mean, tracker, normalize=True)
        for i, update in enumerate(updates):
            assert distances[i] == pytest.approx(anomaly_distance(update, mean, tracker), abs=1e-12)
            assert normalized[i] == pytest.approx(
                normalized_anomaly_distance(update, mean, tracker), abs=1e-12)

    def test_row_scores_match_single_score(self):
        distances = np.array([0.0, 2.5, 3.0, 10.0])
        expected = [anomaly_score(d, 2.5, 0.5) for d in distances]
        assert np.allclose(anomaly_scores(distances, 2.5, 0.5), expected)

    def test_row_composites_match_single_composite(self, rng):
        weights = DynamicWeights(w=np.array([0.2, 0.5, 0.3]))
        components = rng.random((5, 3))
        expected = [composite_score(row, weights) for row in components]
        assert np.allclose(composite_scores(components, weights), expected)

    def test_reference_members(self):
        assert reference_members([1.0, 1.0, 2.0, 10.0], 3.0).tolist() == [True, True, True, False]
        assert reference_members([0.0, 0.0, 0.0, 5.0], 3.0).tolist() == [True, True, True, False]
        assert reference_members([4.0], 3.0).tolist() == [True]

    def test_reference_members_of_empty_cohort(self):
        with pytest.raises(EmptyCohort):
            reference_members([], 3.0)

    def _cohort(self, make_client, rng, dim=20):
        clients = [make_client(i) for i in range(10)]
        honest = 1.0 + 0.1 * rng.normal(size=(8, dim))
        oversized = 10.0 * rng.normal(size=(2, dim))
        return clients, np.vstack([honest, oversized])

    def test_oversized_updates_score_low(self, make_client, rng, small_hp):
        clients, updates = self._cohort(make_client, rng)
        tracker = VarianceTracker(variance=np.full(20, 0.01), initialized=True)
        scores = score_cohort(clients, updates, tracker, small_hp)

        assert scores.reference.tolist() == [True] * 8 + [False] * 2
        assert scores.components.shape == (10, 3)
        assert np.all(scores.components[:8, 1] == 1.0)
        assert np.all(scores.components[8:, 1] < 1e-3)
        assert np.all(scores.components[:, 0] == 0.5)
        assert np.allclose(scores.components[:, 2], temporal_score(clients[0], small_hp.beta))
        assert scores.tracker.initialized
        assert all(c.update_ema is None for c in clients)

    def test_reference_set_sharpens_anomaly_score(self, make_client, rng, small_hp):
        clients, updates = self._cohort(make_client, rng)
        tracker = VarianceTracker(variance=np.full(20, 0.01), initialized=True)
        filtered = score_cohort(clients, updates, tracker, small_hp)
        unfiltered = score_cohort(clients, updates, tracker,
                                  replace(small_hp, reference_norm_ratio=1e6))
        assert unfiltered.reference.all()
        assert np.all(unfiltered.components[8:, 1] > filtered.components[8:, 1])

    def test_empty_cohort(self, small_hp):
        with pytest.raises(EmptyCohort):
            score_cohort([], [], VarianceTracker(), small_hp)


class TestWeightSwitches:

    SEPARATING = np.array([[0.5, 0.1, 0.5], [0.5, 0.9, 0.5]])

    def test_importance_scale_sharpens_weights(self):
        plain = compute_dynamic_weights(self.SEPARATING, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                        0.0, AttackPattern.NONE, 0.8, round_index=1)
        sharp = compute_dynamic_weights(self.SEPARATING, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                        0.0, AttackPattern.NONE, 0.8, round_index=1,
                                        importance_scale=10.0)
        assert sharp.w[1] > plain.w[1]
        assert sharp.w.sum() == pytest.approx(1.0)

    def test_importance_scale_must_be_positive(self):
        with pytest.raises(InvalidParameter):
            compute_dynamic_weights(self.SEPARATING, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                    0.0, AttackPattern.NONE, 0.8, round_index=1, importance_scale=0.0)

    @pytest.mark.parametrize("round_index", [1, 5])
    def test_single_dimension_takes_all_weight(self, round_index):
        enabled = (False, True, False)
        weights = compute_dynamic_weights(self.SEPARATING, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                          0.0, AttackPattern.NONE, 0.8, round_index=round_index,
                                          enabled=enabled)
        assert weights.w.tolist() == [0.0, 1.0, 0.0]

    @pytest.mark.parametrize("disabled", [0, 1, 2])
    def test_disabled_dimension_gets_no_weight(self, rng, disabled):
        enabled = tuple(i != disabled for i in range(3))
        previous = DynamicWeights.initial(enabled)
        assert previous.w[disabled] == 0.0
        assert previous.w.sum() == pytest.approx(1.0)
        for t in range(1, 6):
            previous = compute_dynamic_weights(rng.random((6, 3)), previous, rng.random(6), 0.5,
                                               0.2, AttackPattern.NONE, 0.8, round_index=t,
                                               importance_scale=10.0, enabled=enabled)
            assert previous.w[disabled] == 0.0
            assert previous.w.sum() == pytest.approx(1.0)

    def test_no_enabled_dimension(self):
        with pytest.raises(InvalidParameter):
            DynamicWeights.initial((False, False, False))
        with pytest.raises(InvalidParameter):
            compute_dynamic_weights(self.SEPARATING, DynamicWeights.initial(), [0.1, 0.9], 0.5,
                                    0.0, AttackPattern.NONE, 0.8, round_index=1,
                                    enabled=(False, False, False))
