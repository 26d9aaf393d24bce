import numpy as np
import pytest

from analysis.aggregation import (AggregatorKind, AggregatorSpec, apply_ldp, clip_update,
                                  fedavg_aggregate, flare_aggregate, hard_cut_aggregate,
                                  clip_rows, krum_aggregate, krum_select, lower_median, median_norm,
                                  trimmed_mean_aggregate)
from analysis.errors import CohortTooSmall, DimensionMismatch, EmptyCohort, InvalidParameter


def brute_force_krum(updates, f):
    n = len(updates)
    best, best_score = None, None
    for i in range(n):
        distances = sorted(float(np.sum((updates[i] - updates[j]) ** 2)) for j in range(n) if j != i)
        score = sum(distances[:n - f - 2])
        if best_score is None or score < best_score:
            best, best_score = i, score
    return best


def full_sort_trimmed_mean(updates, trim):
    n, dim = len(updates), updates[0].shape[0]
    k = int(np.floor(trim * n))
    result = np.empty(dim)
    for p in range(dim):
        column = sorted(float(u[p]) for u in updates)
        kept = column[k:n - k]
        result[p] = sum(kept) / len(kept)
    return result


class TestClipping:

    def test_never_exceeds_bound(self, rng):
        for _ in range(100):
            update = rng.normal(scale=rng.uniform(0.1, 10.0), size=20)
            c = float(rng.uniform(0.1, 5.0))
            clipped = clip_update(update, c)
            assert np.linalg.norm(clipped) <= c * (1 + 1e-12)
            assert np.linalg.norm(clipped) <= np.linalg.norm(update) * (1 + 1e-12)

    def test_short_update_is_unchanged(self):
        update = np.array([0.3, 0.4])
        assert np.array_equal(clip_update(update, 1.0), update)

    def test_zero_update(self):
        assert np.array_equal(clip_update(np.zeros(3), 1.0), np.zeros(3))

    def test_rejects_non_positive_bound(self):
        with pytest.raises(InvalidParameter):
            clip_update(np.ones(2), 0.0)

    def test_lower_median(self):
        updates = [np.array([n, 0.0]) for n in (4.0, 1.0, 3.0, 2.0)]
        assert median_norm(updates) == 2.0
        assert median_norm(updates[:3]) == 3.0

    def test_median_of_empty_cohort(self):
        with pytest.raises(EmptyCohort):
            median_norm([])

    def test_lower_median_of_values(self):
        assert lower_median([5.0, 1.0, 3.0, 2.0]) == 2.0
        assert lower_median(np.array([7.0])) == 7.0

    def test_clip_rows_matches_clip_update(self, rng):
        updates = rng.normal(size=(6, 4)) * 3.0
        updates[2] = 0.0
        norms = np.linalg.norm(updates, axis=1)
        clipped = clip_rows(updates, norms, 2.0)
        for row, expected in zip(clipped, updates):
            assert np.allclose(row, clip_update(expected, 2.0), atol=1e-12)

    def test_clip_rows_needs_positive_bound(self):
        with pytest.raises(InvalidParameter):
            clip_rows(np.ones((2, 2)), np.full(2, np.sqrt(2.0)), 0.0)


class TestLocalDifferentialPrivacy:

    def test_noiseless_limit_is_clipping(self, rng):
        update = rng.normal(size=10) * 5
        assert np.array_equal(apply_ldp(update, 1.0, 0.0, rng), clip_update(update, 1.0))

    def test_noise_variance_is_calibrated(self):
        noisy = apply_ldp(np.zeros(100_000), 2.0, 0.5, np.random.default_rng(3))
        assert np.var(noisy) == pytest.approx(1.0, rel=0.02)
        assert abs(np.mean(noisy)) < 0.02

    def test_rejects_negative_sigma(self, rng):
        with pytest.raises(InvalidParameter):
            apply_ldp(np.ones(2), 1.0, -0.1, rng)


class TestFlareAggregate:

    def test_single_client(self):
        w = np.array([1.0, 1.0])
        out = flare_aggregate(w, [(np.array([0.5, -1.0]), 0.3, 17)])
        assert np.allclose(out, [1.5, 0.0])

    def test_symmetric_pair(self):
        out = flare_aggregate(np.zeros(2), [(np.array([1.0, 0.0]), 0.8, 10),
                                            (np.array([0.0, 1.0]), 0.8, 10)])
        assert np.allclose(out, [0.5, 0.5])

    def test_weights_by_reputation_and_size(self):
        out = flare_aggregate(np.zeros(1), [(np.array([1.0]), 1.0, 10), (np.array([4.0]), 0.5, 10)])
        assert out[0] == pytest.approx((1.0 * 10 + 4.0 * 5) / 15)

    def test_empty_trusted_set_keeps_model(self):
        w = np.array([1.0, 2.0])
        out = flare_aggregate(w, [])
        assert np.array_equal(out, w) and out is not w

    def test_zero_weight_keeps_model(self):
        w = np.array([1.0, 2.0])
        assert np.array_equal(flare_aggregate(w, [(np.ones(2), 0.0, 5)]), w)

    def test_output_in_convex_hull(self, rng):
        for _ in range(100):
            w = rng.normal(size=6)
            entries = [(rng.normal(size=6), float(rng.random()) + 0.01, int(rng.integers(1, 50)))
                       for _ in range(int(rng.integers(1, 8)))]
            out = flare_aggregate(w, entries)
            candidates = np.vstack([w + u for u, _, _ in entries])
            assert np.all(out >= candidates.min(axis=0) - 1e-12)
            assert np.all(out <= candidates.max(axis=0) + 1e-12)

    def test_zero_reputation_attackers_vanish(self, rng):
        w = rng.normal(size=5)
        benign = [(rng.normal(size=5), int(rng.integers(1, 30))) for _ in range(6)]
        attackers = [(rng.normal(scale=100.0, size=5), 20) for _ in range(3)]
        entries = [(u, 1.0, n) for u, n in benign] + [(u, 0.0, n) for u, n in attackers]
        assert np.allclose(flare_aggregate(w, entries), fedavg_aggregate(w, benign), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            flare_aggregate(np.zeros(2), [(np.zeros(3), 1.0, 1)])


class TestHardCut:

    def test_uniform_mean_above_threshold(self):
        entries = [(np.array([1.0]), 0.9, 100), (np.array([3.0]), 0.6, 1), (np.array([50.0]), 0.4, 10)]
        assert hard_cut_aggregate(np.zeros(1), entries, 0.5)[0] == pytest.approx(2.0)

    def test_nobody_above_threshold(self):
        w = np.ones(2)
        assert np.array_equal(hard_cut_aggregate(w, [(np.zeros(2), 0.1, 5)], 0.5), w)


class TestFedAvg:

    def test_single_client_identity(self):
        assert np.allclose(fedavg_aggregate(np.ones(2), [(np.array([1.0, -1.0]), 3)]), [2.0, 0.0])

    def test_sample_weighting(self):
        out = fedavg_aggregate(np.zeros(1), [(np.array([0.0]), 30), (np.array([4.0]), 10)])
        assert out[0] == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(EmptyCohort):
            fedavg_aggregate(np.zeros(2), [])


class TestKrum:

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            f = int(rng.integers(0, 4))
            n = int(rng.integers(f + 3, 13))
            dim = int(rng.integers(1, 8))
            updates = [rng.normal(size=dim) for _ in range(n)]
            assert krum_select(updates, f) == brute_force_krum(updates, f)

    def test_ignores_outliers(self):
        honest = [np.array([1.0, 1.0]) + 0.01 * i for i in range(5)]
        outliers = [np.array([100.0, -100.0]), np.array([-80.0, 90.0])]
        model, index = krum_aggregate(np.zeros(2), honest + outliers, 2)
        assert index < 5
        assert np.allclose(model, honest[index])

    def test_cohort_too_small(self):
        with pytest.raises(CohortTooSmall):
            krum_select([np.zeros(2)] * 4, 2)


class TestTrimmedMean:

    def test_matches_full_sort(self, rng):
        for _ in range(100):
            updates = [rng.normal(size=5) for _ in range(8)]
            assert np.allclose(trimmed_mean_aggregate(np.zeros(5), updates, 0.25),
                               full_sort_trimmed_mean(updates, 0.25), atol=1e-12)

    def test_four_clients_keep_middle_two(self):
        updates = [np.array([v]) for v in (10.0, 1.0, 2.0, -7.0)]
        assert trimmed_mean_aggregate(np.zeros(1), updates, 0.25)[0] == pytest.approx(1.5)

    def test_zero_trim_is_mean(self, rng):
        updates = [rng.normal(size=3) for _ in range(5)]
        assert np.allclose(trimmed_mean_aggregate(np.zeros(3), updates, 0.0), np.mean(updates, axis=0))

    def test_invalid_trim(self):
        with pytest.raises(InvalidParameter):
            trimmed_mean_aggregate(np.zeros(1), [np.zeros(1)] * 4, 0.5)

    def test_empty(self):
        with pytest.raises(EmptyCohort):
            trimmed_mean_aggregate(np.zeros(1), [], 0.1)


class TestAggregatorSpec:

    def test_krum_cohort_check(self):
        with pytest.raises(CohortTooSmall):
            AggregatorSpec(AggregatorKind.KRUM, f=3).check_cohort(5)
        AggregatorSpec(AggregatorKind.KRUM, f=2).check_cohort(5)

    def test_invalid_parameters(self):
        with pytest.raises(InvalidParameter):
            AggregatorSpec(AggregatorKind.KRUM, f=-1)
        with pytest.raises(InvalidParameter):
            AggregatorSpec(AggregatorKind.TRIMMED_MEAN, trim_fraction=0.5)

    def test_name(self):
        assert AggregatorSpec(AggregatorKind.TRIMMED_MEAN).name == "trimmed_mean"
