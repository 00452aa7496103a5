import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from app.models import DiscreteDistribution, LaplaceScale, RngSeed
from app.services.core_prob import (
    ElementStream,
    MappedStream,
    laplace_inverse_cdf,
    laplace_log_density,
    laplace_sample,
    laplace_vector,
    point_mass,
    poisson_sample,
    sample_stream,
    sample_uniform_stream,
    stream_budget,
    take_elements,
    tv_distance,
    uniform,
)
from app.utils.exceptions import DomainError, StreamExhaustedError


def distributions(k: int):
    """Hypothesis strategy for strictly positive distributions over k elements"""
    return st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=k, max_size=k).map(
        lambda weights: DiscreteDistribution.from_probs(np.asarray(weights) / math.fsum(weights))
    )


class TestDistributions:
    """Test suite for distribution constructors and TV distance"""

    @pytest.mark.parametrize("k, expected", [(4, 0.25), (1, 1.0), (2, 0.5)])
    def test_uniform(self, k, expected):
        assert uniform(k).as_tuple() == tuple([expected] * k)

    def test_uniform_rejects_empty_domain(self):
        with pytest.raises(DomainError):
            uniform(0)

    def test_tv_disjoint_supports(self):
        p = DiscreteDistribution.from_probs([1.0, 0.0])
        q = DiscreteDistribution.from_probs([0.0, 1.0])
        assert tv_distance(p, q) == 1.0

    def test_tv_identical(self):
        assert tv_distance(uniform(5), uniform(5)) == 0.0

    def test_tv_hand_evaluated(self):
        p = DiscreteDistribution.from_probs([0.375, 0.125, 0.375, 0.125])
        assert tv_distance(p, uniform(4)) == pytest.approx(0.25, abs=1e-15)

    def test_tv_mismatched_domains(self):
        with pytest.raises(DomainError):
            tv_distance(uniform(3), uniform(4))

    @given(distributions(6), distributions(6), distributions(6))
    @hypothesis_settings(max_examples=60, deadline=None)
    def test_tv_is_a_metric(self, p, q, r):
        assert tv_distance(p, q) == tv_distance(q, p)
        assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
        assert tv_distance(p, p) == 0.0
        assert 0.0 <= tv_distance(p, q) <= 1.0

    def test_renormalizes_small_deviation(self, caplog):
        with caplog.at_level(logging.WARNING):
            p = DiscreteDistribution.from_probs([0.5, 0.5 + 5e-7])
        assert math.fsum(p.probs) == pytest.approx(1.0, abs=1e-12)
        assert "Renormalizing" in caplog.text

    def test_rejects_large_deviation(self):
        with pytest.raises(DomainError):
            DiscreteDistribution.from_probs([0.5, 0.6])

    def test_rejects_negative_entries(self):
        with pytest.raises(DomainError):
            DiscreteDistribution.from_probs([1.5, -0.5])

    def test_probs_are_read_only(self):
        p = uniform(3)
        with pytest.raises(ValueError):
            p.probs[0] = 1.0

    def test_point_mass_index_checked(self):
        with pytest.raises(DomainError):
            point_mass(3, 3)


class TestLaplace:
    """Test suite for Laplace sampling and densities"""

    def test_median_maps_to_zero(self):
        assert laplace_inverse_cdf(0.5, LaplaceScale(1.0)) == 0.0

    def test_endpoints_are_finite(self):
        values = laplace_inverse_cdf(np.array([0.0, 1.0]), LaplaceScale(1.0))
        assert np.all(np.isfinite(values))
        assert values[0] < 0 < values[1]

    def test_moments(self, seed):
        draws = laplace_vector(LaplaceScale(1.0), 1_000_000, seed.generator(1))
        assert abs(draws.mean()) <= 0.01
        assert draws.var() == pytest.approx(2.0, abs=0.02)

    def test_single_draw_matches_vector_path(self, seed):
        scale = LaplaceScale(0.5)
        assert laplace_sample(scale, seed.generator(3)) == laplace_vector(scale, 1, seed.generator(3))[0]

    @pytest.mark.parametrize("epsilon", [0.1, 0.5, 1.0, 4.0])
    def test_log_density_ratio_bounded(self, epsilon):
        scale = LaplaceScale.from_epsilon(epsilon)
        grid = np.linspace(-50, 50, 20001)
        ratio = np.abs(laplace_log_density(grid, scale) - laplace_log_density(grid - 1.0, scale))
        assert ratio.max() <= epsilon + 1e-12

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
    def test_scale_must_be_positive_finite(self, bad):
        with pytest.raises(DomainError):
            LaplaceScale(bad)


class TestPoisson:
    """Test suite for Poisson sampling"""

    def test_zero_mean(self, rng):
        assert poisson_sample(0.0, rng) == 0

    def test_negative_mean_rejected(self, rng):
        with pytest.raises(DomainError):
            poisson_sample(-1.0, rng)

    def test_large_mean_moments(self, seed):
        rng = seed.generator(4)
        draws = np.array([poisson_sample(100.0, rng) for _ in range(100_000)])
        assert draws.mean() == pytest.approx(100.0, abs=1.0)
        assert draws.var() == pytest.approx(100.0, abs=3.0)

    def test_small_mean_moments(self, seed):
        rng = seed.generator(5)
        draws = np.array([poisson_sample(5.0, rng) for _ in range(20_000)])
        assert draws.mean() == pytest.approx(5.0, abs=0.1)
        assert draws.var() == pytest.approx(5.0, abs=0.3)
        assert draws.min() >= 0


class TestStreams:
    """Test suite for stream sampling and the once-consumable contract"""

    def test_point_mass_stream(self, rng):
        assert list(sample_stream(point_mass(4, 3), 5, rng)) == [3, 3, 3, 3, 3]

    def test_empty_stream(self, rng):
        assert list(sample_stream(uniform(4), 0, rng)) == []

    def test_uniform_frequencies(self, seed):
        stream = sample_stream(uniform(4), 1_000_000, seed.generator(6))
        freqs = np.bincount(stream.take(1_000_000), minlength=4) / 1_000_000
        assert np.all(np.abs(freqs - 0.25) <= 0.002)

    def test_zero_mass_bins_never_drawn(self, rng):
        p = DiscreteDistribution.from_probs([0.0, 0.5, 0.5, 0.0])
        draws = sample_stream(p, 10_000, rng).take(10_000)
        assert set(np.unique(draws)) <= {1, 2}

    def test_stream_is_consumed_once(self, rng):
        stream = sample_uniform_stream(3, 4, rng)
        first = list(stream)
        assert len(first) == 4
        assert list(stream) == []

    def test_take_past_end_raises(self):
        stream = ElementStream([0, 1, 2])
        stream.take(2)
        with pytest.raises(StreamExhaustedError):
            stream.take(2)

    def test_take_elements_from_plain_iterator(self):
        assert list(take_elements(iter([1, 2, 3]), 2)) == [1, 2]
        with pytest.raises(StreamExhaustedError):
            take_elements(iter([1]), 2)

    def test_mapped_stream_relabels(self):
        mapped = MappedStream(ElementStream([0, 1, 2, 3]), np.array([1, 1, 0, 0]))
        assert list(mapped.take(4)) == [1, 1, 0, 0]

    def test_stream_budget(self):
        assert stream_budget(100, 6.0, 10.0) == 170


class TestSeeding:
    """Test suite for the seeded generator contract"""

    def test_identical_seeds_identical_streams(self):
        a = RngSeed(seed=5, stream_id=2).generator().random(100)
        b = RngSeed(seed=5, stream_id=2).generator().random(100)
        assert np.array_equal(a, b)

    def test_stream_ids_look_independent(self):
        a = RngSeed(seed=5, stream_id=1).generator().random(100_000)
        b = RngSeed(seed=5, stream_id=2).generator().random(100_000)
        assert abs(np.corrcoef(a, b)[0, 1]) <= 0.01

    def test_derive_is_deterministic_and_distinct(self):
        base = RngSeed(seed=9)
        assert base.derive(1, 2) == base.derive(1, 2)
        assert base.derive(1, 2) != base.derive(2, 1)
        assert base.derive(1, 2).seed == 9

    @pytest.mark.parametrize("bad", [-1, 2 ** 64, 1.5, True])
    def test_seed_range_checked(self, bad):
        with pytest.raises(DomainError):
            RngSeed(seed=bad)
