import numpy as np
import pytest
from pydantic import ValidationError

from app.models import PaninskiInstance
from app.services.core_prob import tv_distance, uniform
from app.services.hard_instances import (
    ExactUniformSource,
    FileSource,
    FixedSource,
    PaninskiSource,
    UniformSource,
    build_source,
    element_of,
    far_source,
    first_side_probability,
    load_instance,
    paninski_distribution,
    perturbed_point_mass,
    random_paninski,
    sample_decomposed,
    sample_decomposed_stream,
    sampling_view_pvalue,
    save_instance,
    target_tv,
)
from app.utils.exceptions import DomainError, InputDataError, PersistenceError


@pytest.fixture
def far_instance():
    return PaninskiInstance(k_pairs=2, x_bit=1, y_signs=(1, 1), alpha=0.5)


class TestPaninskiDistribution:
    """Test suite for the paired-bin construction"""

    def test_hidden_bit_zero_is_uniform(self):
        inst = PaninskiInstance(k_pairs=3, x_bit=0, y_signs=(1, -1, 1), alpha=0.8)
        assert paninski_distribution(inst) == uniform(6)

    def test_displayed_masses(self, far_instance):
        assert paninski_distribution(far_instance).as_tuple() == pytest.approx((0.375, 0.125, 0.375, 0.125))

    @pytest.mark.parametrize("alpha", [0.1, 0.45, 0.9, 1.0])
    def test_tv_is_half_alpha(self, seed, alpha):
        inst = random_paninski(32, alpha, 1, seed.generator(1))
        assert tv_distance(paninski_distribution(inst), uniform(64)) == pytest.approx(alpha / 2, abs=1e-12)
        assert inst.exact_tv == alpha / 2

    def test_instance_validation(self):
        with pytest.raises(ValidationError):
            PaninskiInstance(k_pairs=2, x_bit=1, y_signs=(1,), alpha=0.5)
        with pytest.raises(ValidationError):
            PaninskiInstance(k_pairs=2, x_bit=1, y_signs=(1, 0), alpha=0.5)
        with pytest.raises(ValidationError):
            PaninskiInstance(k_pairs=2, x_bit=2, y_signs=(1, 1), alpha=0.5)

    def test_target_tv(self):
        assert target_tv(0.25) == 0.5
        assert target_tv(0.8) == 1.0
        with pytest.raises(DomainError):
            target_tv(0.0)


class TestDecomposedSampling:
    """Test suite for (pair, side) sampling"""

    def test_side_is_fair_without_hidden_bit(self, seed):
        inst = PaninskiInstance(k_pairs=4, x_bit=0, y_signs=(1, -1, 1, -1), alpha=1.0)
        elements = sample_decomposed_stream(inst, 100_000, seed.generator(1)).take(100_000)
        pairs = elements // 2
        for j in range(4):
            first = np.mean(elements[pairs == j] % 2 == 0)
            assert first == pytest.approx(0.5, abs=0.01)

    def test_full_tilt_always_first_side(self, rng):
        inst = PaninskiInstance(k_pairs=3, x_bit=1, y_signs=(1, -1, 1), alpha=1.0)
        probs = paninski_distribution(inst).probs
        for _ in range(200):
            j, first = sample_decomposed(inst, rng)
            assert first == (inst.y_signs[j] == 1)
            assert probs[element_of(j, first)] > 0

    def test_first_side_probability(self, far_instance):
        assert list(first_side_probability(far_instance)) == [0.75, 0.75]

    def test_views_agree_in_tv(self, seed, far_instance):
        draws = sample_decomposed_stream(far_instance, 1_000_000, seed.generator(2)).take(1_000_000)
        empirical = np.bincount(draws, minlength=4) / draws.size
        target = paninski_distribution(far_instance).probs
        assert 0.5 * np.abs(empirical - target).sum() <= 0.003

    def test_views_pass_goodness_of_fit(self, seed):
        inst = random_paninski(8, 0.6, 1, seed.generator(3))
        pvalues = [sampling_view_pvalue(inst, 100_000, seed.generator(4, i)) for i in range(40)]
        assert np.mean(np.array(pvalues) > 0.001) >= 0.95

    def test_random_signs_are_balanced(self, seed):
        rng = seed.generator(5)
        means = [np.mean(random_paninski(16, 0.5, 1, rng).y_signs) for _ in range(10_000)]
        assert np.mean(means) == pytest.approx(0.0, abs=0.03)

    def test_random_instance_reproducible(self, seed):
        first = random_paninski(10, 0.5, 1, seed.generator(6))
        second = random_paninski(10, 0.5, 1, seed.generator(6))
        assert first == second
        assert random_paninski(10, 0.5, 0, seed.generator(6)).x_bit == 0


class TestOtherFamilies:
    """Test suite for odd-domain far families"""

    @pytest.mark.parametrize("k, tv", [(5, 0.3), (7, 0.5), (2, 0.5)])
    def test_perturbed_point_mass_tv(self, k, tv):
        assert tv_distance(perturbed_point_mass(k, tv), uniform(k)) == pytest.approx(tv, abs=1e-12)

    def test_perturbed_point_mass_range(self):
        with pytest.raises(DomainError):
            perturbed_point_mass(5, 0.9)

    def test_far_source_by_parity(self):
        even = far_source(10, 0.3)
        odd = far_source(11, 0.3)
        assert isinstance(even, PaninskiSource)
        assert even.tv == pytest.approx(0.3)
        assert isinstance(odd, FixedSource)
        assert odd.tv == pytest.approx(0.3)


class TestStreamSources:
    """Test suite for stream sources"""

    def test_exact_uniform_round_robin(self, rng):
        assert list(ExactUniformSource(3).stream(7, rng)) == [0, 1, 2, 0, 1, 2, 0]

    def test_uniform_source_stays_in_domain(self, rng):
        elements = UniformSource(5).stream(1000, rng).take(1000)
        assert elements.min() >= 0 and elements.max() < 5

    def test_paninski_source_draws_fresh_instances(self, seed):
        source = PaninskiSource(50, 1.0)
        a = np.bincount(source.stream(5000, seed.generator(1)).take(5000), minlength=100)
        b = np.bincount(source.stream(5000, seed.generator(2)).take(5000), minlength=100)
        # with full tilt every pair puts all its mass on one side; the sides differ across instances
        assert not np.array_equal(a > 0, b > 0)

    def test_file_source(self, tmp_path, rng):
        path = tmp_path / "samples.txt"
        path.write_text("0 1 2\n3 3 1\n")
        source = FileSource(4, path)
        assert list(source.stream(100, rng)) == [0, 1, 2, 3, 3, 1]

    def test_file_source_rejects_bad_content(self, tmp_path):
        path = tmp_path / "samples.txt"
        path.write_text("0 1 x\n")
        with pytest.raises(InputDataError):
            FileSource(4, path)
        path.write_text("0 1 9\n")
        with pytest.raises(InputDataError):
            FileSource(4, path)

    def test_build_source(self, tmp_path):
        assert isinstance(build_source("uniform", 8), UniformSource)
        assert build_source("point-mass", 8, point_index=2).tv == pytest.approx(7 / 8)
        with pytest.raises(DomainError):
            build_source("paninski-far", 7, alpha=0.5)
        with pytest.raises(DomainError):
            build_source("nonsense", 8)

    def test_point_mass_source_samples(self, rng):
        source = build_source("point-mass", 6, point_index=4)
        assert set(source.stream(50, rng).take(50)) == {4}


class TestInstanceFiles:
    """Test suite for instance persistence"""

    def test_round_trip(self, tmp_path, far_instance):
        path = tmp_path / "instance.json"
        save_instance(far_instance, path)
        assert load_instance(path) == far_instance

    def test_pinned_instance_source(self, tmp_path, far_instance):
        path = tmp_path / "instance.json"
        save_instance(far_instance, path)
        source = build_source("paninski-far", 4, instance_file=str(path))
        assert source.instance == far_instance
        assert source.tv == 0.25

    def test_missing_file(self, tmp_path):
        with pytest.raises(PersistenceError):
            load_instance(tmp_path / "missing.json")

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "instance.json"
        path.write_text('{"k_pairs": 2}')
        with pytest.raises(InputDataError):
            load_instance(path)
