"""
Hard-instance generators and stream sources.

The paired-bin (Paninski) construction draws a hidden bit X and signs
Y_1..Y_k; with X = 1 each pair's masses are tilted by +-alpha/(2k). Samples
can be drawn directly from the induced vector or through the (pair, side)
decomposition; both views give the same element law.

Every experiment and CLI command draws its streams from a StreamSource.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Tuple, Union
import logging

import numpy as np
from pydantic import ValidationError
from scipy.stats import chisquare

from app.models.distribution import DiscreteDistribution
from app.models.instance import PaninskiInstance
from app.services.core_prob import ElementStream, point_mass, sample_stream, tv_distance, uniform
from app.utils.exceptions import DomainError, InputDataError, PersistenceError

logger = logging.getLogger(__name__)


def paninski_distribution(inst: PaninskiInstance) -> DiscreteDistribution:
    """Explicit probability vector over {0, ..., 2 k_pairs - 1}"""
    if inst.x_bit == 0:
        return uniform(inst.k)
    signs = np.asarray(inst.y_signs, dtype=np.float64)
    probs = np.empty(inst.k)
    probs[0::2] = (1.0 + signs * inst.alpha) / inst.k
    probs[1::2] = (1.0 - signs * inst.alpha) / inst.k
    return DiscreteDistribution(probs=probs)


def first_side_probability(inst: PaninskiInstance) -> np.ndarray:
    """P[V = first side | J = j] for every pair j"""
    if inst.x_bit == 0:
        return np.full(inst.k_pairs, 0.5)
    return (1.0 + inst.alpha * np.asarray(inst.y_signs, dtype=np.float64)) / 2.0


def element_of(pair_index: int, first_side: bool) -> int:
    return 2 * pair_index + (0 if first_side else 1)


def sample_decomposed(inst: PaninskiInstance, rng: np.random.Generator) -> Tuple[int, bool]:
    """One (J, V) draw: J uniform over pairs, V the side within the pair"""
    j = int(rng.integers(0, inst.k_pairs))
    p_first = first_side_probability(inst)[j]
    return j, bool(rng.random() < p_first)


def sample_decomposed_stream(inst: PaninskiInstance, count: int, rng: np.random.Generator) -> ElementStream:
    """Vectorized (J, V) sampling of `count` elements"""
    if count < 0:
        raise DomainError(f"sample count must be non-negative, got {count}")
    pairs = rng.integers(0, inst.k_pairs, size=count, dtype=np.int64)
    first = rng.random(count) < first_side_probability(inst)[pairs]
    return ElementStream(2 * pairs + np.where(first, 0, 1))


def sampling_view_pvalue(inst: PaninskiInstance, count: int, rng: np.random.Generator) -> float:
    """Chi-square goodness-of-fit p-value of (J, V) draws against the explicit vector"""
    observed = np.bincount(sample_decomposed_stream(inst, count, rng).take(count), minlength=inst.k)
    expected = paninski_distribution(inst).probs * count
    return float(chisquare(observed, expected).pvalue)


def random_paninski(k_pairs: int, alpha: float, x_bit: int, rng: np.random.Generator) -> PaninskiInstance:
    """Instance with i.i.d. uniform signs; x_bit is kept as given."""
    if k_pairs < 1:
        raise DomainError(f"k_pairs must be positive, got {k_pairs}")
    signs = 2 * rng.integers(0, 2, size=k_pairs) - 1
    try:
        return PaninskiInstance(k_pairs=k_pairs, x_bit=x_bit, y_signs=tuple(int(s) for s in signs), alpha=alpha)
    except ValidationError as e:
        raise DomainError(f"invalid Paninski parameters: {e.errors()[0]['msg']}") from None


def target_tv(tv: float) -> float:
    """Construction parameter that puts a far instance at TV `tv` (clamped to 1)."""
    if tv <= 0:
        raise DomainError(f"target distance must be positive, got {tv}")
    return min(1.0, 2.0 * tv)


def perturbed_point_mass(k: int, tv: float, index: int = 0) -> DiscreteDistribution:
    """
    Uniform with `tv` extra mass on one element, taken evenly from the rest.
    Exact TV from uniform is `tv`; works for odd k.
    """
    if k < 2:
        raise DomainError(f"perturbation needs k >= 2, got {k}")
    if not 0 < tv <= (k - 1) / k:
        raise DomainError(f"tv must lie in (0, {(k - 1) / k}] for k={k}, got {tv}")
    if not 0 <= index < k:
        raise DomainError(f"index {index} outside domain of size {k}")
    probs = np.full(k, 1.0 / k - tv / (k - 1))
    probs[index] = 1.0 / k + tv
    np.maximum(probs, 0.0, out=probs)
    return DiscreteDistribution.from_probs(probs)


def save_instance(inst: PaninskiInstance, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(inst.model_dump_json(indent=2))
    except OSError as e:
        raise PersistenceError(f"could not write instance to {path}: {e}", details={"path": str(path)}) from e


def load_instance(path: Union[str, Path]) -> PaninskiInstance:
    path = Path(path)
    try:
        return PaninskiInstance.model_validate_json(path.read_text())
    except OSError as e:
        raise PersistenceError(f"could not read instance from {path}: {e}", details={"path": str(path)}) from e
    except ValidationError as e:
        raise InputDataError(f"invalid instance document {path}", details=e.errors()) from None


class StreamSource(ABC):
    """
    Produces a fresh once-consumable stream per trial.

    Subclasses set `name` and implement `stream`. `tv` is the exact distance
    of the source's law from uniform when it is fixed, else None.
    """

    name: str

    def __init__(self, k: int):
        if k < 1:
            raise DomainError(f"domain size must be positive, got {k}")
        self.k = k

    @abstractmethod
    def stream(self, count: int, rng: np.random.Generator) -> ElementStream:
        pass

    @property
    def tv(self) -> Optional[float]:
        return None

    def describe(self) -> str:
        return f"{self.name}(k={self.k})"


class UniformSource(StreamSource):
    name = "uniform"

    def stream(self, count: int, rng: np.random.Generator) -> ElementStream:
        return ElementStream(rng.integers(0, self.k, size=count, dtype=np.int64))

    @property
    def tv(self) -> Optional[float]:
        return 0.0


class ExactUniformSource(StreamSource):
    """Round-robin 0, 1, ..., k-1, 0, 1, ...; counts are exactly equal at multiples of k."""

    name = "exact-uniform"

    def stream(self, count: int, rng: np.random.Generator) -> ElementStream:
        return ElementStream(np.arange(count, dtype=np.int64) % self.k)


class FixedSource(StreamSource):
    """i.i.d. draws from one fixed distribution"""

    def __init__(self, distribution: DiscreteDistribution, name: str = "fixed"):
        super().__init__(distribution.k)
        self.distribution = distribution
        self.name = name
        self._tv = tv_distance(distribution, uniform(distribution.k))

    def stream(self, count: int, rng: np.random.Generator) -> ElementStream:
        return sample_stream(self.distribution, count, rng)

    @property
    def tv(self) -> Optional[float]:
        return self._tv

    def describe(self) -> str:
        return f"{self.name}(k={self.k}, tv={self._tv:.6g})"


class PaninskiSource(StreamSource):
    """
    Far Paninski instances. Unless an instance is pinned, every stream comes
    from a freshly drawn sign vector, matching the randomized construction.
    """

    name = "paninski-far"

    def __init__(self, k_pairs: int, alpha: float, instance: Optional[PaninskiInstance] = None):
        super().__init__(2 * k_pairs)
        if instance is not None and (instance.k_pairs != k_pairs or instance.alpha != alpha):
            raise DomainError("pinned instance does not match the source parameters")
        self.k_pairs = k_pairs
        self.alpha = alpha
        self.instance = instance

    def stream(self, count: int, rng: np.random.Generator) -> ElementStream:
        inst = self.instance or random_paninski(self.k_pairs, self.alpha, 1, rng)
        return sample_decomposed_stream(inst, count, rng)

    @property
    def tv(self) -> Optional[float]:
        if self.instance is not None:
            return self.instance.exact_tv
        return self.alpha / 2.0

    def describe(self) -> str:
        return f"{self.name}(k={self.k}, alpha={self.alpha:.6g}, tv={self.tv:.6g})"


class FileSource(StreamSource):
    """
    Samples read from a whitespace-separated text file. Every trial replays
    the file from the start; a file shorter than the tester needs surfaces
    as StreamExhaustedError.
    """

    name = "file"

    def __init__(self, k: int, path: Union[str, Path]):
        super().__init__(k)
        self.path = Path(path)
        try:
            text = self.path.read_text()
        except OSError as e:
            raise InputDataError(f"cannot read samples file {self.path}: {e}", details={"path": str(self.path)}) from e
        try:
            elements = np.array([int(tok) for tok in text.split()], dtype=np.int64)
        except ValueError as e:
            raise InputDataError(f"samples file {self.path} contains a non-integer token: {e}") from None
        if elements.size and (elements.min() < 0 or elements.max() >= k):
            raise InputDataError(
                f"samples file {self.path} has elements outside domain of size {k}",
                details={"min": int(elements.min()), "max": int(elements.max())},
            )
        self.elements = elements
        logger.info(f"Loaded {elements.size} samples from {self.path}")

    def stream(self, count: int, rng: np.random.Generator) -> ElementStream:
        return ElementStream(self.elements)

    def describe(self) -> str:
        return f"{self.name}(k={self.k}, path={self.path}, n={self.elements.size})"


def far_source(k: int, alpha: float) -> StreamSource:
    """Default far family at exact TV alpha: Paninski for even k, perturbed point mass for odd k."""
    construction = target_tv(alpha)
    if k % 2 == 0:
        if construction / 2.0 < alpha:
            logger.warning(f"Requested TV {alpha} exceeds the Paninski maximum; using TV {construction / 2.0}")
        return PaninskiSource(k // 2, construction)
    tv = min(alpha, (k - 1) / k)
    return FixedSource(perturbed_point_mass(k, tv), name="perturbed-point-mass")


def build_source(
    kind: str,
    k: int,
    alpha: Optional[float] = None,
    samples_file: Optional[str] = None,
    instance_file: Optional[str] = None,
    point_index: int = 0,
) -> StreamSource:
    """Stream source for a CLI instance name"""
    if kind == "uniform":
        return UniformSource(k)
    if kind == "exact-uniform":
        return ExactUniformSource(k)
    if kind == "paninski-far":
        if instance_file:
            inst = load_instance(instance_file)
            if inst.k != k:
                raise DomainError(f"instance file has domain {inst.k}, run uses k={k}")
            return PaninskiSource(inst.k_pairs, inst.alpha, instance=inst)
        if k % 2:
            raise DomainError(f"paninski-far needs an even domain, got k={k}; use point-mass")
        if alpha is None:
            raise DomainError("paninski-far needs alpha")
        return PaninskiSource(k // 2, target_tv(alpha))
    if kind == "point-mass":
        return FixedSource(point_mass(k, point_index), name="point-mass")
    if kind == "file":
        if not samples_file:
            raise DomainError("instance 'file' needs samples_file")
        return FileSource(k, samples_file)
    raise DomainError(f"Unknown instance source: {kind}")
