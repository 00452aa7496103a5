"""
Probability primitives: distributions over finite domains, Laplace and
Poisson sampling, total-variation distance and element streams.

All randomness comes from generators built by `RngSeed.generator`; nothing
in this module touches global random state.
"""

from itertools import islice
from typing import Iterable, Iterator, Union
import logging
import math

import numpy as np

from app.models.distribution import DiscreteDistribution, LaplaceScale
from app.utils.exceptions import DomainError, InputDataError, StreamExhaustedError

logger = logging.getLogger(__name__)

# Inversion by sequential search below this mean, PTRS rejection at or above
POISSON_INVERSION_CUTOFF = 30.0

_EPS = np.finfo(np.float64).eps


class ElementStream:
    """
    Once-consumable stream of domain elements.

    Iterating yields one element at a time; `take` pulls a block. Consumed
    elements cannot be revisited.
    """

    def __init__(self, elements: Union[np.ndarray, Iterable[int]]):
        array = np.asarray(elements if isinstance(elements, np.ndarray) else list(elements), dtype=np.int64)
        if array.ndim != 1:
            raise DomainError("stream elements must form a one-dimensional sequence")
        array.setflags(write=False)
        self._elements = array
        self._cursor = 0

    def __iter__(self) -> Iterator[int]:
        return self

    def __next__(self) -> int:
        if self._cursor >= self._elements.size:
            raise StopIteration
        value = int(self._elements[self._cursor])
        self._cursor += 1
        return value

    @property
    def consumed(self) -> int:
        return self._cursor

    @property
    def remaining(self) -> int:
        return int(self._elements.size - self._cursor)

    def take(self, count: int) -> np.ndarray:
        if count < 0:
            raise DomainError(f"cannot take a negative number of elements ({count})")
        if count > self.remaining:
            raise StreamExhaustedError(
                f"stream exhausted: needed {count} more elements, {self.remaining} left",
                details={"needed": count, "remaining": self.remaining},
            )
        block = self._elements[self._cursor:self._cursor + count]
        self._cursor += count
        return block


class MappedStream:
    """Stream view applying an element relabeling (e.g. element -> group index)."""

    def __init__(self, source: Iterable[int], labels: np.ndarray):
        self._source = source if isinstance(source, (ElementStream, MappedStream)) else iter(source)
        self._labels = np.asarray(labels, dtype=np.int64)

    def __iter__(self) -> Iterator[int]:
        return self

    def _check_domain(self, elements: np.ndarray) -> None:
        k = self._labels.size
        if elements.size and (elements.min() < 0 or elements.max() >= k):
            raise InputDataError(
                f"stream contains elements outside domain of size {k}",
                details={"min": int(elements.min()), "max": int(elements.max())},
            )

    def __next__(self) -> int:
        element = next(self._source)
        self._check_domain(np.array([element]))
        return int(self._labels[element])

    def take(self, count: int) -> np.ndarray:
        elements = take_elements(self._source, count)
        self._check_domain(elements)
        return self._labels[elements]


def take_elements(stream: Iterable[int], count: int) -> np.ndarray:
    """Pull exactly `count` elements from any stream, raising if it runs dry."""
    if hasattr(stream, "take"):
        return stream.take(count)
    block = np.fromiter(islice(iter(stream), count), dtype=np.int64)
    if block.size < count:
        raise StreamExhaustedError(
            f"stream exhausted: needed {count} elements, got {block.size}",
            details={"needed": count, "received": int(block.size)},
        )
    return block


def next_element(stream: Iterator[int], consumed: int) -> int:
    try:
        return next(stream)
    except StopIteration:
        raise StreamExhaustedError(
            f"stream exhausted after {consumed} elements",
            details={"consumed": consumed},
        ) from None


def uniform(k: int) -> DiscreteDistribution:
    """U_k, the uniform distribution over {0, ..., k-1}"""
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise DomainError(f"domain size must be a positive integer, got {k!r}")
    return DiscreteDistribution(probs=np.full(int(k), 1.0 / int(k)))


def point_mass(k: int, index: int) -> DiscreteDistribution:
    if not 0 <= index < k:
        raise DomainError(f"point mass index {index} outside domain of size {k}")
    probs = np.zeros(k)
    probs[index] = 1.0
    return DiscreteDistribution(probs=probs)


def tv_distance(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Total variation distance (1/2) * sum_i |p_i - q_i|"""
    if p.k != q.k:
        raise DomainError(f"domain sizes differ: {p.k} vs {q.k}")
    return min(1.0, 0.5 * math.fsum(np.abs(p.probs - q.probs)))


def laplace_inverse_cdf(u: Union[float, np.ndarray], scale: LaplaceScale) -> Union[float, np.ndarray]:
    """Inverse CDF of Lap(scale); u is clamped into (0, 1) by machine epsilon."""
    clamped = np.clip(u, _EPS, 1.0 - _EPS)
    centered = clamped - 0.5
    values = -scale.scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))
    if np.ndim(values) == 0:
        return float(values)
    return values


def laplace_sample(scale: LaplaceScale, rng: np.random.Generator) -> float:
    return laplace_inverse_cdf(rng.random(), scale)


def laplace_vector(scale: LaplaceScale, size: int, rng: np.random.Generator) -> np.ndarray:
    return laplace_inverse_cdf(rng.random(size), scale)


def laplace_log_density(x: Union[float, np.ndarray], scale: LaplaceScale) -> Union[float, np.ndarray]:
    return -math.log(2.0 * scale.scale) - np.abs(x) / scale.scale


def poisson_sample(mean: float, rng: np.random.Generator) -> int:
    """One Poisson draw: sequential-search inversion for small means, PTRS above."""
    if not math.isfinite(mean) or mean < 0:
        raise DomainError(f"Poisson mean must be a non-negative real, got {mean!r}")
    if mean == 0:
        return 0
    if mean < POISSON_INVERSION_CUTOFF:
        return _poisson_inversion(mean, rng)
    return _poisson_ptrs(mean, rng)


def _poisson_inversion(mean: float, rng: np.random.Generator) -> int:
    u = rng.random()
    count = 0
    prob = math.exp(-mean)
    cdf = prob
    # cdf can stall just below 1 in floating point; the cap keeps the loop finite
    while u > cdf and count < 1000:
        count += 1
        prob *= mean / count
        cdf += prob
    return count


def _poisson_ptrs(mean: float, rng: np.random.Generator) -> int:
    # Transformed rejection with squeeze (Hormann 1993)
    slam = math.sqrt(mean)
    loglam = math.log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        count = int(math.floor((2.0 * a / us + b) * u + mean + 0.43))
        if us >= 0.07 and v <= v_r:
            return count
        if count < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b)
                <= -mean + count * loglam - math.lgamma(count + 1)):
            return count


def sample_stream(p: DiscreteDistribution, count: int, rng: np.random.Generator) -> ElementStream:
    """`count` i.i.d. draws from p as a once-consumable stream"""
    if count < 0:
        raise DomainError(f"sample count must be non-negative, got {count}")
    if count == 0:
        return ElementStream(np.empty(0, dtype=np.int64))
    cdf = np.cumsum(p.probs)
    cdf[-1] = 1.0
    draws = np.searchsorted(cdf, rng.random(count), side="right")
    # Zero-mass trailing bins can never be hit; guard the boundary anyway
    np.minimum(draws, p.k - 1, out=draws)
    return ElementStream(draws)


def sample_uniform_stream(k: int, count: int, rng: np.random.Generator) -> ElementStream:
    if count < 0:
        raise DomainError(f"sample count must be non-negative, got {count}")
    return ElementStream(rng.integers(0, k, size=count, dtype=np.int64))


def stream_budget(m: int, sigmas: float, offset: float) -> int:
    """Samples to materialize so a Poi(m) draw exhausts the stream with negligible probability"""
    return int(math.ceil(m + sigmas * math.sqrt(m) + offset))


def draw_entropy_seed() -> int:
    """Fresh 64-bit seed from system entropy"""
    return int(np.random.SeedSequence().entropy) & ((1 << 64) - 1)
