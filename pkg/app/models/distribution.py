"""
Probability value types shared by every service.

RngSeed, LaplaceScale and DiscreteDistribution are immutable after
construction and safe to share across threads. Generators built from an
RngSeed are per-thread values.
"""

from dataclasses import dataclass, field
from typing import Sequence, Tuple
import logging
import math

import numpy as np

from app.config import UINT64_MAX
from app.utils.exceptions import DomainError

logger = logging.getLogger(__name__)

# Accepted on construction without changes
NORMALIZATION_TOLERANCE = 1e-9
# Renormalized with a warning; anything beyond is rejected
RENORMALIZATION_TOLERANCE = 1e-6


@dataclass(frozen=True)
class RngSeed:
    """
    Seed plus sub-stream selector for the counter-based generator.

    Identical (seed, stream_id) pairs produce identical sample sequences.
    `derive` hands out further sub-streams (per trial, per side, ...) without
    any shared generator state.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise DomainError(f"{name} must be an integer, got {value!r}")
            if not 0 <= int(value) <= UINT64_MAX:
                raise DomainError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def seed_sequence(self, *path: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.seed),
            spawn_key=(int(self.stream_id),) + tuple(int(p) for p in path),
        )

    def generator(self, *path: int) -> np.random.Generator:
        """Philox generator for this sub-stream, optionally split further by `path`."""
        return np.random.Generator(np.random.Philox(self.seed_sequence(*path)))

    def derive(self, *path: int) -> "RngSeed":
        """Child seed whose stream_id is hashed from (stream_id, *path)."""
        words = self.seed_sequence(*path).generate_state(2, dtype=np.uint32)
        stream_id = (int(words[0]) << 32) | int(words[1])
        return RngSeed(seed=int(self.seed), stream_id=stream_id)


@dataclass(frozen=True)
class LaplaceScale:
    """Noise scale b of a zero-centered Laplace distribution (b = 1/epsilon here)."""

    scale: float

    def __post_init__(self) -> None:
        if not (isinstance(self.scale, (int, float)) and math.isfinite(self.scale) and self.scale > 0):
            raise DomainError(f"Laplace scale must be a positive finite real, got {self.scale!r}")

    @classmethod
    def from_epsilon(cls, epsilon: float, sensitivity: float = 1.0) -> "LaplaceScale":
        if epsilon <= 0:
            raise DomainError(f"epsilon must be positive, got {epsilon}")
        return cls(scale=float(sensitivity) / float(epsilon))


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """
    Probability vector over the domain {0, ..., k-1}.

    Construct through `from_probs`, which enforces the normalization policy:
    sums within 1e-9 of one are accepted, sums within 1e-6 are renormalized
    with a warning, anything else is rejected.
    """

    probs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise DomainError("probability vector must be one-dimensional and non-empty")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DomainError("probability entries must be finite and non-negative")
        total = float(math.fsum(probs))
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise DomainError(
                f"probabilities sum to {total!r}, outside tolerance {NORMALIZATION_TOLERANCE}"
            )
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> "DiscreteDistribution":
        values = np.asarray(probs, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DomainError("probability vector must be one-dimensional and non-empty")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise DomainError("probability entries must be finite and non-negative")
        total = float(math.fsum(values))
        deviation = abs(total - 1.0)
        if deviation > RENORMALIZATION_TOLERANCE:
            raise DomainError(
                f"probabilities sum to {total!r}; beyond renormalization tolerance",
                details={"sum": total},
            )
        if deviation > NORMALIZATION_TOLERANCE:
            logger.warning(f"Renormalizing probability vector with sum {total!r}")
            values = values / total
        return cls(probs=values)

    @property
    def k(self) -> int:
        return int(self.probs.size)

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(float(p) for p in self.probs)

    def allclose(self, other: "DiscreteDistribution", atol: float = NORMALIZATION_TOLERANCE) -> bool:
        return self.k == other.k and bool(np.allclose(self.probs, other.probs, rtol=0.0, atol=atol))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.k == other.k and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def __repr__(self) -> str:
        head = ", ".join(f"{p:.6g}" for p in self.probs[:8])
        suffix = ", ..." if self.k > 8 else ""
        return f"DiscreteDistribution(k={self.k}, probs=({head}{suffix}))"
