from pydantic import BaseModel, ConfigDict, Field, model_validator
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from app.config import MAX_DOMAIN_SIZE, UINT64_MAX
from app.models.common import Verdict
from app.models.distribution import RngSeed
from app.utils.exceptions import DomainError


class TesterConfig(BaseModel):
    """Inputs shared by every tester run"""
    __test__ = False

    model_config = ConfigDict(frozen=True)

    k: int = Field(..., ge=2, le=MAX_DOMAIN_SIZE)
    alpha: float = Field(..., gt=0, le=1)
    epsilon: float = Field(..., gt=0)
    seed: int = Field(0, ge=0, le=UINT64_MAX)
    stream_id: int = Field(0, ge=0, le=UINT64_MAX)
    noiseless_debug: bool = False

    @property
    def rng_seed(self) -> RngSeed:
        return RngSeed(seed=self.seed, stream_id=self.stream_id)

    def generator(self, *path: int) -> np.random.Generator:
        return self.rng_seed.generator(*path)


class TestVerdict(BaseModel):
    """Tester output plus diagnostics"""
    __test__ = False

    model_config = ConfigDict(frozen=True)

    verdict: Verdict
    statistic: float
    threshold: float
    samples_consumed: int = Field(..., ge=0)
    n_groups: Optional[int] = None
    effective_alpha: Optional[float] = None
    threshold_alpha: Optional[float] = None

    @model_validator(mode="after")
    def validate_verdict_matches_threshold(self) -> "TestVerdict":
        """NonUniform exactly when statistic > threshold; ties go to Uniform"""
        expected = Verdict.NON_UNIFORM if self.statistic > self.threshold else Verdict.UNIFORM
        if self.verdict != expected:
            raise ValueError(
                f"verdict {self.verdict.value} inconsistent with statistic "
                f"{self.statistic!r} vs threshold {self.threshold!r}"
            )
        return self

    @classmethod
    def decide(cls, statistic: float, threshold: float, samples_consumed: int, **diagnostics) -> "TestVerdict":
        verdict = Verdict.NON_UNIFORM if statistic > threshold else Verdict.UNIFORM
        return cls(
            verdict=verdict,
            statistic=float(statistic),
            threshold=float(threshold),
            samples_consumed=int(samples_consumed),
            **diagnostics,
        )

    @property
    def is_uniform(self) -> bool:
        return self.verdict == Verdict.UNIFORM


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Partition of {0, ..., k-1} into n groups whose sizes differ by at most one."""

    k: int
    groups: Tuple[np.ndarray, ...] = field(repr=False)
    labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.groups)
        if n < 2 or n > self.k:
            raise DomainError(f"partition needs 2 <= n <= k, got n={n}, k={self.k}")
        sizes = [len(g) for g in self.groups]
        if max(sizes) - min(sizes) > 1:
            raise DomainError(f"group sizes differ by more than one: {sorted(set(sizes))}")
        labels = np.full(self.k, -1, dtype=np.int64)
        for index, group in enumerate(self.groups):
            group = np.asarray(group, dtype=np.int64)
            if group.size and (group.min() < 0 or group.max() >= self.k):
                raise DomainError("group contains an element outside the domain")
            if np.any(labels[group] != -1) or np.unique(group).size != group.size:
                raise DomainError("groups overlap")
            labels[group] = index
        if np.any(labels == -1):
            raise DomainError("groups do not cover the domain")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(g) for g in self.groups)
