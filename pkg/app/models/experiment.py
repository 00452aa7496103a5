from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from datetime import datetime
from typing import Dict, List, Literal, Optional, Tuple

from .common import RecordType
from app.config import MAX_DOMAIN_SIZE, UINT64_MAX


class ExperimentConfig(BaseModel):
    """Everything a record needs to be replayed: tester, instance, parameters, seed"""
    tester_id: str
    instance: str
    k: int = Field(..., ge=2, le=MAX_DOMAIN_SIZE)
    alpha: float = Field(..., gt=0, le=1)
    epsilon: float = Field(..., gt=0)
    trials: int = Field(..., ge=1)
    seed: int = Field(..., ge=0, le=UINT64_MAX)
    stream_id: int = Field(0, ge=0, le=UINT64_MAX)
    noiseless: bool = False
    distance_constant: Optional[float] = Field(None, gt=0)
    point_index: int = Field(0, ge=0)
    samples_file: Optional[str] = None
    instance_file: Optional[str] = None


class PowerEstimate(BaseModel):
    """Verdict frequencies of one tester at one sample size, on both sides"""
    record_type: Literal["power"] = RecordType.POWER.value
    config: ExperimentConfig
    m: int = Field(..., ge=1)
    p_uniform_given_uniform: float = Field(..., ge=0, le=1)
    p_uniform_given_far: float = Field(..., ge=0, le=1)
    uniform_interval: Tuple[float, float]
    far_interval: Tuple[float, float]
    wilson_halfwidth: float = Field(..., ge=0, le=1)
    uniform_errors: int = Field(0, ge=0)
    far_errors: int = Field(0, ge=0)
    far_tv: Optional[float] = None
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @property
    def separation(self) -> float:
        return self.p_uniform_given_uniform - self.p_uniform_given_far

    @property
    def conservative_separation(self) -> float:
        """Lower Wilson bound on the uniform side minus upper bound on the far side"""
        return self.uniform_interval[0] - self.far_interval[1]


class SearchStep(BaseModel):
    m: int = Field(..., ge=1)
    separation: float
    conservative_separation: float
    phase: Literal["doubling", "bisection"]


class ComplexityPoint(BaseModel):
    """Smallest m reaching the target separation, with the full search trace"""
    record_type: Literal["complexity"] = RecordType.COMPLEXITY.value
    config: ExperimentConfig
    target_separation: float = Field(..., ge=0, lt=1)
    found: bool
    m_star: Optional[int] = Field(None, ge=1)
    m_cap: int = Field(..., ge=1)
    start_m: int = Field(16, ge=1)
    refine_factor: float = Field(1.1, gt=1)
    search_trace: List[SearchStep] = Field(default_factory=list)
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @model_validator(mode="after")
    def validate_m_star(self) -> "ComplexityPoint":
        if self.found and self.m_star is None:
            raise ValueError('found points need an m_star')
        if not self.found and self.m_star is not None:
            raise ValueError('NotFound points carry no m_star')
        if self.found and self.target_separation > 0:
            reached = [s for s in self.search_trace if s.m == self.m_star]
            if not reached or reached[-1].conservative_separation < self.target_separation:
                raise ValueError('m_star must reach the target separation in the trace')
        return self


class ScalingCurve(BaseModel):
    """ComplexityPoints across k with the fitted log-log slope"""
    record_type: Literal["curve"] = RecordType.CURVE.value
    tester_id: str
    alpha: float = Field(..., gt=0, le=1)
    epsilon: float = Field(..., gt=0)
    seed: int = Field(..., ge=0, le=UINT64_MAX)
    points: List[ComplexityPoint]
    slope: Optional[float] = None
    stderr: Optional[float] = None
    partial: bool = False
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @property
    def k_values(self) -> List[int]:
        return [p.config.k for p in self.points]


class PartitionRecord(BaseModel):
    """How often a random partition keeps the induced distribution far from uniform"""
    record_type: Literal["partition"] = RecordType.PARTITION.value
    k: int = Field(..., ge=2)
    n: int = Field(..., ge=2)
    alpha: float = Field(..., ge=0, le=1)
    tv: float = Field(..., ge=0, le=1)
    trials: int = Field(..., ge=1)
    seed: int = Field(..., ge=0, le=UINT64_MAX)
    stream_id: int = Field(0, ge=0, le=UINT64_MAX)
    batch_size: int = Field(10_000, ge=1)
    # None: the far Paninski instance drawn from seed and alpha
    distribution: Optional[List[float]] = None
    bound: float = Field(..., ge=0)
    successes: int = Field(..., ge=0)
    standard_error: float = Field(..., ge=0)
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @property
    def success_fraction(self) -> float:
        return self.successes / self.trials


class RunConfig(BaseModel):
    """
    Every key a CLI command may read. Which keys a command accepts is
    decided by RunConfigValidator; ranges are checked here.
    """
    model_config = ConfigDict(extra="forbid")

    tester: Optional[str] = None
    instance: Optional[str] = None
    k: Optional[int] = Field(None, ge=2, le=MAX_DOMAIN_SIZE)
    k_values: Optional[List[int]] = None
    alpha: Optional[float] = Field(None, gt=0, le=1)
    epsilon: Optional[float] = Field(None, gt=0)
    m: Optional[int] = Field(None, ge=1)
    n: Optional[int] = Field(None, ge=2)
    trials: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = Field(None, ge=0, le=UINT64_MAX)
    threads: Optional[int] = Field(None, ge=1)
    output: Optional[str] = None
    csv: Optional[str] = None
    noiseless: Optional[bool] = None
    repetitions: Optional[int] = Field(None, ge=1)
    decision_fraction: Optional[float] = Field(None, gt=0, lt=1)
    target_separation: Optional[float] = Field(None, ge=0, lt=1)
    m_cap: Optional[int] = Field(None, ge=16)
    distance_constant: Optional[float] = Field(None, gt=0)
    samples_file: Optional[str] = None
    instance_file: Optional[str] = None
    point_index: Optional[int] = Field(None, ge=0)
    mechanism: Optional[str] = None
    claimed_epsilon: Optional[float] = Field(None, gt=0)
    confidence: Optional[float] = Field(None, gt=0, lt=1)
    stream_a: Optional[List[int]] = None
    stream_b: Optional[List[int]] = None
    time: Optional[int] = Field(None, ge=0)
    protocol: Optional[str] = None
    stream: Optional[List[int]] = None

    @field_validator('k_values')
    @classmethod
    def validate_k_values(cls, v):
        if v is None:
            return v
        if len(v) < 2:
            raise ValueError('k_values needs at least two domain sizes')
        if any(k < 4 or k > MAX_DOMAIN_SIZE for k in v):
            raise ValueError(f'every k must lie in [4, {MAX_DOMAIN_SIZE}]')
        if list(v) != sorted(set(v)):
            raise ValueError('k_values must be strictly increasing')
        return v

    def extras(self) -> Dict[str, object]:
        """Keys that were actually set"""
        return self.model_dump(exclude_none=True)
