from pydantic import BaseModel, Field
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional, Sequence, Tuple

from .common import AuditVerdict
from app.utils.exceptions import DomainError


@dataclass(frozen=True)
class NeighborPair:
    """
    Two streams equal everywhere except at one position.

    `differ_at` is 1-based: the replaced element is the differ_at-th one
    processed, so any prefix of length t < differ_at is shared.
    """

    stream_a: Tuple[int, ...]
    stream_b: Tuple[int, ...]
    differ_at: int

    def __post_init__(self) -> None:
        a = tuple(int(x) for x in self.stream_a)
        b = tuple(int(x) for x in self.stream_b)
        object.__setattr__(self, "stream_a", a)
        object.__setattr__(self, "stream_b", b)
        if len(a) != len(b):
            raise DomainError(f"neighbor streams differ in length: {len(a)} vs {len(b)}")
        if not 1 <= self.differ_at <= len(a):
            raise DomainError(f"differ_at {self.differ_at} outside 1..{len(a)}")
        diffs = [i + 1 for i, (x, y) in enumerate(zip(a, b)) if x != y]
        if diffs != [self.differ_at]:
            raise DomainError(
                "streams must differ at exactly the declared position",
                details={"declared": self.differ_at, "observed": diffs},
            )

    @classmethod
    def from_streams(cls, stream_a: Sequence[int], stream_b: Sequence[int]) -> "NeighborPair":
        """Infer the differing position; identical or far-apart streams are rejected."""
        diffs = [i + 1 for i, (x, y) in enumerate(zip(stream_a, stream_b)) if x != y]
        if len(stream_a) != len(stream_b) or len(diffs) != 1:
            raise DomainError(
                "streams are not neighbors",
                details={"differences": diffs, "lengths": [len(stream_a), len(stream_b)]},
            )
        return cls(stream_a=tuple(stream_a), stream_b=tuple(stream_b), differ_at=diffs[0])

    @property
    def length(self) -> int:
        return len(self.stream_a)

    @property
    def replaced(self) -> Tuple[int, int]:
        """(element in stream_a, element in stream_b) at the differing position"""
        i = self.differ_at - 1
        return self.stream_a[i], self.stream_b[i]


class AuditReport(BaseModel):
    """Outcome of an epsilon audit of one mechanism on one neighbor pair"""
    mechanism: str
    claimed_epsilon: float = Field(..., gt=0)
    analytic_bound: Optional[float] = None
    empirical_lower_estimate: Optional[float] = None
    point_estimate: Optional[float] = None
    confidence_slack: Optional[float] = None
    confidence: float = Field(..., gt=0, lt=1)
    trials: int = Field(..., ge=0)
    cells_used: int = Field(0, ge=0)
    verdict: AuditVerdict
    note: str = "one-sided estimate: it can refute a privacy claim, never certify one"
    seed: Optional[int] = None
    created_at: datetime = Field(default_factory=datetime.utcnow)

    @property
    def failed(self) -> bool:
        return self.verdict == AuditVerdict.FAIL
