from pydantic import BaseModel, Field
from typing import Optional, Any
from datetime import datetime
from enum import Enum


class Verdict(str, Enum):
    UNIFORM = "uniform"
    NON_UNIFORM = "non-uniform"


class HistogramPhase(str, Enum):
    PRE_STREAM = "pre_stream"
    MID_STREAM = "mid_stream"
    FINALIZED = "finalized"


class AuditVerdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class RecordType(str, Enum):
    POWER = "power"
    COMPLEXITY = "complexity"
    CURVE = "curve"
    PARTITION = "partition"


class ErrorResponse(BaseModel):
    """Error payload printed by the CLI"""
    success: bool = False
    message: str
    error_code: Optional[str] = None
    details: Optional[Any] = None
    timestamp: datetime = Field(default_factory=datetime.utcnow)
