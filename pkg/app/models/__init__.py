# Model exports for easy importing
from .common import (
    Verdict, HistogramPhase, AuditVerdict, RecordType, ErrorResponse
)
from .distribution import RngSeed, LaplaceScale, DiscreteDistribution
from .tester import TesterConfig, TestVerdict, PartitionPlan
from .instance import PaninskiInstance
from .protocol import (
    ConcatState, Transcript, Randomizer, PanProtocol, LocalProtocol, TraceStep,
    PrefixComparison, BridgeReport
)
from .audit import NeighborPair, AuditReport
from .experiment import (
    ExperimentConfig, PowerEstimate, SearchStep, ComplexityPoint, ScalingCurve,
    PartitionRecord, RunConfig
)

__all__ = [
    # Enums and responses
    "Verdict", "HistogramPhase", "AuditVerdict", "RecordType", "ErrorResponse",

    # Probability types
    "RngSeed", "LaplaceScale", "DiscreteDistribution",

    # Tester models
    "TesterConfig", "TestVerdict", "PartitionPlan",

    # Hard instances
    "PaninskiInstance",

    # Protocol models
    "ConcatState", "Transcript", "Randomizer", "PanProtocol", "LocalProtocol", "TraceStep",
    "PrefixComparison", "BridgeReport",

    # Audit models
    "NeighborPair", "AuditReport",

    # Experiment records
    "ExperimentConfig", "PowerEstimate", "SearchStep", "ComplexityPoint", "ScalingCurve",
    "PartitionRecord", "RunConfig"
]
