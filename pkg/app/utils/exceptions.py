from typing import Optional, Any


class PanPrivacyError(Exception):
    """Base exception with structured error details and a process exit code"""

    def __init__(
        self,
        message: str,
        exit_code: int = 2,
        error_code: Optional[str] = None,
        details: Optional[Any] = None
    ):
        self.message = message
        self.exit_code = exit_code
        self.error_code = error_code
        self.details = details
        super().__init__(self.message)


# Common exceptions
class DomainError(PanPrivacyError, ValueError):
    """Arguments outside the mathematical domain of an operation"""
    def __init__(self, message: str = "Domain error", details: Optional[Any] = None):
        super().__init__(
            message=message,
            exit_code=2,
            error_code="DOMAIN_ERROR",
            details=details
        )


class ConfigError(PanPrivacyError):
    """Invalid run configuration (unknown keys, out-of-range values)"""
    def __init__(self, message: str = "Invalid configuration", details: Optional[Any] = None):
        super().__init__(
            message=message,
            exit_code=2,
            error_code="CONFIG_ERROR",
            details=details
        )


class AuditPolicyError(PanPrivacyError):
    """Audit requested for a mechanism that must not be audited"""
    def __init__(self, message: str = "Audit request rejected", details: Optional[Any] = None):
        super().__init__(
            message=message,
            exit_code=2,
            error_code="AUDIT_POLICY_ERROR",
            details=details
        )


class ContractViolationError(PanPrivacyError):
    """A protocol broke the structural contract a transformation relies on"""
    def __init__(self, message: str = "Protocol contract violated", details: Optional[Any] = None):
        super().__init__(
            message=message,
            exit_code=2,
            error_code="CONTRACT_VIOLATION",
            details=details
        )


class HistogramPhaseError(PanPrivacyError):
    """Illegal use of the noisy histogram state machine"""
    def __init__(self, message: str = "Illegal histogram phase transition", details: Optional[Any] = None):
        super().__init__(
            message=message,
            exit_code=2,
            error_code="HISTOGRAM_PHASE_ERROR",
            details=details
        )


# Input data exceptions
class InputDataError(PanPrivacyError):
    """Input data (streams, sample files) unusable for the requested run"""
    def __init__(
        self,
        message: str = "Invalid input data",
        details: Optional[Any] = None,
        error_code: str = "INPUT_DATA_ERROR"
    ):
        super().__init__(
            message=message,
            exit_code=3,
            error_code=error_code,
            details=details
        )


class StreamExhaustedError(InputDataError):
    """Stream ended before the tester consumed its sample budget"""
    def __init__(self, message: str = "Stream exhausted", details: Optional[Any] = None):
        super().__init__(
            message=message,
            details=details,
            error_code="STREAM_EXHAUSTED"
        )


class PersistenceError(PanPrivacyError):
    """Reading or writing result files failed"""
    def __init__(self, message: str = "Persistence failure", details: Optional[Any] = None):
        super().__init__(
            message=message,
            exit_code=3,
            error_code="PERSISTENCE_ERROR",
            details=details
        )
