"""Exception hierarchy shared across the package."""


class CadClarifyError(Exception):
    """Base class for all package errors."""


class IllegalTransition(CadClarifyError):
    """Session event is not legal in the current phase."""


class ArityMismatch(CadClarifyError):
    """Answer count does not line up with question count."""


class SchemaViolation(CadClarifyError):
    """A model reply does not satisfy the required JSON schema."""

    def __init__(self, message: str, transcript=None):
        super().__init__(message)
        self.transcript = transcript


class FormatViolation(CadClarifyError):
    """A structured text reply (five-section format) is malformed."""


class NonFiniteValue(CadClarifyError):
    """A numeric input that must be finite is NaN or infinite."""


class TransportError(CadClarifyError):
    """HTTP transport failed after all retries."""


class TransientTransportError(TransportError):
    """Retryable transport failure (connection reset, 429, 5xx)."""


class AuthMissing(CadClarifyError):
    """The configured API-key environment variable is not set."""


class CompletionTimeout(TransportError):
    """The model endpoint did not answer within the configured timeout."""


class ScriptExhausted(CadClarifyError):
    """A scripted backend received a call it has no reply for."""


class MalformedFile(CadClarifyError):
    """Mesh file bytes cannot be parsed."""


class ZeroArea(CadClarifyError):
    """Mesh has no positive-area triangles to sample from."""


class DegenerateExtent(CadClarifyError):
    """Reference cloud has zero spatial extent; normalization undefined."""


class InsufficientPool(CadClarifyError):
    """A dataset pool is too small for the requested split."""


class TemplateError(CadClarifyError):
    """Prompt template missing, malformed, or rendered with unfilled slots."""


class ExecutorError(CadClarifyError):
    """Executor worker could not be spawned or protocol broke down."""


class ConfigError(CadClarifyError):
    """Run configuration file is missing or invalid."""
