"""Exception hierarchy shared across the package."""


class InternLabError(Exception):
    """Base class for all package errors."""


class ConfigError(InternLabError, ValueError):
    """Invalid configuration value; the message names the offending field."""


class CorpusError(InternLabError, ValueError):
    """Malformed corpus file or instance; load errors name the line."""


class ScheduleError(InternLabError, ValueError):
    """Degenerate or inconsistent schedule request."""


class CompressionError(InternLabError, ValueError):
    """Invalid compression request."""


class CompressionBackendError(InternLabError, RuntimeError):
    """External compression backend failed and no fallback was allowed."""


class ExamplePoolError(InternLabError, ValueError):
    """Example pool construction or selection cannot proceed."""


class CurriculumError(InternLabError, ValueError):
    """Stage dataset construction cannot proceed."""


class TeacherError(InternLabError, RuntimeError):
    """Teacher generation failed after retries."""


class CostModelError(InternLabError, ValueError):
    """Invalid cost-model dimensions, profile, or reference."""


class EvalError(InternLabError, ValueError):
    """Prediction file violates the evaluation contract."""


class TrainerError(InternLabError, RuntimeError):
    """External trainer invocation failed."""
